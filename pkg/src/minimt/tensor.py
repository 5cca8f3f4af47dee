"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run: every op records its parents and a backward closure; backward()
walks the graph in reverse topological order. Storage is float32; the test
harness can switch leaf creation to float64 via shadow_float64() for
finite-difference oracles. Ops never mutate their inputs.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DEFAULT_DTYPE = np.float32

# additive mask value for attention; large but finite so softmax stays NaN-free
NEG_INF = -1.0e9


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def shadow_float64():
    """Run leaf creation in float64. Test-harness only: used by gradient
    oracles so central finite differences are not drowned in float32 noise."""
    global _DEFAULT_DTYPE
    saved = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.float64
    try:
        yield
    finally:
        _DEFAULT_DTYPE = saved


class Tensor:
    """n-d array plus optional grad. requires_grad marks trainable leaves;
    interior nodes carry backward closures when any ancestor is trainable."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _bwd=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._bwd = _bwd

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the right operand may be a Tensor, ndarray, or scalar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, _neg_const(other))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _neg_const(x):
    if isinstance(x, Tensor):
        return mul(x, -1.0)
    return -np.asarray(x)


def _track(*operands):
    return any(isinstance(t, Tensor) and (t.requires_grad or t._bwd is not None)
               for t in operands)


def _result(data, operands, bwd, tracked):
    if not tracked:
        return Tensor(data)
    parents = tuple(t for t in operands if isinstance(t, Tensor))
    return Tensor(data, requires_grad=True, _parents=parents, _bwd=bwd)


def _accum(t: Tensor, g: np.ndarray):
    """Accumulate a gradient that may alias another tensor's grad (copied on
    first bind)."""
    if not (t.requires_grad or t._bwd is not None):
        return
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad += g


def _accum_owned(t: Tensor, g: np.ndarray):
    """Accumulate a gradient array created inside the calling closure (safe
    to bind without copying on first contribution)."""
    if not (t.requires_grad or t._bwd is not None):
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _raw(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def add(a, b) -> Tensor:
    ad, bd = _raw(a), _raw(b)
    out = ad + bd
    tracked = _track(a, b)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        if isinstance(a, Tensor):
            _accum(a, _unbroadcast(g, ad.shape))
        if isinstance(b, Tensor):
            _accum(b, _unbroadcast(g, bd.shape))

    return _result(out, (a, b), bwd, tracked)


def mul(a, b) -> Tensor:
    ad, bd = _raw(a), _raw(b)
    out = ad * bd
    tracked = _track(a, b)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        if isinstance(a, Tensor):
            _accum_owned(a, _unbroadcast(g * bd, ad.shape))
        if isinstance(b, Tensor):
            _accum_owned(b, _unbroadcast(g * ad, bd.shape))

    return _result(out, (a, b), bwd, tracked)


def matmul(a, b) -> Tensor:
    """Matrix product with leading batch dimensions: (..., m, k) @ (..., k, n)."""
    ad, bd = _raw(a), _raw(b)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner dimension mismatch: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    tracked = _track(a, b)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        if isinstance(a, Tensor):
            _accum_owned(a, _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape))
        if isinstance(b, Tensor):
            _accum_owned(b, _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape))

    return _result(out, (a, b), bwd, tracked)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0)
    tracked = _track(x)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        _accum_owned(x, g * mask)

    return _result(out, (x,), bwd, tracked)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    tracked = _track(x)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    return _result(out, (x,), bwd, tracked)


def transpose(x: Tensor, axes) -> Tensor:
    out = x.data.transpose(axes)
    tracked = _track(x)
    if not tracked:
        return Tensor(out)
    inverse = np.argsort(axes)

    def bwd(g):
        _accum(x, g.transpose(inverse))

    return _result(out, (x,), bwd, tracked)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along one axis."""
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    tracked = _track(x)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accum_owned(x, out * (g - inner))

    return _result(out, (x,), bwd, tracked)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    xd, gd, bd = _raw(x), _raw(gain), _raw(bias)
    if gd.shape != xd.shape[-1:] or bd.shape != xd.shape[-1:]:
        raise ValueError("gain/bias must match the last dimension")
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = centered * inv
    out = xhat * gd + bd
    tracked = _track(x, gain, bias)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        if isinstance(gain, Tensor):
            _accum_owned(gain, (g * xhat).reshape(-1, xd.shape[-1]).sum(axis=0))
        if isinstance(bias, Tensor):
            _accum_owned(bias, g.reshape(-1, xd.shape[-1]).sum(axis=0))
        if isinstance(x, Tensor):
            dxhat = g * gd
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum_owned(x, inv * (dxhat - m1 - xhat * m2))

    return _result(out, (x, gain, bias), bwd, tracked)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row gather: weight[(V, d)], ids int array (...,) -> (..., d)."""
    ids = np.asarray(ids)
    out = weight.data[ids]
    tracked = _track(weight)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        _accum_owned(weight, gw)

    return _result(out, (weight,), bwd, tracked)


def dropout(x: Tensor, rate: float, rng) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    mask = (rng.uniform(x.data.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, mask)


def sum_all(x: Tensor) -> Tensor:
    out = x.data.sum()
    tracked = _track(x)
    if not tracked:
        return Tensor(out)

    def bwd(g):
        _accum_owned(x, np.broadcast_to(g, x.data.shape).copy() if np.ndim(g) else
               np.full_like(x.data, g))

    return _result(out, (x,), bwd, tracked)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return mul(sum_all(x), 1.0 / n)


def cross_entropy(logits: Tensor, targets, label_smoothing: float = 0.0,
                  ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-ignored rows.

    With smoothing eps, the per-row target distribution puts (1 - eps) on the
    gold class and eps/vocab on every other class.
    """
    ld = _raw(logits)
    if ld.ndim != 2:
        raise ValueError(f"cross_entropy expects (batch, vocab) logits, got {ld.shape}")
    targets = np.asarray(targets)
    n, vocab = ld.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} does not match batch {n}")

    keep = np.ones(n, dtype=bool) if ignore_index is None else targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy: every target is ignored")
    safe_targets = np.where(keep, targets, 0)
    if safe_targets.min() < 0 or safe_targets.max() >= vocab:
        raise ValueError("target index out of vocabulary range")

    m = ld.max(axis=1, keepdims=True)
    z = ld - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse  # (n, vocab)

    eps = label_smoothing
    rows = np.arange(n)
    gold_lp = logp[rows, safe_targets]
    if eps > 0.0:
        total_lp = logp.sum(axis=1)
        per_row = -((1.0 - eps) * gold_lp + (eps / vocab) * (total_lp - gold_lp))
    else:
        per_row = -gold_lp
    loss_val = (per_row * keep).sum() / count

    tracked = _track(logits)
    if not tracked:
        return Tensor(np.asarray(loss_val, dtype=ld.dtype))

    def bwd(g):
        p = np.exp(logp)
        q = np.full_like(p, eps / vocab)
        q[rows, safe_targets] = 1.0 - eps
        # the smoothed target distribution has total mass 1 - eps/vocab
        q_mass = (1.0 - eps) + (vocab - 1) * eps / vocab
        dl = (p * q_mass - q) * (g / count)
        dl[~keep] = 0.0
        _accum_owned(logits, dl)

    return _result(np.asarray(loss_val, dtype=ld.dtype), (logits,), bwd, tracked)


def backward(loss: Tensor) -> None:
    """Populate .grad for every trainable leaf reachable from a scalar loss.
    Repeated calls without resetting grads accumulate."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    # iterative topological order (graphs are deeper than the recursion limit)
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p._bwd is not None or p.requires_grad):
                stack.append((p, False))

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is not None:
            node._bwd(node.grad)
