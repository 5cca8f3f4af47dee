"""Fast inference: plain-numpy forward pass with an incremental decoder
cache, plus batched greedy/beam decoding with fully deterministic tie-breaks.

Scoring: a hypothesis is ranked by cumulative log-probability during search
and by length-normalized score (logprob / length**penalty) at the end, where
length counts generated tokens including eos. Ties break by lower first
differing token index, then shorter hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    TranslationModel,
    encoder_input_ids,
    pad_bias,
    sinusoidal_positions,
)
from .tensor import NEG_INF
from .vocab import detokenize


@dataclass(frozen=True)
class BeamResult:
    """One decoded sample. tokens excludes the forced [lang tag, bos] prefix
    and the terminating eos."""

    tokens: tuple[int, ...]
    logprob: float
    score: float
    finished: bool


def _materialize(model: TranslationModel) -> dict[str, np.ndarray]:
    return {
        k: (v.astype(np.float32) if v.dtype == np.float16 else v)
        for k, v in model.params.items()
    }


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (c * inv) * g + b


def _heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _softmax(x, axis=-1):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(x):
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _attn_full(w, prefix, q_in, kv_in, bias, n_heads):
    dh = q_in.shape[-1] // n_heads
    q = _heads(q_in @ w[f"{prefix}.wq"], n_heads)
    k = _heads(kv_in @ w[f"{prefix}.wk"], n_heads)
    v = _heads(kv_in @ w[f"{prefix}.wv"], n_heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * dh**-0.5
    if bias is not None:
        scores = scores + bias
    return _merge_heads(_softmax(scores) @ v) @ w[f"{prefix}.wo"]


def _ffn(w, prefix, x):
    h = np.maximum(x @ w[f"{prefix}.w1"] + w[f"{prefix}.b1"], 0.0)
    return h @ w[f"{prefix}.w2"] + w[f"{prefix}.b2"]


def _embed(w, config, ids):
    t = ids.shape[-1]
    pos = sinusoidal_positions(config.max_positions, config.d_model)[:t]
    return w["embedding"][ids] * math.sqrt(config.d_model) + pos


def encode_np(model_or_w, config, src_ids, src_len):
    """(enc (N,Ts,d), src pad bias (N,1,1,Ts))."""
    w = model_or_w if isinstance(model_or_w, dict) else _materialize(model_or_w)
    bias = pad_bias(src_len, src_ids.shape[1])
    x = _embed(w, config, src_ids)
    for i in range(config.n_encoder_layers):
        p = f"enc.{i}"
        h = _ln(x, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
        x = x + _attn_full(w, f"{p}.attn", h, h, bias, config.n_heads)
        h = _ln(x, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
        x = x + _ffn(w, f"{p}.ffn", h)
    return _ln(x, w["enc.final_ln.g"], w["enc.final_ln.b"]), bias


def full_decoder_logits_np(model: TranslationModel, src_ids, src_len, dec_in):
    """Teacher-forced decoder logits (B, Tt, vocab), no cache; numpy mirror of
    the differentiable path (used for forced scoring and parity checks)."""
    w = _materialize(model)
    config = model.config
    enc, bias = encode_np(w, config, src_ids, src_len)
    tt = dec_in.shape[1]
    causal = np.triu(np.full((tt, tt), NEG_INF, dtype=np.float32), k=1)[None, None]
    x = _embed(w, config, dec_in)
    for i in range(config.n_decoder_layers):
        p = f"dec.{i}"
        h = _ln(x, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
        x = x + _attn_full(w, f"{p}.self", h, h, causal, config.n_heads)
        h = _ln(x, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
        x = x + _attn_full(w, f"{p}.cross", h, enc, bias, config.n_heads)
        h = _ln(x, w[f"{p}.ln3.g"], w[f"{p}.ln3.b"])
        x = x + _ffn(w, f"{p}.ffn", h)
    x = _ln(x, w["dec.final_ln.g"], w["dec.final_ln.b"])
    return x @ w["embedding"].T


def forced_token_logprobs(model: TranslationModel, records) -> np.ndarray:
    """Length-normalized log-probability of each record's target given its
    source under the model (mean over target characters + eos)."""
    from .model import build_batch

    src_ids, src_len, dec_in, dec_tgt = build_batch(
        model.vocab, records, model.config.max_positions)
    logits = full_decoder_logits_np(model, src_ids, src_len, dec_in)
    logp = _log_softmax(logits)
    pad = model.vocab.pad
    out = np.zeros(len(records), dtype=np.float64)
    for i in range(len(records)):
        keep = dec_tgt[i] != pad
        picked = logp[i, np.arange(dec_tgt.shape[1]), dec_tgt[i]]
        out[i] = picked[keep].mean()
    return out


# ---------------------------------------------------------------------------
# Incremental decoding
# ---------------------------------------------------------------------------


class _ModelStepper:
    """Row-parallel incremental decoder over R = n_samples * beam_size rows.
    Holds per-layer self-attention caches and precomputed cross K/V."""

    def __init__(self, model: TranslationModel, enc_inputs: list[list[int]],
                 tgt_langs: list[str], beam_size: int):
        self.w = _materialize(model)
        self.config = model.config
        self.vocab = model.vocab
        self.k = beam_size
        n = len(enc_inputs)
        self.n = n

        ts = max(len(s) for s in enc_inputs)
        src_ids = np.zeros((n, ts), dtype=np.int64)
        for i, s in enumerate(enc_inputs):
            src_ids[i, : len(s)] = s
        src_len = np.array([len(s) for s in enc_inputs], dtype=np.int64)
        enc, bias = encode_np(self.w, self.config, src_ids, src_len)

        h = self.config.n_heads
        self.cross_k = []
        self.cross_v = []
        for i in range(self.config.n_decoder_layers):
            p = f"dec.{i}.cross"
            self.cross_k.append(np.repeat(_heads(enc @ self.w[f"{p}.wk"], h), beam_size, axis=0))
            self.cross_v.append(np.repeat(_heads(enc @ self.w[f"{p}.wv"], h), beam_size, axis=0))
        self.cross_bias = np.repeat(bias, beam_size, axis=0)

        r = n * beam_size
        dh = self.config.d_model // h
        self.self_k = [np.zeros((r, h, 0, dh), dtype=np.float32)
                       for _ in range(self.config.n_decoder_layers)]
        self.self_v = [np.zeros((r, h, 0, dh), dtype=np.float32)
                       for _ in range(self.config.n_decoder_layers)]

        # prime with the forced [tgt tag, bos] prefix (positions 0 and 1)
        tags = np.repeat([self.vocab.lang_tag(t) for t in tgt_langs], beam_size)
        self._step(tags, 0)
        self._logits = self._step(np.full(r, self.vocab.bos, dtype=np.int64), 1)

    def prime_logits(self) -> np.ndarray:
        return self._logits

    def reorder(self, parent_rows: np.ndarray) -> None:
        for i in range(self.config.n_decoder_layers):
            self.self_k[i] = self.self_k[i][parent_rows]
            self.self_v[i] = self.self_v[i][parent_rows]

    def advance(self, token_ids: np.ndarray, gen_index: int) -> np.ndarray:
        """Feed the tokens generated at step gen_index (decoder position
        2 + gen_index) and return next-token logits (R, vocab)."""
        return self._step(token_ids, 2 + gen_index)

    def _step(self, ids: np.ndarray, position: int) -> np.ndarray:
        w, config = self.w, self.config
        h = config.n_heads
        dh = config.d_model // h
        pos = sinusoidal_positions(config.max_positions, config.d_model)[position]
        x = (w["embedding"][ids] * math.sqrt(config.d_model) + pos)[:, None, :]
        for i in range(config.n_decoder_layers):
            p = f"dec.{i}"
            hh = _ln(x, w[f"{p}.ln1.g"], w[f"{p}.ln1.b"])
            q = _heads(hh @ w[f"{p}.self.wq"], h)
            k_new = _heads(hh @ w[f"{p}.self.wk"], h)
            v_new = _heads(hh @ w[f"{p}.self.wv"], h)
            self.self_k[i] = np.concatenate([self.self_k[i], k_new], axis=2)
            self.self_v[i] = np.concatenate([self.self_v[i], v_new], axis=2)
            scores = (q @ self.self_k[i].transpose(0, 1, 3, 2)) * dh**-0.5
            ctx = _merge_heads(_softmax(scores) @ self.self_v[i]) @ w[f"{p}.self.wo"]
            x = x + ctx
            hh = _ln(x, w[f"{p}.ln2.g"], w[f"{p}.ln2.b"])
            q = _heads(hh @ w[f"{p}.cross.wq"], h)
            scores = (q @ self.cross_k[i].transpose(0, 1, 3, 2)) * dh**-0.5
            scores = scores + self.cross_bias
            ctx = _merge_heads(_softmax(scores) @ self.cross_v[i]) @ w[f"{p}.cross.wo"]
            x = x + ctx
            hh = _ln(x, w[f"{p}.ln3.g"], w[f"{p}.ln3.b"])
            x = x + _ffn(w, f"{p}.ffn", hh)
        x = _ln(x, w["dec.final_ln.g"], w["dec.final_ln.b"])
        return (x[:, 0, :] @ w["embedding"].T).astype(np.float32)


def _normalized(logprob: float, length: int, penalty: float) -> float:
    return logprob / max(length, 1) ** penalty


def _final_key(result_tokens: tuple, score: float):
    # higher score first, then lower first differing token, then shorter
    return (-score, result_tokens)


def beam_search_over_stepper(stepper, n_samples: int, vocab_size: int,
                             eos_id: int, beam_size: int, max_len: int,
                             length_penalty: float = 1.0) -> list[BeamResult]:
    """Core beam loop over any stepper exposing prime_logits / reorder /
    advance. Used by the model decoder and by table-driven test fixtures."""
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    k = beam_size
    r = n_samples * k

    cum = np.full((n_samples, k), -np.inf, dtype=np.float64)
    cum[:, 0] = 0.0
    tokens: list[tuple[int, ...]] = [() for _ in range(r)]
    alive = np.zeros((n_samples, k), dtype=bool)
    alive[:, 0] = True
    finished: list[list[tuple[tuple, float, float]]] = [[] for _ in range(n_samples)]

    logits = stepper.prime_logits()
    for g in range(max_len):
        logp = _log_softmax(logits.astype(np.float64))
        cand = cum[:, :, None] + logp.reshape(n_samples, k, vocab_size)
        cand[~alive] = -np.inf

        # dead slots default to row 0 of their own sample so cache gathers stay valid
        parent_rows = np.repeat(np.arange(n_samples) * k, k)
        next_ids = np.zeros(r, dtype=np.int64)
        new_cum = np.full((n_samples, k), -np.inf, dtype=np.float64)
        new_alive = np.zeros((n_samples, k), dtype=bool)
        new_tokens: list[tuple[int, ...]] = [() for _ in range(r)]

        for s in range(n_samples):
            flat = cand[s].ravel()
            finite = np.isfinite(flat)
            n_finite = int(finite.sum())
            if n_finite == 0:
                continue
            kk = min(k, n_finite)
            part = np.argpartition(-flat, kk - 1)[:kk]
            threshold = flat[part].min()
            pool = np.flatnonzero(flat >= threshold)
            pool = sorted(
                pool.tolist(),
                key=lambda f: (-flat[f], tokens[s * k + f // vocab_size] + (f % vocab_size,)),
            )[:kk]
            slot = 0
            for f in pool:
                j, tok = divmod(f, vocab_size)
                seq = tokens[s * k + j] + (tok,)
                if tok == eos_id:
                    lp = float(flat[f])
                    finished[s].append((seq, lp, _normalized(lp, len(seq), length_penalty)))
                else:
                    row = s * k + slot
                    parent_rows[row] = s * k + j
                    next_ids[row] = tok
                    new_cum[s, slot] = flat[f]
                    new_alive[s, slot] = True
                    new_tokens[row] = seq
                    slot += 1

        cum, alive, tokens = new_cum, new_alive, new_tokens
        if g == max_len - 1 or not alive.any():
            break
        stepper.reorder(parent_rows)
        logits = stepper.advance(next_ids, g)

    results = []
    for s in range(n_samples):
        if finished[s]:
            seq, lp, score = min(finished[s], key=lambda e: _final_key(e[0], e[2]))
            results.append(BeamResult(seq[:-1], lp, score, True))
        else:
            best = None
            for j in range(k):
                if not alive[s, j]:
                    continue
                seq = tokens[s * k + j]
                lp = float(cum[s, j])
                score = _normalized(lp, len(seq), length_penalty)
                cand_res = (seq, lp, score)
                if best is None or _final_key(cand_res[0], cand_res[2]) < _final_key(best[0], best[2]):
                    best = cand_res
            if best is None:
                results.append(BeamResult((), -math.inf, -math.inf, False))
            else:
                results.append(BeamResult(best[0], best[1], best[2], False))
    return results


def translate_batch(model: TranslationModel, sources: list[tuple[str, str, str]],
                    beam_size: int = 3, max_len: int = 64,
                    length_penalty: float = 1.0) -> list[BeamResult]:
    """Decode a batch of (src_text, src_lang, tgt_lang) triples."""
    if not sources:
        return []
    if 2 + max_len > model.config.max_positions:
        max_len = model.config.max_positions - 2
    enc_inputs = [encoder_input_ids(model.vocab, text, sl) for text, sl, _ in sources]
    too_long = [i for i, s in enumerate(enc_inputs) if len(s) > model.config.max_positions]
    if too_long:
        raise ValueError(f"source {too_long[0]} exceeds max_positions")
    stepper = _ModelStepper(model, enc_inputs, [t for _, _, t in sources], beam_size)
    return beam_search_over_stepper(
        stepper, len(sources), len(model.vocab), model.vocab.eos,
        beam_size, max_len, length_penalty)


def translate_records(model: TranslationModel, records, beam_size: int = 3,
                      max_len: int = 64, length_penalty: float = 1.0) -> list[str]:
    """Hypothesis strings for a list of parallel records (source side only)."""
    results = translate_batch(
        model, [(r.src, r.src_lang, r.tgt_lang) for r in records],
        beam_size, max_len, length_penalty)
    return [detokenize(r.tokens, model.vocab) for r in results]


def beam_search(model: TranslationModel, src_tokens, tgt_lang: str,
                beam_size: int = 3, max_len: int = 64,
                length_penalty: float = 1.0, *, src_lang: str) -> BeamResult:
    """Best hypothesis for one pre-tokenized source sequence."""
    vocab = model.vocab
    enc_ids = [vocab.lang_tag(src_lang)] + list(src_tokens) + [vocab.eos]
    if len(enc_ids) > model.config.max_positions:
        raise ValueError("source exceeds max_positions")
    if 2 + max_len > model.config.max_positions:
        max_len = model.config.max_positions - 2
    stepper = _ModelStepper(model, [enc_ids], [tgt_lang], beam_size)
    return beam_search_over_stepper(
        stepper, 1, len(vocab), vocab.eos, beam_size, max_len, length_penalty)[0]


def greedy_decode(model: TranslationModel, src_tokens, tgt_lang: str,
                  max_len: int = 64, *, src_lang: str) -> BeamResult:
    return beam_search(model, src_tokens, tgt_lang, beam_size=1,
                       max_len=max_len, src_lang=src_lang)
