"""Adam with bias correction, operating in place on parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Per-parameter first/second moments. The update denominator is
    sqrt(v_hat) + epsilon (the original formulation)."""

    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")

    @classmethod
    def init(cls, params, beta1: float = 0.9, beta2: float = 0.999,
             epsilon: float = 1e-8) -> "AdamState":
        return cls(
            step_count=0,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Mutates params and state in place and
    returns them. Non-finite gradients abort loudly."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ValueError("params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch: {p.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("adam_step: gradient is not finite; training must halt")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state
