"""Adam optimizer with a fused in-place update kernel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .engine import Tensor


@njit(cache=True)
def _adam_update(p, g, m, v, lr, beta1, beta2, eps):
    # lr carries the bias correction: lr * sqrt(1-b2^t) / (1-b1^t)
    one = p.dtype.type(1.0)
    for i in range(p.size):
        m[i] = beta1 * m[i] + (one - beta1) * g[i]
        v[i] = beta2 * v[i] + (one - beta2) * g[i] * g[i]
        p[i] -= lr * m[i] / (np.sqrt(v[i]) + eps)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    moments: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on each parameter's data."""
    state.t += 1
    t = state.t
    # Standard form p -= lr * m_hat / (sqrt(v_hat) + eps), with the bias
    # corrections folded into lr and eps (algebraically identical).
    lr_t = state.lr * np.sqrt(1.0 - state.beta2**t) / (1.0 - state.beta1**t)
    for p in params:
        if p.grad is None:
            g = np.zeros_like(p.data)
        else:
            g = np.ascontiguousarray(p.grad, dtype=p.data.dtype)
        key = id(p)
        if key not in state.moments:
            state.moments[key] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[key]
        dt = p.data.dtype.type
        _adam_update(
            p.data.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
            dt(lr_t), dt(state.beta1), dt(state.beta2),
            dt(state.eps * np.sqrt(1.0 - state.beta2**t)),
        )
