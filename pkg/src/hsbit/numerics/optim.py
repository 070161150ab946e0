from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamState":
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> list[Tensor]:
    """Apply one bias-corrected Adam update in place and return ``params``.

    A ``None`` gradient is treated as zero. Moments are lazily allocated if
    the state was created without them.
    """
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params) or len(grads) != len(params):
        raise DimensionError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.first_moment)} moment slots"
        )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if m.shape != p.shape:
            raise DimensionError(f"adam_step: moment shape {m.shape} != parameter shape {p.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise DimensionError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype, copy=False)
    return params
