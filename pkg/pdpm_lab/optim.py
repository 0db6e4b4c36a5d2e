"""
Bias-corrected Adam over lists of float64 arrays. Functional: adam_step
returns new parameter arrays and a new state; inputs are left untouched.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError
from .models import decode_array, encode_array


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], t=0)

    def to_dict(self) -> dict:
        return {"t": self.t, "m": [encode_array(a) for a in self.m], "v": [encode_array(a) for a in self.v]}

    @classmethod
    def from_dict(cls, data: dict) -> "AdamState":
        return cls(m=[decode_array(a) for a in data["m"]], v=[decode_array(a) for a in data["v"]],
                   t=int(data["t"]))


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 1e-4, beta1: float = 0.5, beta2: float = 0.9,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update. Returns (new_params, new_state)."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step", (len(params),), (len(grads),), "parameter/gradient count")
    t = state.t + 1
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError("adam_step", p.shape, g.shape)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(m=new_m, v=new_v, t=t)
