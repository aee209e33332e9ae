"""
Adam with decoupled weight decay.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Mapping

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moments, step counter and hyperparameters of one optimizer."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    no_decay: FrozenSet[str] = frozenset()
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]
) -> Mapping[str, Tensor]:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Weight decay is decoupled: ``w <- w - lr * wd * w`` before the Adam
    delta, skipped for names in ``state.no_decay``.
    """
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient for unknown parameter '{name}'")
        if g.shape != params[name].shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g

        if state.weight_decay and name not in state.no_decay:
            p.data -= state.lr * state.weight_decay * p.data
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


class Adam:
    """Thin wrapper binding an AdamState to a fixed parameter set."""

    def __init__(self, params: Mapping[str, Tensor], **hyper):
        self.params = dict(params)
        self.state = AdamState(**hyper)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        adam_step(self.state, self.params, grads)
