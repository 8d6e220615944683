"""Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8 by default)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


class MissingGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, state: AdamState) -> None:
    """Apply one Adam update in place, then clear every gradient."""
    for name, t in params.items():
        if t.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
    state.step += 1
    t_ = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t_
    c2 = 1.0 - b2**t_
    for name, t in params.items():
        g = t.grad.astype(np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(t.shape)
            state.v[name] = np.zeros(t.shape)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        t.data = (t.data - update).astype(t.data.dtype)
    params.zero_grad()


class Adam:
    def __init__(self, params: ParameterStore, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def step(self):
        adam_step(self.params, self.state)
