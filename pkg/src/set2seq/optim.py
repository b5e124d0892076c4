"""Adam with bias-corrected moment estimates."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v_moment: list = field(default_factory=list)

    def init(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v_moment = [np.zeros_like(p.data) for p in params]
        self.step_count = 0
        return self


def adam_step(params, state):
    """Update ``params`` in place from their ``.grad`` and reset the grads to zero."""
    params = list(params)
    if not state.m:
        state.init(params)
    if len(state.m) != len(params):
        raise ValueError(f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {p.name or i!r} has no gradient")
        if state.m[i].shape != p.data.shape:
            raise ValueError(f"optimizer state for {p.name or i!r} has shape {state.m[i].shape}, parameter has {p.data.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.m, state.v_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = np.zeros_like(p.data)
