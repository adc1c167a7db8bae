"""Adam with bias correction and the two weight-decay readings."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    """Adam over a list of leaf tensors.

    ``decay_mode="lr"`` shrinks the learning rate geometrically per epoch,
    ``lr * (1 - weight_decay) ** epoch``; ``decay_mode="l2"`` adds
    ``weight_decay * w`` to each gradient instead.
    """

    def __init__(self, params, lr=5e-5, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=5e-4, decay_mode="lr"):
        if decay_mode not in ("lr", "l2"):
            raise ValueError(f"unknown decay_mode {decay_mode!r}")
        self.params = list(params)
        self.decay_mode = decay_mode
        self.base_lr = lr
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                               weight_decay=weight_decay,
                               m=[np.zeros_like(p.data) for p in self.params],
                               v=[np.zeros_like(p.data) for p in self.params])

    def set_epoch(self, epoch: int) -> float:
        st = self.state
        st.lr = self.base_lr * (1.0 - st.weight_decay) ** epoch if self.decay_mode == "lr" else self.base_lr
        return st.lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        st = self.state
        grads = []
        for p in self.params:
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {p.name or '?'}")
            if self.decay_mode == "l2" and st.weight_decay:
                g = g + st.weight_decay * p.data
            grads.append(g)
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for p, g, m, v in zip(self.params, grads, st.m, st.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)


def adam_step(params, grads, state: AdamState):
    """Functional form: update ``params`` (arrays) in place from ``grads``."""
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {i}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        p -= state.lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.eps)
    return params, state
