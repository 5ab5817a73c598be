"""First-order optimisers operating in place on ``Tensor.data``."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    # defaults follow the TensorFlow/Keras implementation (epsilon = 1e-7)
    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = (p.data - lr_t * m / (np.sqrt(v) + self.eps)).astype(p.dtype)

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}


class SGD:
    """Plain / momentum / Nesterov-momentum SGD (Keras update convention)."""

    def __init__(self, params: list[Tensor], lr: float = 0.01, momentum: float = 0.0,
                 nesterov: bool = False):
        self.params = list(params)
        self.lr, self.momentum, self.nesterov = lr, momentum, nesterov
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        for p, g, vel in zip(self.params, grads, self.velocity):
            vel *= self.momentum
            vel -= self.lr * g
            if self.nesterov:
                update = self.momentum * vel - self.lr * g
            else:
                update = vel
            p.data = (p.data + update).astype(p.dtype)
