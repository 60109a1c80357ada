"""Adam with a step-decay learning rate schedule."""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 decay_rate: float = 0.7, decay_every: int = 20):
        if lr <= 0 or decay_every < 1 or not 0 < decay_rate <= 1:
            raise ValueError("invalid optimizer settings")
        self.base_lr = lr
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay_rate, self.decay_every = decay_rate, decay_every
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def set_epoch(self, epoch: int):
        """Learning rate for a 0-based epoch: decays by ``decay_rate`` every ``decay_every`` epochs."""
        self.lr = self.base_lr * self.decay_rate ** (epoch // self.decay_every)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Return updated copies of ``params``; moments are kept in float64."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            m = self.m.get(name, np.zeros(p.shape))
            v = self.v.get(name, np.zeros(p.shape))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            out[name] = (p.astype(np.float64) - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)
        return out
