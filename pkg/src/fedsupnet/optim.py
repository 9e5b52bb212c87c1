"""Parameter update rules: SGD, Adam, and layer-wise normalized momentum.

Optimizers mutate the parameter fields in place and keep their own state.
One optimizer instance belongs to one training context.
"""

from __future__ import annotations

import numpy as np

from .engine import SpatialField


class Optimizer:
    def __init__(self, lr: float):
        if lr < 0:
            raise ValueError(f"invalid learning rate {lr}")
        self.lr = lr

    def step(self, params: dict[str, SpatialField]):
        raise NotImplementedError

    def zero_grad(self, params: dict[str, SpatialField]):
        for p in params.values():
            p.zero_grad()

    @staticmethod
    def _grad(name: str, p: SpatialField) -> np.ndarray:
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        return p.grad


class SGD(Optimizer):
    def step(self, params):
        for name, p in params.items():
            g = self._grad(name, p)
            p.data -= self.lr * g


class Adam(Optimizer):
    """Standard bias-corrected first/second moment updates."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = self._grad(name, p)
            m = self._m.setdefault(name, np.zeros_like(p.data))
            v = self._v.setdefault(name, np.zeros_like(p.data))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class NovoGrad(Optimizer):
    """Momentum over per-layer normalized gradients.

    Each parameter tensor is one layer: its second moment is the scalar
    EMA of the squared gradient norm, seeded with the first step's norm;
    the first moment accumulates g/(sqrt(v)+eps) plus decoupled weight
    decay. No bias correction.
    """

    def __init__(self, lr=1e-3, betas=(0.95, 0.98), eps=1e-8, weight_decay=0.0):
        super().__init__(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, float] = {}

    def step(self, params):
        self.t += 1
        for name, p in params.items():
            g = self._grad(name, p)
            norm2 = float((g * g).sum())
            if name not in self._v:
                self._v[name] = norm2
            else:
                self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * norm2
            m = self._m.setdefault(name, np.zeros_like(p.data))
            upd = g / (np.sqrt(self._v[name]) + self.eps)
            if self.weight_decay:
                upd = upd + self.weight_decay * p.data
            m *= self.beta1
            m += upd
            p.data -= self.lr * m


def make_optimizer(kind: str, lr: float, **kwargs) -> Optimizer:
    kind = kind.lower()
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr, **kwargs)
    if kind == "novograd":
        return NovoGrad(lr, **kwargs)
    raise ValueError(f"unknown optimizer {kind!r}")
