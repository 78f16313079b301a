"""First-order optimizers updating :class:`Tensor` parameters in place."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Gradients, Tensor


class Optimizer:
    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = float(lr)
        self.t = 0

    def _grad_list(self, grads) -> list[np.ndarray]:
        if isinstance(grads, Gradients):
            out = [grads[p] for p in self.params]
        else:
            out = [np.asarray(g, dtype=np.float64) for g in grads]
        if len(out) != len(self.params):
            raise ShapeError(f"{len(out)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, out):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} ({p.name})")
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {p.name!r}")
        return out

    def step(self, grads) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def step(self, grads) -> None:
        gs = self._grad_list(grads)
        self.t += 1
        for p, g in zip(self.params, gs):
            p.data -= self.lr * g


class Adam(Optimizer):
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        gs = self._grad_list(grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, gs, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, params, lr: float) -> Optimizer:
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")
