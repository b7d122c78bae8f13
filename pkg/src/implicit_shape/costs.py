"""Boundary cost integrands and the built-in closed-form functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, x, y):
        return np.full(np.broadcast(x, y).shape, float(self.value))

    def grad(self, x, y):
        shape = np.broadcast(x, y).shape
        return np.zeros(shape + (2,))


@dataclass(frozen=True)
class Circle:
    """(x - cx)^2 + (y - cy)^2 - r^2: negative inside the disk."""

    cx: float
    cy: float
    r: float

    def __call__(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 - self.r ** 2


@dataclass(frozen=True)
class Annulus:
    """max(circle(r_out), -circle(r_in)): negative inside the ring."""

    cx: float
    cy: float
    r_out: float
    r_in: float

    def __call__(self, x, y):
        d2 = (x - self.cx) ** 2 + (y - self.cy) ** 2
        return np.maximum(d2 - self.r_out ** 2, -d2 + self.r_in ** 2)


@dataclass(frozen=True)
class NormalDerivativeMisfit:
    """j(x, p) = 1/2 (p . n(x) - delta(x))^2 with n the outward normal.

    Gradients follow the convention that n is frozen: d/dx only sees delta.
    """

    delta: Constant = Constant(1.0)

    def value(self, x, grad_y, normal):
        r = self.residual(x, grad_y, normal)
        return 0.5 * r * r

    def residual(self, x, grad_y, normal):
        return np.einsum("kd,kd->k", grad_y, normal) - self.delta(x[:, 0], x[:, 1])

    def grad_x(self, x, grad_y, normal):
        r = self.residual(x, grad_y, normal)
        return -r[:, None] * self.delta.grad(x[:, 0], x[:, 1])

    def grad_p(self, x, grad_y, normal):
        r = self.residual(x, grad_y, normal)
        return r[:, None] * normal
