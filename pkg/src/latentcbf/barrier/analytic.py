"""Closed-form barriers with exact gradients, used as ground truth in tests
and in the verification suites."""
from __future__ import annotations

import numpy as np


class HalfSpace:
    """b(h) = w.h + c."""

    kind = "halfspace"
    n_heads = 1

    def __init__(self, w, c: float = 0.0):
        self.w = np.asarray(w, dtype=np.float64).ravel()
        self.c = float(c)
        self.input_dim = self.w.shape[0]

    def values(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = X @ self.w + self.c
        return out[..., None]

    def values_and_jacobians(self, X):
        X = np.asarray(X, dtype=np.float64)
        jac = np.broadcast_to(self.w, (X.shape[0], 1, self.input_dim)).copy()
        return self.values(X), jac

    def value_and_jacobian(self, h):
        vals, jac = self.values_and_jacobians(np.asarray(h, dtype=np.float64)[None, :])
        return vals[0], jac[0]

    def head(self, k: int):
        if k != 0:
            raise IndexError(k)
        return self

    def __repr__(self):
        return f"HalfSpace(w={self.w.tolist()}, c={self.c})"


class Sphere:
    """Ball barrier.

    inside=True:  b(h) = r^2 - |h - center|^2   (stay inside the ball)
    inside=False: b(h) = |h - center|^2 - r^2   (stay outside, an obstacle)
    """

    kind = "sphere"
    n_heads = 1

    def __init__(self, center, radius: float = 1.0, inside: bool = True):
        self.center = np.asarray(center, dtype=np.float64).ravel()
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.inside = bool(inside)
        self.input_dim = self.center.shape[0]

    @property
    def _sign(self) -> float:
        return 1.0 if self.inside else -1.0

    def values(self, X):
        X = np.asarray(X, dtype=np.float64)
        diff = X - self.center
        out = self._sign * (self.radius ** 2 - np.sum(diff * diff, axis=-1))
        return out[..., None]

    def values_and_jacobians(self, X):
        X = np.asarray(X, dtype=np.float64)
        jac = (-2.0 * self._sign) * (X - self.center)
        return self.values(X), jac[:, None, :]

    def value_and_jacobian(self, h):
        vals, jac = self.values_and_jacobians(np.asarray(h, dtype=np.float64)[None, :])
        return vals[0], jac[0]

    def head(self, k: int):
        if k != 0:
            raise IndexError(k)
        return self

    def __repr__(self):
        return f"Sphere(center={self.center.tolist()}, radius={self.radius}, inside={self.inside})"
