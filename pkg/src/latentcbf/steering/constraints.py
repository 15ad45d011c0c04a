from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from latentcbf.core import SteeringConfig, as_state


@dataclass(frozen=True)
class ConstraintRow:
    gradient: np.ndarray
    value: float
    threshold: float


@dataclass(frozen=True)
class ConstraintSet:
    """Linearized barrier constraints at h_prev.

    Row k reads  grads[k] . u + alpha * (values[k] - delta) >= 0.
    """

    grads: np.ndarray   # (K, d)
    values: np.ndarray  # (K,)
    delta: float = 0.0

    def __post_init__(self):
        grads = np.atleast_2d(np.asarray(self.grads, dtype=np.float64))
        values = np.atleast_1d(np.asarray(self.values, dtype=np.float64))
        if grads.ndim != 2 or values.shape != (grads.shape[0],):
            raise ValueError("need one gradient row per barrier value")
        if grads.shape[0] == 0:
            raise ValueError("constraint set is empty")
        if not (np.all(np.isfinite(grads)) and np.all(np.isfinite(values))):
            raise ValueError("constraint rows must be finite")
        object.__setattr__(self, "grads", grads)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_rows(cls, rows) -> "ConstraintSet":
        rows = list(rows)
        deltas = {float(r.threshold) for r in rows}
        if len(deltas) != 1:
            raise ValueError("rows must share one threshold")
        return cls(np.array([r.gradient for r in rows]), np.array([r.value for r in rows]), deltas.pop())

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.grads.shape[1]

    @property
    def margins(self) -> np.ndarray:
        return self.values - self.delta

    @property
    def rows(self) -> list[ConstraintRow]:
        return [ConstraintRow(g.copy(), float(v), self.delta) for g, v in zip(self.grads, self.values)]

    def slack(self, u, alpha: float) -> np.ndarray:
        """Left-hand side of every row at control u (>= 0 means satisfied)."""
        return self.grads @ u + alpha * self.margins

    def subset(self, idx) -> "ConstraintSet":
        idx = list(idx)
        return ConstraintSet(self.grads[idx], self.values[idx], self.delta)


def build_constraints(bank, h_prev, config: SteeringConfig) -> ConstraintSet:
    """Values and exact input gradients of every head at h_prev, in head order."""
    h_prev = as_state(h_prev, bank.input_dim, name="h_prev")
    values, grads = bank.value_and_jacobian(h_prev)
    return ConstraintSet(grads, values, config.delta)
