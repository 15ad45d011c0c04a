"""Reference steering methods that act directly on states.

Activation addition and directional ablation use a difference-in-means
direction; the iterative projection is a gradient-descent repair used as
the latency reference for the closed-form filters.
"""
from __future__ import annotations

import numpy as np

from latentcbf.core import DataContractError, as_state


def steering_direction_from_data(dataset) -> np.ndarray:
    """mean(safe states) - mean(unsafe states)."""
    X = np.asarray(dataset.states, dtype=np.float64)
    y = np.asarray(dataset.labels)
    safe, unsafe = X[y > 0], X[y < 0]
    if len(safe) == 0 or len(unsafe) == 0:
        raise DataContractError("difference-in-means needs both safe and unsafe states")
    return safe.mean(axis=0) - unsafe.mean(axis=0)


def baseline_activation_addition(h, r, coefficient: float = 1.0) -> np.ndarray:
    h = as_state(h)
    r = as_state(r, h.shape[0], name="direction")
    return h + coefficient * r


def baseline_directional_ablation(h, r, grad_floor: float = 1e-12) -> np.ndarray:
    """Remove the component of h along r."""
    h = as_state(h)
    r = as_state(r, h.shape[0], name="direction")
    rr = float(r @ r)
    if np.sqrt(rr) < grad_floor:
        raise ValueError("ablation direction is (numerically) zero")
    return h - r * (float(r @ h) / rr)


def iterative_projection(bank, h, delta: float = 0.0, iterations: int = 100,
                         learning_rate: float = 1e-2, penalty: float = 10.0) -> np.ndarray:
    """Gradient descent on |x - h|^2 + penalty * sum_k [delta - b_k(x)]_+^2.

    Every iteration needs barrier values and a gradient at the iterate,
    which is what makes this style of repair expensive per token.
    """
    h = as_state(h, bank.input_dim)
    x = h.copy()
    for _ in range(iterations):
        _, pull = bank.values_and_weighted_gradient(x, lambda v: np.maximum(delta - v, 0.0))
        grad = 2.0 * (x - h) - 2.0 * penalty * pull
        x = x - learning_rate * grad
    return x
