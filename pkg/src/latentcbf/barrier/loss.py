"""Hinge losses for fitting barrier banks to labeled states.

The `*_hinge` functions work on a precomputed value matrix (N states x K
heads) and also return the gradient with respect to that matrix, which the
trainer pushes back through the networks.
"""
from __future__ import annotations

import numpy as np

from latentcbf.core import SafetyLabel


def safe_hinge(values):
    """sum_n sum_k max(0, -b_k(h_n)) and its gradient w.r.t. `values`."""
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    loss = float(np.maximum(-values, 0.0).sum())
    grad = np.where(values < 0.0, -1.0, 0.0)
    return loss, grad


def unsafe_hinge(values, epsilon: float):
    """sum_n max(0, min_k b_k(h_n) + epsilon) and its (sub)gradient.

    Ties in the minimum route the subgradient to the lowest-index head.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    grad = np.zeros_like(values)
    if values.shape[0] == 0:
        return 0.0, grad
    idx = np.argmin(values, axis=1)
    rows = np.arange(values.shape[0])
    slack = values[rows, idx] + epsilon
    active = slack > 0.0
    grad[rows[active], idx[active]] = 1.0
    return float(slack[active].sum()), grad


def _states_with_label(states, labels, want: SafetyLabel) -> np.ndarray:
    if hasattr(states, "states") and hasattr(states, "labels"):
        labels = states.labels
        states = states.states
    elif len(states) and not isinstance(states, np.ndarray) and hasattr(states[0], "label"):
        labels = [s.label for s in states]
        states = np.array([s.state for s in states])
    states = np.asarray(states, dtype=np.float64)
    if labels is not None:
        labels = np.asarray([int(SafetyLabel.parse(l)) for l in labels])
        if np.any(labels != int(want)):
            raise ValueError(f"batch for the {want.name.lower()} loss contains other labels")
    return states.reshape(-1, states.shape[-1]) if states.size else states


def loss_safe(bank, states, labels=None) -> float:
    """Safe-set loss of a bank on a batch of safe states."""
    X = _states_with_label(states, labels, SafetyLabel.SAFE)
    if X.size == 0:
        return 0.0
    return safe_hinge(bank.values(X))[0]


def loss_unsafe(bank, states, epsilon: float, labels=None) -> float:
    """Unsafe-set loss of a bank on a batch of unsafe states."""
    X = _states_with_label(states, labels, SafetyLabel.UNSAFE)
    if X.size == 0:
        return 0.0
    return unsafe_hinge(bank.values(X), epsilon)[0]


def total_loss(bank, safe_states, unsafe_states, config) -> float:
    """loss_safe + lambda_unsafe * loss_unsafe."""
    return (loss_safe(bank, safe_states)
            + config.lambda_unsafe * loss_unsafe(bank, unsafe_states, config.epsilon_margin))
