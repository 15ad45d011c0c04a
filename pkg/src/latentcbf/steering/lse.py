"""Log-sum-exp merge of K barriers into one smooth composed barrier.

    B(h) = -(1/kappa) * log sum_k exp(-kappa * (b_k(h) - delta))

B never exceeds the smallest margin and trails it by at most log(K)/kappa,
so B >= 0 certifies every b_k >= delta.
"""
from __future__ import annotations

import numpy as np

from latentcbf.core import Mode, SteeringConfig, SteeringOutcome, advance, as_state
from latentcbf.steering.closed_form import single_row_control
from latentcbf.steering.constraints import ConstraintSet


def compose_lse(values, delta: float = 0.0, kappa: float = 10.0):
    """Composed barrier over the last axis of `values` (max-shifted for stability)."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    m = np.asarray(values, dtype=np.float64) - delta
    if m.shape[-1] == 0:
        raise ValueError("need at least one barrier value")
    m_min = m.min(axis=-1, keepdims=True)
    s = np.exp(-kappa * (m - m_min)).sum(axis=-1, keepdims=True)
    B = (m_min - np.log(s) / kappa)[..., 0]
    return float(B) if B.ndim == 0 else B


def lse_weights(values, delta: float = 0.0, kappa: float = 10.0) -> np.ndarray:
    """Softmin weights exp(-kappa m_k) / sum_j exp(-kappa m_j); these form grad B."""
    m = np.asarray(values, dtype=np.float64) - delta
    e = np.exp(-kappa * (m - m.min(axis=-1, keepdims=True)))
    return e / e.sum(axis=-1, keepdims=True)


def lse_gradient(bank, h, delta: float = 0.0, kappa: float = 10.0) -> np.ndarray:
    values, grads = bank.value_and_jacobian(h)
    return lse_weights(values, delta, kappa) @ grads


def steer_lse(h_prev, u_nom, cons: ConstraintSet, config: SteeringConfig) -> SteeringOutcome:
    """Single-constraint closed form applied to the composed barrier."""
    h_prev = as_state(h_prev, cons.dim, name="h_prev")
    u_nom = as_state(u_nom, cons.dim, name="u_nom")
    alpha = config.alpha

    def outcome(u, active=(), fallback=False, info=None):
        return SteeringOutcome(u, advance(h_prev, u, config.dt), cons.values, None, active, Mode.LSE,
                               fallback_triggered=fallback, info=info or {})

    B = compose_lse(cons.values, cons.delta, config.kappa)
    w = lse_weights(cons.values, cons.delta, config.kappa)
    grad_B = w @ cons.grads
    info = {"B": B, "weights": w}
    active = tuple(int(k) for k in np.flatnonzero(w >= 1e-3))
    if float(grad_B @ u_nom) + alpha * B >= 0.0:
        return outcome(u_nom, info=info)
    if np.sqrt(float(grad_B @ grad_B)) < config.grad_floor:
        return outcome(u_nom, fallback=True, info=info)
    u_star = single_row_control(u_nom, grad_B, B, alpha)
    return outcome(u_star, active, info=info)
