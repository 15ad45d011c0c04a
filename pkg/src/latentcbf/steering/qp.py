"""Exact minimum-norm safety filter for the full constraint set.

Working in the correction w = u - u_nom, the problem is

    minimize |w|^2   subject to   A w >= c,   c = -(A u_nom + alpha * margins),

whose KKT point is w = A^T lam with lam >= 0. Small K is solved by
enumerating active sets; larger K by projected coordinate ascent on the
dual  max_{lam >= 0} c.lam - 0.5 lam^T G lam,  G = A A^T.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from latentcbf.core import Mode, SteeringConfig, SteeringOutcome, advance, as_state
from latentcbf.steering.constraints import ConstraintSet

ENUMERATION_MAX_K = 12
MAX_SWEEPS = 20000


@dataclass
class QPSolution:
    w: np.ndarray
    lam: np.ndarray
    feasible: bool
    method: str
    iterations: int = 0


def kkt_residuals(A, c, w, lam) -> dict:
    """Primal, dual, complementarity and stationarity residuals of (w, lam)."""
    Aw = A @ w
    return {
        "primal": float(max(0.0, np.max(c - Aw))) if len(c) else 0.0,
        "dual": float(max(0.0, -np.min(lam))) if len(lam) else 0.0,
        "complementarity": float(np.max(np.abs(lam * (Aw - c)))) if len(c) else 0.0,
        "stationarity": float(np.max(np.abs(w - A.T @ lam))) if len(c) else float(np.max(np.abs(w))),
    }


def _scale(A, c) -> float:
    return max(1.0, float(np.max(np.abs(c))), float(np.max(np.sum(A * A, axis=1))))


def solve_enumeration(A, c, tol: float) -> QPSolution:
    """Try active sets in order of increasing size; the first KKT point wins."""
    K = A.shape[0]
    G = A @ A.T
    tol = tol * _scale(A, c)
    if np.all(c <= tol):
        return QPSolution(np.zeros(A.shape[1]), np.zeros(K), True, "enumeration")
    for size in range(1, K + 1):
        for S in itertools.combinations(range(K), size):
            S = list(S)
            G_S = G[np.ix_(S, S)]
            lam_S, *_ = np.linalg.lstsq(G_S, c[S], rcond=None)
            if np.max(np.abs(G_S @ lam_S - c[S])) > tol or np.min(lam_S) < -tol:
                continue
            lam = np.zeros(K)
            lam[S] = np.maximum(lam_S, 0.0)
            w = A.T @ lam
            if np.all(A @ w >= c - tol):
                return QPSolution(w, lam, True, "enumeration")
    return _least_violating(A, c, "enumeration")


def solve_dual_ascent(A, c, tol: float, max_sweeps: int = MAX_SWEEPS) -> QPSolution:
    K = A.shape[0]
    G = A @ A.T
    diag = np.diag(G).copy()
    tol = tol * _scale(A, c)
    lam = np.zeros(K)
    q = np.zeros(K)  # G @ lam
    for sweep in range(1, max_sweeps + 1):
        for k in range(K):
            step = max(0.0, lam[k] + (c[k] - q[k]) / diag[k]) - lam[k]
            if step != 0.0:
                lam[k] += step
                q += step * G[:, k]
        viol = np.max(c - q)
        compl = np.max(np.abs(lam * (q - c)))
        if viol <= tol and compl <= tol:
            return QPSolution(A.T @ lam, lam, True, "dual_ascent", sweep)
    sol = _least_violating(A, c, "dual_ascent")
    sol.iterations = max_sweeps
    return sol


def _least_violating(A, c, method: str) -> QPSolution:
    # Infeasible (or unconverged) system: nonnegative least squares on the dual
    # gives a multiplier whose primal image best matches the demanded slacks.
    lam, _ = nnls(A @ A.T, c)
    return QPSolution(A.T @ lam, lam, False, method)


def _passthrough(h_prev, u_nom, cons, config, mode) -> SteeringOutcome:
    return SteeringOutcome(
        u_star=u_nom, corrected_state=advance(h_prev, u_nom, config.dt),
        barrier_values_before=cons.values, barrier_values_after=None,
        active_constraints=(), mode_used=mode,
    )


def steer_qp(h_prev, u_nom, cons: ConstraintSet, config: SteeringConfig,
             method: str = "auto") -> SteeringOutcome:
    """Closest control to u_nom satisfying every linearized barrier row."""
    h_prev = as_state(h_prev, cons.dim, name="h_prev")
    u_nom = as_state(u_nom, cons.dim, name="u_nom")
    slack = cons.slack(u_nom, config.alpha)
    if np.all(slack >= 0.0):
        return _passthrough(h_prev, u_nom, cons, config, Mode.QP)

    norms = np.linalg.norm(cons.grads, axis=1)
    usable = np.flatnonzero(norms >= config.grad_floor)
    fallback = len(usable) < cons.n_rows and bool(np.any(slack[norms < config.grad_floor] < 0.0))
    if len(usable) == 0:
        return SteeringOutcome(u_nom, advance(h_prev, u_nom, config.dt), cons.values, None, (),
                               Mode.QP, fallback_triggered=True, infeasible=True)
    A = cons.grads[usable]
    c = -slack[usable]
    if method == "auto":
        method = "enumeration" if len(usable) <= ENUMERATION_MAX_K else "dual_ascent"
    if method == "enumeration":
        sol = solve_enumeration(A, c, config.qp_tol)
    elif method == "dual_ascent":
        sol = solve_dual_ascent(A, c, config.qp_tol)
    else:
        raise ValueError(f"unknown QP method {method!r}")

    u_star = u_nom + sol.w
    active = tuple(int(usable[i]) for i in np.flatnonzero(sol.lam > 0.0))
    info = {"method": sol.method, "iterations": sol.iterations, "multipliers": sol.lam,
            "kkt": kkt_residuals(A, c, sol.w, sol.lam)}
    return SteeringOutcome(
        u_star=u_star, corrected_state=advance(h_prev, u_star, config.dt),
        barrier_values_before=cons.values, barrier_values_after=None,
        active_constraints=active, mode_used=Mode.QP,
        fallback_triggered=fallback or not sol.feasible, infeasible=not sol.feasible, info=info,
    )
