"""Vectorized steering over many independent instances at once.

Shapes: values (N, K), grads (N, K, d), u_nom (N, d). Each function returns
(u_star (N, d), fallback (N,) bool). The math mirrors the single-instance
filters in this package; the test suite checks the two agree.
"""
from __future__ import annotations

import itertools

import numpy as np

from latentcbf.core import Mode, SteeringConfig
from latentcbf.steering.lse import compose_lse, lse_weights
from latentcbf.steering.qp import solve_enumeration

BATCH_QP_MAX_K = 8


def batch_slack(values, grads, u, alpha: float, delta: float) -> np.ndarray:
    return np.einsum("nkd,nd->nk", grads, u) + alpha * (values - delta)


def _single_row(u, a, margin, alpha):
    """Vectorized single-row closed form for rows a (N, d), margin (N,)."""
    deficit = -(np.einsum("nd,nd->n", a, u) + alpha * margin)
    norm2 = np.einsum("nd,nd->n", a, a)
    need = deficit > 0.0
    scale = np.where(need, deficit / np.where(need, norm2, 1.0), 0.0)
    return np.where(need[:, None], u + scale[:, None] * a, u)


def batch_steer_lse(values, grads, u_nom, config: SteeringConfig):
    alpha, delta = config.alpha, config.delta
    B = compose_lse(values, delta, config.kappa)
    w = lse_weights(values, delta, config.kappa)
    grad_B = np.einsum("nk,nkd->nd", w, grads)
    norm = np.sqrt(np.einsum("nd,nd->n", grad_B, grad_B))
    need = (np.einsum("nd,nd->n", grad_B, u_nom) + alpha * B < 0.0)
    degenerate = need & (norm < config.grad_floor)
    fix = need & ~degenerate
    u = _single_row(u_nom, np.where(fix[:, None], grad_B, 0.0), np.where(fix, B, 1.0), alpha)
    return np.where(fix[:, None], u, u_nom), degenerate


def batch_steer_qp(values, grads, u_nom, config: SteeringConfig):
    """Active-set enumeration vectorized over instances (small K only)."""
    N, K, d = grads.shape
    if K > BATCH_QP_MAX_K:
        raise ValueError(f"batched QP supports K <= {BATCH_QP_MAX_K}")
    c = -batch_slack(values, grads, u_nom, config.alpha, config.delta)
    norms = np.linalg.norm(grads, axis=2)
    usable = norms >= config.grad_floor
    fallback = np.any(~usable & (c > 0.0), axis=1)
    G = np.einsum("nid,njd->nij", grads, grads)
    scale = np.maximum(1.0, np.maximum(np.max(np.abs(c), axis=1), np.max(norms, axis=1) ** 2))
    tol = config.qp_tol * scale
    c_eff = np.where(usable, c, -np.inf)

    w_out = np.zeros((N, d))
    done = np.all(c <= 0.0, axis=1) | np.all(c_eff <= tol[:, None], axis=1)
    for size in range(1, K + 1):
        if np.all(done):
            break
        for S in itertools.combinations(range(K), size):
            todo = ~done & np.all(usable[:, S], axis=1)
            if not np.any(todo):
                continue
            idx = np.flatnonzero(todo)
            G_S = G[np.ix_(idx, S, S)]
            c_S = c[np.ix_(idx, S)]
            det = np.linalg.det(G_S)
            diag_prod = np.prod(np.diagonal(G_S, axis1=1, axis2=2), axis=1)
            ok = np.abs(det) > 1e-12 * diag_prod
            G_safe = np.where(ok[:, None, None], G_S, np.eye(size))
            lam = np.linalg.solve(G_safe, c_S[..., None])[..., 0]
            ok &= np.all(lam >= -tol[idx, None], axis=1)
            w = np.einsum("ns,nsd->nd", np.maximum(lam, 0.0), grads[np.ix_(idx, S)])
            Aw = np.einsum("nkd,nd->nk", grads[idx], w)
            ok &= np.all(Aw >= c_eff[idx] - tol[idx, None], axis=1)
            hit = idx[ok]
            w_out[hit] = w[ok]
            done[hit] = True
    # Rare leftovers (singular or infeasible systems) go through the scalar solver.
    for n in np.flatnonzero(~done):
        rows = np.flatnonzero(usable[n])
        sol = solve_enumeration(grads[n, rows], c[n, rows], config.qp_tol)
        w_out[n] = sol.w
        fallback[n] |= not sol.feasible
    passing = np.all(c <= 0.0, axis=1)
    return np.where(passing[:, None], u_nom, u_nom + w_out), fallback


def batch_steer_top2(values, grads, u_nom, config: SteeringConfig):
    N, K, d = grads.shape
    alpha = config.alpha
    margins = values - config.delta
    slack = batch_slack(values, grads, u_nom, alpha, config.delta)
    norms = np.linalg.norm(grads, axis=2)
    usable = norms >= config.grad_floor
    violated = slack < 0.0
    fallback = np.any(violated & ~usable, axis=1)
    cand = violated & usable
    rows = np.arange(N)

    key = np.where(cand, margins, np.inf)
    i1 = np.argmin(key, axis=1)
    has1 = np.isfinite(key[rows, i1])
    key2 = key.copy()
    key2[rows, i1] = np.inf
    i2 = np.argmin(key2, axis=1)
    has2 = has1 & np.isfinite(key2[rows, i2])

    a1 = grads[rows, i1]
    u_single = _single_row(u_nom, a1, margins[rows, i1], alpha)
    # pair a lone correction with the worst row it breaks
    only1 = has1 & ~has2
    if K > 1 and np.any(only1):
        after = batch_slack(values, grads, u_single, alpha, config.delta)
        broken = (after < -config.qp_tol) & usable
        broken[rows, i1] = False
        key3 = np.where(broken, margins, np.inf)
        j = np.argmin(key3, axis=1)
        pair_from_single = only1 & np.isfinite(key3[rows, j])
        i2 = np.where(pair_from_single, j, i2)
        has2 = has2 | pair_from_single

    a2 = grads[rows, i2]
    G11 = np.einsum("nd,nd->n", a1, a1)
    G22 = np.einsum("nd,nd->n", a2, a2)
    G12 = np.einsum("nd,nd->n", a1, a2)
    d1 = -slack[rows, i1]
    d2 = -slack[rows, i2]
    det = G11 * G22 - G12 * G12
    degenerate = has2 & (det < config.grad_floor * G11 * G22)
    fallback |= degenerate
    pos1, pos2 = np.maximum(d1, 0.0), np.maximum(d2, 0.0)
    safe_G11 = np.where(G11 > 0, G11, 1.0)
    safe_G22 = np.where(G22 > 0, G22, 1.0)
    safe_det = np.where(degenerate | (det == 0), 1.0, det)
    case_a = G12 * pos2 - G22 * d1 >= 0.0
    case_b = ~case_a & (G12 * pos1 - G11 * d2 >= 0.0)
    lam1 = np.where(case_a, 0.0, np.where(case_b, pos1 / safe_G11,
                                          np.maximum(G22 * d1 - G12 * d2, 0.0) / safe_det))
    lam2 = np.where(case_a, pos2 / safe_G22, np.where(case_b, 0.0,
                                                      np.maximum(G11 * d2 - G12 * d1, 0.0) / safe_det))
    u_pair = u_nom + lam1[:, None] * a1 + lam2[:, None] * a2

    use_pair = has2 & ~degenerate
    use_single = has1 & ~use_pair
    u = np.where(use_pair[:, None], u_pair, np.where(use_single[:, None], u_single, u_nom))
    return u, fallback


BATCH_STEERERS = {Mode.LSE: batch_steer_lse, Mode.QP: batch_steer_qp, Mode.TOP2: batch_steer_top2}


def batch_steer(values, grads, u_nom, config: SteeringConfig):
    return BATCH_STEERERS[config.mode](values, grads, u_nom, config)
