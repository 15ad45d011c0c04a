"""Closed-form filter over at most two constraints (Top-2 mode).

Notation follows the two-constraint derivation: g_i = -grad b_i,
h_i = alpha * (b_i - delta), u_hat = u_nom, h_hat_i = h_i - g_i . u_hat, and
the Gram matrix G_ij = <g_i, g_j>. Constraint i holds at u_hat exactly when
h_hat_i >= 0.

The multipliers below are the KKT-consistent ones: lam_i >= 0 and

    u* = u_hat - lam_1 g_1 - lam_2 g_2 = u_hat + lam_1 grad b_1 + lam_2 grad b_2,

with a multiplier switched on only for a row that would otherwise be violated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from latentcbf.core import Mode, SteeringConfig, SteeringOutcome, advance, as_state
from latentcbf.steering.constraints import ConstraintSet


@dataclass(frozen=True)
class ClosedFormIntermediates:
    g1: np.ndarray
    g2: np.ndarray
    h1: float
    h2: float
    u_hat: np.ndarray
    h1_hat: float
    h2_hat: float
    gram: np.ndarray
    lambda1: float
    lambda2: float
    degenerate: bool = False

    @property
    def u_star(self) -> np.ndarray:
        return self.u_hat - self.lambda1 * self.g1 - self.lambda2 * self.g2


def _pos(x: float) -> float:
    return x if x > 0.0 else 0.0


def pair_multipliers(gram, h1_hat: float, h2_hat: float) -> tuple[float, float]:
    """Three-case solution of the two-row problem in terms of the Gram matrix."""
    G11, G12, G22 = gram[0, 0], gram[0, 1], gram[1, 1]
    d1, d2 = -h1_hat, -h2_hat  # demanded increase of each row
    # only row 2 active: its correction alone also satisfies row 1
    if G12 * _pos(d2) - G22 * d1 >= 0.0:
        return 0.0, _pos(d2) / G22
    # only row 1 active
    if G12 * _pos(d1) - G11 * d2 >= 0.0:
        return _pos(d1) / G11, 0.0
    det = G11 * G22 - G12 * G12
    return _pos(G22 * d1 - G12 * d2) / det, _pos(G11 * d2 - G12 * d1) / det


def closed_form_pair(grad1, grad2, margin1: float, margin2: float, u_nom, alpha: float,
                     grad_floor: float = 1e-12) -> ClosedFormIntermediates:
    g1 = -np.asarray(grad1, dtype=np.float64)
    g2 = -np.asarray(grad2, dtype=np.float64)
    u_hat = np.asarray(u_nom, dtype=np.float64)
    h1, h2 = alpha * margin1, alpha * margin2
    h1_hat = h1 - float(g1 @ u_hat)
    h2_hat = h2 - float(g2 @ u_hat)
    gram = np.array([[g1 @ g1, g1 @ g2], [g2 @ g1, g2 @ g2]])
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] * gram[1, 0]
    if det < grad_floor * gram[0, 0] * gram[1, 1]:
        return ClosedFormIntermediates(g1, g2, h1, h2, u_hat, h1_hat, h2_hat, gram, 0.0, 0.0, True)
    lam1, lam2 = pair_multipliers(gram, h1_hat, h2_hat)
    return ClosedFormIntermediates(g1, g2, h1, h2, u_hat, h1_hat, h2_hat, gram, lam1, lam2)


def single_row_control(u_nom, grad, margin: float, alpha: float) -> np.ndarray:
    """u_nom + [-(grad.u_nom + alpha*margin)]_+ / |grad|^2 * grad."""
    deficit = -(float(grad @ u_nom) + alpha * margin)
    if deficit <= 0.0:
        return u_nom
    return u_nom + (deficit / float(grad @ grad)) * grad


def select_top2(cons: ConstraintSet, u_nom, alpha: float) -> tuple[int, ...]:
    """Up to two rows violated under u_nom, smallest barrier margin first.

    Ties go to the lower index. Indices are 0-based head indices.
    """
    slack = cons.slack(np.asarray(u_nom, dtype=np.float64), alpha)
    violated = np.flatnonzero(slack < 0.0)
    if len(violated) == 0:
        return ()
    order = np.lexsort((violated, cons.margins[violated]))
    return tuple(int(i) for i in violated[order[:2]])


def steer_top2(h_prev, u_nom, cons: ConstraintSet, config: SteeringConfig) -> SteeringOutcome:
    h_prev = as_state(h_prev, cons.dim, name="h_prev")
    u_nom = as_state(u_nom, cons.dim, name="u_nom")
    alpha = config.alpha
    selected = select_top2(cons, u_nom, alpha)
    fallback = False
    norms = np.linalg.norm(cons.grads, axis=1)
    usable = [i for i in selected if norms[i] >= config.grad_floor]
    if len(usable) < len(selected):
        fallback = True
    margins = cons.margins
    info: dict = {"selected": selected}

    if len(usable) == 1:
        i = usable[0]
        u_star = single_row_control(u_nom, cons.grads[i], margins[i], alpha)
        # A single correction can push a row that was fine under u_nom out of
        # bounds; pair it with the worst such row so the answer is the exact
        # two-row optimum.
        rest = [j for j in range(cons.n_rows) if j != i and norms[j] >= config.grad_floor]
        if rest:
            slack = cons.grads[rest] @ u_star + alpha * margins[rest]
            broken = [j for j, s in zip(rest, slack) if s < -config.qp_tol]
            if broken:
                j = min(broken, key=lambda k: (margins[k], k))
                usable = [i, j]
                info["paired_after_single"] = j
    if len(usable) == 0:
        u_star = u_nom
    elif len(usable) == 2:
        i, j = usable
        inter = closed_form_pair(cons.grads[i], cons.grads[j], margins[i], margins[j], u_nom, alpha,
                                 config.grad_floor)
        info["intermediates"] = inter
        if inter.degenerate:
            fallback = True
            usable = [i]
            u_star = single_row_control(u_nom, cons.grads[i], margins[i], alpha)
        else:
            u_star = inter.u_star
            usable = [k for k, lam in zip((i, j), (inter.lambda1, inter.lambda2)) if lam > 0.0]
    return SteeringOutcome(
        u_star=u_star, corrected_state=advance(h_prev, u_star, config.dt),
        barrier_values_before=cons.values, barrier_values_after=None,
        active_constraints=tuple(usable), mode_used=Mode.TOP2,
        fallback_triggered=fallback, info=info,
    )
