from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from latentcbf.core import Mode, SteeringConfig, SteeringOutcome, as_state
from latentcbf.steering.closed_form import single_row_control, steer_top2
from latentcbf.steering.constraints import ConstraintSet, build_constraints
from latentcbf.steering.lse import compose_lse, lse_weights, steer_lse
from latentcbf.steering.qp import steer_qp

_DISPATCH = {Mode.QP: steer_qp, Mode.TOP2: steer_top2, Mode.LSE: steer_lse}


def steer(h_prev, u_nom, cons: ConstraintSet, config: SteeringConfig) -> SteeringOutcome:
    return _DISPATCH[config.mode](h_prev, u_nom, cons, config)


@dataclass(frozen=True)
class SteeringSession:
    """A barrier bank paired with a steering configuration."""

    bank: object
    config: SteeringConfig = SteeringConfig()

    def control(self, h_prev, u_nom) -> np.ndarray:
        """Filtered control only (no after-step bookkeeping).

        LSE mode skips the per-head Jacobian and uses one fused gradient of
        the composed barrier; the result equals `step(...).u_star` up to
        floating-point summation order.
        """
        cfg = self.config
        if cfg.mode is Mode.LSE and hasattr(self.bank, "values_and_weighted_gradient"):
            u_nom = as_state(u_nom, self.bank.input_dim, name="u_nom")
            values, grad_B = self.bank.values_and_weighted_gradient(
                h_prev, lambda v: lse_weights(v, cfg.delta, cfg.kappa))
            B = compose_lse(values, cfg.delta, cfg.kappa)
            if float(grad_B @ u_nom) + cfg.alpha * B >= 0.0:
                return u_nom
            if np.sqrt(float(grad_B @ grad_B)) < cfg.grad_floor:
                return u_nom
            return single_row_control(u_nom, grad_B, B, cfg.alpha)
        cons = build_constraints(self.bank, h_prev, cfg)
        return steer(h_prev, u_nom, cons, cfg).u_star

    def step(self, h_prev, u_nom) -> SteeringOutcome:
        h_prev = as_state(h_prev, self.bank.input_dim, name="h_prev")
        cons = build_constraints(self.bank, h_prev, self.config)
        out = steer(h_prev, u_nom, cons, self.config)
        return replace(out, barrier_values_after=self.bank.values(out.corrected_state))

    def step_states(self, h_prev, h_t) -> SteeringOutcome:
        """Steer the transition h_prev -> h_t (nominal velocity from the pair)."""
        from latentcbf.core import nominal_control

        return self.step(h_prev, nominal_control(h_prev, h_t, self.config.dt))
