from latentcbf.steering.baselines import (
    baseline_activation_addition,
    baseline_directional_ablation,
    iterative_projection,
    steering_direction_from_data,
)
from latentcbf.steering.closed_form import (
    ClosedFormIntermediates,
    closed_form_pair,
    pair_multipliers,
    select_top2,
    single_row_control,
    steer_top2,
)
from latentcbf.steering.constraints import ConstraintRow, ConstraintSet, build_constraints
from latentcbf.steering.lse import compose_lse, lse_gradient, lse_weights, steer_lse
from latentcbf.steering.qp import kkt_residuals, steer_qp
from latentcbf.steering.session import SteeringSession, steer

__all__ = [
    "ClosedFormIntermediates", "ConstraintRow", "ConstraintSet", "SteeringSession",
    "baseline_activation_addition", "baseline_directional_ablation", "build_constraints",
    "closed_form_pair", "compose_lse", "iterative_projection", "kkt_residuals", "lse_gradient",
    "lse_weights", "pair_multipliers", "select_top2", "single_row_control", "steer",
    "steer_lse", "steer_qp", "steer_top2", "steering_direction_from_data",
]
