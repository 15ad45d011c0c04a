from latentcbf.dynamics.nominal import NominalDynamics, NominalKind
from latentcbf.dynamics.rollout import (
    LatentTrajectory,
    NonFiniteStateError,
    VerificationReport,
    WrongBranchError,
    read_trajectory_jsonl,
    rollout,
    time_to_fraction,
    verify_invariance,
    verify_stabilization,
)
from latentcbf.dynamics.suite import (
    AnalyticFamily,
    FamilySpec,
    SharedBank,
    SuiteKind,
    SuiteSpec,
    alpha_sweep,
    rollout_batch,
    run_suite,
)

__all__ = [
    "AnalyticFamily", "FamilySpec", "LatentTrajectory", "NominalDynamics", "NominalKind",
    "NonFiniteStateError", "SharedBank", "SuiteKind", "SuiteSpec", "VerificationReport",
    "WrongBranchError", "alpha_sweep", "read_trajectory_jsonl", "rollout", "rollout_batch",
    "run_suite", "time_to_fraction", "verify_invariance", "verify_stabilization",
]
