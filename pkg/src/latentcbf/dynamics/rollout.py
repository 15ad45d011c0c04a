"""Closed-loop latent rollouts and the numerical checks run on them."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from latentcbf.core import SteeringConfig, advance, as_state
from latentcbf.dynamics.nominal import NominalDynamics
from latentcbf.steering.constraints import build_constraints
from latentcbf.steering.lse import compose_lse
from latentcbf.steering.session import steer


class NonFiniteStateError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"rollout produced a non-finite state at step {step}")
        self.step = step


class WrongBranchError(ValueError):
    """The start state does not meet the precondition of the requested check."""


@dataclass
class LatentTrajectory:
    states: np.ndarray           # (T+1, d)
    controls: np.ndarray         # (T, d) applied (filtered) controls
    dt: float
    barrier_trace: np.ndarray    # (T+1, K)
    composed_trace: np.ndarray   # (T+1,)
    nominal_controls: np.ndarray | None = None
    fallbacks: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.controls) != len(self.states) - 1:
            raise ValueError("need exactly one control per transition")

    @property
    def steps(self) -> int:
        return len(self.controls)

    def recurrence_holds(self) -> bool:
        """h_t == h_{t-1} + u_{t-1} dt, compared bitwise."""
        return bool(np.array_equal(self.states[1:], advance(self.states[:-1], self.controls, self.dt)))

    def records(self):
        """One dict per time step (controls are null on the last state)."""
        for t in range(len(self.states)):
            yield {
                "t": t,
                "state": self.states[t].tolist(),
                "control": self.controls[t].tolist() if t < self.steps else None,
                "barrier_values": self.barrier_trace[t].tolist(),
                "B": float(self.composed_trace[t]),
            }

    def export_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def read_trajectory_jsonl(path) -> np.ndarray:
    """States from a records file written by `export_jsonl` (or any file with a
    "state" field per line)."""
    states = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                states.append(json.loads(line)["state"])
    return np.asarray(states, dtype=np.float64)


def rollout(start, nominal: NominalDynamics, bank, config: SteeringConfig, steps: int,
            steer_enabled: bool = True) -> LatentTrajectory:
    if steps < 1:
        raise ValueError("steps must be at least 1")
    h = as_state(start, bank.input_dim, name="start")
    states = [h]
    controls, nominals, traces = [], [], []
    fallbacks = 0
    for t in range(steps):
        u_nom = np.asarray(nominal(h, t), dtype=np.float64)
        if steer_enabled:
            cons = build_constraints(bank, h, config)
            out = steer(h, u_nom, cons, config)
            u, h_next = out.u_star, out.corrected_state
            fallbacks += out.fallback_triggered
            traces.append(cons.values)
        else:
            u, h_next = u_nom, advance(h, u_nom, config.dt)
            traces.append(bank.values(h))
        if not np.all(np.isfinite(h_next)):
            raise NonFiniteStateError(t + 1)
        controls.append(u)
        nominals.append(u_nom)
        states.append(h_next)
        h = h_next
    traces.append(bank.values(h))
    trace = np.array(traces)
    return LatentTrajectory(np.array(states), np.array(controls), config.dt, trace,
                            compose_lse(trace, config.delta, config.kappa), np.array(nominals),
                            fallbacks, config.to_dict())


@dataclass
class VerificationReport:
    invariance_violations: int = 0
    worst_margin: float = math.inf
    stabilization_bound_holds: bool | None = None
    worst_ratio: float | None = None
    steps: int = 0
    tolerance_used: float = 0.0
    scenarios: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.stabilization_bound_holds is not None:
            return bool(self.stabilization_bound_holds)
        return self.invariance_violations == 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        for key in ("worst_margin", "worst_ratio"):
            if isinstance(out[key], float) and not math.isfinite(out[key]):
                out[key] = None
        return out

    @staticmethod
    def merge(reports) -> "VerificationReport":
        reports = list(reports)
        out = VerificationReport(
            invariance_violations=sum(r.invariance_violations for r in reports),
            worst_margin=min(r.worst_margin for r in reports),
            steps=max(r.steps for r in reports),
            tolerance_used=max(r.tolerance_used for r in reports),
            scenarios=sum(r.scenarios for r in reports),
        )
        stab = [r for r in reports if r.stabilization_bound_holds is not None]
        if stab:
            out.stabilization_bound_holds = all(r.stabilization_bound_holds for r in stab)
            out.worst_ratio = max(r.worst_ratio for r in stab)
        return out


def invariance_counts(margin_trace: np.ndarray, tol: float):
    """margin_trace (T+1, ...) of min_k(b_k - delta). Returns (violations, worst)."""
    return int(np.count_nonzero(margin_trace[1:] < -tol)), float(np.min(margin_trace))


def verify_invariance(trajectory: LatentTrajectory, bank, delta: float = 0.0,
                      tol: float = 0.0) -> VerificationReport:
    margins = bank.values(trajectory.states) - delta
    min_margin = margins.min(axis=1)
    if min_margin[0] < 0.0:
        raise WrongBranchError("invariance check needs a safe start (min_k b_k(h_0) >= delta)")
    count, worst = invariance_counts(min_margin, tol)
    return VerificationReport(count, worst, steps=trajectory.steps, tolerance_used=tol)


def stabilization_check(V: np.ndarray, alpha: float, dt: float, tol: float, tol_abs: float,
                        arrived: np.ndarray | None = None):
    """V (T+1, ...) with V[0] >= 0. Checks the exponential envelope at every
    step up to and including the first arrival step; `arrived` marks steps
    that count as arrival (default V <= 0).

    Returns (holds (...) bool, worst_ratio (...)).
    """
    V = np.asarray(V, dtype=np.float64)
    t = np.arange(V.shape[0]).reshape((-1,) + (1,) * (V.ndim - 1))
    envelope = V[0] * np.exp(-alpha * t * dt)
    if arrived is None:
        arrived = V <= 0.0
    reached = np.cumsum(arrived, axis=0) > 0
    # include the first step that reaches the set; ignore everything after
    checked = ~np.concatenate([np.zeros_like(reached[:1]), reached[:-1]], axis=0)
    ok = (V <= envelope * (1.0 + tol) + tol_abs) | ~checked
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(checked & (envelope > 0), V / envelope, -np.inf)
    worst = np.max(ratio, axis=0)
    worst = np.where(np.isfinite(worst), worst, 0.0)
    return np.all(ok, axis=0), worst


STOP_RULES = ("composed", "safe_set")


def arrival_mask(values: np.ndarray, delta: float, kappa: float, stop_at: str) -> np.ndarray:
    """values (..., K). "composed": B >= 0; "safe_set": every b_k >= delta."""
    if stop_at == "composed":
        return compose_lse(values, delta, kappa) >= 0.0
    if stop_at == "safe_set":
        return np.min(values, axis=-1) - delta >= 0.0
    raise ValueError(f"stop_at must be one of {STOP_RULES}")


def verify_stabilization(trajectory: LatentTrajectory, bank, config: SteeringConfig,
                         tol: float = 0.05, tol_abs: float | None = None,
                         stop_at: str = "composed") -> VerificationReport:
    """V = -B along the trajectory must stay under V(h_0) e^{-alpha t dt}
    (times 1 + tol, plus tol_abs) until the state arrives."""
    values = bank.values(trajectory.states)
    V = -np.asarray(compose_lse(values, config.delta, config.kappa))
    if V[0] < 0.0:
        raise WrongBranchError("stabilization check needs an unsafe start (B(h_0) <= 0)")
    if tol_abs is None:
        tol_abs = 10.0 * trajectory.dt ** 2
    holds, worst = stabilization_check(V, config.alpha, trajectory.dt, tol, tol_abs,
                                       arrival_mask(values, config.delta, config.kappa, stop_at))
    return VerificationReport(0, float(np.min(values - config.delta)),
                              stabilization_bound_holds=bool(holds), worst_ratio=float(worst),
                              steps=trajectory.steps, tolerance_used=tol,
                              extra={"tol_abs": tol_abs, "stop_at": stop_at})


def time_to_fraction(V: np.ndarray, dt: float, fraction: float = 0.01) -> float:
    """First time at which V falls to `fraction` of V[0] (inf if never)."""
    V = np.asarray(V, dtype=np.float64)
    hit = np.flatnonzero(V <= fraction * V[0])
    return float(hit[0] * dt) if hit.size else math.inf
