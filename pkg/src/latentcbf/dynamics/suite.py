"""Randomized scenario suites: many independent (barriers, start, nominal)
rollouts advanced together as one vectorized batch.

Every scenario has its own analytic barrier bank made of half-spaces,
stay-inside balls and obstacle balls. The origin is strictly safe for every
generated bank, which makes rejection sampling of safe starts cheap.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from latentcbf.barrier.analytic import HalfSpace, Sphere
from latentcbf.barrier.bank import BarrierBank
from latentcbf.core import SteeringConfig, advance
from latentcbf.dynamics.nominal import NominalDynamics
from latentcbf.dynamics.rollout import (
    NonFiniteStateError,
    VerificationReport,
    invariance_counts,
    stabilization_check,
)
from latentcbf.steering.batch import batch_steer
from latentcbf.steering.lse import compose_lse


class AnalyticFamily:
    """N independent analytic banks with the same head layout.

    Heads are ordered: half-spaces, then inside balls, then obstacle balls.
    """

    def __init__(self, normals, offsets, in_centers, in_radii, out_centers, out_radii):
        self.normals = np.asarray(normals, dtype=np.float64)        # (N, Kh, d)
        self.offsets = np.asarray(offsets, dtype=np.float64)        # (N, Kh)
        self.in_centers = np.asarray(in_centers, dtype=np.float64)  # (N, Ki, d)
        self.in_radii = np.asarray(in_radii, dtype=np.float64)      # (N, Ki)
        self.out_centers = np.asarray(out_centers, dtype=np.float64)
        self.out_radii = np.asarray(out_radii, dtype=np.float64)
        self.size, _, self.input_dim = self.normals.shape
        self.n_heads = self.normals.shape[1] + self.in_radii.shape[1] + self.out_radii.shape[1]
        if self.n_heads < 1:
            raise ValueError("family needs at least one head")

    def subset(self, idx) -> "AnalyticFamily":
        return AnalyticFamily(self.normals[idx], self.offsets[idx], self.in_centers[idx],
                              self.in_radii[idx], self.out_centers[idx], self.out_radii[idx])

    def values_and_jacobians(self, X):
        """X (N, d) with row n evaluated under scenario n's bank."""
        vals, jacs = [], []
        if self.normals.shape[1]:
            vals.append(np.einsum("nkd,nd->nk", self.normals, X) + self.offsets)
            jacs.append(self.normals)
        for centers, radii, sign in ((self.in_centers, self.in_radii, 1.0),
                                     (self.out_centers, self.out_radii, -1.0)):
            if radii.shape[1]:
                diff = X[:, None, :] - centers
                vals.append(sign * (radii ** 2 - np.einsum("nkd,nkd->nk", diff, diff)))
                jacs.append(-2.0 * sign * diff)
        return np.concatenate(vals, axis=1), np.concatenate(jacs, axis=1)

    def values(self, X):
        return self.values_and_jacobians(X)[0]

    def bank(self, n: int) -> BarrierBank:
        """Scenario n as an ordinary bank, heads in the same order."""
        parts = [HalfSpace(w, c) for w, c in zip(self.normals[n], self.offsets[n])]
        parts += [Sphere(c, r, inside=True) for c, r in zip(self.in_centers[n], self.in_radii[n])]
        parts += [Sphere(c, r, inside=False) for c, r in zip(self.out_centers[n], self.out_radii[n])]
        return BarrierBank(parts)


class SharedBank:
    """Adapter so one ordinary bank serves every row of a batch."""

    def __init__(self, bank):
        self.bank = bank
        self.input_dim = bank.input_dim
        self.n_heads = bank.n_heads

    def values_and_jacobians(self, X):
        return self.bank.values_and_jacobians(X)

    def values(self, X):
        return self.bank.values(X)


def _unit(rng, shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class FamilySpec:
    """Head counts and sizes for randomly generated analytic banks."""

    n_halfspaces: int = 2
    n_inside: int = 0
    n_obstacles: int = 1
    offset_range: tuple = (0.5, 1.5)        # half-space margin at the origin
    inside_radius: tuple = (1.5, 2.5)
    obstacle_radius: tuple = (0.3, 0.8)
    obstacle_gap: tuple = (0.4, 1.2)        # distance from origin to obstacle surface


def random_family(n: int, d: int, rng, spec: FamilySpec = FamilySpec()) -> AnalyticFamily:
    normals = _unit(rng, (n, spec.n_halfspaces, d))
    offsets = rng.uniform(*spec.offset_range, size=(n, spec.n_halfspaces))
    in_radii = rng.uniform(*spec.inside_radius, size=(n, spec.n_inside))
    # inside-ball centers stay within 30% of the radius so the origin is interior
    in_centers = _unit(rng, (n, spec.n_inside, d)) * (0.3 * in_radii * rng.uniform(size=in_radii.shape))[..., None]
    out_radii = rng.uniform(*spec.obstacle_radius, size=(n, spec.n_obstacles))
    gap = rng.uniform(*spec.obstacle_gap, size=(n, spec.n_obstacles))
    out_centers = _unit(rng, (n, spec.n_obstacles, d)) * (out_radii + gap)[..., None]
    return AnalyticFamily(normals, offsets, in_centers, in_radii, out_centers, out_radii)


def sample_starts(family, rng, box: float = 1.5, want_safe: bool = True, delta: float = 0.0,
                  kappa: float | None = None, tries: int = 50) -> np.ndarray:
    """Uniform box samples, rejected until safe (or unsafe) under each scenario.

    With `kappa` set, safety is judged by the composed barrier B >= 0 rather
    than by min_k b_k >= delta. B >= 0 is the set the composed filter keeps
    invariant; a state with every b_k >= delta but B < 0 is handled by the
    filter as a recovering state and may dip below a single b_k on the way.

    Safe sampling falls back to the origin, which every generated bank keeps
    strictly safe. Unsafe sampling widens the box until it succeeds.
    """
    n, d = family.size, family.input_dim
    starts = np.zeros((n, d))
    todo = np.ones(n, dtype=bool)
    for attempt in range(tries):
        cand = rng.uniform(-box, box, size=(n, d))
        vals = family.values(cand)
        if kappa is None:
            margin = vals.min(axis=1) - delta
        else:
            margin = compose_lse(vals, delta, kappa)
        good = todo & ((margin >= 0.0) if want_safe else (margin < 0.0))
        starts[good] = cand[good]
        todo &= ~good
        if not np.any(todo):
            break
        if not want_safe:
            box *= 1.2
    if np.any(todo) and not want_safe and isinstance(family, AnalyticFamily) and family.out_radii.shape[1]:
        # small obstacles are hard to hit by chance; place the start inside one
        idx = np.flatnonzero(todo)
        radius = family.out_radii[idx, 0] * rng.uniform(0.0, 0.9, size=idx.size)
        starts[idx] = family.out_centers[idx, 0] + _unit(rng, (idx.size, d)) * radius[:, None]
        todo[idx] = False
    if np.any(todo) and not want_safe:
        raise RuntimeError("could not sample unsafe starts")
    return starts


@dataclass
class BatchRollout:
    margin_trace: np.ndarray     # (T+1, N) min_k (b_k - delta)
    composed_trace: np.ndarray   # (T+1, N)
    final_states: np.ndarray     # (N, d)
    fallbacks: np.ndarray        # (N,) steps that needed a fallback
    states: np.ndarray | None = None   # (T+1, N, d) when kept
    controls: np.ndarray | None = None  # (T, N, d) when kept


def rollout_batch(starts, nominal: NominalDynamics, family, config: SteeringConfig, steps: int,
                  steer_enabled: bool = True, keep_states: bool = False) -> BatchRollout:
    if steps < 1:
        raise ValueError("steps must be at least 1")
    H = np.array(starts, dtype=np.float64)
    N = H.shape[0]
    margins, composed = [], []
    fallbacks = np.zeros(N, dtype=np.int64)
    states = [H] if keep_states else None
    controls = [] if keep_states else None
    for t in range(steps + 1):
        vals, grads = family.values_and_jacobians(H)
        margins.append(vals.min(axis=1) - config.delta)
        composed.append(compose_lse(vals, config.delta, config.kappa))
        if t == steps:
            break
        u_nom = nominal(H, t)
        if steer_enabled:
            u, fb = batch_steer(vals, grads, u_nom, config)
            fallbacks += fb
        else:
            u = u_nom
        H = advance(H, u, config.dt)
        if not np.all(np.isfinite(H)):
            raise NonFiniteStateError(t + 1)
        if keep_states:
            states.append(H)
            controls.append(u)
    return BatchRollout(np.array(margins), np.array(composed), H, fallbacks,
                        np.array(states) if keep_states else None,
                        np.array(controls) if keep_states else None)


class SuiteKind(str, enum.Enum):
    SAFE_START = "safe_start"
    UNSAFE_START = "unsafe_start"
    NEGATIVE_CONTROL = "negative_control"


@dataclass
class Scenarios:
    """One homogeneous batch: a family, starts and a batched nominal model."""

    family: AnalyticFamily
    starts: np.ndarray
    nominal: NominalDynamics
    label: str


@dataclass(frozen=True)
class SuiteSpec:
    kind: SuiteKind = SuiteKind.SAFE_START
    n_scenarios: int = 10_000
    dims: tuple = (2, 8)
    steps: int = 500
    seed: int = 0
    family: FamilySpec = field(default_factory=FamilySpec)
    target_box: float = 3.0
    gain: tuple = (0.2, 1.0)
    spin: tuple = (0.2, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", SuiteKind(self.kind))
        if self.n_scenarios < 1 or self.steps < 1:
            raise ValueError("n_scenarios and steps must be positive")


def _drift(rng, n, d, spec: SuiteSpec):
    target = rng.uniform(-spec.target_box, spec.target_box, size=(n, d))
    return NominalDynamics.drift_to_target(target, rng.uniform(*spec.gain, size=n))


def _spiral(rng, n, d, spec: SuiteSpec):
    # outward spiral: slow expansion plus a random rotation in a random plane
    a, b = _unit(rng, (n, d)), _unit(rng, (n, d))
    b -= np.einsum("nd,nd->n", a, b)[:, None] * a
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    skew = np.einsum("ni,nj->nij", a, b) - np.einsum("ni,nj->nij", b, a)
    spin = rng.uniform(*spec.spin, size=n)[:, None, None]
    A = 0.2 * np.eye(d) + spin * skew
    return NominalDynamics.linear(A)


def build_scenarios(spec: SuiteSpec, delta: float = 0.0, kappa: float = 10.0, bank=None,
                    box: float = 1.5) -> list[Scenarios]:
    """Split the scenario budget evenly across dims and nominal kinds.

    Each (dim, nominal kind) group draws from its own seed derived from
    (spec.seed, dim, group) so groups are reproducible independently.
    With `bank` given, every scenario shares that bank (its input dimension
    replaces spec.dims) and starts are drawn from [-box, box]^d; scenarios
    with no suitable start after rejection sampling are dropped.
    """
    if bank is not None:
        return _model_scenarios(spec, delta, kappa, bank, box)
    groups = [(d, which) for d in spec.dims for which in ("drift", "spiral")]
    base, extra = divmod(spec.n_scenarios, len(groups))
    out = []
    for gi, (d, which) in enumerate(groups):
        n = base + (gi < extra)
        if n == 0:
            continue
        rng = np.random.default_rng([spec.seed, d, gi])
        family = random_family(n, d, rng, spec.family)
        if spec.kind is SuiteKind.UNSAFE_START:
            starts = sample_starts(family, rng, box=3.0, want_safe=False, delta=delta)
            nominal = _drift(rng, n, d, spec) if which == "drift" else _spiral(rng, n, d, spec)
        else:
            starts = sample_starts(family, rng, delta=delta, kappa=kappa)
            nominal = _drift(rng, n, d, spec) if which == "drift" else _spiral(rng, n, d, spec)
        out.append(Scenarios(family, starts, nominal, f"d={d}/{which}"))
    return out


def _model_scenarios(spec, delta, kappa, bank, box):
    d = bank.input_dim
    shared = SharedBank(bank)
    out = []
    for gi, which in enumerate(("drift", "spiral")):
        n = spec.n_scenarios // 2 + (gi < spec.n_scenarios % 2)
        if n == 0:
            continue
        rng = np.random.default_rng([spec.seed, d, gi])
        want_safe = spec.kind is not SuiteKind.UNSAFE_START
        starts = np.empty((0, d))
        for _ in range(20):
            cand = rng.uniform(-box, box, size=(4 * n, d))
            vals = bank.values(cand)
            score = compose_lse(vals, delta, kappa) if want_safe else vals.min(axis=1) - delta
            keep = cand[(score >= 0.0) if want_safe else (score < 0.0)]
            starts = np.vstack([starts, keep])[:n]
            if len(starts) == n:
                break
        if len(starts) == 0:
            continue
        m = len(starts)
        nominal = _drift(rng, m, d, spec) if which == "drift" else _spiral(rng, m, d, spec)
        out.append(Scenarios(shared, starts, nominal, f"model d={d}/{which}"))
    if not out:
        raise RuntimeError("no suitable start states found for the model bank")
    return out


def violation_mass(margin_trace: np.ndarray, dt: float) -> float:
    """Time-integrated depth of excursions outside the safe set."""
    return float(np.sum(np.maximum(-margin_trace[1:], 0.0)) * dt)


def run_suite(spec: SuiteSpec, config: SteeringConfig, tol: float | None = None,
              tol_abs: float | None = None, stab_tol: float = 0.05,
              stop_at: str = "composed", bank=None, box: float = 1.5) -> VerificationReport:
    """Run every scenario group and merge the per-group reports in order.

    safe_start and negative_control count invariance violations (the latter
    with steering disabled); unsafe_start checks the exponential envelope.
    """
    dt = config.dt
    if tol is None:
        tol = 10.0 * dt ** 2
    if tol_abs is None:
        tol_abs = 10.0 * dt ** 2
    reports, groups = [], {}
    for sc in build_scenarios(spec, config.delta, config.kappa, bank, box):
        steer_enabled = spec.kind is not SuiteKind.NEGATIVE_CONTROL
        res = rollout_batch(sc.starts, sc.nominal, sc.family, config, spec.steps, steer_enabled)
        n = sc.starts.shape[0]
        if spec.kind is SuiteKind.UNSAFE_START:
            V = -res.composed_trace
            arrived = (V <= 0.0) if stop_at == "composed" else (res.margin_trace >= 0.0)
            holds, worst = stabilization_check(V, config.alpha, dt, stab_tol, tol_abs, arrived)
            rep = VerificationReport(0, float(res.margin_trace.min()), bool(np.all(holds)),
                                     float(worst.max()), spec.steps, stab_tol, n)
            groups[sc.label] = {"bound_failures": int(np.count_nonzero(~holds)),
                                "worst_ratio": float(worst.max()),
                                "arrived": int(np.count_nonzero(arrived.any(axis=0)))}
        else:
            count, worst = invariance_counts(res.margin_trace, tol)
            rep = VerificationReport(count, worst, steps=spec.steps, tolerance_used=tol, scenarios=n)
            groups[sc.label] = {"violations": count, "worst_margin": worst,
                                "violating_scenarios": int(np.count_nonzero((res.margin_trace[1:] < -tol).any(axis=0))),
                                "violation_mass": violation_mass(res.margin_trace, dt)}
        groups[sc.label]["fallback_steps"] = int(res.fallbacks.sum())
        reports.append(rep)
    merged = VerificationReport.merge(reports)
    merged.extra = {"suite": spec.kind.value, "groups": groups, "tol_abs": tol_abs,
                    "stop_at": stop_at if spec.kind is SuiteKind.UNSAFE_START else None,
                    "failing_scenarios": sum(g.get("bound_failures", 0) for g in groups.values()),
                    "violation_mass": sum(g.get("violation_mass", 0.0) for g in groups.values())}
    return merged


def suite_violation_mass(spec: SuiteSpec, config: SteeringConfig) -> float:
    """Violation mass over the safe-start and unsafe-start variants of `spec`."""
    total = 0.0
    for kind in (SuiteKind.SAFE_START, SuiteKind.UNSAFE_START):
        sub = SuiteSpec(kind, spec.n_scenarios, spec.dims, spec.steps, spec.seed, spec.family,
                        spec.target_box, spec.gain, spec.spin)
        for sc in build_scenarios(sub, config.delta, config.kappa):
            res = rollout_batch(sc.starts, sc.nominal, sc.family, config, spec.steps)
            total += violation_mass(res.margin_trace, config.dt)
    return total


def alpha_sweep(spec: SuiteSpec, config: SteeringConfig, alphas=(0.01, 0.1, 0.3, 1.0)) -> dict:
    """Violation mass of the same scenarios for each alpha.

    Safe starts contribute only discretization overshoot; unsafe starts
    contribute the excursion until recovery, which shrinks as alpha grows.
    """
    return {a: suite_violation_mass(spec, config.replace(alpha=a)) for a in alphas}


__all__ = [
    "AnalyticFamily", "BatchRollout", "FamilySpec", "Scenarios", "SharedBank", "SuiteKind",
    "SuiteSpec", "alpha_sweep", "suite_violation_mass", "build_scenarios", "random_family", "rollout_batch", "run_suite",
    "sample_starts", "violation_mass",
]
