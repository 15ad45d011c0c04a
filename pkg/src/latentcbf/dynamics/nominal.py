"""Nominal (unsteered) latent dynamics used to drive rollouts.

Each model maps a state to a velocity. All of them accept either one state
(d,) or a batch (N, d); batched parameters carry a leading N axis.
"""
from __future__ import annotations

import enum

import numpy as np


class NominalKind(str, enum.Enum):
    LINEAR = "linear"
    DRIFT_TO_TARGET = "drift_to_target"
    REPLAY = "replay"


class NominalDynamics:
    """u_nom = f(h, t).

    linear:           u = A h                      (A is (d, d) or (N, d, d))
    drift_to_target:  u = gain * (target - h)       (target (d,) or (N, d))
    replay:           u = controls[t]               (controls (T, d) or (N, T, d))
    """

    def __init__(self, kind, **params):
        self.kind = NominalKind(kind)
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        need = {NominalKind.LINEAR: {"A"},
                NominalKind.DRIFT_TO_TARGET: {"target", "gain"},
                NominalKind.REPLAY: {"controls"}}[self.kind]
        if set(self.params) != need:
            raise ValueError(f"{self.kind.value} dynamics take parameters {sorted(need)}")
        for key, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"parameter {key} contains non-finite entries")

    @classmethod
    def linear(cls, A):
        return cls(NominalKind.LINEAR, A=A)

    @classmethod
    def drift_to_target(cls, target, gain=1.0):
        return cls(NominalKind.DRIFT_TO_TARGET, target=target, gain=gain)

    @classmethod
    def replay(cls, controls):
        return cls(NominalKind.REPLAY, controls=controls)

    @classmethod
    def from_states(cls, states, dt: float):
        """Replay the finite-difference velocities of a recorded state sequence."""
        states = np.asarray(states, dtype=np.float64)
        return cls.replay(np.diff(states, axis=-2) / dt)

    @property
    def horizon(self) -> int | None:
        if self.kind is NominalKind.REPLAY:
            return self.params["controls"].shape[-2]
        return None

    def __call__(self, h, t: int = 0) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        p = self.params
        if self.kind is NominalKind.LINEAR:
            A = p["A"]
            if A.ndim == 3:
                return np.einsum("nij,nj->ni", A, h)
            return h @ A.T
        if self.kind is NominalKind.DRIFT_TO_TARGET:
            gain = p["gain"]
            if gain.ndim == 1 and h.ndim == 2:
                gain = gain[:, None]
            return gain * (p["target"] - h)
        controls = p["controls"]
        if not 0 <= t < controls.shape[-2]:
            raise IndexError(f"replay has {controls.shape[-2]} controls, asked for step {t}")
        u = controls[..., t, :]
        return np.broadcast_to(u, h.shape).copy()

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f"NominalDynamics({self.kind.value}, {shapes})"
