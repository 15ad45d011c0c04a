"""Shared value types for latent-space safety filtering.

States and controls are plain float64 numpy vectors; the helpers here
validate them at API boundaries so the numerical code can stay lean.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

# Type aliases for readability. Both are 1-D float64 arrays of length d_h.
LatentState = np.ndarray
ControlInput = np.ndarray


class DataContractError(ValueError):
    """Input data violates a documented contract (labels, shapes, formats)."""


class SafetyLabel(enum.IntEnum):
    SAFE = 1
    UNSAFE = -1

    @classmethod
    def parse(cls, value) -> "SafetyLabel":
        if isinstance(value, SafetyLabel):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key in ("safe", "+1", "1"):
                return cls.SAFE
            if key in ("unsafe", "-1"):
                return cls.UNSAFE
            raise ValueError(f"unknown safety label {value!r}")
        ivalue = int(value)
        if ivalue not in (1, -1):
            raise ValueError(f"safety label must be +1 or -1, got {value!r}")
        return cls(ivalue)


class Mode(str, enum.Enum):
    QP = "qp"
    TOP2 = "top2"
    LSE = "lse"


def as_state(values, dim: int | None = None, name: str = "state") -> np.ndarray:
    """Return `values` as a finite float64 vector, checking its length."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LabeledState:
    state: np.ndarray
    label: SafetyLabel
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "state", as_state(self.state))
        object.__setattr__(self, "label", SafetyLabel.parse(self.label))


@dataclass(frozen=True)
class SteeringConfig:
    alpha: float = 0.3
    delta: float = 0.0
    kappa: float = 10.0
    dt: float = 1.0
    mode: Mode = Mode.LSE
    grad_floor: float = 1e-12
    qp_tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("alpha", "kappa", "dt", "grad_floor", "qp_tol"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if not np.isfinite(self.delta):
            raise ValueError("delta must be finite")

    def replace(self, **changes) -> "SteeringConfig":
        params = {f: getattr(self, f) for f in self.__dataclass_fields__}
        params.update(changes)
        return SteeringConfig(**params)

    def to_dict(self) -> dict:
        out = {f: getattr(self, f) for f in self.__dataclass_fields__}
        out["mode"] = self.mode.value
        return out


@dataclass(frozen=True)
class SteeringOutcome:
    u_star: np.ndarray
    corrected_state: np.ndarray
    barrier_values_before: np.ndarray
    barrier_values_after: np.ndarray | None
    active_constraints: tuple[int, ...]
    mode_used: Mode
    fallback_triggered: bool = False
    infeasible: bool = False
    info: dict = field(default_factory=dict)


def nominal_control(h_prev, h_t, dt: float) -> np.ndarray:
    """Finite-difference velocity (h_t - h_prev) / dt."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    h_prev = as_state(h_prev, name="h_prev")
    h_t = as_state(h_t, dim=h_prev.shape[0], name="h_t")
    return (h_t - h_prev) / dt


def advance(h_prev: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    # Single place the state update is written so every mode shares it bit for bit.
    return h_prev + u * dt
