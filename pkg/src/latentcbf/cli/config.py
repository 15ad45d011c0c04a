"""Layered run configuration: defaults < YAML file < BSTEER_* env < flags.

The document has five sections. Every TrainConfig and SteeringConfig field
is addressable; unknown sections or keys are rejected with a message.
"""
from __future__ import annotations

import copy
import os
from dataclasses import fields
from pathlib import Path

import yaml

from latentcbf.barrier.net import DESK_HIDDEN
from latentcbf.barrier.train import TrainConfig
from latentcbf.core import SteeringConfig

ENV_PREFIX = "BSTEER_"


class ConfigError(ValueError):
    pass


def _dataclass_defaults(cls) -> dict:
    out = {}
    inst = cls()
    for f in fields(cls):
        value = getattr(inst, f.name)
        out[f.name] = value.value if hasattr(value, "value") else value
    return out


DEFAULTS = {
    "train": {
        **_dataclass_defaults(TrainConfig),
        "n_heads": 4,
        "hidden_dims": list(DESK_HIDDEN),
        "train_fraction": 0.8,
        "split_seed": 0,
    },
    "steer": _dataclass_defaults(SteeringConfig),
    "verify": {
        "suite": "safe_start",
        "n_scenarios": 10_000,
        "dims": [2, 8],
        "steps": 500,
        "dt": 0.01,
        "seed": 0,
        "tol": None,            # None means 10 * dt^2
        "stab_tol": 0.05,
        "stop_at": "composed",
        "halfspaces": 2,
        "inside_balls": 0,
        "obstacles": 1,
        "model_box": 1.5,
    },
    "bench": {
        "K": 14,
        "d_h": 1536,
        "trials": 1000,
        "reference_trials": 100,
        "hidden_dims": list(DESK_HIDDEN),
        "iterations": 100,
        "learning_rate": 1e-2,
        "seed": 0,
    },
    "paths": {
        "data": None,
        "model": None,
        "out": None,
    },
}


def _coerce(section: str, key: str, value, default):
    """Match `value` to the type of the default (strings from env are parsed as YAML)."""
    if isinstance(value, str) and not isinstance(default, str) and section != "paths":
        value = yaml.safe_load(value)
    if value is None or default is None:
        if value is not None and section == "verify" and not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, list):
            if isinstance(value, (int, float)):
                value = [value]
            return [type(default[0])(v) for v in value] if default else list(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: cannot use {value!r} (expected {type(default).__name__})") from None


class RunConfig:
    """Effective configuration plus a record of where each override came from."""

    def __init__(self, data: dict | None = None):
        self.data = copy.deepcopy(DEFAULTS)
        self.sources: dict[str, str] = {}
        if data:
            self.update(data, "file")

    def update(self, doc: dict, source: str):
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping of sections")
        for section, values in doc.items():
            if section not in self.data:
                raise ConfigError(f"unknown config section {section!r}")
            if values is None:
                continue
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            for key, value in values.items():
                self.set(section, key, value, source)

    def set(self, section: str, key: str, value, source: str = "flag"):
        if section not in self.data:
            raise ConfigError(f"unknown config section {section!r}")
        if key not in self.data[section]:
            raise ConfigError(f"unknown key {section}.{key}")
        self.data[section][key] = _coerce(section, key, value, DEFAULTS[section][key])
        self.sources[f"{section}.{key}"] = source

    def apply_env(self, environ=None):
        environ = os.environ if environ is None else environ
        for name, value in sorted(environ.items()):
            if not name.startswith(ENV_PREFIX):
                continue
            rest = name[len(ENV_PREFIX):].lower()
            section, _, key = rest.partition("_")
            if not key:
                raise ConfigError(f"environment variable {name} must look like {ENV_PREFIX}<SECTION>_<KEY>")
            known = {k.lower(): k for k in self.data.get(section, {})}
            self.set(section, known.get(key, key), value, "env")

    def __getitem__(self, section):
        return self.data[section]

    def steering(self, **overrides) -> SteeringConfig:
        params = dict(self.data["steer"])
        params.update(overrides)
        try:
            return SteeringConfig(**params)
        except ValueError as exc:
            raise ConfigError(f"steer: {exc}") from exc

    def training(self) -> TrainConfig:
        keys = {f.name for f in fields(TrainConfig)}
        try:
            return TrainConfig(**{k: v for k, v in self.data["train"].items() if k in keys})
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from exc

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def load_config(path=None, environ=None, overrides=()) -> RunConfig:
    """Defaults, then the YAML file, then BSTEER_* variables, then flag overrides.

    `overrides` is an iterable of (section, key, value).
    """
    cfg = RunConfig()
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
        cfg.update(doc, "file")
    cfg.apply_env(environ)
    for section, key, value in overrides:
        if value is not None:
            cfg.set(section, key, value, "flag")
    return cfg


def parse_assignment(text: str):
    """"section.key=value" -> (section, key, value)."""
    name, sep, value = text.partition("=")
    section, dot, key = name.partition(".")
    if not sep or not dot:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    return section.strip(), key.strip(), value
