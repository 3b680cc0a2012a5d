"""Experiment configuration read from a plain ``key = value`` file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

SCENARIOS = ("single", "double", "synthetic")
ALL_METHODS = ("pod", "cpod", "cnn", "cae", "icae")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str = "single"
    # 0 means "preset default" for the grid and snapshot fields
    nx: int = 0
    ny: int = 0
    reynolds: float = 0.0
    n_train: int = 0
    n_eval: int = 0
    image_h: int = 0
    image_w: int = 0
    synthetic_modes: int = 4
    methods: tuple = ALL_METHODS
    n_rho: tuple = (2, 3, 5, 8, 12)
    k: int = 5
    seeds: tuple = (0,)
    kmeans_restarts: int = 10
    cnn_modes: int = 15
    epochs: int = 200
    batch_size: int = 64
    lr: float = 3e-2
    icae_epochs: int = 50
    icae_lr: float = 1e-3
    eval_sets: tuple = ("train", "eval")
    output_dir: str = "runs/default"

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {ALL_METHODS}")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        if any(n < 1 for n in self.n_rho) or not self.n_rho:
            raise ConfigError("n_rho entries must be positive")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        for name in ("epochs", "batch_size", "icae_epochs", "kmeans_restarts", "cnn_modes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr <= 0 or self.icae_lr <= 0:
            raise ConfigError("learning rates must be positive")
        bad = [s for s in self.eval_sets if s not in ("train", "eval")]
        if bad or not self.eval_sets:
            raise ConfigError(f"eval_sets must be drawn from train, eval; got {self.eval_sets}")
        if (self.image_h == 0) != (self.image_w == 0):
            raise ConfigError("set both image_h and image_w or neither")
        return self

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name, raw):
    default = _FIELDS[name].default
    try:
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            elem = type(default[0]) if default else str
            return tuple(elem(s) for s in items)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        return type(default)(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} ({exc})") from None


def parse_config(text, overrides=()):
    values = {}
    entries = [(i + 1, line) for i, line in enumerate(text.splitlines())]
    entries += [("override", o) for o in overrides]
    for where, line in entries:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {where}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {where}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return ExperimentConfig(**values).validate()


def load_config(path, overrides=()):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)
