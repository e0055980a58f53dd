"""Experiment configuration: a flat ``key=value`` text file.

Recognised keys (defaults in parentheses)::

    env            gridworld | cartpole-lite | pointmass2d   (gridworld)
    mode           seerl | b1-independent | b3-random-perturb | constant-lr   (seerl)
    hidden         trunk width (64)
    c_v            value-error weight in the logged total error (0.5)
    entropy_coef   entropy bonus in the gradient objective (0.01)
    gamma          discount; empty means the environment's own
    rollout        transitions per gradient step (16)
    alpha0         peak learning rate of the cyclic schedule (0.05)
    T              training steps per run (200000)
    M              snapshots / cycles (5)
    base_lr        constant rate for the b1 and b3 baselines (0.025)
    sigma          std of the random gradients injected by b3 (1.0)
    tail_fraction  share of T holding the constant-lr snapshots (0.05)
    beta           diversity weight, in [1, 2) (1.0)
    t_err          'median' or an absolute threshold (median)
    epsilon        continuous action-match tolerance (0.01)
    m              ensemble size (3)
    samples        states drawn from the log for selection (2048)
    ridge          diagonal regulariser added to B (1e-8)
    strategy       majority | average | binning | dbs | ste | auto (auto)
    n_bins         bins per dimension for 'binning' (5)
    h              Parzen window width for 'dbs' (0.0001)
    episodes       evaluation episodes E (100)
    seeds          comma-separated seeds used by 'ablate' (0)
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .envs import ENVIRONMENTS
from .ensemble import STRATEGIES
from .errors import ConfigError

MODES = ("seerl", "b1-independent", "b3-random-perturb", "constant-lr")


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "gridworld"
    mode: str = "seerl"
    hidden: int = 64
    c_v: float = 0.5
    entropy_coef: float = 0.01
    gamma: float | None = None
    rollout: int = 16
    alpha0: float = 0.05
    T: int = 200_000
    M: int = 5
    base_lr: float = 0.025
    sigma: float = 1.0
    tail_fraction: float = 0.05
    beta: float = 1.0
    t_err: str | float = "median"
    epsilon: float = 0.01
    m: int = 3
    samples: int = 2048
    ridge: float = 1e-8
    strategy: str = "auto"
    n_bins: int = 5
    h: float = 1e-4
    episodes: int = 100
    seeds: tuple = field(default=(0,))

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown env {self.env!r}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.strategy != "auto" and self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if not 1 <= self.m <= self.M:
            raise ConfigError(f"m={self.m} must satisfy 1 <= m <= M={self.M}")
        if self.episodes < 1:
            raise ConfigError("episodes must be at least 1")
        if self.rollout < 1 or self.hidden < 1 or self.samples < 1:
            raise ConfigError("rollout, hidden and samples must be positive")
        if self.t_err != "median" and not float(self.t_err) > 0:
            raise ConfigError("t_err must be 'median' or a positive number")
        if not 0 < self.tail_fraction <= 1:
            raise ConfigError("tail_fraction must lie in (0, 1]")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")

    def resolved_strategy(self, discrete: bool) -> str:
        if self.strategy != "auto":
            return self.strategy
        return "majority" if discrete else "average"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "seeds":
                v = ",".join(str(s) for s in v)
            elif v is None:
                v = ""
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def coerce(key: str, raw: str):
    """Parse one textual value for config key ``key``."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    default = _FIELDS[key].default
    try:
        if key == "seeds":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if key == "gamma":
            return float(raw) if raw else None
        if key == "t_err":
            return "median" if raw == "median" else float(raw)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw.replace("_", ""))
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = coerce(key.strip(), raw)
    base = base or ExperimentConfig()
    return base.replace(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
