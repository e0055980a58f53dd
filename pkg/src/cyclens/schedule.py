"""Cyclic cosine-annealed learning rate, snapshot instants, random perturbation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OutOfRangeStep


@dataclass(frozen=True)
class ScheduleSpec:
    alpha0: float
    T: int
    M: int

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ConfigError("alpha0 must be positive")
        if self.T < 1:
            raise ConfigError("T must be a positive integer")
        if not 1 <= self.M <= self.T:
            raise ConfigError("M must satisfy 1 <= M <= T")
        # e.g. T=10, M=6 gives L=2 and only five cycles
        if -(-self.T // self.cycle_length) != self.M:
            raise ConfigError(f"T={self.T}, M={self.M} does not split into M cycles of length ceil(T/M)")

    @property
    def cycle_length(self) -> int:
        return -(-self.T // self.M)

    def cycle_of(self, t: int) -> int:
        """1-based cycle index of step ``t`` (a truncated last cycle counts as cycle M)."""
        _check_step(self, t)
        return min((t - 1) // self.cycle_length + 1, self.M)


def _check_step(spec: ScheduleSpec, t: int) -> None:
    if not 1 <= t <= spec.T:
        raise OutOfRangeStep(f"step {t} outside [1, {spec.T}]")


def lr_at(spec: ScheduleSpec, t: int) -> float:
    """alpha(t) = alpha0/2 * (cos(pi * ((t-1) mod L) / L) + 1), L = ceil(T/M)."""
    _check_step(spec, t)
    L = spec.cycle_length
    return spec.alpha0 / 2 * (math.cos(math.pi * ((t - 1) % L) / L) + 1)


def lr_array(spec: ScheduleSpec) -> np.ndarray:
    """Vectorised ``lr_at`` for every step 1..T."""
    L = spec.cycle_length
    t = np.arange(1, spec.T + 1)
    return spec.alpha0 / 2 * (np.cos(np.pi * ((t - 1) % L) / L) + 1)


def snapshot_due(spec: ScheduleSpec, t: int) -> bool:
    _check_step(spec, t)
    return t % spec.cycle_length == 0 or t == spec.T


def snapshot_steps(spec: ScheduleSpec) -> list[int]:
    L = spec.cycle_length
    steps = [t for t in range(L, spec.T + 1, L)]
    if not steps or steps[-1] != spec.T:
        steps.append(spec.T)
    return steps


def random_perturb(params: np.ndarray, sigma: float, learning_rate: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Descend along a random "gradient" g ~ N(0, sigma^2 I): returns params - lr * g."""
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    params = np.asarray(params, dtype=np.float64)
    if sigma == 0:
        return params.copy()
    g = rng.normal(0.0, sigma, size=params.shape)
    return params - learning_rate * g
