"""Action combiners: one executed action from m candidate actions.

Discrete spaces use majority voting. Continuous spaces offer averaging,
per-dimension binning, Parzen density selection and selection through
elimination.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .envs import Continuous, Discrete
from .errors import ConfigError, StrategySpaceMismatch

DISCRETE_STRATEGIES = ("majority",)
CONTINUOUS_STRATEGIES = ("average", "binning", "dbs", "ste")
STRATEGIES = DISCRETE_STRATEGIES + CONTINUOUS_STRATEGIES


def _rows(actions) -> np.ndarray:
    a = np.asarray(actions, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("expected a nonempty list of action vectors")
    return a


def _mean(rows: np.ndarray) -> np.ndarray:
    # first row plus the mean deviation, accumulated left to right: every
    # combiner agrees bit for bit and equal rows average to themselves exactly
    base = rows[0]
    dev = np.zeros_like(base)
    for r in rows[1:]:
        dev += r - base
    return base + dev / len(rows)


def majority_vote(actions: Sequence[int], rng: np.random.Generator | None = None) -> int:
    """Most frequent action; ties are broken uniformly at random with ``rng``."""
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    if actions.size == 0:
        raise ValueError("majority_vote needs at least one action")
    values, counts = np.unique(actions, return_counts=True)
    tied = values[counts == counts.max()]
    if len(tied) == 1 or rng is None:
        return int(tied[0])
    return int(tied[rng.integers(len(tied))])


def average(actions) -> np.ndarray:
    return _mean(_rows(actions))


def bin_vote(actions, low, high, n_bins: int = 5, rng: np.random.Generator | None = None) -> np.ndarray:
    """Per dimension: split [low, high] into equal bins, average the fullest bin.

    Ties between equally full bins are broken at random with ``rng`` (lowest
    bin when no generator is given).
    """
    if n_bins < 1:
        raise ConfigError("n_bins must be at least 1")
    rows = _rows(actions)
    k = rows.shape[1]
    low = np.broadcast_to(np.asarray(low, dtype=np.float64), (k,))
    high = np.broadcast_to(np.asarray(high, dtype=np.float64), (k,))
    out = np.empty(k)
    for d in range(k):
        col = rows[:, d]
        width = (high[d] - low[d]) / n_bins
        idx = np.clip(np.floor((col - low[d]) / width).astype(np.int64), 0, n_bins - 1)
        counts = np.bincount(idx, minlength=n_bins)
        tied = np.flatnonzero(counts == counts.max())
        chosen = tied[0] if len(tied) == 1 or rng is None else tied[rng.integers(len(tied))]
        out[d] = _mean(col[idx == chosen][:, None])[0]
    return out


def parzen_densities(actions, h: float = 1e-4) -> np.ndarray:
    rows = _rows(actions)
    diff = rows[:, None, :] - rows[None, :, :]
    return np.exp(-np.sum(diff * diff, axis=2) / (h * h)).sum(axis=1)


def density_select(actions, h: float = 1e-4) -> np.ndarray:
    """Candidate with the highest Parzen-window density (self-term included)."""
    if not h > 0:
        raise ConfigError("bandwidth h must be positive")
    rows = _rows(actions)
    return rows[int(np.argmax(parzen_densities(rows, h)))].copy()


def select_through_elimination(actions) -> np.ndarray:
    """Drop the candidate farthest from the running mean until two remain; average them.

    Equal distances eliminate the higher index.
    """
    rows = _rows(actions)
    keep = list(range(len(rows)))
    while len(keep) > 2:
        sub = rows[keep]
        dist = np.sqrt(np.sum((sub - _mean(sub)) ** 2, axis=1))
        worst = int(np.flatnonzero(dist == dist.max())[-1])
        del keep[worst]
    return _mean(rows[keep])


def check_strategy(strategy: str, action_space) -> None:
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if isinstance(action_space, Discrete) and strategy not in DISCRETE_STRATEGIES:
        raise StrategySpaceMismatch(f"strategy {strategy!r} needs a continuous action space")
    if isinstance(action_space, Continuous) and strategy not in CONTINUOUS_STRATEGIES:
        raise StrategySpaceMismatch(f"strategy {strategy!r} needs a discrete action space")


def combine(strategy: str, actions, action_space, rng: np.random.Generator | None = None,
            n_bins: int = 5, h: float = 1e-4):
    """Dispatch on the harness strategy name."""
    check_strategy(strategy, action_space)
    if strategy == "majority":
        return majority_vote(actions, rng)
    if strategy == "average":
        return average(actions)
    if strategy == "binning":
        return bin_vote(actions, action_space.low, action_space.high, n_bins, rng)
    if strategy == "dbs":
        return density_select(actions, h)
    return select_through_elimination(actions)
