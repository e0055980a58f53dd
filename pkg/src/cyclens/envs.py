"""Deterministic, seedable toy MDPs.

Three environments cover both action-space branches:

* ``gridworld``      5x5 grid, one-hot state, 4 discrete moves.
* ``cartpole-lite``  classic pole balancing, 2 discrete pushes.
* ``pointmass2d``    2-D point driven by a bounded velocity command.

Each instance owns one counter-based generator (Philox); there is no global
random state, so replaying ``(seed, actions)`` reproduces the transition
sequence bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError, OutOfBoundsAction, StepAfterDone


@dataclass(frozen=True)
class Discrete:
    n: int

    def contains(self, action) -> bool:
        try:
            a = int(action)
        except (TypeError, ValueError):
            return False
        return a == action and 0 <= a < self.n


@dataclass(frozen=True)
class Continuous:
    k: int
    low: tuple
    high: tuple

    def __post_init__(self):
        if len(self.low) != self.k or len(self.high) != self.k:
            raise ConfigError("bounds must have length k")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ConfigError("low must be strictly below high in every dimension")

    @property
    def low_array(self) -> np.ndarray:
        return np.asarray(self.low, dtype=np.float64)

    @property
    def high_array(self) -> np.ndarray:
        return np.asarray(self.high, dtype=np.float64)


ActionSpace = Union[Discrete, Continuous]


@dataclass(frozen=True)
class MdpSpec:
    state_dim: int
    action_space: ActionSpace
    gamma: float
    horizon: int
    reward_low: float
    reward_high: float

    def __post_init__(self):
        if self.state_dim < 1:
            raise ConfigError("state_dim must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")

    @property
    def discrete(self) -> bool:
        return isinstance(self.action_space, Discrete)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: Union[int, np.ndarray]
    reward: float
    next_state: np.ndarray
    done: bool


class Env:
    """Base class: subclasses implement ``_initial_state`` and ``_dynamics``."""

    env_id = ""
    spec: MdpSpec

    def __init__(self, seed: int = 0):
        self._rng = np.random.Generator(np.random.Philox(seed))
        self._state = None
        self._t = 0
        self._done = True

    @property
    def steps(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start a new episode. A given ``seed`` restarts the generator."""
        if seed is not None:
            self._rng = np.random.Generator(np.random.Philox(int(seed)))
        self._t = 0
        self._done = False
        self._state = self._initial_state()
        return self._state.copy()

    def step(self, action) -> Transition:
        if self._done:
            raise StepAfterDone(f"{self.env_id}: step called on a finished episode")
        action = self._check_action(action)
        state = self._state
        next_state, reward, terminal = self._dynamics(state, action)
        self._t += 1
        done = bool(terminal or self._t >= self.spec.horizon)
        self._state = next_state
        self._done = done
        return Transition(state.copy(), action, float(reward), next_state.copy(), done)

    def _check_action(self, action):
        space = self.spec.action_space
        if isinstance(space, Discrete):
            if not space.contains(action):
                raise OutOfBoundsAction(f"{self.env_id}: action {action!r} not in 0..{space.n - 1}")
            return int(action)
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != space.k or not np.all(np.isfinite(a)):
            raise OutOfBoundsAction(f"{self.env_id}: malformed continuous action {action!r}")
        lo, hi = space.low_array, space.high_array
        if self.clip_actions:
            return np.clip(a, lo, hi)
        if np.any(a < lo) or np.any(a > hi):
            raise OutOfBoundsAction(f"{self.env_id}: action {a.tolist()} outside [{space.low}, {space.high}]")
        return a

    clip_actions = True

    def _initial_state(self) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, state: np.ndarray, action):
        raise NotImplementedError


class GridWorld(Env):
    """Square grid with the start in the top-left and the goal bottom-right.

    Actions: 0 up, 1 right, 2 down, 3 left. Moves into a wall leave the agent
    in place. Every step costs 0.01 except the one entering the goal, which
    pays +1 and ends the episode.
    """

    env_id = "gridworld"
    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))

    def __init__(self, seed: int = 0, size: int = 5, horizon: int = 100,
                 step_cost: float = 0.01, goal_reward: float = 1.0):
        super().__init__(seed)
        self.size = size
        self.goal = (size - 1, size - 1)
        self.step_cost = step_cost
        self.goal_reward = goal_reward
        self.spec = MdpSpec(size * size, Discrete(4), 0.99, horizon, -step_cost, goal_reward)
        self._eye = np.eye(size * size)
        self._eye.flags.writeable = False
        self._cell = (0, 0)

    def encode(self, row: int, col: int) -> np.ndarray:
        return self._eye[row * self.size + col].copy()

    def decode(self, state: np.ndarray) -> tuple[int, int]:
        idx = int(np.argmax(state))
        return divmod(idx, self.size)

    def _initial_state(self):
        self._cell = (0, 0)
        return self._eye[0].copy()

    def _dynamics(self, state, action):
        dr, dc = self.MOVES[action]
        r, c = self._cell
        r = min(max(r + dr, 0), self.size - 1)
        c = min(max(c + dc, 0), self.size - 1)
        self._cell = (r, c)
        nxt = self._eye[r * self.size + c].copy()
        if (r, c) == self.goal:
            return nxt, self.goal_reward, True
        return nxt, -self.step_cost, False


class CartPoleLite(Env):
    """Classic cart-pole (Barto, Sutton & Anderson) with Euler integration.

    State ``(x, x_dot, theta, theta_dot)``; action 0 pushes left, 1 pushes right.
    Reward +1 per step; the episode fails once ``|x| > 2.4`` or
    ``|theta| > 12 deg``.
    """

    env_id = "cartpole-lite"
    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5
    force_mag = 10.0
    tau = 0.02
    x_threshold = 2.4
    theta_threshold = 12 * 2 * math.pi / 360

    def __init__(self, seed: int = 0, horizon: int = 500):
        super().__init__(seed)
        self.spec = MdpSpec(4, Discrete(2), 0.99, horizon, 1.0, 1.0)

    def _initial_state(self):
        return self._rng.uniform(-0.05, 0.05, size=4)

    def _dynamics(self, state, action):
        x, x_dot, theta, theta_dot = (float(v) for v in state)
        force = self.force_mag if action == 1 else -self.force_mag
        total_mass = self.masscart + self.masspole
        polemass_length = self.masspole * self.length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos * cos / total_mass))
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        x += self.tau * x_dot
        x_dot += self.tau * x_acc
        theta += self.tau * theta_dot
        theta_dot += self.tau * theta_acc
        nxt = np.array([x, x_dot, theta, theta_dot])
        failed = abs(x) > self.x_threshold or abs(theta) > self.theta_threshold
        return nxt, 1.0, failed


class PointMass2D(Env):
    """Point in ``[-2, 2]^2`` steered toward the origin.

    State ``(px, py, vx, vy)``. The action is a velocity command in
    ``[-1, 1]^2``: ``p' = p + dt * a + noise`` and ``v' = a``. Reward is the
    negative squared distance of ``p'`` to the origin.
    """

    env_id = "pointmass2d"
    dt = 0.1
    noise_std = 0.01
    bound = 2.0

    def __init__(self, seed: int = 0, horizon: int = 200):
        super().__init__(seed)
        worst = -2 * self.bound ** 2
        self.spec = MdpSpec(4, Continuous(2, (-1.0, -1.0), (1.0, 1.0)), 0.99, horizon, worst, 0.0)

    def _initial_state(self):
        pos = self._rng.uniform(-1.0, 1.0, size=2)
        return np.concatenate([pos, np.zeros(2)])

    def _dynamics(self, state, action):
        pos = state[:2] + self.dt * action + self._rng.normal(0.0, self.noise_std, size=2)
        pos = np.clip(pos, -self.bound, self.bound)
        reward = -float(pos @ pos)
        return np.concatenate([pos, action]), reward, False


ENVIRONMENTS = {
    GridWorld.env_id: GridWorld,
    CartPoleLite.env_id: CartPoleLite,
    PointMass2D.env_id: PointMass2D,
}


def make_env(env_id: str, seed: int = 0) -> Env:
    try:
        cls = ENVIRONMENTS[env_id]
    except KeyError:
        raise ConfigError(f"unknown env_id {env_id!r}; expected one of {sorted(ENVIRONMENTS)}") from None
    return cls(seed=seed)
