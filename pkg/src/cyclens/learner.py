"""Minimal advantage actor-critic with hand-written backpropagation.

The network is a shared tanh trunk with two linear heads: categorical logits
(or a diagonal-Gaussian mean plus a state-independent log-std vector) and a
scalar value. All parameters live in one flat float64 vector so snapshots,
perturbations and finite-difference checks work on a single array.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteGradient, NonPositiveProbability

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class Architecture:
    state_dim: int
    n_out: int
    continuous: bool = False
    hidden: int = 64

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        s = [
            ("W1", (self.hidden, self.state_dim)),
            ("b1", (self.hidden,)),
            ("Wp", (self.n_out, self.hidden)),
            ("bp", (self.n_out,)),
        ]
        if self.continuous:
            s.append(("log_std", (self.n_out,)))
        s += [("wv", (self.hidden,)), ("bv", (1,))]
        return s

    @property
    def size(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.shapes())

    def describe(self) -> str:
        kind = "gaussian" if self.continuous else "categorical"
        return f"mlp-tanh-v1;state_dim={self.state_dim};hidden={self.hidden};head={kind};n_out={self.n_out}"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]

    @classmethod
    def for_spec(cls, mdp, hidden: int = 64) -> "Architecture":
        if mdp.discrete:
            return cls(mdp.state_dim, mdp.action_space.n, False, hidden)
        return cls(mdp.state_dim, mdp.action_space.k, True, hidden)


class PolicyParams:
    """Flat parameter vector plus named reshaped views into it."""

    def __init__(self, arch: Architecture, flat: np.ndarray):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (arch.size,):
            raise DimensionMismatch(f"expected {arch.size} parameters, got {flat.shape}")
        self.arch = arch
        self.flat = flat
        self.views = {}
        offset = 0
        for name, shape in arch.shapes():
            n = int(np.prod(shape))
            self.views[name] = flat[offset:offset + n].reshape(shape)
            offset += n

    def __getitem__(self, name: str) -> np.ndarray:
        return self.views[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.arch, self.flat.copy())

    def frozen(self) -> "PolicyParams":
        flat = self.flat.copy()
        flat.flags.writeable = False
        return PolicyParams(self.arch, flat)

    def __eq__(self, other):
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return self.arch == other.arch and self.flat.tobytes() == other.flat.tobytes()

    def __repr__(self):
        return f"PolicyParams({self.arch.describe()})"


def init_params(arch: Architecture, rng: np.random.Generator, policy_scale: float = 0.01) -> PolicyParams:
    p = PolicyParams(arch, np.zeros(arch.size))
    p["W1"][:] = rng.normal(0.0, 1.0, size=p["W1"].shape) / math.sqrt(max(arch.state_dim, 1)) * 2.0
    p["Wp"][:] = rng.normal(0.0, policy_scale, size=p["Wp"].shape)
    return p


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    pi_loss: float
    v_loss: float
    total: float
    c_v: float


@dataclass
class Batch:
    states: np.ndarray        # (N, d)
    actions: np.ndarray       # (N,) int or (N, k) float
    rewards: np.ndarray       # (N,)
    next_states: np.ndarray   # (N, d)
    dones: np.ndarray         # (N,) bool

    def __len__(self):
        return len(self.rewards)

    @classmethod
    def from_transitions(cls, transitions: Sequence) -> "Batch":
        discrete = np.isscalar(transitions[0].action) or isinstance(transitions[0].action, (int, np.integer))
        return cls(
            states=np.array([tr.state for tr in transitions], dtype=np.float64),
            actions=np.array([tr.action for tr in transitions], dtype=np.int64 if discrete else np.float64),
            rewards=np.array([tr.reward for tr in transitions], dtype=np.float64),
            next_states=np.array([tr.next_state for tr in transitions], dtype=np.float64),
            dones=np.array([tr.done for tr in transitions], dtype=bool),
        )


def _as_states(params: PolicyParams, states) -> np.ndarray:
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.state_dim:
        raise DimensionMismatch(f"state dimension {x.shape[-1]} != {params.arch.state_dim}")
    return x


def forward(params: PolicyParams, states) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (hidden activations, policy head outputs, values) for a batch of states."""
    x = _as_states(params, states)
    h = np.tanh(x @ params["W1"].T + params["b1"])
    out = h @ params["Wp"].T + params["bp"]
    v = h @ params["wv"] + params["bv"][0]
    return h, out, v


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_distribution(params: PolicyParams, state):
    _, out, _ = forward(params, state)
    if params.arch.continuous:
        return DiagGaussian(out[0], np.exp(params["log_std"]).copy())
    return Categorical(np.exp(_log_softmax(out[0])))


def distributions(params: PolicyParams, states):
    """Batched ``policy_distribution``: probs (N, n) or (means (N, k), std (k,))."""
    _, out, _ = forward(params, states)
    if params.arch.continuous:
        return DiagGaussian(out, np.exp(params["log_std"]).copy())
    return Categorical(np.exp(_log_softmax(out)))


def greedy_actions(params: PolicyParams, states) -> np.ndarray:
    """Deterministic actions: argmax of logits, or the Gaussian mean."""
    _, out, _ = forward(params, states)
    if params.arch.continuous:
        return out
    return np.argmax(out, axis=1)


def value(params: PolicyParams, states) -> np.ndarray:
    return forward(params, states)[2]


def value_loss(reward: float, gamma: float, v_next: float, v_curr: float) -> float:
    """Signed one-step TD residual r + gamma * V(s') - V(s)."""
    return reward + gamma * v_next - v_curr


def policy_loss(action_prob: float, advantage: float) -> float:
    if not action_prob > 0:
        raise NonPositiveProbability(f"action probability must be positive, got {action_prob}")
    return -math.log(action_prob) * advantage


def total_error(pi_loss: float, v_loss: float, c_v: float) -> float:
    return pi_loss + v_loss * c_v


def _log_prob_and_entropy(params: PolicyParams, out: np.ndarray, actions: np.ndarray):
    if params.arch.continuous:
        log_std = params["log_std"]
        z = (actions - out) / np.exp(log_std)
        logp = np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=1)
        ent = np.full(len(out), np.sum(log_std + 0.5 + _HALF_LOG_2PI))
        return logp, ent, z
    logsm = _log_softmax(out)
    p = np.exp(logsm)
    logp = logsm[np.arange(len(out)), actions]
    ent = -np.sum(p * logsm, axis=1)
    return logp, ent, (p, logsm)


def td_quantities(params: PolicyParams, batch: Batch, gamma: float):
    """Signed TD residuals and their bootstrap targets under the current params."""
    v_next = value(params, batch.next_states)
    v_next = np.where(batch.dones, 0.0, v_next)
    targets = batch.rewards + gamma * v_next
    v = value(params, batch.states)
    return targets - v, targets


def surrogate(params: PolicyParams, batch: Batch, advantages: np.ndarray, targets: np.ndarray,
              c_v: float, entropy_coef: float) -> float:
    """Mean training objective with advantages and value targets held fixed.

    J = mean(-log pi(a|s) * A + c_v * (target - V(s))^2 - entropy_coef * H(pi(.|s)))
    """
    _, out, v = forward(params, batch.states)
    logp, ent, _ = _log_prob_and_entropy(params, out, batch.actions)
    resid = targets - v
    return float(np.mean(-logp * advantages + c_v * resid * resid - entropy_coef * ent))


def surrogate_grad(params: PolicyParams, batch: Batch, advantages: np.ndarray, targets: np.ndarray,
                   c_v: float, entropy_coef: float) -> tuple[float, np.ndarray]:
    """Objective value and its analytic gradient with respect to ``params.flat``."""
    arch = params.arch
    x = _as_states(params, batch.states)
    n = x.shape[0]
    h, out, v = forward(params, x)
    logp, ent, aux = _log_prob_and_entropy(params, out, batch.actions)
    resid = targets - v
    J = float(np.mean(-logp * advantages + c_v * resid * resid - entropy_coef * ent))

    grad = PolicyParams(arch, np.zeros(arch.size))
    A = advantages[:, None]
    if arch.continuous:
        z = aux
        std = np.exp(params["log_std"])
        d_out = -A * z / std / n
        # d(-logp)/dlog_std = 1 - z^2 ; dH/dlog_std = 1
        grad["log_std"][:] = np.sum(A * (1.0 - z * z), axis=0) / n - entropy_coef
    else:
        p, logsm = aux
        onehot = np.zeros_like(p)
        onehot[np.arange(n), batch.actions] = 1.0
        d_out = (A * (p - onehot) + entropy_coef * p * (logsm + ent[:, None])) / n
    d_v = -2.0 * c_v * resid / n

    bad = ~(np.all(np.isfinite(d_out), axis=1) & np.isfinite(d_v))
    if bad.any():
        idx = int(np.argmax(bad))
        raise NonFiniteGradient(f"non-finite gradient from batch sample {idx}", idx)

    grad["Wp"][:] = d_out.T @ h
    grad["bp"][:] = d_out.sum(axis=0)
    grad["wv"][:] = d_v @ h
    grad["bv"][0] = d_v.sum()
    d_h = d_out @ params["Wp"] + np.outer(d_v, params["wv"])
    d_pre = d_h * (1.0 - h * h)
    grad["W1"][:] = d_pre.T @ x
    grad["b1"][:] = d_pre.sum(axis=0)
    if not np.all(np.isfinite(grad.flat)):
        raise NonFiniteGradient("non-finite parameter gradient", int(np.argmax(bad)) if bad.any() else 0)
    return J, grad.flat


def loss_arrays(params: PolicyParams, batch: Batch, gamma: float, c_v: float):
    """Per-sample (pi_loss, v_loss, total) arrays plus advantages and targets."""
    delta, targets = td_quantities(params, batch, gamma)
    _, out, _ = forward(params, batch.states)
    logp, _, _ = _log_prob_and_entropy(params, out, batch.actions)
    pi = -logp * delta
    total = pi + delta * c_v
    return pi, delta, total, targets


def apply_update(params: PolicyParams, grad: np.ndarray, learning_rate: float) -> PolicyParams:
    new = PolicyParams(params.arch, params.flat - learning_rate * grad)
    if params.arch.continuous:
        np.clip(new["log_std"], LOG_STD_MIN, LOG_STD_MAX, out=new["log_std"])
    return new


def train_step_arrays(params: PolicyParams, batch: Batch, learning_rate: float, c_v: float = 0.5,
                      gamma: float = 0.99, entropy_coef: float = 0.01):
    """One plain gradient-descent step; returns (new params, pi, v, total arrays)."""
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    pi, delta, total, targets = loss_arrays(params, batch, gamma, c_v)
    _, grad = surrogate_grad(params, batch, delta, targets, c_v, entropy_coef)
    if learning_rate == 0:
        return params.copy(), pi, delta, total
    return apply_update(params, grad, learning_rate), pi, delta, total


def train_step(params: PolicyParams, batch: Batch, learning_rate: float, c_v: float = 0.5,
               gamma: float = 0.99, entropy_coef: float = 0.01) -> tuple[PolicyParams, list[LossBreakdown]]:
    new, pi, delta, total = train_step_arrays(params, batch, learning_rate, c_v, gamma, entropy_coef)
    losses = [LossBreakdown(float(a), float(b), float(c), c_v) for a, b, c in zip(pi, delta, total)]
    return new, losses
