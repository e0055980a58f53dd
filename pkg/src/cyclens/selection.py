"""Offline policy selection.

Given M snapshots and the log of the run that produced them, build per-state
scores

    b_i(s) = sum of high-loss agreeing actions of policy i at s
             - beta / (M - 1) * sum_{k != i} KL(pi_i(s) || pi_k(s))

form ``B = sum_s P(s) b(s) b(s)^T`` and minimise ``w^T B w`` over the
probability simplex. The m largest weights pick the ensemble. No environment
samples are consumed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import learner
from .ensemble import check_strategy, combine
from .errors import ConfigError, NoConvergence, NonSymmetricInput, ZeroSupportMismatch
from .learner import Categorical, DiagGaussian, PolicyParams


# ---------------------------------------------------------------- divergences

def kl_between(p, q) -> float:
    """KL(p || q) for two categorical or two diagonal-Gaussian distributions."""
    if isinstance(p, Categorical) and isinstance(q, Categorical):
        pp = np.asarray(p.probs, dtype=np.float64)
        qq = np.asarray(q.probs, dtype=np.float64)
        if pp.shape != qq.shape:
            raise ValueError("distributions over different action sets")
        support = pp > 0
        if np.any(support & (qq <= 0)):
            raise ZeroSupportMismatch("q assigns zero probability where p does not (KL is infinite)")
        return float(np.sum(pp[support] * (np.log(pp[support]) - np.log(qq[support]))))
    if isinstance(p, DiagGaussian) and isinstance(q, DiagGaussian):
        m1, s1 = np.asarray(p.mean, float), np.broadcast_to(np.asarray(p.std, float), np.shape(p.mean))
        m2, s2 = np.asarray(q.mean, float), np.broadcast_to(np.asarray(q.std, float), np.shape(q.mean))
        if m1.shape != m2.shape:
            raise ValueError("distributions over different action dimensions")
        return float(np.sum(np.log(s2 / s1) + (s1 * s1 + (m1 - m2) ** 2) / (2 * s2 * s2) - 0.5))
    raise TypeError("kl_between needs two distributions of the same family")


def _kl_tensor(policies: list[PolicyParams], states: np.ndarray) -> np.ndarray:
    """KL[s, i, k] = KL(pi_i(s) || pi_k(s)) for every sampled state and pair."""
    outs = [learner.forward(p, states)[1] for p in policies]
    if policies[0].arch.continuous:
        mu = np.stack(outs, axis=1)                                  # (S, M, k)
        log_std = np.stack([p["log_std"] for p in policies])        # (M, k)
        var = np.exp(2 * log_std)
        d_mu = mu[:, :, None, :] - mu[:, None, :, :]
        kl = (log_std[None, :] - log_std[:, None])[None] \
            + (var[:, None] + d_mu ** 2) / (2 * var[None, :]) - 0.5
        kl = kl.sum(axis=-1)
    else:
        logp = np.stack([z - z.max(axis=1, keepdims=True) for z in outs], axis=1)
        logp = logp - np.log(np.exp(logp).sum(axis=2, keepdims=True))  # (S, M, n)
        p = np.exp(logp)
        kl = np.einsum("sia,sia->si", p, logp)[:, :, None] - np.einsum("sia,ska->sik", p, logp)
    M = len(policies)
    kl[:, np.arange(M), np.arange(M)] = 0.0
    return np.maximum(kl, 0.0)


def diversity_matrix(policies: list[PolicyParams], states, weights) -> np.ndarray:
    """Visitation-weighted pairwise KL; entry (i, k) = sum_s P(s) KL(pi_i(s) || pi_k(s))."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if len(states) < 1:
        raise ValueError("need at least one state")
    D = np.einsum("s,sik->ik", weights, _kl_tensor(policies, states))
    np.fill_diagonal(D, 0.0)
    return D


def mean_off_diagonal(D: np.ndarray) -> float:
    M = D.shape[0]
    if M < 2:
        return 0.0
    return float((D.sum() - np.trace(D)) / (M * (M - 1)))


# ------------------------------------------------------------ error indicator

def weighted_error(abs_total_error: float, policy_action, ensemble_action, t_err: float,
                   epsilon: float = 0.01, discrete: bool = True) -> int:
    """1 when the loss is at least ``t_err`` and the action agrees with the ensemble.

    Continuous agreement uses the max-norm: ``max_d |a_d - a_e,d| < epsilon``.
    """
    if abs_total_error < t_err:
        return 0
    if discrete:
        return int(int(policy_action) == int(ensemble_action))
    diff = np.abs(np.asarray(policy_action, float) - np.asarray(ensemble_action, float))
    return int(float(np.max(diff)) < epsilon)


# ----------------------------------------------------------- QP construction

def build_b_vector(policy_index: int, state, policies: list[PolicyParams], beta: float,
                   errors_at_state: float) -> float:
    """Score of one policy at one state (the per-state term the QP squares)."""
    M = len(policies)
    if M < 2:
        raise ConfigError("b-vectors need at least two policies")
    kl = _kl_tensor(policies, np.atleast_2d(np.asarray(state, float)))[0]
    return float(errors_at_state - beta / (M - 1) * kl[policy_index].sum())


def b_vectors(policies: list[PolicyParams], states, error_sums, beta: float) -> np.ndarray:
    """(S, M) matrix of b_i(s) for every sampled state."""
    M = len(policies)
    if M < 2:
        raise ConfigError("b-vectors need at least two policies")
    kl = _kl_tensor(policies, np.atleast_2d(np.asarray(states, float)))
    return np.asarray(error_sums, float) - beta / (M - 1) * kl.sum(axis=2)


def build_B_matrix(weights, b) -> np.ndarray:
    """B_ij = sum_s P(s) b_i(s) b_j(s); symmetrised so that B == B.T exactly."""
    weights = np.asarray(weights, dtype=np.float64)
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("state weights must sum to 1")
    B = (b * weights[:, None]).T @ b
    return 0.5 * (B + B.T)


# ------------------------------------------------------------------ QP solver

def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w : sum(w) = 1, w >= 0} (sort-based, O(n log n))."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _power_iteration(Q: np.ndarray, iters: int = 500) -> float:
    n = Q.shape[0]
    x = np.ones(n) + np.arange(n) / (7.0 * n)
    lam = 0.0
    for _ in range(iters):
        y = Q @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
        new = float(x @ Q @ x)
        if abs(new - lam) <= 1e-12 * max(abs(new), 1.0):
            lam = new
            break
        lam = new
    # the Rayleigh quotient never exceeds the true maximum; pad for safety
    return 1.05 * lam if lam > 0 else 0.0


def _fw_gap(Q: np.ndarray, w: np.ndarray) -> float:
    g = 2 * Q @ w
    return float(g @ w - g.min())


def _kkt_polish(Q: np.ndarray, w: np.ndarray):
    """Minimise on the face spanned by the support of ``w``, shrinking it while infeasible."""
    support = list(np.flatnonzero(w > 0))
    while support:
        k = len(support)
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = 2 * Q[np.ix_(support, support)]
        K[:k, k] = K[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        x = np.linalg.lstsq(K, rhs, rcond=None)[0][:k]
        if not np.all(np.isfinite(x)):
            return None
        if np.all(x >= 0):
            out = np.zeros_like(w)
            out[support] = x / x.sum()
            return out
        del support[int(np.argmin(x))]
    return None


@dataclass
class QPResult:
    w: np.ndarray
    objective: float
    gap: float
    iterations: int
    converged: bool


def solve_qp(B, ridge: float = 1e-8, max_iter: int = 10_000, tol: float = 1e-10) -> QPResult:
    """Minimise w^T (B + ridge I) w on the simplex.

    Accelerated projected gradient descent (step 1 / (2 lambda_max)) with
    adaptive restart; the iterate's support is periodically polished by
    solving the equality-constrained KKT system. Stops once the Frank-Wolfe
    gap, an upper bound on the suboptimality, falls below
    ``tol * max(1, lambda_max)``.
    """
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise NonSymmetricInput("B must be square")
    scale = max(1.0, float(np.max(np.abs(B))) if B.size else 1.0)
    if not np.all(np.abs(B - B.T) <= 1e-10 * scale):
        raise NonSymmetricInput("B is not symmetric")
    if ridge < 0:
        raise ConfigError("ridge must be non-negative")
    M = B.shape[0]
    Q = 0.5 * (B + B.T) + ridge * np.eye(M)
    w = np.full(M, 1.0 / M)
    if M == 1:
        return QPResult(w, float(w @ Q @ w), 0.0, 0, True)
    lam = _power_iteration(Q)
    if lam == 0:
        return QPResult(w, 0.0, 0.0, 0, True)
    threshold = tol * max(1.0, lam)
    step = 1.0 / (2 * lam)

    def f(x):
        return float(x @ Q @ x)

    best_w, best_gap = w, _fw_gap(Q, w)
    y, t_mom, f_prev = w.copy(), 1.0, f(w)
    for it in range(1, max_iter + 1):
        w_new = project_simplex(y - step * 2 * (Q @ y))
        f_new = f(w_new)
        if f_new > f_prev:
            # restart momentum
            y, t_mom = w.copy(), 1.0
            w_new = project_simplex(w - step * 2 * (Q @ w))
            f_new = f(w_new)
        t_next = (1 + math.sqrt(1 + 4 * t_mom * t_mom)) / 2
        y = w_new + (t_mom - 1) / t_next * (w_new - w)
        w, t_mom, f_prev = w_new, t_next, f_new

        gap = _fw_gap(Q, w)
        if gap < best_gap:
            best_w, best_gap = w, gap
        if it % 25 == 0 or gap <= threshold:
            polished = _kkt_polish(Q, w)
            if polished is not None:
                pg = _fw_gap(Q, polished)
                if pg < best_gap:
                    best_w, best_gap = polished, pg
        if best_gap <= threshold:
            return QPResult(best_w, f(best_w), best_gap, it, True)
    raise NoConvergence(f"simplex QP did not converge in {max_iter} iterations (gap {best_gap:.3e})",
                        best=best_w, gap=best_gap)


def solve_simplex_qp(B, ridge: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    return solve_qp(B, ridge, max_iter).w


def select_top_m(w, m: int, tol: float = 1e-9) -> list[int]:
    """Indices of the m largest weights, best first; near-ties favour the lower index."""
    w = np.asarray(w, dtype=np.float64)
    if not 1 <= m <= len(w):
        raise ConfigError(f"m must lie in [1, {len(w)}]")
    remaining = list(range(len(w)))
    chosen = []
    for _ in range(m):
        best = max(w[i] for i in remaining)
        pick = min(i for i in remaining if w[i] >= best - tol)
        chosen.append(pick)
        remaining.remove(pick)
    return chosen


# -------------------------------------------------------------- log handling

@dataclass
class TrainingLog:
    """Per-step training records.

    ``cycles`` holds the 1-based index of the policy whose cycle (or, for
    independent runs, whose run) generated each step.
    """
    steps: np.ndarray
    cycles: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    abs_errors: np.ndarray
    discrete: bool = True

    def __len__(self):
        return len(self.steps)

    def __post_init__(self):
        n = len(self.steps)
        if not (len(self.cycles) == len(self.states) == len(self.actions) == len(self.abs_errors) == n):
            raise ValueError("log columns have different lengths")
        if n and (not np.all(np.isfinite(self.abs_errors)) or np.any(self.abs_errors < 0)):
            raise ValueError("|L'| values must be finite and non-negative")

    @classmethod
    def concatenate(cls, logs: list["TrainingLog"]) -> "TrainingLog":
        return cls(
            np.concatenate([lg.steps for lg in logs]),
            np.concatenate([lg.cycles for lg in logs]),
            np.concatenate([lg.states for lg in logs]),
            np.concatenate([lg.actions for lg in logs]),
            np.concatenate([lg.abs_errors for lg in logs]),
            logs[0].discrete,
        )


def _grid_shape(dim: int, n_cells: int) -> list[int]:
    counts = [1] * dim
    j = 0
    while math.prod(counts) * 2 <= n_cells:
        counts[j % dim] *= 2
        j += 1
    return counts


def state_bins(states: np.ndarray, n_cells: int = 64) -> np.ndarray:
    """Integer bin id per state.

    Logs with at most ``n_cells`` distinct states (e.g. one-hot grids) bin by
    exact identity; otherwise states fall into a fixed ``n_cells`` grid over
    the observed per-dimension range.
    """
    uniq, inverse = np.unique(states, axis=0, return_inverse=True)
    if len(uniq) <= n_cells:
        return inverse.reshape(-1)
    dim = states.shape[1]
    shape = _grid_shape(dim, n_cells)
    lo, hi = states.min(axis=0), states.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    idx = np.floor((states - lo) / span * np.array(shape)).astype(np.int64)
    idx = np.clip(idx, 0, np.array(shape) - 1)
    return np.ravel_multi_index(idx.T, shape)


def ensemble_actions(policies: list[PolicyParams], states: np.ndarray, strategy: str, action_space,
                     rng: np.random.Generator, n_bins: int = 5, h: float = 1e-4) -> np.ndarray:
    """Offline ensemble action of every policy in ``policies`` at each state."""
    check_strategy(strategy, action_space)
    acts = np.stack([learner.greedy_actions(p, states) for p in policies], axis=1)
    if strategy == "majority":
        n = action_space.n
        votes = np.zeros((len(states), n))
        for j in range(acts.shape[1]):
            votes[np.arange(len(states)), acts[:, j]] += 1
        top = votes == votes.max(axis=1, keepdims=True)
        noise = rng.random(votes.shape)
        return np.argmax(np.where(top, noise, -1.0), axis=1)
    lo, hi = action_space.low_array, action_space.high_array
    acts = np.clip(acts, lo, hi)
    return np.stack([combine(strategy, a, action_space, rng, n_bins, h) for a in acts])


@dataclass
class SelectionProblem:
    states: np.ndarray
    weights: np.ndarray
    error_sums: np.ndarray
    b: np.ndarray
    B: np.ndarray
    t_err: float
    beta: float
    epsilon: float
    w: np.ndarray | None = None
    objective: float = float("nan")
    gap: float = float("nan")


@dataclass
class SelectionReport:
    w: np.ndarray
    chosen: list[int]
    diversity: np.ndarray
    t_err: float
    objective: float
    n_states: int
    B: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        def row(v):
            return ",".join(repr(float(x)) for x in v)

        lines = [
            "# cyclens selection report v1",
            f"M={len(self.w)}",
            f"m={len(self.chosen)}",
            f"chosen={','.join(str(i) for i in self.chosen)}",
            f"w={row(self.w)}",
            f"objective={self.objective!r}",
            f"t_err={self.t_err!r}",
            f"n_states={self.n_states}",
        ]
        lines += [f"B[{i}]={row(r)}" for i, r in enumerate(self.B)]
        lines += [f"diversity[{i}]={row(r)}" for i, r in enumerate(self.diversity)]
        lines += [f"{k}={v}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SelectionReport":
        kv = {}
        for line in text.splitlines():
            if line and not line.startswith("#"):
                k, v = line.split("=", 1)
                kv[k] = v
        M = int(kv.pop("M"))
        kv.pop("m")

        def vec(s):
            return np.array([float(x) for x in s.split(",")]) if s else np.zeros(0)

        rep = cls(
            w=vec(kv.pop("w")),
            chosen=[int(i) for i in kv.pop("chosen").split(",")],
            diversity=np.stack([vec(kv.pop(f"diversity[{i}]")) for i in range(M)]),
            t_err=float(kv.pop("t_err")),
            objective=float(kv.pop("objective")),
            n_states=int(kv.pop("n_states")),
            B=np.stack([vec(kv.pop(f"B[{i}]")) for i in range(M)]),
        )
        rep.extra = kv
        return rep


def sample_states(log: TrainingLog, n_samples: int, rng: np.random.Generator, n_cells: int = 64):
    """Pick representative states and their visitation weights.

    Draws ``n_samples`` records uniformly from the log, keeps one representative
    per distinct bin hit, and weights each by its bin's share of all logged
    visits (renormalised over the bins that were hit).
    Returns (bin ids of every record, sampled bin ids, states, weights).
    """
    bins = state_bins(log.states, n_cells)
    picks = rng.integers(len(log), size=n_samples)
    chosen_bins, first = np.unique(bins[picks], return_index=True)
    rep_states = log.states[picks[first]]
    visits = np.bincount(bins, minlength=int(bins.max()) + 1)[chosen_bins].astype(np.float64)
    return bins, chosen_bins, rep_states, visits / visits.sum()


def build_problem(policies: list[PolicyParams], log: TrainingLog, action_space, *, beta: float = 1.0,
                  t_err: float | None = None, epsilon: float = 0.01, strategy: str = "majority",
                  n_samples: int = 2048, rng: np.random.Generator | None = None,
                  n_bins: int = 5, h: float = 1e-4) -> SelectionProblem:
    """Assemble b-vectors and B from a training log (``t_err=None`` uses the median |L'|)."""
    M = len(policies)
    if M < 2:
        raise ConfigError("selection needs at least two policies")
    if not 1 <= beta < 2:
        raise ConfigError("beta must lie in [1, 2)")
    if len(log) == 0:
        raise ConfigError("training log is empty")
    rng = np.random.default_rng(0) if rng is None else rng
    if t_err is None:
        t_err = float(np.median(log.abs_errors))
    if not t_err > 0:
        # a zero median would flag every record; keep the threshold strictly positive
        t_err = float(np.min(log.abs_errors[log.abs_errors > 0], initial=np.inf))
        if not np.isfinite(t_err):
            t_err = 1.0

    bins, chosen_bins, rep_states, weights = sample_states(log, n_samples, rng)
    slot = np.full(int(bins.max()) + 1, -1)
    slot[chosen_bins] = np.arange(len(chosen_bins))
    rec_slot = slot[bins]
    rel = np.flatnonzero(rec_slot >= 0)

    a_e = ensemble_actions(policies, log.states[rel], strategy, action_space, rng, n_bins, h)
    acts = log.actions[rel]
    if log.discrete:
        match = acts == a_e
    else:
        match = np.max(np.abs(acts - a_e), axis=1) < epsilon
    flags = (log.abs_errors[rel] >= t_err) & match

    error_sums = np.zeros((len(chosen_bins), M))
    cyc = log.cycles[rel] - 1
    ok = (cyc >= 0) & (cyc < M)
    np.add.at(error_sums, (rec_slot[rel][ok], cyc[ok]), flags[ok].astype(np.float64))

    b = b_vectors(policies, rep_states, error_sums, beta)
    B = build_B_matrix(weights, b)
    return SelectionProblem(rep_states, weights, error_sums, b, B, t_err, beta, epsilon)


def select(policies: list[PolicyParams], log: TrainingLog, action_space, m: int, *,
           ridge: float = 1e-8, **kwargs) -> tuple[SelectionProblem, SelectionReport]:
    problem = build_problem(policies, log, action_space, **kwargs)
    res = solve_qp(problem.B, ridge)
    problem.w, problem.objective, problem.gap = res.w, res.objective, res.gap
    chosen = select_top_m(res.w, m)
    D = diversity_matrix(policies, problem.states, problem.weights)
    report = SelectionReport(res.w, chosen, D, problem.t_err, res.objective, len(problem.states), problem.B)
    return problem, report
