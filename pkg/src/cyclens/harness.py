"""Experiment driver: train -> snapshot -> select -> evaluate, plus baselines and sweeps."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import learner, snapshots
from .config import ExperimentConfig
from .ensemble import check_strategy, combine
from .envs import Env, make_env
from .errors import CyclensError
from .learner import Architecture, Batch, PolicyParams
from .schedule import ScheduleSpec, lr_at, random_perturb, snapshot_due, snapshot_steps
from .selection import SelectionReport, TrainingLog, mean_off_diagonal, select

log = logging.getLogger(__name__)

LOG_HEADER = "# cyclens-training-log v1"

# stream tags for independent generators derived from one seed
_INIT, _ACT, _ENV, _PERTURB, _SELECT, _EVAL, _TIE = range(7)


def _rng(seed: int, *tags: int) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed), *tags]).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _child_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrainingResult:
    snapshots: list
    log: TrainingLog
    env_steps: int
    episode_returns: list[float]
    run_id: str


class _Sampler:
    """Fast single-state action sampling from a parameter vector."""

    def __init__(self, params: PolicyParams, action_space, rng: np.random.Generator):
        self.rng = rng
        self.continuous = params.arch.continuous
        self.space = action_space
        self.set_params(params)

    def set_params(self, params: PolicyParams):
        self.W1, self.b1 = params["W1"], params["b1"]
        self.Wp, self.bp = params["Wp"], params["bp"]
        if self.continuous:
            self.std = np.exp(params["log_std"])

    def __call__(self, state: np.ndarray):
        h = np.tanh(self.W1 @ state + self.b1)
        out = self.Wp @ h + self.bp
        if self.continuous:
            return out + self.std * self.rng.standard_normal(len(out))
        z = np.exp(out - out.max())
        cdf = np.cumsum(z)
        return min(int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right")), len(out) - 1)


def _snapshot_plan(config: ExperimentConfig, T: int) -> tuple[list[int], callable]:
    """Snapshot instants and the learning-rate function for one training run."""
    if config.mode == "constant-lr":
        single = ScheduleSpec(config.alpha0, T, 1)
        gap = max(1, int(config.tail_fraction * T / config.M))
        steps = [T - (config.M - 1 - j) * gap for j in range(config.M)]
        if steps[0] < 1:
            raise CyclensError("T too small for the requested tail snapshots")
        return steps, lambda t: lr_at(single, t)
    spec = ScheduleSpec(config.alpha0, T, config.M)
    if config.mode == "seerl":
        return snapshot_steps(spec), lambda t: lr_at(spec, t)
    if config.mode == "b3-random-perturb":
        return snapshot_steps(spec), lambda t: config.base_lr
    return [T], lambda t: config.base_lr   # one independent b1 member


def _train_single(config: ExperimentConfig, seed: int, run_id: str, cycle_offset: int = 0) -> TrainingResult:
    env = make_env(config.env, seed=_child_seed(seed, _ENV))
    mdp = env.spec
    gamma = config.gamma if config.gamma is not None else mdp.gamma
    arch = Architecture.for_spec(mdp, config.hidden)
    params = learner.init_params(arch, _rng(seed, _INIT))
    sampler = _Sampler(params, mdp.action_space, _rng(seed, _ACT))
    perturb_rng = _rng(seed, _PERTURB)
    T = config.T
    snap_steps, lr_fn = _snapshot_plan(config, T)
    snap_set = set(snap_steps)
    perturb_at = set(snap_steps[:-1]) if config.mode == "b3-random-perturb" else set()
    if config.mode == "b1-independent":
        cycle_of = np.full(T + 1, 1 + cycle_offset)
    else:
        idx = np.searchsorted(np.array(snap_steps), np.arange(T + 1), side="left")
        cycle_of = np.minimum(idx, len(snap_steps) - 1) + 1

    d = mdp.state_dim
    states = np.empty((T, d))
    next_states = np.empty((T, d))
    actions = np.empty(T, dtype=np.int64) if mdp.discrete else np.empty((T, arch.n_out))
    rewards = np.empty(T)
    dones = np.zeros(T, dtype=bool)
    abs_err = np.empty(T)

    snaps = []
    returns = []
    ep_return = 0.0
    state = env.reset()
    start = 0
    for t in range(1, T + 1):
        i = t - 1
        a = sampler(state)
        tr = env.step(a)
        states[i] = state
        actions[i] = a
        rewards[i] = tr.reward
        next_states[i] = tr.next_state
        dones[i] = tr.done
        ep_return += tr.reward
        if tr.done:
            returns.append(ep_return)
            ep_return = 0.0
            state = env.reset()
        else:
            state = tr.next_state

        if t - start == config.rollout or t in snap_set or t == T:
            batch = Batch(states[start:t], actions[start:t], rewards[start:t], next_states[start:t], dones[start:t])
            try:
                params, _, _, total = learner.train_step_arrays(
                    params, batch, lr_fn(t), config.c_v, gamma, config.entropy_coef)
            except CyclensError as exc:
                exc.args = (f"training step {t}: {exc}",) + exc.args[1:]
                raise
            abs_err[start:t] = np.abs(total)
            start = t
            sampler.set_params(params)
        if t in snap_set:
            k = (len(snaps) + 1) if config.mode != "b1-independent" else 1 + cycle_offset
            snaps.append(snapshots.make_snapshot(
                params, run_id=run_id, env_id=config.env, cycle_index=k, step=t,
                alpha0=config.alpha0, T=T, M=config.M, mode=config.mode, seed=seed))
            if t in perturb_at:
                params = PolicyParams(arch, random_perturb(params.flat, config.sigma, config.base_lr, perturb_rng))
                sampler.set_params(params)

    tlog = TrainingLog(np.arange(1, T + 1), cycle_of[1:].copy(), states, actions, abs_err, mdp.discrete)
    return TrainingResult(snaps, tlog, T, returns, run_id)


def run_id_for(config: ExperimentConfig, seed: int) -> str:
    return f"{config.env}-{config.mode}-s{seed}"


def run_training(config: ExperimentConfig, seed: int, out_dir=None) -> TrainingResult:
    """Train per ``config.mode``; optionally write snapshots and the log under ``out_dir``."""
    run_id = run_id_for(config, seed)
    if config.mode == "b1-independent":
        parts = [_train_single(config, _child_seed(seed, 1000 + i), run_id, cycle_offset=i)
                 for i in range(config.M)]
        result = TrainingResult(
            [p.snapshots[0] for p in parts],
            TrainingLog.concatenate([p.log for p in parts]),
            sum(p.env_steps for p in parts),
            [r for p in parts for r in p.episode_returns],
            run_id,
        )
    else:
        result = _train_single(config, seed, run_id)
    if out_dir is not None:
        out = Path(out_dir)
        snapshots.save_all(result.snapshots, out)
        write_log(result.log, out / "training_log.txt")
        (out / "config.txt").write_text(config.replace(seeds=(seed,)).to_text())
    return result


# ----------------------------------------------------------------- log files

def write_log(tlog: TrainingLog, path) -> None:
    d = tlog.states.shape[1]
    acts = tlog.actions.reshape(len(tlog), -1)
    kind = "discrete" if tlog.discrete else "continuous"
    buf = io.StringIO()
    buf.write(f"{LOG_HEADER} state_dim={d} action_kind={kind} action_dim={acts.shape[1]} records={len(tlog)}\n")
    buf.write("step cycle " + " ".join(f"s{j}" for j in range(d)) + " "
              + " ".join(f"a{j}" for j in range(acts.shape[1])) + " abs_total_error\n")
    afmt = "%d" if tlog.discrete else "%.6f"
    for k in range(len(tlog)):
        buf.write(f"{tlog.steps[k]} {tlog.cycles[k]} ")
        buf.write(" ".join("%.6f" % x for x in tlog.states[k]))
        buf.write(" " + " ".join(afmt % x for x in acts[k]))
        buf.write(" %r\n" % float(tlog.abs_errors[k]))
    Path(path).write_text(buf.getvalue())


def read_log(path) -> TrainingLog:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(LOG_HEADER):
        raise CyclensError(f"{path}: not a training log")
    meta = dict(tok.split("=", 1) for tok in lines[0][len(LOG_HEADER):].split())
    d, k = int(meta["state_dim"]), int(meta["action_dim"])
    discrete = meta["action_kind"] == "discrete"
    rows = np.array([ln.split() for ln in lines[2:]], dtype=np.float64).reshape(-1, 2 + d + k + 1)
    if len(rows) != int(meta["records"]):
        raise CyclensError(f"{path}: record count {len(rows)} != header {meta['records']}")
    acts = rows[:, 2 + d:2 + d + k]
    acts = acts[:, 0].astype(np.int64) if discrete else acts
    return TrainingLog(rows[:, 0].astype(np.int64), rows[:, 1].astype(np.int64), rows[:, 2:2 + d],
                       acts, rows[:, -1], discrete)


# ----------------------------------------------------------------- selection

def run_selection(config: ExperimentConfig, snaps: list, tlog: TrainingLog, seed: int = 0) -> SelectionReport:
    """Build and solve the selection QP from logged data only."""
    env = make_env(config.env)
    policies = [s.params for s in snaps]
    strategy = config.resolved_strategy(env.spec.discrete)
    t_err = None if config.t_err == "median" else float(config.t_err)
    _, report = select(policies, tlog, env.spec.action_space, config.m, ridge=config.ridge,
                       beta=config.beta, t_err=t_err, epsilon=config.epsilon, strategy=strategy,
                       n_samples=config.samples, rng=_rng(seed, _SELECT), n_bins=config.n_bins, h=config.h)
    report.extra = {"strategy": strategy, "run_id": snaps[0].meta.run_id}
    return report


# ---------------------------------------------------------------- evaluation

@dataclass
class EvaluationReport:
    returns: list[float]
    discounted: list[float]
    policy_means: list[float]
    chosen: list[int]
    strategy: str
    w: list[float] = field(default_factory=list)
    diversity: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def std(self) -> float:
        return float(np.std(self.returns))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "return", "discounted_return"])
        for i, (g, gd) in enumerate(zip(self.returns, self.discounted)):
            w.writerow([i, repr(g), repr(gd)])
        return buf.getvalue()

    def summary_text(self) -> str:
        """Deterministic summary; wall-clock time is reported separately."""
        lines = [
            "# cyclens evaluation report v1",
            f"strategy={self.strategy}",
            f"episodes={len(self.returns)}",
            f"chosen={','.join(str(i) for i in self.chosen)}",
            f"mean_return={self.mean!r}",
            f"std_return={self.std!r}",
            f"mean_discounted_return={float(np.mean(self.discounted))!r}",
            f"policy_mean_returns={','.join(repr(float(x)) for x in self.policy_means)}",
        ]
        if len(self.w):
            lines.append(f"w={','.join(repr(float(x)) for x in self.w)}")
        for i, row in enumerate(self.diversity):
            lines.append(f"diversity[{i}]={','.join(repr(float(x)) for x in row)}")
        return "\n".join(lines) + "\n"


def _rollout(env: Env, policies: list[PolicyParams], strategy: str, rng, gamma: float, seed: int,
             n_bins: int, h: float) -> tuple[float, float]:
    space = env.spec.action_space
    state = env.reset(seed=seed)
    total = disc = 0.0
    scale = 1.0
    while True:
        if env.spec.discrete:
            cands = [int(learner.greedy_actions(p, state)[0]) for p in policies]
        else:
            cands = [np.clip(learner.greedy_actions(p, state)[0], space.low_array, space.high_array)
                     for p in policies]
        a = combine(strategy, cands, space, rng, n_bins, h)
        tr = env.step(a)
        total += tr.reward
        disc += scale * tr.reward
        scale *= gamma
        if tr.done:
            return total, disc
        state = tr.next_state


def evaluate_policies(config: ExperimentConfig, policies: list[PolicyParams], seed: int = 0,
                      strategy: str | None = None) -> tuple[list[float], list[float]]:
    env = make_env(config.env)
    strategy = strategy or config.resolved_strategy(env.spec.discrete)
    check_strategy(strategy, env.spec.action_space)
    gamma = config.gamma if config.gamma is not None else env.spec.gamma
    tie_rng = _rng(seed, _TIE)
    rets, discs = [], []
    for e in range(config.episodes):
        g, gd = _rollout(env, policies, strategy, tie_rng, gamma, _child_seed(seed, _EVAL, e), config.n_bins, config.h)
        rets.append(g)
        discs.append(gd)
    return rets, discs


def run_evaluation(config: ExperimentConfig, chosen_snaps: list, seed: int = 0,
                   selection: SelectionReport | None = None, standalone: bool = True) -> EvaluationReport:
    """Evaluate the ensemble of ``chosen_snaps`` for ``config.episodes`` episodes."""
    if not chosen_snaps:
        raise CyclensError("need at least one snapshot to evaluate")
    start = time.perf_counter()
    env = make_env(config.env)
    strategy = config.resolved_strategy(env.spec.discrete)
    policies = [s.params for s in chosen_snaps]
    rets, discs = evaluate_policies(config, policies, seed, strategy)
    policy_means = []
    if standalone:
        for p in policies:
            r, _ = evaluate_policies(config, [p], seed, strategy)
            policy_means.append(float(np.mean(r)))
    rep = EvaluationReport(rets, discs, policy_means,
                           list(selection.chosen) if selection else list(range(len(chosen_snaps))), strategy)
    if selection is not None:
        rep.w = list(selection.w)
        rep.diversity = [list(r) for r in selection.diversity]
    rep.wall_clock = time.perf_counter() - start
    return rep


# ------------------------------------------------------------------ pipeline

@dataclass
class PipelineResult:
    training: TrainingResult
    selection: SelectionReport
    evaluation: EvaluationReport
    final_policy_returns: list[float]

    @property
    def mean_kl(self) -> float:
        return mean_off_diagonal(self.selection.diversity)


def run_pipeline(config: ExperimentConfig, seed: int, out_dir=None, final_policy: bool = True) -> PipelineResult:
    training = run_training(config, seed, out_dir)
    selection = run_selection(config, training.snapshots, training.log, seed)
    chosen = [training.snapshots[i] for i in selection.chosen]
    evaluation = run_evaluation(config, chosen, seed, selection, standalone=False)
    final = evaluate_policies(config, [training.snapshots[-1].params], seed)[0] if final_policy else []
    if out_dir is not None:
        write_outputs(Path(out_dir), selection, evaluation)
    return PipelineResult(training, selection, evaluation, final)


def write_outputs(out: Path, selection: SelectionReport | None = None,
                  evaluation: EvaluationReport | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if selection is not None:
        (out / "selection.txt").write_text(selection.to_text())
    if evaluation is not None:
        (out / "episodes.csv").write_text(evaluation.to_csv())
        (out / "evaluation.txt").write_text(evaluation.summary_text())
        (out / "timing.txt").write_text(f"wall_clock_seconds={evaluation.wall_clock:.3f}\n")


# ------------------------------------------------------------------ ablation

ABLATION_COLUMNS = ["point", "seed", "env", "mode", "M", "m", "alpha0", "T", "env_steps", "log_records",
                    "ensemble_mean", "final_policy_mean", "mean_kl", "chosen", "status", "error"]


def run_ablation(config: ExperimentConfig, sweep: dict[str, list], out_dir=None) -> list[dict]:
    """Full pipeline for every point of the Cartesian ``sweep`` and every seed in ``config.seeds``.

    Failures are recorded in the row's ``status``/``error`` columns and the
    sweep continues.
    """
    keys = list(sweep)
    rows = []
    for point, values in enumerate(itertools.product(*(sweep[k] for k in keys))):
        changes = dict(zip(keys, values))
        for seed in config.seeds:
            row = {"point": point, "seed": seed, "status": "ok", "error": ""}
            try:
                cfg = config.replace(**changes)
                row.update(env=cfg.env, mode=cfg.mode, M=cfg.M, m=cfg.m, alpha0=cfg.alpha0, T=cfg.T)
                sub = Path(out_dir) / f"point{point}_seed{seed}" if out_dir is not None else None
                res = run_pipeline(cfg, seed, sub)
                row.update(env_steps=res.training.env_steps, log_records=len(res.training.log),
                           ensemble_mean=res.evaluation.mean, final_policy_mean=float(np.mean(res.final_policy_returns)),
                           mean_kl=res.mean_kl, chosen=" ".join(str(i) for i in res.selection.chosen))
            except (CyclensError, ValueError) as exc:
                log.warning("sweep point %s seed %s failed: %s", changes, seed, exc)
                row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
    if out_dir is not None:
        write_rows(rows, Path(out_dir) / "ablation.csv")
    return rows


def write_rows(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) and not math.isnan(v) else v) for k, v in r.items()})
