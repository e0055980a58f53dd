import numpy as np
import pytest

from cyclens import harness, snapshots
from cyclens.config import ExperimentConfig, parse_config
from cyclens.errors import ConfigError, StrategySpaceMismatch
from cyclens.schedule import ScheduleSpec, lr_at

SMALL = ExperimentConfig(T=2000, M=5, episodes=5, samples=256)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return harness.run_pipeline(SMALL, 0, out), out


def test_training_accounting(small_run):
    res, out = small_run
    assert len(list(out.glob("*.snap"))) == 5
    assert len(res.training.log) == 2000 and res.training.env_steps == 2000
    assert list(res.training.log.steps) == list(range(1, 2001))
    assert [s.meta.step for s in res.training.snapshots] == [400, 800, 1200, 1600, 2000]
    assert [s.meta.cycle_index for s in res.training.snapshots] == [1, 2, 3, 4, 5]
    assert harness.read_log(out / "training_log.txt").steps.shape == (2000,)


def test_log_roundtrip(small_run, tmp_path):
    res, out = small_run
    back = harness.read_log(out / "training_log.txt")
    assert np.array_equal(back.cycles, res.training.log.cycles)
    assert np.array_equal(back.actions, res.training.log.actions)
    assert np.array_equal(back.abs_errors, res.training.log.abs_errors)
    harness.write_log(back, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == (out / "training_log.txt").read_bytes()


def test_continuous_log_roundtrip(tmp_path):
    res = harness.run_training(ExperimentConfig(env="pointmass2d", T=200, M=2, m=2), 1, tmp_path)
    back = harness.read_log(tmp_path / "training_log.txt")
    assert not back.discrete and back.actions.shape == (200, 2)
    assert np.allclose(back.actions, res.log.actions, atol=5e-7)


def test_determinism(tmp_path):
    cfg = SMALL.replace(T=1000)
    a, b = tmp_path / "a", tmp_path / "b"
    harness.run_pipeline(cfg, 3, a)
    harness.run_pipeline(cfg, 3, b)
    names = sorted(p.name for p in a.iterdir() if p.name != "timing.txt")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "timing.txt")
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_different_seeds_differ():
    a = harness.run_training(SMALL.replace(T=500), 0)
    b = harness.run_training(SMALL.replace(T=500), 1)
    assert not np.array_equal(a.snapshots[-1].params.flat, b.snapshots[-1].params.flat)


def test_b3_schedule_and_instants():
    cfg = SMALL.replace(mode="b3-random-perturb")
    steps, lr = harness._snapshot_plan(cfg, cfg.T)
    assert steps == [400, 800, 1200, 1600, 2000]
    assert {lr(t) for t in range(1, 2001)} == {cfg.base_lr}
    res = harness.run_training(cfg, 0)
    assert [s.meta.step for s in res.snapshots] == steps


def test_seerl_and_constant_lr_plans():
    steps, lr = harness._snapshot_plan(SMALL, SMALL.T)
    spec = ScheduleSpec(SMALL.alpha0, SMALL.T, SMALL.M)
    assert all(lr(t) == lr_at(spec, t) for t in range(1, 2001))
    cfg = SMALL.replace(mode="constant-lr")
    steps, lr = harness._snapshot_plan(cfg, cfg.T)
    assert len(steps) == 5 and steps[-1] == 2000 and steps[0] >= 2000 * (1 - cfg.tail_fraction)
    assert lr(1) == cfg.alpha0


def test_b1_accounting():
    cfg = SMALL.replace(mode="b1-independent", T=300, M=3, m=2)
    res = harness.run_training(cfg, 0)
    assert len(res.log) == 900 and res.env_steps == 900
    assert len(res.snapshots) == 3
    assert sorted(set(res.log.cycles.tolist())) == [1, 2, 3]
    assert all(s.meta.step == 300 for s in res.snapshots)


def test_selection_report_properties(small_run):
    res, out = small_run
    sel = res.selection
    assert np.all(np.diag(sel.diversity) == 0)
    assert abs(sel.w.sum() - 1) <= 1e-12 and len(sel.chosen) == SMALL.m
    full = harness.run_selection(SMALL.replace(m=5), res.training.snapshots, res.training.log)
    assert sorted(full.chosen) == [0, 1, 2, 3, 4]


def test_identical_snapshots_select_lowest(small_run):
    res, _ = small_run
    snap = res.training.snapshots[-1]
    # with no error indicators every b-vector is identical, so the problem is symmetric
    rep = harness.run_selection(SMALL.replace(t_err=1e9), [snap] * 5, res.training.log)
    assert np.allclose(rep.w, 0.2, atol=1e-6)
    assert rep.chosen == [0, 1, 2]


def test_evaluation_examples(small_run):
    res, _ = small_run
    snaps = res.training.snapshots
    rep = harness.run_evaluation(SMALL, [snaps[2]], seed=4)
    single, _ = harness.evaluate_policies(SMALL, [snaps[2].params], seed=4)
    assert rep.returns == single and len(rep.returns) == SMALL.episodes
    assert rep.policy_means == [pytest.approx(np.mean(single))]
    assert len(rep.to_csv().splitlines()) == SMALL.episodes + 1


def test_identical_policies_average_continuous():
    cfg = ExperimentConfig(env="pointmass2d", T=200, M=2, m=2, episodes=3, strategy="average")
    res = harness.run_training(cfg, 0)
    p = res.snapshots[-1].params
    one, _ = harness.evaluate_policies(cfg, [p], seed=1)
    three, _ = harness.evaluate_policies(cfg, [p, p, p], seed=1)
    assert one == three


def test_strategy_space_mismatch(small_run):
    res, _ = small_run
    with pytest.raises(StrategySpaceMismatch):
        harness.evaluate_policies(SMALL, [res.training.snapshots[0].params], strategy="average")
    with pytest.raises(StrategySpaceMismatch):
        harness.evaluate_policies(ExperimentConfig(env="cartpole-lite", episodes=1),
                                  [res.training.snapshots[0].params], strategy="ste")


def test_continuous_pipeline_runs():
    for strategy in ("average", "binning", "dbs", "ste"):
        cfg = ExperimentConfig(env="pointmass2d", T=400, M=4, m=2, episodes=2, samples=128, strategy=strategy)
        res = harness.run_pipeline(cfg, 0)
        assert len(res.evaluation.returns) == 2 and np.isfinite(res.evaluation.mean)


def test_ablation_rows(tmp_path):
    cfg = ExperimentConfig(T=630, episodes=2, samples=128, seeds=(0, 1, 2), m=2)
    rows = harness.run_ablation(cfg, {"M": [3, 5, 7, 9]}, tmp_path)
    assert len(rows) == 12 and all(r["status"] == "ok" for r in rows)
    assert [r["M"] for r in rows] == [3] * 3 + [5] * 3 + [7] * 3 + [9] * 3
    assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 13


def test_ablation_alpha_sweep():
    cfg = ExperimentConfig(T=300, M=3, m=2, episodes=1, samples=64)
    rows = harness.run_ablation(cfg, {"alpha0": [0.01, 0.005, 0.001]})
    assert [r["alpha0"] for r in rows] == [0.01, 0.005, 0.001]
    for a in (0.01, 0.005, 0.001):
        assert lr_at(ScheduleSpec(a, 300, 3), 1) == a


def test_ablation_marks_failures():
    cfg = ExperimentConfig(T=10, M=2, m=1, episodes=1, samples=16)
    rows = harness.run_ablation(cfg, {"M": [2, 6]})
    assert [r["status"] for r in rows] == ["ok", "failed"]
    assert "ConfigError" in rows[1]["error"]


def test_config_parsing():
    cfg = parse_config("# comment\nenv = cartpole-lite\nT=1e4\nseeds=1,2,3\nt_err=0.5\ngamma=\n")
    assert cfg.env == "cartpole-lite" and cfg.T == 10000 and cfg.seeds == (1, 2, 3)
    assert cfg.t_err == 0.5 and cfg.gamma is None
    assert parse_config(cfg.to_text()) == cfg
    for bad in ("nope=1", "m=9", "mode=other", "T=abc", "justtext"):
        with pytest.raises(ConfigError):
            parse_config(bad)
