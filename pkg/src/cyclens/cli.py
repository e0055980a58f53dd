"""Command-line entry point: ``cyclens {train,select,evaluate,ablate,report}``.

On failure the process exits non-zero after printing one line of the form
``error: <Kind>: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, snapshots
from .config import MODES, ExperimentConfig, coerce, load_config
from .ensemble import STRATEGIES
from .errors import ConfigError, CyclensError
from .selection import SelectionReport, mean_off_diagonal

OVERRIDES = {"mode": "mode", "strategy": "strategy", "m": "m", "M": "M", "alpha0": "alpha0",
             "T": "T", "episodes": "episodes", "env": "env"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cyclens", description="Cyclic-snapshot policy ensembles on toy MDPs.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", type=Path, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="run seed (default: first of 'seeds')")
        p.add_argument("--out", type=Path, required=needs_out, help="output directory")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--strategy", choices=STRATEGIES + ("auto",))
        p.add_argument("--env")
        p.add_argument("--m", type=int)
        p.add_argument("--M", type=int)
        p.add_argument("--alpha0", type=float)
        p.add_argument("--T", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="train one run and write snapshots + training log"))
    common(sub.add_parser("select", help="solve the selection QP for a trained run directory"))
    common(sub.add_parser("evaluate", help="evaluate the selected ensemble of a run directory"))
    p = sub.add_parser("ablate", help="run the full pipeline over a parameter sweep")
    common(p)
    p.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2,...",
                   help="sweep a config key (repeatable; points form a Cartesian product)")
    p.add_argument("--seeds", help="comma-separated seeds (overrides the config)")
    p = sub.add_parser("report", help="print a summary of a run directory")
    p.add_argument("--out", type=Path, required=True)
    return ap


def _config(args, run_dir: Path | None = None) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif run_dir is not None and (run_dir / "config.txt").exists():
        cfg = load_config(run_dir / "config.txt")
    else:
        cfg = ExperimentConfig()
    changes = {}
    for flag, key in OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            changes[key] = v
    if getattr(args, "seeds", None):
        changes["seeds"] = coerce("seeds", args.seeds)
    return cfg.replace(**changes) if changes else cfg


def _seed(args, cfg: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else cfg.seeds[0]


def cmd_train(args) -> int:
    cfg = _config(args)
    seed = _seed(args, cfg)
    res = harness.run_training(cfg, seed, args.out)
    print(f"trained {res.run_id}: {res.env_steps} env steps, {len(res.snapshots)} snapshots -> {args.out}")
    return 0


def _load_run(out: Path):
    snaps = snapshots.load_run(out)
    if not snaps:
        raise CyclensError(f"no snapshots found in {out}")
    return snaps


def cmd_select(args) -> int:
    cfg = _config(args, args.out)
    snaps = _load_run(args.out)
    tlog = harness.read_log(args.out / "training_log.txt")
    report = harness.run_selection(cfg, snaps, tlog, _seed(args, cfg))
    harness.write_outputs(args.out, selection=report)
    print(f"selected {report.chosen} w={np.round(report.w, 4).tolist()}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args, args.out)
    snaps = _load_run(args.out)
    sel_path = args.out / "selection.txt"
    if sel_path.exists():
        selection = SelectionReport.from_text(sel_path.read_text())
        chosen = [snaps[i] for i in selection.chosen]
    else:
        selection, chosen = None, snaps[-cfg.m:]
    rep = harness.run_evaluation(cfg, chosen, _seed(args, cfg), selection)
    harness.write_outputs(args.out, evaluation=rep)
    print(f"mean return {rep.mean:.4f} +- {rep.std:.4f} over {len(rep.returns)} episodes")
    return 0


def _parse_sweep(items: list[str]) -> dict[str, list]:
    sweep = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--sweep expects KEY=V1,V2,... got {item!r}")
        key, raw = item.split("=", 1)
        sweep[key] = [coerce(key, v) for v in raw.split(",") if v]
    return sweep


def cmd_ablate(args) -> int:
    cfg = _config(args)
    sweep = _parse_sweep(args.sweep)
    rows = harness.run_ablation(cfg, sweep, args.out)
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} runs ({failed} failed) -> {args.out / 'ablation.csv'}")
    return 0


def cmd_report(args) -> int:
    out = args.out
    lines = [f"run directory: {out}"]
    snaps = snapshots.load_run(out)
    if snaps:
        lines.append(f"snapshots: {len(snaps)} ({snaps[0].meta.run_id})")
    if (out / "selection.txt").exists():
        sel = SelectionReport.from_text((out / "selection.txt").read_text())
        lines.append(f"chosen: {sel.chosen}")
        lines.append("w: " + " ".join(f"{x:.4f}" for x in sel.w))
        lines.append(f"mean off-diagonal KL: {mean_off_diagonal(sel.diversity):.6f}")
        lines.append("diversity matrix:")
        lines += ["  " + " ".join(f"{x:9.5f}" for x in row) for row in sel.diversity]
    if (out / "evaluation.txt").exists():
        lines.append((out / "evaluation.txt").read_text().rstrip())
    if (out / "ablation.csv").exists():
        lines.append((out / "ablation.csv").read_text().rstrip())
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return 0


COMMANDS = {"train": cmd_train, "select": cmd_select, "evaluate": cmd_evaluate,
            "ablate": cmd_ablate, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CyclensError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
