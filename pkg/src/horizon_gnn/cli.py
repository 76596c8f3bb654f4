"""Command-line entry point: generate, train, rollout, eval, ablate-horizons.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Logs go to stderr; reports go to files or stdout.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _accel
from .config import PRESETS, load_config, parse_sets
from .dataset import (HorizonSet, NormStats, load_trajectory, pair_count, save_trajectory,
                      split_by_melt_rate)
from .errors import DataError, NumericalError
from .experiments import Dataset, dataset_from, fit, forecast_test
from .graph import load_mesh, save_mesh
from .metrics import save_report, window_report
from .model import load_checkpoint, save_checkpoint
from .rollout import execute_rollout, forecast_trajectory, plan_rollout, save_plan_audit
from .synthetic import generate_mesh, generate_trajectory
from .train import save_history

log = logging.getLogger("horizon_gnn")

MESH_FILE = "mesh.bin"
MANIFEST = "manifest.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- data directory helpers ---------------------------------------------------------


def load_data_dir(data_dir: Path):
    data_dir = Path(data_dir)
    mesh = load_mesh(data_dir / MESH_FILE)
    files = sorted(data_dir.glob("*.traj"))
    if not files:
        raise DataError(f"no trajectory files in {data_dir}")
    return mesh, [load_trajectory(f, mesh) for f in files]


def cmd_generate(cfg, args) -> int:
    out = Path(args.out or cfg.data_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from None
    mesh = generate_mesh(cfg.synthetic)
    save_mesh(mesh, out / MESH_FILE)
    names = [MESH_FILE]
    for m in cfg.melt_rates:
        traj = generate_trajectory(mesh, replace(cfg.synthetic, melt_rate=float(m)))
        name = f"{traj.scenario_id}.traj"
        save_trajectory(traj, out / name)
        names.append(name)
    manifest = "".join(f"{_sha(out / n)}  {n}\n" for n in names)
    (out / MANIFEST).write_text(manifest)
    sys.stdout.write(manifest)
    log.info("wrote %d trajectories to %s", len(names) - 1, out)
    return 0


def _dataset(cfg) -> Dataset:
    mesh, trajs = load_data_dir(cfg.data_dir)
    return dataset_from(mesh, trajs)


def _train_config(cfg, args):
    tc = cfg.train
    if getattr(args, "horizons", None):
        tc = replace(tc, horizons=HorizonSet.parse(args.horizons))
    if getattr(args, "epochs", None):
        tc = replace(tc, epochs=args.epochs)
    return tc


def cmd_train(cfg, args) -> int:
    ds = _dataset(cfg)
    tc = _train_config(cfg, args)
    out = Path(args.out or cfg.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = fit(ds, tc)
    ck_path = out / "model.ckpt"
    save_checkpoint(result.checkpoint, ck_path)
    ds.stats.save(out / "model.stats.txt")
    save_history(result.history, out / "history.txt")
    best = min(result.history, key=lambda r: r.val_loss)
    log.info("trained %d epochs in %.1fs; best val loss %.6g at epoch %d",
             tc.epochs, result.train_seconds, best.val_loss, best.epoch)
    sys.stdout.write(f"{ck_path}\n")
    return 0


def cmd_rollout(cfg, args) -> int:
    t0 = cfg.t0 if args.t0 is None else args.t0
    t1 = cfg.t1 if args.t1 is None else args.t1
    if t1 <= t0 or t0 < 1:
        raise UsageError(f"need 1 <= t0 < t1 (got t0={t0}, t1={t1})")
    ck_path = Path(args.checkpoint)
    ck = load_checkpoint(ck_path)
    stats_path = Path(args.stats) if args.stats else ck_path.with_suffix(".stats.txt")
    stats = NormStats.load(stats_path)
    if stats.digest() != ck.stats_hash:
        raise DataError(f"{stats_path} does not match the statistics the checkpoint was trained with")
    traj_path = Path(args.trajectory)
    mesh = load_mesh(args.mesh or traj_path.parent / MESH_FILE)
    traj = load_trajectory(traj_path, mesh)
    horizons = HorizonSet.parse(args.horizons) if args.horizons else HorizonSet(ck.horizons)
    if 1 not in horizons:
        raise UsageError("rollout horizon set must contain 1")
    if t1 > traj.T:
        raise UsageError(f"t1={t1} exceeds trajectory length {traj.T}")
    frozen = args.frozen_scan or cfg.frozen_scan
    plan = plan_rollout(t0, t1, horizons, frozen=frozen)
    forecast = execute_rollout(ck, traj, plan, stats)
    if not np.all(np.isfinite(forecast)):
        raise NumericalError("rollout produced non-finite states")
    out = Path(args.output)
    save_trajectory(forecast_trajectory(traj, forecast, t0), out)
    save_plan_audit(plan, args.plan or out.with_suffix(".plan.txt"))
    log.info("rolled out %d steps (max depth %d)", len(plan.steps), plan.max_depth)
    return 0


def cmd_eval(cfg, args) -> int:
    t0 = cfg.t0 if args.t0 is None else args.t0
    t1 = cfg.t1 if args.t1 is None else args.t1
    if t1 <= t0 or t0 < 1:
        raise UsageError(f"need 1 <= t0 < t1 (got t0={t0}, t1={t1})")
    if len(args.pred) != len(args.truth):
        raise UsageError("give one --truth file per --pred file")
    pairs = []
    for p_path, q_path in zip(args.pred, args.truth):
        mesh = load_mesh(args.mesh or Path(q_path).parent / MESH_FILE)
        pred = load_trajectory(p_path, mesh)
        truth = load_trajectory(q_path, mesh)
        if pred.T < t1 or truth.T < t1:
            raise DataError(f"window end {t1} beyond stored months")
        pairs.append((pred.states[t0:t1, :, :3], truth.states[t0:t1, :, :3]))
    report = window_report(pairs, t0, t1)
    if args.report:
        save_report(report, args.report, args.series)
    else:
        sys.stdout.write(report.to_text())
        if args.series:
            Path(args.series).write_text(report.series_text())
    return 0


def format_ablation(rows) -> str:
    head = "horizon_set\tpairs_per_traj\ttrain_pairs\ttrain_seconds\trmse_vx\trmse_vy\trmse_thickness\tstatus"
    lines = [head]
    for r in rows:
        if r["status"] == "ok":
            vals = "\t".join(f"{v:.6g}" for v in r["rmse"])
            secs = f"{r['train_seconds']:.4f}"
        else:
            vals, secs = "nan\tnan\tnan", "nan"
        lines.append(f"{{{r['set']}}}\t{r['pairs']}\t{r['train_pairs']}\t{secs}\t{vals}\t{r['status']}")
    return "\n".join(lines) + "\n"


def run_ablation(ds: Dataset, cfg, sets, repeats=1):
    """Train and roll out one model per horizon set; failures become error rows."""
    rows = []
    for hs in sets:
        rows.append({"set": ",".join(map(str, hs)), "pairs": pair_count(ds.train[0].T, hs),
                     "train_pairs": sum(pair_count(tr.T, hs) for tr in ds.train),
                     "status": "ok", "train_seconds": float("inf")})
    results = [None] * len(sets)
    # repeats interleave rows so slow drift of the machine hits every row alike
    for rep in range(max(1, repeats)):
        for k, hs in enumerate(sets):
            if rows[k]["status"] != "ok":
                continue
            try:
                tc = replace(cfg.train, horizons=HorizonSet(hs))
                res = fit(ds, tc)
                rows[k]["train_seconds"] = min(rows[k]["train_seconds"], res.train_seconds)
                if rep == 0:
                    results[k] = res
            except (ValueError, ArithmeticError, RuntimeError) as exc:
                log.error("horizon set %s failed: %s", hs, exc)
                rows[k]["status"] = f"error:{type(exc).__name__}"
    for k, res in enumerate(results):
        if res is None or rows[k]["status"] != "ok":
            continue
        try:
            forecast_test(ds, res, cfg.t0, cfg.t1, frozen=cfg.frozen_scan)
            rows[k]["rmse"] = res.pooled
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            log.error("rollout for %s failed: %s", sets[k], exc)
            rows[k]["status"] = f"error:{type(exc).__name__}"
    return rows


def cmd_ablate(cfg, args) -> int:
    if args.sets is not None:
        sets = parse_sets(args.sets)
    elif args.preset:
        sets = parse_sets(args.preset)
    else:
        sets = cfg.ablation_sets
    if not sets:
        raise UsageError("ablation needs at least one horizon set")
    for hs in sets:
        if 1 not in hs:
            raise UsageError(f"horizon set {hs} does not contain 1")
    if args.epochs:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    ds = _dataset(cfg)
    repeats = args.timing_repeats or cfg.timing_repeats
    table = format_ablation(run_ablation(ds, cfg, sets, repeats))
    out = Path(args.out) if args.out else Path(cfg.report_dir) / "ablation.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(table)
    sys.stdout.write(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="horizon-gnn", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for compiled kernels")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic mesh and melt-rate sweep")
    g.add_argument("--out", help="data directory (default: data_dir from config)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one multi-horizon model")
    t.add_argument("--horizons", help="e.g. 1,15")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", help="checkpoint directory")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("rollout", help="greedy descending-horizon forecast of one trajectory")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--trajectory", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--t0", type=int)
    r.add_argument("--t1", type=int)
    r.add_argument("--horizons", help="override the checkpoint's horizon set")
    r.add_argument("--mesh", help="mesh file (default: mesh.bin next to the trajectory)")
    r.add_argument("--stats", help="normalization stats (default: <checkpoint>.stats.txt)")
    r.add_argument("--plan", help="plan audit output (default: <output>.plan.txt)")
    r.add_argument("--frozen-scan", action="store_true",
                   help="a horizon pass only reads months known when the pass began")
    r.set_defaults(func=cmd_rollout)

    e = sub.add_parser("eval", help="pooled RMSE report of forecasts against truth")
    e.add_argument("--pred", nargs="+", required=True)
    e.add_argument("--truth", nargs="+", required=True)
    e.add_argument("--mesh")
    e.add_argument("--t0", type=int)
    e.add_argument("--t1", type=int)
    e.add_argument("--report", help="report file (default: stdout)")
    e.add_argument("--series", help="optional per-month CSV series for plotting")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate-horizons", help="train/evaluate one model per horizon set")
    a.add_argument("--preset", choices=tuple(PRESETS))
    a.add_argument("--sets", help='explicit sets, e.g. "1;1,15;1,15,30"')
    a.add_argument("--epochs", type=int)
    a.add_argument("--timing-repeats", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        cfg.validate()
        _accel.set_threads(args.threads)
        return args.func(cfg, args)
    except UsageError as exc:
        log.error("%s", exc)
        return 1
    except (DataError, OSError) as exc:
        log.error("data error: %s", exc)
        return 2
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 3
    except ValueError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
