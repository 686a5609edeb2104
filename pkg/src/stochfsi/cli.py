"""Command-line entry points: run, verify, sweep."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diagnostics
from .config import build_problem, describe_keys, load_config
from .errors import ConfigurationError, SnapshotFormatError, StochFsiError
from .scheme import run_path
from .snapshot import read_snapshot, write_csv_atomic, write_json_atomic, write_snapshot
from .verify import all_passed, verify_trajectory

SUMMARY_SCHEMA = 1


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("STOCHFSI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _run_ensemble(cfg, n_paths, seed_base, threads, overrides=None):
    """Run n_paths trajectories; every worker owns its problem objects."""

    def one(p):
        problem = build_problem(cfg, scheme_overrides=overrides)
        return run_path(problem, seed=seed_base + p)

    if threads <= 1:
        return [one(p) for p in range(n_paths)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(n_paths)))


def _stats_payload(stats) -> dict:
    return {
        "n_paths": stats.n_paths,
        "mean_max_E": stats.mean_max_E,
        "hw_max_E": stats.hw_max_E,
        "mean_sum_D": stats.mean_sum_D,
        "hw_sum_D": stats.hw_sum_D,
        "mean_sum_C": stats.mean_sum_C,
        "hw_sum_C": stats.hw_sum_C,
        "penalty_div_mean": stats.penalty_div_mean,
        "penalty_iface_mean": stats.penalty_iface_mean,
        "stop_histogram": stats.stop_hist.tolist(),
        "n_failed": stats.n_failed,
    }


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigurationError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    n_paths = args.paths if args.paths is not None else cfg.paths
    seed = args.seed if args.seed is not None else cfg.seed
    out = args.out
    os.makedirs(out, exist_ok=True)

    trajs = _run_ensemble(cfg, n_paths, seed, _threads(args))
    files = []
    for p, traj in enumerate(trajs):
        path = os.path.join(out, f"path_{p:04d}.snap")
        write_snapshot(path, traj, cfg.text, cfg.digest)
        files.append(os.path.basename(path))
    stats = diagnostics.ensemble_stats(trajs) if len(trajs) >= 1 else None
    summary = {
        "schema_version": SUMMARY_SCHEMA,
        "config_hash": cfg.digest,
        "seed_base": seed,
        "snapshots": files,
        "stats": _stats_payload(stats) if stats else None,
    }
    write_json_atomic(os.path.join(out, "summary.json"), summary)
    failed = sum(t.failed for t in trajs)
    for p, t in enumerate(trajs):
        flag = "FAILED" if t.failed else "ok"
        print(f"path {p}: {flag}, stop step {t.stop_step}/{t.n_steps}")
    print(f"wrote {len(files)} snapshot(s) + summary.json to {out}")
    return 1 if failed else 0


def cmd_verify(args) -> int:
    worst = 0
    for path in args.snapshots:
        try:
            traj, header = read_snapshot(path)
        except SnapshotFormatError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        from .config import config_hash, parse_config_text

        cfg = parse_config_text(header["config_text"])
        if header["config_hash"] != cfg.digest:
            print(f"error: {path}: config hash mismatch", file=sys.stderr)
            return 3
        problem = build_problem(cfg)
        results = verify_trajectory(problem, traj)
        n_fail = sum(not r.passed for r in results)
        for r in results:
            if not r.passed or args.verbose:
                print(f"{path}: {r.line()}")
        print(f"{path}: {len(results) - n_fail}/{len(results)} checks passed")
        if n_fail:
            worst = max(worst, 1)
    return worst


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigurationError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return 2
    if not cfg.sweep_steps or not cfg.sweep_eps:
        print("error: sweep needs sweep_steps and sweep_eps", file=sys.stderr)
        return 2
    n_paths = args.paths if args.paths is not None else cfg.paths
    seed = args.seed if args.seed is not None else cfg.seed
    out = args.out
    os.makedirs(out, exist_ok=True)

    grid = [(n, e) for n in cfg.sweep_steps for e in cfg.sweep_eps]
    bound_rows = []
    eps_groups = {}
    any_failed = False
    prev_mean = None
    for cell, (n_steps, eps) in enumerate(grid):
        trajs = _run_ensemble(
            cfg,
            n_paths,
            seed + 1000003 * cell,
            _threads(args),
            overrides={"steps": n_steps, "eps": eps},
        )
        st = diagnostics.ensemble_stats(trajs)
        any_failed = any_failed or st.n_failed > 0
        ratio = "" if prev_mean is None else st.mean_max_E / max(prev_mean, 1e-300)
        prev_mean = st.mean_max_E
        bound_rows.append(
            {
                "steps": n_steps,
                "eps": eps,
                "n_paths": st.n_paths,
                "n_failed": st.n_failed,
                "mean_max_E": st.mean_max_E,
                "hw_max_E": st.hw_max_E,
                "mean_sum_D": st.mean_sum_D,
                "mean_sum_C": st.mean_sum_C,
                "ratio_vs_prev": ratio,
            }
        )
        eps_groups.setdefault(eps, []).extend(trajs)
        print(
            f"grid ({n_steps}, {eps:g}): E[max E] = {st.mean_max_E:.6g} "
            f"+- {st.hw_max_E:.2g}, failed {st.n_failed}"
        )

    pen_rows = diagnostics.penalty_scaling_report(
        sorted(eps_groups.items(), key=lambda kv: -kv[0])
    )
    write_csv_atomic(
        os.path.join(out, "boundedness.csv"),
        bound_rows,
        list(bound_rows[0].keys()),
    )
    if pen_rows:
        write_csv_atomic(
            os.path.join(out, "penalty_scaling.csv"), pen_rows, list(pen_rows[0].keys())
        )
    write_json_atomic(
        os.path.join(out, "sweep_summary.json"),
        {
            "schema_version": SUMMARY_SCHEMA,
            "config_hash": cfg.digest,
            "boundedness": bound_rows,
            "penalty_scaling": pen_rows,
        },
    )
    print(f"wrote boundedness.csv, penalty_scaling.csv, sweep_summary.json to {out}")
    return 1 if any_failed else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="stochfsi",
        description="Splitting solver and verification harness for stochastic "
        "fluid-structure interaction on a fixed reference domain.",
        epilog=describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--paths", type=int, default=None, help="override ensemble size")
        p.add_argument("--seed", type=int, default=None, help="override base seed")
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (fallback: STOCHFSI_THREADS)",
        )

    p_run = sub.add_parser("run", help="run an ensemble and write snapshots")
    common(p_run)
    p_ver = sub.add_parser("verify", help="replay the diagnostics on snapshots")
    p_ver.add_argument("snapshots", nargs="+", help="snapshot files")
    p_ver.add_argument("--verbose", action="store_true", help="print passing checks too")
    p_sweep = sub.add_parser("sweep", help="run the (steps, eps) refinement grid")
    common(p_sweep)

    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "sweep":
            return cmd_sweep(args)
    except StochFsiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
