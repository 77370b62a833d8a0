"""Command-line front end: train, solve, bench, and compare.

Exit codes: 0 success, 1 failed solve or too many flagged trials,
2 invalid configuration or usage, 3 training divergence.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import ald, bench, hc, ppo
from .config import PROBLEM_KINDS, InvalidConfig, build_config, load_file
from .errors import VersionError
from .policy import load_policy, save_policy
from .ppo import PpoConfig, TrainConfig, TrainingDiverged


def _add_common(sp):
    sp.add_argument("--config", metavar="FILE", help="JSON config file; flags override its values")
    sp.add_argument("--seed", type=int, metavar="N", help="master seed")
    sp.add_argument("--problem", choices=PROBLEM_KINDS, help="problem kind with default parameters")
    sp.add_argument(
        "--mask-state",
        action="append",
        metavar="FIELD",
        help="zero this policy state field (repeatable)",
    )
    sp.add_argument("--out", metavar="DIR", help="output directory, created if missing")
    sp.add_argument("--trials", type=int, metavar="N", help="number of independent trials")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="npc",
        description="Homotopy predictor-corrector solvers with learned step-size policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a step-size policy, write policy.json and curve.csv")
    _add_common(p)
    p.add_argument("--policy", metavar="FILE", help="resume training from this policy file")
    p.add_argument("--trials-dist", metavar="NAME", help="training problem family")
    p.add_argument("--steps", type=int, metavar="N", help="total environment steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="run one solve and dump its per-level trace")
    _add_common(p)
    p.add_argument("--policy", metavar="FILE", help="use this learned controller")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run independent trials and write results.csv")
    _add_common(p)
    p.add_argument("--policy", metavar="FILE", help="use this learned controller")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="paired comparison of two configs on shared trial streams")
    _add_common(p)
    p.add_argument("--config-b", required=True, metavar="FILE", help="config for side b")
    p.add_argument("--policy", metavar="FILE", help="learned controller for side b")
    p.set_defaults(func=cmd_compare)
    return parser


def _overrides(args, **extra):
    base = {
        "problem_kind": args.problem,
        "seed": args.seed,
        "out": args.out,
        "trials": args.trials,
        "mask_state": args.mask_state,
    }
    base.update(extra)
    return base


def _config_from(args, **extra):
    doc = load_file(args.config) if args.config else {}
    return build_config(doc, _overrides(args, **extra))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {key: _jsonable(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(value) for value in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    cfg = _config_from(args, trials_dist=args.trials_dist, steps=args.steps)
    kind = cfg.problem["kind"]
    sampler = bench.training_sampler(kind, cfg.train["dist"], cfg.train)
    reward = bench.build_reward(kind, cfg.train)
    os.makedirs(cfg.out, exist_ok=True)
    curve_path = os.path.join(cfg.out, "curve.csv")
    train_cfg = TrainConfig(
        kind=kind,
        total_env_steps=int(cfg.train["total_env_steps"]),
        reward=reward,
        limits=bench.policy_limits(kind),
        masked_fields=cfg.mask_state,
        curve_path=curve_path,
    )
    hp = PpoConfig(rollout_steps=int(cfg.train.get("rollout_steps", 2048)))
    resume = load_policy(args.policy) if args.policy else None
    metadata = {
        "problem_kind": kind,
        "dist": cfg.train["dist"],
        "seed": cfg.seed,
        "total_env_steps": train_cfg.total_env_steps,
        "lambda1": reward.lambda1,
        "lambda2": reward.lambda2,
        "t_max": reward.t_max,
        "masked_fields": list(cfg.mask_state),
    }
    log = lambda msg: print(msg, file=sys.stderr)
    try:
        model, curve = ppo.train(sampler, train_cfg, hp, seed=cfg.seed, resume=resume, log=log)
    except TrainingDiverged as exc:
        checkpoint = os.path.join(cfg.out, "checkpoint.json")
        if exc.model is not None:
            exc.model.metadata = dict(metadata, diverged=str(exc))
            save_policy(exc.model, checkpoint)
            ppo.write_curve(exc.curve, curve_path)
        print(f"training diverged: {exc}; checkpoint: {checkpoint}", file=sys.stderr)
        return 3
    model.metadata = metadata
    policy_path = os.path.join(cfg.out, "policy.json")
    save_policy(model, policy_path)
    print(
        f"wrote {policy_path} and {curve_path}: "
        f"{curve[-1][0]} env steps, final mean reward {curve[-1][1]:.4g}, "
        f"mean iters {curve[-1][2]:.1f}"
    )
    return 0


# ---------------------------------------------------------------------------
# solve


def _write_levels(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("level", "iters", "attained", "velocity", "metric"))
        for rec in (trace.warmup_record, *trace.records):
            writer.writerow(
                [
                    bench.format_cell(float(rec.level)),
                    rec.iters,
                    bench.format_cell(float(rec.attained)),
                    bench.format_cell(float(rec.velocity)),
                    bench.format_cell(float(rec.metric)),
                ]
            )


def _solve_hc(cfg, method, factory, limits):
    rows, results = bench.run_hc_trial(cfg, method, factory, limits, 0)
    target = bench.hc_system(cfg.problem)
    n_vars = target.n_vars
    path = os.path.join(cfg.out, "roots.csv")
    header = ["path", "success", "residual"]
    for i in range(n_vars):
        header += [f"x{i}_re", f"x{i}_im"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, res in zip(rows, results):
            cells = [row["path"], bench.format_cell(row["success"]), bench.format_cell(row["residual"])]
            for value in res.root:
                cells += [bench.format_cell(float(value.real)), bench.format_cell(float(value.imag))]
            writer.writerow(cells)
    distinct = hc.distinct_roots(results)
    certified = sum(1 for r in results if r.success)
    iters = sum(row["iters"] for row in rows)
    print(
        f"wrote {path}: {len(results)} paths, {certified} certified, "
        f"{len(distinct)} distinct roots, {iters} corrector iters"
    )
    return 0 if distinct else 1


def cmd_solve(args):
    cfg = _config_from(args, policy=args.policy)
    kind = cfg.problem["kind"]
    os.makedirs(cfg.out, exist_ok=True)
    method, factory, limits = bench.controller_setup(cfg)
    if kind == "hc":
        return _solve_hc(cfg, method, factory, limits)
    rows, trace = bench.run_single_trial(cfg, method, factory, limits, 0)
    row = rows[0]
    levels_path = os.path.join(cfg.out, "levels.csv")
    _write_levels(levels_path, trace)
    if kind == "ald":
        ald.particles_to_csv(trace.solution, os.path.join(cfg.out, "samples.csv"))
    elif kind == "gh":
        _write_json(
            os.path.join(cfg.out, "solution.json"),
            {"x": trace.solution.x.tolist(), "f_best": row["f_best"]},
        )
    elif kind == "gnc":
        transform = trace.solution.transform
        _write_json(
            os.path.join(cfg.out, "solution.json"),
            {
                "rotation": transform.matrix().tolist(),
                "translation": transform.translation.tolist(),
                "log10_e_r": row["log10_e_r"],
                "log10_e_t": row["log10_e_t"],
            },
        )
    metrics = ", ".join(
        f"{name}={bench.format_cell(row[name])}" for name in bench.METRIC_COLUMNS[kind]
    )
    print(
        f"wrote {levels_path}: method={method} status={row['status']} "
        f"reason={trace.reason} iters={row['iters']} {metrics}"
    )
    return 0 if trace.success else 1


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args):
    cfg = _config_from(args, policy=args.policy)
    kind = cfg.problem["kind"]
    os.makedirs(cfg.out, exist_ok=True)
    rows, aggregate, flagged = bench.run_bench(cfg)
    path = os.path.join(cfg.out, "results.csv")
    bench.write_rows(path, kind, rows, aggregate)
    metrics = ", ".join(
        f"{name}={bench.format_cell(aggregate[name])}" for name in bench.METRIC_COLUMNS[kind]
    )
    print(
        f"wrote {path}: {len(rows)} rows, {flagged} flagged; "
        f"aggregate iters={bench.format_cell(aggregate['iters'])}, {metrics}"
    )
    return 1 if flagged > 0.10 * len(rows) else 0


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args):
    cfg_a = _config_from(args)
    doc_b = load_file(args.config_b)
    cfg_b = build_config(doc_b, _overrides(args, policy=args.policy))
    report = bench.compare(cfg_a, cfg_b)
    out = args.out or cfg_a.out
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "comparison.json")
    _write_json(path, report)
    if "iteration_ratio" in report:
        deltas = ", ".join(
            f"d_{name}={bench.format_cell(value)}"
            for name, value in report["accuracy_deltas"].items()
        )
        print(
            f"wrote {path}: iteration ratio "
            f"{bench.format_cell(report['iteration_ratio'])}, {deltas}"
        )
    else:
        n_points = sum(
            len(report[side].get("points", ())) for side in ("a", "b")
        )
        print(f"wrote {path}: {n_points} sweep points")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfig, VersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
