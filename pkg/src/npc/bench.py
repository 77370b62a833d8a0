"""Experiment harness: deterministic trials, CSV results, comparisons.

Every trial derives its streams from (master seed, trial index), so row i
is the same whether 10 or 500 trials run and regardless of worker count;
rows are emitted in trial order.  Wall-clock columns are the only
nondeterministic output.
"""

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import ald, gh, gnc, hc, poly
from .config import InvalidConfig
from .engine import (
    GridController,
    MaxIters,
    SolveLimits,
    classic_controller,
    default_limits,
    solve,
)
from .policy import PolicyController, load_policy
from .ppo import RewardConfig, reward_config

LOG_FLOOR = 1e-16

BENCH_COLUMNS = {
    "gh": ("trial", "method", "status", "f_best", "iters", "time_ms"),
    "gnc": ("trial", "method", "status", "log10_e_r", "log10_e_t", "iters", "time_ms"),
    "hc": ("trial", "path", "method", "status", "success", "residual", "iters", "time_ms"),
    "ald": ("trial", "method", "status", "w2", "ksd", "iters", "time_ms"),
}

METRIC_COLUMNS = {
    "gh": ("f_best",),
    "gnc": ("log10_e_r", "log10_e_t"),
    "hc": ("success", "residual"),
    "ald": ("w2", "ksd"),
}


def worker_count(n_tasks):
    """min(tasks, NPC_THREADS or cpu count), at least 1."""
    cap = os.environ.get("NPC_THREADS")
    cap = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(int(n_tasks), cap))


def trial_streams(seed, index):
    """Three child streams per trial: instance synthesis, solve, reference."""
    return np.random.SeedSequence((int(seed), int(index))).spawn(3)


# ---------------------------------------------------------------------------
# problem construction


GH_OBJECTIVES = {
    "himmelblau": gh.himmelblau,
    "rastrigin": gh.rastrigin,
    "ackley": gh.ackley,
}


def gh_objective(spec):
    name = spec.get("objective", "himmelblau")
    if name not in GH_OBJECTIVES:
        raise InvalidConfig(f"unknown objective {name!r}; choose from {sorted(GH_OBJECTIVES)}")
    return GH_OBJECTIVES[name]()


def hc_system(spec):
    try:
        return poly.benchmark_system(spec.get("system", "katsura"), int(spec.get("n", 5)))
    except ValueError as exc:
        raise InvalidConfig(str(exc))


def ald_target(spec):
    kind = spec.get("target", "gmm")
    if kind == "gmm":
        return ald.gmm_target(k=int(spec.get("k", 40)), seed=int(spec.get("target_seed", 0)))
    if kind == "funnel":
        return ald.funnel_target(dim=int(spec.get("dim", 10)))
    if kind == "dw4":
        return ald.dw4_target()
    raise InvalidConfig(f"unknown target {kind!r}; choose from ['dw4', 'funnel', 'gmm']")


def build_problem(cfg, synth_rng):
    """One trial's problem plus the context its metrics need."""
    kind = cfg.problem["kind"]
    if kind == "gh":
        objective = gh_objective(cfg.problem)
        return gh.make_problem(objective), {"objective": objective}
    if kind == "gnc":
        instance, truth = gnc.synth_registration(
            int(cfg.problem.get("n_points", 100)),
            float(cfg.problem.get("outlier_ratio", 0.8)),
            float(cfg.problem.get("noise_sigma", 0.01)),
            synth_rng,
        )
        return gnc.RegistrationProblem(instance), {"ground_truth": truth}
    if kind == "ald":
        dist = ald_target(cfg.problem)
        n = int(cfg.problem.get("n_particles", 512))
        return ald.make_problem(dist, n_particles=n), {"dist": dist}
    raise InvalidConfig(f"cannot build a single-trace problem for kind {kind!r}")


# ---------------------------------------------------------------------------
# controllers


def policy_limits(kind):
    """Learned tolerance budgets need a wider per-level cap on hc."""
    base = default_limits(kind)
    if kind == "hc":
        return SolveLimits(total_iter_cap=base.total_iter_cap, level_iter_cap=50)
    return base


def controller_setup(cfg):
    """(method label, controller factory, limits) for one config."""
    kind = cfg.problem["kind"]
    ctype = cfg.controller["type"]
    if ctype == "classic":
        return "classic", (lambda: classic_controller(kind)), default_limits(kind)
    if ctype == "policy":
        model = load_policy(cfg.controller["path"])
        masked = tuple(cfg.mask_state)
        factory = lambda: PolicyController(model, masked_fields=masked)
        return "policy", factory, policy_limits(kind)
    if ctype == "grid":
        spacing = float(cfg.controller["spacing"])
        budget = int(cfg.controller["budget"])
        factory = lambda: GridController(spacing, MaxIters(budget))
        base = default_limits(kind)
        n_levels = math.ceil(1.0 / spacing)
        limits = SolveLimits(
            total_iter_cap=base.total_iter_cap + n_levels * budget,
            level_iter_cap=max(base.level_iter_cap, budget),
        )
        return "grid", factory, limits
    raise InvalidConfig(f"controller type {ctype!r} cannot run trials directly")


# ---------------------------------------------------------------------------
# trials


def _trial_metrics(kind, trace, context, ref_rng):
    if kind == "gh":
        objective = context["objective"]
        return {"f_best": float(gh.eval_benchmark(objective, trace.solution.x))}
    if kind == "gnc":
        e_r, e_t = gnc.registration_errors(trace.solution.transform, context["ground_truth"])
        return {
            "log10_e_r": math.log10(max(math.degrees(e_r), LOG_FLOOR)),
            "log10_e_t": math.log10(max(e_t, LOG_FLOOR)),
        }
    if kind == "ald":
        dist = context["dist"]
        sol = trace.solution
        row = {"ksd": float(ald.ksd(sol, dist)), "w2": math.nan}
        if dist.has_exact_sampler:
            reference = dist.exact_sample(ref_rng, sol.n)
            row["w2"] = float(ald.w2(sol, reference))
        return row
    raise InvalidConfig(f"no metrics defined for kind {kind!r}")


def run_single_trial(cfg, method, factory, limits, index):
    """One gh/gnc/ald trial; returns (rows, trace)."""
    synth, solve_seed, ref_seed = trial_streams(cfg.seed, index)
    problem, context = build_problem(cfg, np.random.default_rng(synth))
    trace = solve(problem, factory(), limits, np.random.default_rng(solve_seed))
    row = {
        "trial": index,
        "method": method,
        "status": "ok" if trace.success else "aborted",
        "iters": trace.total_corrector_iters + trace.rejected_iters,
        "time_ms": trace.wall_time * 1e3,
    }
    row.update(_trial_metrics(cfg.problem["kind"], trace, context, np.random.default_rng(ref_seed)))
    return [row], trace


ABORT_REASONS = ("budget_exhausted", "nonfinite", "corrector_failure")


def run_hc_trial(cfg, method, factory, limits, index):
    """One full system solve; returns (one row per path, path results)."""
    _, solve_seed, _ = trial_streams(cfg.seed, index)
    target = hc_system(cfg.problem)
    results = hc.solve_system(
        target,
        rng=int(solve_seed.generate_state(1)[0]),
        controller_factory=factory,
        limits=limits,
        threads=worker_count(target.bezout_count()),
    )
    rows = []
    for res in results:
        trace = res.trace
        # a stable divergence is an expected endpoint for excess paths,
        # not a harness failure
        aborted = not trace.success and trace.reason in ABORT_REASONS
        rows.append(
            {
                "trial": index,
                "path": res.index,
                "method": method,
                "status": "aborted" if aborted else "ok",
                "success": bool(res.success),
                "residual": float(np.max(np.abs(target.eval(res.root))))
                if np.all(np.isfinite(res.root.view(np.float64)))
                else math.inf,
                "iters": trace.total_corrector_iters + trace.rejected_iters,
                "time_ms": trace.wall_time * 1e3,
            }
        )
    return rows, results


def aggregate_rows(kind, method, rows):
    """Mean metrics over non-flagged rows; summed wall time."""
    ok = [r for r in rows if r["status"] == "ok"]

    def mean(col):
        return float(np.mean([r[col] for r in ok])) if ok else math.nan

    agg = {c: "" for c in BENCH_COLUMNS[kind]}
    agg.update(trial="aggregate", method=method, status="ok")
    if kind == "hc":
        agg["success"] = (
            float(np.mean([1.0 if r["success"] else 0.0 for r in ok])) if ok else math.nan
        )
        certified = [r["residual"] for r in ok if r["success"]]
        agg["residual"] = max(certified) if certified else math.nan
    else:
        for col in METRIC_COLUMNS[kind]:
            agg[col] = mean(col)
    agg["iters"] = mean("iters")
    agg["time_ms"] = float(np.sum([r["time_ms"] for r in rows])) if rows else 0.0
    return agg


def run_bench(cfg):
    """cfg.trials independent solves; returns (rows, aggregate, n flagged)."""
    kind = cfg.problem["kind"]
    method, factory, limits = controller_setup(cfg)
    if kind == "hc":
        # paths parallelize inside each system solve
        batches = [run_hc_trial(cfg, method, factory, limits, i)[0] for i in range(cfg.trials)]
    else:
        run = lambda i: run_single_trial(cfg, method, factory, limits, i)[0]
        workers = worker_count(cfg.trials)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                batches = list(pool.map(run, range(cfg.trials)))
        else:
            batches = [run(i) for i in range(cfg.trials)]
    rows = [row for batch in batches for row in batch]
    aggregate = aggregate_rows(kind, method, rows)
    flagged = sum(1 for r in rows if r["status"] != "ok")
    return rows, aggregate, flagged


# ---------------------------------------------------------------------------
# CSV emission


def format_cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_rows(path, kind, rows, aggregate=None):
    columns = BENCH_COLUMNS[kind]
    everything = list(rows) + ([aggregate] if aggregate is not None else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in everything:
            writer.writerow([format_cell(row.get(c, "")) for c in columns])


# ---------------------------------------------------------------------------
# comparisons


def single_point(cfg):
    rows, agg, flagged = run_bench(cfg)
    kind = cfg.problem["kind"]
    return {
        "method": cfg.controller["type"],
        "iters": agg["iters"],
        "metrics": {c: agg[c] for c in METRIC_COLUMNS[kind]},
        "rows": len(rows),
        "flagged": flagged,
    }


def sweep_points(cfg):
    """Grid the classic schedule over (levels x budget); one point each."""
    kind = cfg.problem["kind"]
    points = []
    for levels in cfg.controller["levels"]:
        for budget in cfg.controller["budgets"]:
            grid = {"type": "grid", "spacing": 1.0 / int(levels), "budget": int(budget)}
            _, agg, _ = run_bench(replace(cfg, controller=grid))
            point = {"levels": int(levels), "budget": int(budget), "iters": agg["iters"]}
            point.update({c: agg[c] for c in METRIC_COLUMNS[kind]})
            points.append(point)
    return points


def compare(cfg_a, cfg_b):
    """Paired comparison of two controllers on identical trial streams."""
    for name in ("problem", "trials", "seed"):
        if getattr(cfg_a, name) != getattr(cfg_b, name):
            raise InvalidConfig(
                f"compare requires matching {name}: "
                f"{getattr(cfg_a, name)!r} != {getattr(cfg_b, name)!r}"
            )
    report = {"problem": cfg_a.problem, "trials": cfg_a.trials, "seed": cfg_a.seed}
    for label, cfg in (("a", cfg_a), ("b", cfg_b)):
        if cfg.controller["type"] == "sweep":
            report[label] = {"method": "sweep", "points": sweep_points(cfg)}
        else:
            report[label] = single_point(cfg)
    if "points" not in report["a"] and "points" not in report["b"]:
        report["iteration_ratio"] = report["b"]["iters"] / report["a"]["iters"]
        report["accuracy_deltas"] = {
            name: report["b"]["metrics"][name] - report["a"]["metrics"][name]
            for name in report["a"]["metrics"]
        }
    return report


# ---------------------------------------------------------------------------
# training plumbing


def training_sampler(kind, dist, train_cfg=None):
    """rng -> problem callable for the named training distribution."""
    train_cfg = train_cfg or {}
    table = {
        ("gh", "ackley-random"): lambda rng: gh.make_problem(gh.sample_training_objective(rng)),
        ("gnc", "synthetic"): lambda rng: gnc.sample_training_instance(rng)[0],
        ("hc", "quadratic-3"): hc.sample_training_problem,
        ("ald", "gmm-random"): lambda rng: ald.make_problem(
            ald.sample_training_target(rng),
            n_particles=int(train_cfg.get("n_particles", 512)),
        ),
    }
    if (kind, dist) not in table:
        choices = sorted(d for k, d in table if k == kind)
        raise InvalidConfig(f"no training distribution {dist!r} for {kind!r}; choose from {choices}")
    return table[(kind, dist)]


def build_reward(kind, train_cfg):
    """Per-kind reward defaults with explicit overrides applied."""
    base = reward_config(kind)
    lam1 = train_cfg.get("lambda1")
    lam2 = train_cfg.get("lambda2")
    t_max = train_cfg.get("t_max")
    return RewardConfig(
        base.lambda1 if lam1 is None else float(lam1),
        base.lambda2 if lam2 is None else float(lam2),
        base.t_max if t_max is None else int(t_max),
    )
