"""Homotopy predictor-corrector engine.

A solve walks a canonical level u from 0 (easy problem) to 1 (target
problem).  Per level a controller picks how far to advance u and what
corrector budget to spend; the engine predicts, corrects, measures
progress and enforces the global iteration budget.  Fixed classic
schedules and learned policies are both just controllers.
"""

import abc
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .linalg import DegenerateSystem, SingularMatrix

DELTA_MIN = 1e-3
DELTA_MAX = 0.5
VELOCITY_EPS = 1e-12


class CorrectorFailure(Exception):
    """Corrector step could not be taken (beyond plain non-convergence)."""


class InvalidBandwidth(Exception):
    """A smoothing/kernel bandwidth was zero or non-finite."""


@dataclass(frozen=True)
class Tolerance:
    """Run the corrector until its criterion drops below eps (or the cap)."""

    eps: float

    def __post_init__(self):
        if not (self.eps > 0):
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class MaxIters:
    """Run the corrector exactly this many steps (or the cap)."""

    iters: int

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iteration budget must be >= 1")


@dataclass
class SolverState:
    """What the controller sees after each accepted level."""

    level: float
    attained_tolerance: float
    corrector_iters: int
    convergence_velocity: float

    def as_array(self):
        return np.array(
            [
                self.level,
                self.attained_tolerance,
                float(self.corrector_iters),
                self.convergence_velocity,
            ]
        )


@dataclass(frozen=True)
class PcAction:
    delta_u: float
    budget: object


@dataclass
class LevelRecord:
    level: float
    iters: int
    attained: float
    velocity: float
    metric: float


@dataclass
class SolveTrace:
    warmup_record: LevelRecord
    records: list
    total_corrector_iters: int
    rejected_iters: int
    clamp_warnings: int
    success: bool
    reason: str
    wall_time: float
    solution: object


@dataclass(frozen=True)
class SolveLimits:
    total_iter_cap: int
    level_iter_cap: int
    delta_min: float = DELTA_MIN
    delta_max: float = DELTA_MAX
    max_rejects_per_level: int = 8


class HomotopyProblem(abc.ABC):
    """One homotopy family: an easy problem at u=0 deformed into the target."""

    kind = "custom"
    # (budget, cap) used for the u=0 warm-up
    warmup_plan = (Tolerance(1e-8), 100)

    @abc.abstractmethod
    def init_solution(self, rng):
        """Solution handle at u=0, before the warm-up corrector runs."""

    def predict(self, sol, u_from, u_to):
        """Extrapolate the solution from u_from to u_to (default: reuse)."""
        return sol

    @abc.abstractmethod
    def correct_once(self, sol, u, rng):
        """One corrector step at fixed u.  Returns (sol, criterion_value).

        Correctors without a cheap per-step criterion may return a
        non-finite value; the engine then falls back to criterion().
        """

    def criterion(self, sol, u, rng):
        """Convergence criterion at (sol, u); lower is better."""
        raise NotImplementedError

    @abc.abstractmethod
    def target_metric(self, sol):
        """Scalar progress metric against the u=1 target (lower is better)."""

    def solution_ok(self, sol):
        """Hook for divergence detection (path trackers override)."""
        return True


def compute_convergence_velocity(prev_metric, cur_metric):
    """Relative per-level improvement of the target metric."""
    return (prev_metric - cur_metric) / (abs(prev_metric) + VELOCITY_EPS)


@dataclass
class CorrectorRun:
    sol: object
    iters: int
    attained: float
    converged: bool
    error: object = None


def run_corrector(problem, sol, u, budget, cap, rng):
    """Run the corrector at fixed u under a budget; never exceeds cap iters."""
    iters = 0
    attained = math.nan
    try:
        if isinstance(budget, MaxIters):
            for _ in range(min(budget.iters, cap)):
                sol, crit = problem.correct_once(sol, u, rng)
                iters += 1
                attained = crit
            if not math.isfinite(attained):
                attained = problem.criterion(sol, u, rng)
            return CorrectorRun(sol, iters, attained, True)
        attained = problem.criterion(sol, u, rng)
        while attained > budget.eps and iters < cap:
            sol, crit = problem.correct_once(sol, u, rng)
            iters += 1
            attained = crit if math.isfinite(crit) else problem.criterion(sol, u, rng)
        return CorrectorRun(sol, iters, attained, attained <= budget.eps)
    except (SingularMatrix, DegenerateSystem, CorrectorFailure) as exc:
        return CorrectorRun(sol, iters, attained, False, error=exc)


class ScheduleController(abc.ABC):
    """Chooses per-level actions; queried once per accepted level."""

    def warmup(self, problem):
        return problem.warmup_plan

    @abc.abstractmethod
    def action(self, state, rng):
        """Return a PcAction for the next level given the current state."""


class GridController(ScheduleController):
    def __init__(self, spacing, budget):
        self.spacing = spacing
        self.budget = budget

    def action(self, state, rng):
        n = math.floor(state.level / self.spacing + 1e-9) + 1
        target = min(1.0, n * self.spacing)
        return PcAction(target - state.level, self.budget)


class GeometricController(ScheduleController):
    """Levels at 2^(k-10) for k=1..10: a slow start then doubling steps."""

    def __init__(self, budget):
        self.budget = budget
        self.levels = [min(1.0, 2.0 ** (k - 10)) for k in range(1, 11)]

    def action(self, state, rng):
        for u in self.levels:
            if u > state.level + 1e-12:
                return PcAction(u - state.level, self.budget)
        return PcAction(1.0 - state.level, self.budget)


def classic_controller(kind):
    """The hand-tuned schedule each solver family ships with."""
    if kind == "gh":
        return GridController(0.02, MaxIters(10))
    if kind == "ald":
        return GridController(0.025, MaxIters(10))
    if kind == "gnc":
        return GeometricController(Tolerance(1e-6))
    if kind == "hc":
        return GridController(0.05, Tolerance(1e-10))
    raise ValueError(f"unknown problem kind: {kind}")


def default_limits(kind):
    """Per-kind engine limits; total caps are 2x the nominal classic totals."""
    if kind == "gh":
        return SolveLimits(total_iter_cap=1002, level_iter_cap=20)
    if kind == "ald":
        return SolveLimits(total_iter_cap=820, level_iter_cap=20)
    if kind == "gnc":
        return SolveLimits(total_iter_cap=480, level_iter_cap=20)
    if kind == "hc":
        return SolveLimits(total_iter_cap=400, level_iter_cap=10)
    raise ValueError(f"unknown problem kind: {kind}")


def _clamp_action(action, level, limits):
    warnings = 0
    delta = float(action.delta_u)
    if not math.isfinite(delta):
        delta = limits.delta_min
        warnings += 1
    elif delta < limits.delta_min or delta > limits.delta_max:
        delta = min(max(delta, limits.delta_min), limits.delta_max)
        warnings += 1
    # the final step may be shorter than delta_min to land exactly on 1
    delta = min(delta, 1.0 - level)
    budget = action.budget
    if isinstance(budget, MaxIters) and budget.iters > limits.level_iter_cap:
        budget = MaxIters(limits.level_iter_cap)
        warnings += 1
    return delta, budget, warnings


def solve(problem, controller, limits, rng):
    """Drive the predictor-corrector loop from u=0 to u=1."""
    t0 = time.perf_counter()
    sol = problem.init_solution(rng)
    wbudget, wcap = controller.warmup(problem)
    warm = run_corrector(problem, sol, 0.0, wbudget, min(wcap, limits.total_iter_cap), rng)
    sol = warm.sol
    total = warm.iters
    records = []
    rejected = 0
    clamps = 0

    def finish(success, reason):
        return SolveTrace(
            warmup_record=warm_rec,
            records=records,
            total_corrector_iters=total,
            rejected_iters=rejected,
            clamp_warnings=clamps,
            success=success,
            reason=reason,
            wall_time=time.perf_counter() - t0,
            solution=sol,
        )

    if warm.error is not None or not math.isfinite(warm.attained):
        warm_rec = LevelRecord(0.0, warm.iters, warm.attained, 0.0, math.nan)
        return finish(False, "nonfinite" if warm.error is None else "corrector_failure")
    metric = problem.target_metric(sol)
    warm_rec = LevelRecord(0.0, warm.iters, warm.attained, 0.0, metric)
    if not math.isfinite(metric):
        return finish(False, "nonfinite")
    state = SolverState(0.0, warm.attained, warm.iters, 0.0)
    u = 0.0
    while u < 1.0:
        if total + rejected >= limits.total_iter_cap:
            return finish(False, "budget_exhausted")
        raw = controller.action(state, rng)
        delta, budget, warned = _clamp_action(raw, u, limits)
        clamps += warned
        run = None
        accepted = False
        for _ in range(limits.max_rejects_per_level + 1):
            u_try = 1.0 if u + delta >= 1.0 - 1e-12 else u + delta
            cap = min(limits.level_iter_cap, limits.total_iter_cap - total - rejected)
            try:
                cand = problem.predict(sol, u, u_try)
            except (SingularMatrix, DegenerateSystem, CorrectorFailure) as exc:
                run = CorrectorRun(sol, 0, math.nan, False, error=exc)
            else:
                run = run_corrector(problem, cand, u_try, budget, cap, rng)
            if not problem.solution_ok(run.sol):
                return finish(False, "diverged")
            if run.error is None and not math.isfinite(run.attained):
                return finish(False, "nonfinite")
            if run.error is None and run.converged:
                accepted = True
                break
            rejected += run.iters
            if delta <= limits.delta_min + 1e-15:
                break
            if total + rejected >= limits.total_iter_cap:
                return finish(False, "budget_exhausted")
            delta = max(delta / 2.0, limits.delta_min)
        if not accepted:
            return finish(False, "corrector_failure")
        u = u_try
        sol = run.sol
        total += run.iters
        new_metric = problem.target_metric(sol)
        if not math.isfinite(new_metric):
            return finish(False, "nonfinite")
        vel = compute_convergence_velocity(metric, new_metric)
        metric = new_metric
        records.append(LevelRecord(u, run.iters, run.attained, vel, new_metric))
        state = SolverState(u, run.attained, run.iters, vel)
    return finish(True, "converged")
