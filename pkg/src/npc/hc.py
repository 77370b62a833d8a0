"""Path tracking for square polynomial systems.

The homotopy H(x,t) = (1-t)*gamma*f(x) + t*g(x) deforms a start system f
with known roots into the target g.  Per level the predictor builds a
third-order Taylor expansion of the implicitly defined path x(t) (three
linear solves against one LU factorization) and extrapolates with a
Pade [2/1] rational approximant; the corrector is plain Newton at fixed
t.  A random unit-modulus gamma keeps intermediate systems nonsingular
with probability one.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import (
    CorrectorFailure,
    GridController,
    HomotopyProblem,
    SolveLimits,
    Tolerance,
    classic_controller,
    default_limits,
    solve,
)
from .linalg import lu_factor, lu_solve_factored, norm_inf
from .poly import PolynomialSystem, total_degree_start

PADE_C2_FLOOR = 1e-12
PADE_DENOM_FLOOR = 1e-8
DIVERGENCE_NORM = 1e8
CERTIFY_TOL = 1e-8
START_ROOT_TOL = 1e-10
PREDICT_GUARD = 4.0
CORRECT_GUARD = 3.0
JUMP_FLOOR = 1e-4


@dataclass(frozen=True)
class PathState:
    x: np.ndarray
    t: float
    residual: float


@dataclass(frozen=True)
class TaylorData:
    """x(t) and its scaled derivatives: c1 = x', c2 = x''/2, c3 = x'''/6."""

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray


@dataclass(frozen=True)
class PadePrediction:
    x: np.ndarray
    used_series: np.ndarray  # bool per component: power-series fallback taken


def homotopy_eval(f, g, gamma, x, t):
    """Value and Jacobian of H = (1-t)*gamma*f + t*g at (x, t)."""
    x = np.asarray(x, np.complex128)
    wf = (1.0 - t) * gamma
    value = wf * f.eval(x) + t * g.eval(x)
    jac = wf * f.jacobian(x) + t * g.jacobian(x)
    return value, jac


def taylor_coefficients(f, g, gamma, x, t):
    """Path derivatives at (x, t) from repeated implicit differentiation.

    Differentiating H(x(t), t) = 0 in t (H_tt = 0 for the linear homotopy):
        H_x x'   = -H_t
        H_x x''  = -(H_xx[x',x'] + 2 H_xt x')
        H_x x''' = -(H_xxx[x',x',x'] + 3 H_xx[x',x''] + 3 H_xt x'' + 3 H_xxt[x',x'])
    All solves share one LU factorization of H_x.  Tensor contractions
    come from directional Taylor series of f and g; the mixed H_xx[a,b]
    uses the polarization identity.
    """
    x = np.asarray(x, np.complex128)
    wf = (1.0 - t) * gamma
    jac = wf * f.jacobian(x) + t * g.jacobian(x)
    lu, piv = lu_factor(jac)

    h_t = g.eval(x) - gamma * f.eval(x)
    c1 = lu_solve_factored(lu, piv, -h_t)

    sf = f.dirseries(x, c1, 3)
    sg = g.dirseries(x, c1, 3)
    hxx_c1c1 = 2.0 * (wf * sf[:, 2] + t * sg[:, 2])
    hxt_c1 = sg[:, 1] - gamma * sf[:, 1]
    xpp = lu_solve_factored(lu, piv, -(hxx_c1c1 + 2.0 * hxt_c1))

    hxxx = 6.0 * (wf * sf[:, 3] + t * sg[:, 3])
    hxxt_c1c1 = 2.0 * (sg[:, 2] - gamma * sf[:, 2])
    sf_sum = f.dirseries(x, c1 + xpp, 2)
    sg_sum = g.dirseries(x, c1 + xpp, 2)
    sf_w = f.dirseries(x, xpp, 2)
    sg_w = g.dirseries(x, xpp, 2)
    p_sum = 2.0 * (wf * sf_sum[:, 2] + t * sg_sum[:, 2])
    p_w = 2.0 * (wf * sf_w[:, 2] + t * sg_w[:, 2])
    hxx_c1_xpp = 0.5 * (p_sum - hxx_c1c1 - p_w)
    hxt_xpp = sg_w[:, 1] - gamma * sf_w[:, 1]
    rhs = -(hxxx + 3.0 * hxx_c1_xpp + 3.0 * hxt_xpp + 3.0 * hxxt_c1c1)
    xppp = lu_solve_factored(lu, piv, rhs)

    return TaylorData(x.copy(), c1, xpp / 2.0, xppp / 6.0)


def pade_predict(data, dt):
    """Pade [2/1] extrapolation with componentwise power-series fallback."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    c0, c1, c2, c3 = data.c0, data.c1, data.c2, data.c3
    safe_c2 = np.where(np.abs(c2) < PADE_C2_FLOOR, 1.0, c2)
    q1 = -c3 / safe_c2
    denom = 1.0 + q1 * dt
    used_series = (np.abs(c2) < PADE_C2_FLOOR) | (np.abs(denom) < PADE_DENOM_FLOOR)
    pade = (c0 + (c1 + q1 * c0) * dt + (c2 + q1 * c1) * dt**2) / np.where(
        used_series, 1.0, denom
    )
    series = c0 + dt * (c1 + dt * (c2 + dt * c3))
    return PadePrediction(np.where(used_series, series, pade), used_series)


def newton_correct_once(f, g, gamma, state):
    """One Newton step on H(., t); returns (new state, ||dx||_inf)."""
    value, jac = homotopy_eval(f, g, gamma, state.x, state.t)
    lu, piv = lu_factor(jac)
    dx = lu_solve_factored(lu, piv, -value)
    x_new = state.x + dx
    res = norm_inf(
        (1.0 - state.t) * gamma * f.eval(x_new) + state.t * g.eval(x_new)
    )
    return PathState(x_new, state.t, float(res)), float(norm_inf(dx))


class PathProblem(HomotopyProblem):
    """One start root tracked from the start system to the target."""

    kind = "hc"
    warmup_plan = (Tolerance(1e-10), 10)

    def __init__(self, start, target, gamma, start_root):
        if start.n_vars != target.n_vars:
            raise ValueError("start and target systems must share dimensions")
        self.start = start
        self.target = target
        self.gamma = complex(gamma)
        self.start_root = np.asarray(start_root, np.complex128)
        self._anchor = None  # (t, predicted x, drift allowance) of the last prediction

    def _residual(self, x, t):
        value = (1.0 - t) * self.gamma * self.start.eval(x) + t * self.target.eval(x)
        return float(norm_inf(value))

    def init_solution(self, rng):
        x = self.start_root.copy()
        return PathState(x, 0.0, self._residual(x, 0.0))

    def predict(self, sol, u_from, u_to):
        data = taylor_coefficients(self.start, self.target, self.gamma, sol.x, u_from)
        dt = u_to - u_from
        pred = pade_predict(data, dt)
        # how far the local model says the path can move over dt
        model = (
            float(norm_inf(data.c1)) * dt
            + float(norm_inf(data.c2)) * dt**2
            + float(norm_inf(data.c3)) * dt**3
        )
        moved = float(norm_inf(pred.x - sol.x))
        if moved > PREDICT_GUARD * model + JUMP_FLOOR:
            raise CorrectorFailure("prediction overshot the local path model")
        self._anchor = (u_to, sol.x.copy(), CORRECT_GUARD * model + JUMP_FLOOR)
        return PathState(pred.x, u_to, self._residual(pred.x, u_to))

    def correct_once(self, sol, u, rng):
        state, step = newton_correct_once(self.start, self.target, self.gamma, sol)
        if self._anchor is not None:
            t_a, x_prev, allow = self._anchor
            # a correction that lands far from the last accepted point has
            # jumped onto a neighboring path; reject so the step gets halved
            if u == t_a and norm_inf(state.x - x_prev) > allow:
                raise CorrectorFailure("correction drifted off the tracked path")
        return state, step

    def criterion(self, sol, u, rng):
        value, jac = homotopy_eval(self.start, self.target, self.gamma, sol.x, u)
        lu, piv = lu_factor(jac)
        return float(norm_inf(lu_solve_factored(lu, piv, -value)))

    def target_metric(self, sol):
        return float(norm_inf(self.target.eval(sol.x)))

    def solution_ok(self, sol):
        x = sol.x
        return bool(np.all(np.isfinite(x.view(np.float64))) and norm_inf(x) <= DIVERGENCE_NORM)


def random_gamma(rng):
    return complex(np.exp(2j * np.pi * rng.uniform()))


def certify_root(target, x, tol=CERTIFY_TOL):
    """Local convergence certificate: small residual and small Newton step."""
    residual = float(norm_inf(target.eval(x)))
    if not residual <= tol:
        return False
    try:
        lu, piv = lu_factor(target.jacobian(x))
    except Exception:
        return False
    step = norm_inf(lu_solve_factored(lu, piv, -target.eval(x)))
    return bool(step <= tol)


def track_path(f, g, start_root, controller=None, limits=None, rng=None, gamma=None):
    """Track one root of f to a root of g.  Returns (root, trace, success)."""
    start_root = np.asarray(start_root, np.complex128)
    if norm_inf(f.eval(start_root)) > START_ROOT_TOL:
        raise ValueError("start_root does not satisfy the start system")
    rng = np.random.default_rng(rng)
    if gamma is None:
        gamma = random_gamma(rng)
    problem = PathProblem(f, g, gamma, start_root)
    controller = controller or classic_controller("hc")
    limits = limits or default_limits("hc")
    trace = solve(problem, controller, limits, rng)
    root = trace.solution.x
    success = bool(trace.success and certify_root(g, root))
    return root, trace, success


@dataclass
class PathResult:
    index: int
    root: np.ndarray
    trace: object
    success: bool
    gamma: complex


RETRACK_GRIDS = (0.0125,) + (0.003125,) * 4


def _conflicted(results, tol=1e-6):
    """Indices of failed paths plus groups of successes sharing an endpoint."""
    redo = {r.index for r in results if not r.success}
    seen = []
    for r in results:
        if not r.success:
            continue
        hits = [i for root, i in seen if norm_inf(root - r.root) <= tol]
        if hits:
            redo.add(r.index)
            redo.update(hits)
        seen.append((r.root, r.index))
    return sorted(redo)


def solve_system(
    target,
    rng=None,
    controller_factory=None,
    limits=None,
    n_roots=None,
    threads=1,
):
    """Track every start root of the total-degree homotopy to the target.

    Paths that fail or land on another path's endpoint are retracked on
    progressively finer grids; stable divergences (excess Bezout paths)
    are retracked once and then left as reported.
    """
    seq = np.random.SeedSequence(rng if isinstance(rng, int) else None)
    enum_seed = seq.spawn(1)[0]
    start, roots = total_degree_start(
        target, rng=np.random.default_rng(enum_seed), n_roots=n_roots
    )
    factory = controller_factory or (lambda: classic_controller("hc"))
    # one gamma for the whole run: per-path draws break the start-to-target
    # root bijection and collapse distinct endpoints onto shared roots
    gamma = random_gamma(np.random.default_rng(seq.spawn(1)[0]))
    seeds = seq.spawn(len(roots))
    base_limits = limits or default_limits("hc")
    _ = start.arrays, target.arrays  # build caches before any thread fan-out

    def run(i, controller, lim):
        path_rng = np.random.default_rng(seeds[i])
        root, trace, ok = track_path(
            start, target, roots[i], controller, lim, path_rng, gamma
        )
        return PathResult(i, root, trace, ok, gamma)

    def sweep(indices, make_controller, lim):
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(lambda i: run(i, make_controller(), lim), indices))
        return [run(i, make_controller(), lim) for i in indices]

    results = sweep(range(len(roots)), factory, base_limits)
    prev_redo = None
    for round_no, spacing in enumerate(RETRACK_GRIDS):
        redo = _conflicted(results)
        if round_no > 0:
            redo = [i for i in redo if results[i].trace.reason != "diverged"]
        if not redo or redo == prev_redo:
            break
        prev_redo = redo
        lim = SolveLimits(
            total_iter_cap=max(int(40 / spacing), base_limits.total_iter_cap),
            level_iter_cap=base_limits.level_iter_cap,
        )
        for res in sweep(redo, lambda: GridController(spacing, Tolerance(1e-10)), lim):
            results[res.index] = res
    return results


def distinct_roots(results, tol=1e-6):
    """Cluster successful roots; two roots match when ||a-b||_inf <= tol."""
    reps = []
    for res in results:
        if not res.success:
            continue
        if not any(norm_inf(res.root - r) <= tol for r in reps):
            reps.append(res.root)
    return reps


def sample_training_problem(rng):
    """Random dense quadratic path in three variables (policy training)."""
    expos = [
        (i, j, k)
        for i in range(3)
        for j in range(3)
        for k in range(3)
        if i + j + k <= 2
    ]
    eqs = [
        [(complex(rng.normal(), rng.normal()), e) for e in expos] for _ in range(3)
    ]
    target = PolynomialSystem(eqs)
    start, roots = total_degree_start(target, rng=rng)
    index = int(rng.integers(len(roots)))
    return PathProblem(start, target, random_gamma(rng), roots[index])
