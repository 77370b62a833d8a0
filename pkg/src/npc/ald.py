"""Annealed Langevin dynamics over particle sets.

The homotopy interpolates energies, H(x, u) = (1-u) f(x) + u g(x), between
a wide Gaussian source f(x) = ||x||^2 / (2 s^2) and the target potential g.
The corrector is unadjusted Langevin on H; one step has no meaningful
convergence criterion, so this backend always runs under MaxIters budgets
and reports the kernelized Stein discrepancy of the current particles as
its attained tolerance (computed once per level, on a fixed subsample).

Particle updates inside one step are independent (vectorized here); the
step barrier is strict, every particle advances together.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import kernels
from .engine import HomotopyProblem, InvalidBandwidth, MaxIters

GMM_BOX = 40.0
FUNNEL_SIGMA = 3.0
DW4_TAU = 1.0
DW4_A = 0.0
DW4_B = -4.0
DW4_C = 0.9
DW4_D0 = 4.0
METRIC_SUBSAMPLE = 256
# non-finite particles are reset into the source's 3-sigma box
CLAMP_SIGMAS = 3.0


@dataclass(frozen=True, eq=False)
class TargetDistribution:
    """A sampling target: potential parameters plus the source scale s."""

    kind: str
    dim: int
    source_scale: float
    means: np.ndarray = None  # gmm component means, unit covariance
    sigma: float = FUNNEL_SIGMA
    dw4_params: tuple = (DW4_TAU, DW4_A, DW4_B, DW4_C, DW4_D0)
    flags: dict = field(default_factory=dict)

    def _flag(self, name, count):
        if count:
            self.flags[name] = self.flags.get(name, 0) + int(count)

    @property
    def has_exact_sampler(self):
        return self.kind != "dw4"

    def exact_sample(self, rng, n):
        """Ancestral reference samples; dw4 has no closed-form sampler."""
        if self.kind == "gmm":
            comp = rng.integers(0, self.means.shape[0], n)
            return self.means[comp] + rng.standard_normal((n, self.dim))
        if self.kind == "funnel":
            x0 = rng.normal(0.0, self.sigma, n)
            lat = rng.standard_normal((n, self.dim - 1)) * np.exp(x0 / 2.0)[:, None]
            return np.concatenate([x0[:, None], lat], axis=1)
        raise ValueError("dw4 has no exact sampler; use a long annealed run as reference")


def gmm_target(k=40, seed=0, means=None, box=GMM_BOX):
    """k-mode planar Gaussian mixture, means uniform in [-box, box]^2."""
    if means is None:
        if k < 1:
            raise ValueError("gmm needs k >= 1")
        means = np.random.default_rng(seed).uniform(-box, box, (k, 2))
    means = np.asarray(means, float)
    if means.ndim != 2 or not np.all(np.isfinite(means)):
        raise ValueError("gmm means must be a finite 2-d array")
    return TargetDistribution("gmm", means.shape[1], GMM_BOX, means=means)


def funnel_target(sigma=FUNNEL_SIGMA, dim=10):
    if not sigma > 0:
        raise ValueError("funnel sigma must be positive")
    return TargetDistribution("funnel", dim, 3.0, sigma=float(sigma))


def dw4_target(tau=DW4_TAU, a=DW4_A, b=DW4_B, c=DW4_C, d0=DW4_D0):
    return TargetDistribution("dw4", 8, 3.0, dw4_params=(tau, a, b, c, d0))


def make_target(spec, seed=0):
    """Build a target from a config mapping {'kind': ..., parameters}."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "gmm":
        return gmm_target(spec.get("k", 40), seed, box=spec.get("box", GMM_BOX))
    if kind == "funnel":
        return funnel_target(spec.get("sigma", FUNNEL_SIGMA))
    if kind == "dw4":
        return dw4_target(
            spec.get("tau", DW4_TAU),
            spec.get("a", DW4_A),
            spec.get("b", DW4_B),
            spec.get("c", DW4_C),
            spec.get("d0", DW4_D0),
        )
    raise ValueError(f"unknown target kind: {kind!r}")


_LOG_2PI = math.log(2.0 * math.pi)
_DW4_II, _DW4_JJ = np.triu_indices(4, 1)


def _potential_batch(dist, X):
    """Energies and gradients of the target potential, one row per point."""
    if dist.kind == "gmm":
        d2 = cdist(X, dist.means, "sqeuclidean")
        z = -0.5 * d2
        m = np.max(z, axis=1)
        lse = m + np.log(np.sum(np.exp(z - m[:, None]), axis=1))
        k = dist.means.shape[0]
        energy = -lse + math.log(k) + 0.5 * dist.dim * _LOG_2PI
        w = np.exp(z - lse[:, None])
        grad = X - w @ dist.means
        return energy, grad
    if dist.kind == "funnel":
        x0 = X[:, 0]
        lat = X[:, 1:]
        m = dist.dim - 1
        decay = np.exp(-x0)
        lat_sq = np.sum(lat * lat, axis=1)
        energy = (
            x0 * x0 / (2.0 * dist.sigma**2)
            + 0.5 * decay * lat_sq
            + 0.5 * m * x0
            + 0.5 * math.log(2.0 * math.pi * dist.sigma**2)
            + 0.5 * m * _LOG_2PI
        )
        grad = np.empty_like(X)
        grad[:, 0] = x0 / dist.sigma**2 - 0.5 * decay * lat_sq + 0.5 * m
        grad[:, 1:] = decay[:, None] * lat
        return energy, grad
    if dist.kind == "dw4":
        tau, a, b, c, d0 = dist.dw4_params
        p = X.reshape(X.shape[0], 4, 2)
        gaps = np.linalg.norm(p[:, _DW4_II, :] - p[:, _DW4_JJ, :], axis=2)
        dist._flag("coincident_pairs", np.count_nonzero(gaps <= 1e-12))
        return kernels.dw4_energy_grad(X, a, b, c, d0, tau)
    raise ValueError(f"unknown target kind: {dist.kind!r}")


def potential_and_grad(dist, x):
    """Target energy and analytic gradient at one point."""
    x = np.asarray(x, float)
    if x.shape != (dist.dim,):
        raise ValueError(f"point has shape {x.shape}, target is {dist.dim}-dimensional")
    energy, grad = _potential_batch(dist, x[None, :])
    return float(energy[0]), grad[0]


def _annealed_grad_batch(dist, u, X):
    source = X / dist.source_scale**2
    if u == 0.0:
        return source
    grad = _potential_batch(dist, X)[1]
    if u == 1.0:
        return grad
    return (1.0 - u) * source + u * grad


def annealed_energy_grad(dist, u, x):
    """Gradient of (1-u) f + u g at one point, f the Gaussian source energy."""
    if not 0.0 <= u <= 1.0:
        raise ValueError("homotopy level u must lie in [0, 1]")
    x = np.asarray(x, float)
    return _annealed_grad_batch(dist, u, x[None, :])[0]


@dataclass(frozen=True)
class ParticleSet:
    """An equal-weight empirical measure: one sample per row."""

    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, float))
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise ValueError("particle sets are 2-d arrays with at least 2 rows")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("particles must be finite")

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]


def langevin_correct_once(particles, dist, u, xi, rng):
    """One unadjusted Langevin step x <- x - (xi/2) grad H + sqrt(xi) noise."""
    if not xi > 0:
        raise ValueError("Langevin step size must be positive")
    X = particles.samples
    grad = _annealed_grad_batch(dist, u, X)
    new = X - 0.5 * xi * grad + math.sqrt(xi) * rng.standard_normal(X.shape)
    bad = ~np.all(np.isfinite(new), axis=1)
    if np.any(bad):
        box = CLAMP_SIGMAS * dist.source_scale
        dist._flag("clamped_particles", np.count_nonzero(bad))
        new[bad] = np.clip(np.nan_to_num(new[bad], nan=0.0, posinf=box, neginf=-box), -box, box)
    return ParticleSet(new)


def _as_samples(particles):
    return np.asarray(getattr(particles, "samples", particles), float)


def ksd(particles, dist, bandwidth=None):
    """Kernelized Stein discrepancy against the target, RBF-kernel V-statistic.

    The score is -grad g evaluated per particle; the bandwidth defaults to
    the median pairwise distance.
    """
    X = _as_samples(particles)
    if bandwidth is None:
        bandwidth = float(np.median(pdist(X)))
    if not (bandwidth > 0 and math.isfinite(bandwidth)):
        raise InvalidBandwidth(f"bandwidth {bandwidth!r}; are all particles identical?")
    score = -_potential_batch(dist, X)[1]
    return kernels.ksd_vstat(X, score, bandwidth)


def w2(set_a, set_b):
    """Exact Wasserstein-2 between equal-size equal-weight particle sets."""
    from scipy.optimize import linear_sum_assignment

    A, B = _as_samples(set_a), _as_samples(set_b)
    if A.shape != B.shape:
        raise ValueError(f"particle sets differ in shape: {A.shape} vs {B.shape}")
    cost = cdist(A, B, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return math.sqrt(float(np.mean(cost[rows, cols])))


def particles_to_csv(particles, path):
    """Dump one particle per row for external inspection."""
    X = _as_samples(particles)
    header = ",".join(f"x{i}" for i in range(X.shape[1]))
    np.savetxt(path, X, delimiter=",", header=header, comments="")


class AnnealedProblem(HomotopyProblem):
    kind = "ald"
    warmup_plan = (MaxIters(10), 20)

    def __init__(self, dist, n_particles=512, xi=None):
        if n_particles < 2:
            raise ValueError("need at least 2 particles")
        self.dist = dist
        self.n_particles = n_particles
        self.xi = (0.05 if dist.dim <= 2 else 0.01) if xi is None else xi
        self._metric_cache = (None, math.nan)

    def init_solution(self, rng):
        x = rng.standard_normal((self.n_particles, self.dist.dim)) * self.dist.source_scale
        return ParticleSet(x)

    def correct_once(self, sol, u, rng):
        # no cheap per-step criterion; the engine falls back to criterion()
        return langevin_correct_once(sol, self.dist, u, self.xi, rng), math.nan

    def _subsample_ksd(self, sol):
        cached, value = self._metric_cache
        if cached is sol:
            return value
        value = ksd(sol.samples[:METRIC_SUBSAMPLE], self.dist)
        self._metric_cache = (sol, value)
        return value

    def criterion(self, sol, u, rng):
        return self._subsample_ksd(sol)

    def target_metric(self, sol):
        return self._subsample_ksd(sol)


def sample_training_target(rng):
    """Randomized 10-mode mixtures used to train the step-size policy."""
    return gmm_target(means=rng.uniform(-GMM_BOX, GMM_BOX, (10, 2)))


def make_problem(dist, n_particles=512, xi=None):
    return AnnealedProblem(dist, n_particles=n_particles, xi=xi)
