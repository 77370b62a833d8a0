"""Global optimization by Gaussian smoothing continuation.

The easy end of the homotopy is the heavily smoothed objective
E[g(x + b*sigma)], sigma ~ N(0, I); the level u shrinks the bandwidth
b = (1-u)*sigma_max to zero.  The corrector runs momentum descent on a
zeroth-order gradient estimate; at u=1 the bandwidth is exactly zero and
the analytic gradient takes over.

Monte Carlo draws are paired antithetically (+Z with -Z).  Each draw is
still N(0, I) and the estimator is the plain forward-difference formula,
but the pairing cancels the even-order noise terms, which otherwise
dominate near a minimum and can eject the iterate late in the anneal.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .engine import HomotopyProblem, InvalidBandwidth, MaxIters
from .linalg import norm2

ZO_SAMPLES = 64
STEP_SIZE = 0.01
MOMENTUM = 0.8
INIT_BOX = 4.0
# quartic tails make individual ZO estimates heavy-tailed; cap the step the
# corrector takes from one estimate (inactive on healthy trajectories)
GRAD_CLIP = 100.0


@dataclass(frozen=True)
class Objective:
    """A benchmark objective: batch values plus an analytic gradient."""

    name: str
    dim: int
    params: tuple = ()

    def values(self, X):
        if self.name == "ackley":
            amp, decay = self.params
            return kernels.ackley_values(X, amp, decay)
        if self.name == "himmelblau":
            return kernels.himmelblau_values(X)
        if self.name == "rastrigin":
            return kernels.rastrigin2_values(X)
        raise ValueError(f"unknown objective {self.name}")

    def value(self, x):
        return float(self.values(np.asarray(x, float)[None, :])[0])

    def gradient(self, x):
        x = np.asarray(x, float)
        if self.name == "ackley":
            amp, decay = self.params
            n = x.size
            q = math.sqrt(np.sum(x * x) / n)
            c = np.mean(np.cos(2 * np.pi * x))
            radial = np.zeros(n) if q < 1e-12 else amp * decay * math.exp(-decay * q) * x / (n * q)
            return radial + (2 * np.pi / n) * np.sin(2 * np.pi * x) * math.exp(c)
        if self.name == "himmelblau":
            a = x[0] ** 2 + x[1] - 11.0
            b = x[0] + x[1] ** 2 - 7.0
            return np.array([4 * x[0] * a + 2 * b, 2 * a + 4 * x[1] * b])
        if self.name == "rastrigin":
            return np.array(
                [
                    2 * x[0] + 18 * np.pi * np.sin(2 * np.pi * x[0]),
                    2 * x[1] + 2 * np.pi * np.sin(2 * np.pi * x[1]),
                ]
            )
        raise ValueError(f"unknown objective {self.name}")


def ackley(dim=2, amp=20.0, decay=0.2):
    return Objective("ackley", dim, (float(amp), float(decay)))


def himmelblau():
    return Objective("himmelblau", 2)


def rastrigin():
    return Objective("rastrigin", 2)


def eval_benchmark(objective, x):
    return objective.value(x)


def bandwidth_of_level(u, sigma_max):
    return (1.0 - u) * sigma_max


def _draws(rng, m, dim):
    half = m // 2
    Z = rng.standard_normal((half, dim))
    parts = [Z, -Z]
    if m % 2:
        parts.append(rng.standard_normal((1, dim)))
    return np.concatenate(parts)


def smoothed_value(objective, x, b, rng, m=ZO_SAMPLES):
    """Monte Carlo estimate of E[g(x + b Z)]; exact at b = 0."""
    x = np.asarray(x, float)
    if b == 0.0:
        return objective.value(x)
    Z = _draws(rng, m, x.size)
    return float(np.mean(objective.values(x[None, :] + b * Z)))


def zo_gradient(objective, x, b, rng, m=ZO_SAMPLES):
    """Forward-difference smoothing gradient (1/b) E[(g(x+bZ) - g(x)) Z]."""
    if not (b > 0) or not math.isfinite(b):
        raise InvalidBandwidth(f"bandwidth {b!r}; use the analytic gradient at b=0")
    x = np.asarray(x, float)
    Z = _draws(rng, m, x.size)
    gx = objective.value(x)
    vals = objective.values(x[None, :] + b * Z)
    return (vals - gx) @ Z / (Z.shape[0] * b)


@dataclass
class MomentumState:
    x: np.ndarray
    v: np.ndarray  # velocity buffer, zero at init, carried across levels


def momentum_correct_once(state, grad, alpha=STEP_SIZE, beta=MOMENTUM):
    v = grad + beta * state.v
    return MomentumState(x=state.x - alpha * v, v=v)


class SmoothingProblem(HomotopyProblem):
    kind = "gh"
    warmup_plan = (MaxIters(1), 20)

    def __init__(self, objective, sigma_max=2.0, m=ZO_SAMPLES, alpha=STEP_SIZE, beta=MOMENTUM, init_box=INIT_BOX):
        self.objective = objective
        self.sigma_max = sigma_max
        self.m = m
        self.alpha = alpha
        self.beta = beta
        self.init_box = init_box

    def init_solution(self, rng):
        x = rng.uniform(-self.init_box, self.init_box, self.objective.dim)
        return MomentumState(x=x, v=np.zeros(self.objective.dim))

    def _gradient(self, x, u, rng):
        b = bandwidth_of_level(u, self.sigma_max)
        if b == 0.0:
            return self.objective.gradient(x)
        return zo_gradient(self.objective, x, b, rng, self.m)

    def correct_once(self, sol, u, rng):
        g = self._gradient(sol.x, u, rng)
        gn = norm2(g)
        if gn > GRAD_CLIP:
            g = g * (GRAD_CLIP / gn)
        return momentum_correct_once(sol, g, self.alpha, self.beta), gn

    def criterion(self, sol, u, rng):
        return norm2(self._gradient(sol.x, u, rng))

    def target_metric(self, sol):
        return self.objective.value(sol.x)


def sample_training_objective(rng):
    """Randomized Ackley family used to train the step-size policy."""
    return ackley(2, amp=rng.uniform(15.0, 25.0), decay=rng.uniform(0.15, 0.25))


def make_problem(objective, sigma_max=None):
    if sigma_max is None:
        sigma_max = 2.0 if objective.dim <= 2 else 1.0
    return SmoothingProblem(objective, sigma_max=sigma_max)
