"""Smoothing-homotopy backend: estimator oracles and corrector recurrence."""

import numpy as np
import pytest

from npc import engine, gh
from npc.engine import InvalidBandwidth


class Quad:
    """||x||^2 with exact values/gradient, for estimator oracles."""

    def __init__(self, dim):
        self.dim = dim

    def values(self, X):
        return np.sum(np.asarray(X, float) ** 2, axis=1)

    def value(self, x):
        return float(np.sum(np.asarray(x, float) ** 2))

    def gradient(self, x):
        return 2.0 * np.asarray(x, float)


def test_benchmark_minima():
    assert gh.eval_benchmark(gh.ackley(2), np.zeros(2)) == pytest.approx(0.0, abs=1e-12)
    assert gh.eval_benchmark(gh.himmelblau(), np.array([3.0, 2.0])) == pytest.approx(0.0, abs=1e-12)
    assert gh.eval_benchmark(gh.rastrigin(), np.zeros(2)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("maker", [gh.ackley, gh.himmelblau, gh.rastrigin])
def test_analytic_gradients_match_finite_differences(maker):
    obj = maker()
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(5):
        x = rng.uniform(-3, 3, obj.dim)
        g = obj.gradient(x)
        for j in range(obj.dim):
            e = np.zeros(obj.dim)
            e[j] = h
            fd = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-4, abs=1e-5)


def test_smoothed_value_of_quadratic():
    # E[(0 + 1*sigma)^2] = 1 in 1-d
    est = gh.smoothed_value(Quad(1), np.zeros(1), 1.0, np.random.default_rng(2), m=10**6)
    assert est == pytest.approx(1.0, abs=0.01)


def test_smoothed_value_zero_bandwidth_is_exact():
    x = np.array([1.3, -0.4])
    assert gh.smoothed_value(Quad(2), x, 0.0, np.random.default_rng(0)) == Quad(2).value(x)


def test_zo_gradient_unbiased_on_quadratic():
    x = np.array([1.0, 0.0])
    est = gh.zo_gradient(Quad(2), x, 0.5, np.random.default_rng(3), m=10**6)
    assert np.linalg.norm(est - np.array([2.0, 0.0])) < 0.02 * 2.0
    est = gh.zo_gradient(Quad(2), x, 0.5, np.random.default_rng(4), m=10**4)
    assert np.linalg.norm(est - np.array([2.0, 0.0])) < 0.2 * 2.0


def test_zo_gradient_constant_function():
    class Const:
        def values(self, X):
            return np.full(len(X), 7.0)

        def value(self, x):
            return 7.0

    est = gh.zo_gradient(Const(), np.zeros(3), 1.0, np.random.default_rng(5), m=100)
    np.testing.assert_allclose(est, np.zeros(3), atol=1e-12)


def test_zo_gradient_zero_bandwidth_rejected():
    with pytest.raises(InvalidBandwidth):
        gh.zo_gradient(Quad(2), np.zeros(2), 0.0, np.random.default_rng(0))
    with pytest.raises(InvalidBandwidth):
        gh.zo_gradient(Quad(2), np.zeros(2), float("nan"), np.random.default_rng(0))


def test_estimators_deterministic_under_seed():
    a = gh.zo_gradient(Quad(2), np.ones(2), 0.7, np.random.default_rng(42), m=64)
    b = gh.zo_gradient(Quad(2), np.ones(2), 0.7, np.random.default_rng(42), m=64)
    np.testing.assert_array_equal(a, b)
    s1 = gh.smoothed_value(Quad(2), np.ones(2), 0.7, np.random.default_rng(42), m=64)
    s2 = gh.smoothed_value(Quad(2), np.ones(2), 0.7, np.random.default_rng(42), m=64)
    assert s1 == s2


def test_smoothing_is_a_relaxation():
    # Jensen: E[g(x* + b Z)] >= g(x*) for convex g; margin 3 sigma
    rng = np.random.default_rng(6)
    m = 10**5
    est = gh.smoothed_value(Quad(3), np.zeros(3), 0.8, rng, m=m)
    # Var[sum of 3 chi2 * b^2] per sample = 3 * 2 * b^4
    sigma = np.sqrt(3 * 2 * 0.8**4 / m)
    assert est >= 0.0 + 3 * sigma


def test_momentum_recurrence_hand_computed():
    # g(x) = x^2, alpha=0.01, beta=0.8, from x=1, exact gradients
    s = gh.MomentumState(x=np.array([1.0]), v=np.array([0.0]))
    xs = []
    for _ in range(3):
        s = gh.momentum_correct_once(s, 2.0 * s.x, 0.01, 0.8)
        xs.append(s.x[0])
    assert xs[0] == pytest.approx(0.98, abs=1e-12)
    assert xs[1] == pytest.approx(0.98 - 0.01 * (2 * 0.98 + 0.8 * 2.0), abs=1e-12)
    v2 = 2 * 0.98 + 0.8 * 2.0
    x2 = 0.98 - 0.01 * v2
    assert xs[2] == pytest.approx(x2 - 0.01 * (2 * x2 + 0.8 * v2), abs=1e-12)


def test_momentum_edge_cases():
    s = gh.MomentumState(x=np.array([1.0, 2.0]), v=np.zeros(2))
    out = gh.momentum_correct_once(s, np.zeros(2))
    np.testing.assert_array_equal(out.x, s.x)
    out = gh.momentum_correct_once(s, np.array([1.0, 1.0]), alpha=0.1, beta=0.0)
    np.testing.assert_allclose(out.x, s.x - 0.1)


def test_bandwidth_of_level():
    assert gh.bandwidth_of_level(1.0, 2.0) == 0.0
    assert gh.bandwidth_of_level(0.0, 2.0) == 2.0
    assert gh.bandwidth_of_level(0.5, 2.0) == 1.0


def test_classic_solve_on_himmelblau():
    rng = np.random.default_rng([1234, 0])
    trace = engine.solve(
        gh.make_problem(gh.himmelblau()),
        engine.classic_controller("gh"),
        engine.default_limits("gh"),
        rng,
    )
    assert trace.success
    assert trace.total_corrector_iters == 501
    assert len(trace.records) == 50
    assert trace.records[-1].level == 1.0
    assert trace.records[-1].metric < 1e-2


def test_training_family_randomization():
    rng = np.random.default_rng(7)
    objs = [gh.sample_training_objective(rng) for _ in range(20)]
    amps = np.array([o.params[0] for o in objs])
    decays = np.array([o.params[1] for o in objs])
    assert np.all((amps >= 15) & (amps <= 25)) and amps.std() > 0
    assert np.all((decays >= 0.15) & (decays <= 0.25))
    assert all(o.value(np.zeros(2)) == pytest.approx(0.0, abs=1e-12) for o in objs)
