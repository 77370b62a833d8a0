"""Kernel flavors must agree with each other and with naive references."""

import numpy as np
import pytest

from npc import kernels as K

FLAVORS = list(K.IMPLS)


def random_system(rng, neq=3, nvar=3, max_mon=5, max_deg=4):
    coeffs, expos, offs = [], [], [0]
    for _ in range(neq):
        m = rng.integers(1, max_mon + 1)
        for _ in range(m):
            coeffs.append(rng.standard_normal() + 1j * rng.standard_normal())
            expos.append(rng.integers(0, max_deg + 1, nvar))
        offs.append(len(coeffs))
    return (
        np.array(coeffs, np.complex128),
        np.array(expos, np.int64),
        np.array(offs, np.int64),
    )


def naive_eval(coeffs, expos, offs, x):
    out = []
    for ie in range(len(offs) - 1):
        acc = 0j
        for m in range(offs[ie], offs[ie + 1]):
            term = coeffs[m]
            for j, e in enumerate(expos[m]):
                term *= x[j] ** int(e)
            acc += term
        out.append(acc)
    return np.array(out)


@pytest.mark.parametrize("flavor", FLAVORS)
def test_poly_eval_matches_naive(flavor):
    rng = np.random.default_rng(7)
    for _ in range(10):
        coeffs, expos, offs = random_system(rng)
        x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        got = K.poly_eval(coeffs, expos, offs, x, impl=K.IMPLS[flavor])
        np.testing.assert_allclose(got, naive_eval(coeffs, expos, offs, x), rtol=1e-12)


@pytest.mark.parametrize("flavor", FLAVORS)
def test_poly_jac_matches_central_difference(flavor):
    rng = np.random.default_rng(8)
    coeffs, expos, offs = random_system(rng)
    x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    jac = K.poly_jac(coeffs, expos, offs, x, impl=K.IMPLS[flavor])
    h = 1e-6
    for j in range(3):
        for step in (h, 1j * h):  # complex derivative: check both real axes
            e = np.zeros(3, complex)
            e[j] = step
            fd = (naive_eval(coeffs, expos, offs, x + e) - naive_eval(coeffs, expos, offs, x - e)) / (2 * step)
            np.testing.assert_allclose(jac[:, j], fd, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("flavor", FLAVORS)
def test_poly_dirseries_low_orders(flavor):
    rng = np.random.default_rng(9)
    for _ in range(5):
        coeffs, expos, offs = random_system(rng)
        x = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        v = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        ser = K.poly_dirseries(coeffs, expos, offs, x, v, 3, impl=K.IMPLS[flavor])
        np.testing.assert_allclose(ser[:, 0], naive_eval(coeffs, expos, offs, x), rtol=1e-12)
        jac = K.poly_jac(coeffs, expos, offs, x)
        np.testing.assert_allclose(ser[:, 1], jac @ v, rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("flavor", FLAVORS)
def test_poly_dirseries_matches_shifted_eval(flavor):
    # the full series of a cubic along v, order 3, reproduces p(x + s v) exactly
    rng = np.random.default_rng(10)
    coeffs, expos, offs = random_system(rng, max_deg=1)
    expos[:, :] = np.minimum(expos, 1)
    x = rng.standard_normal(3) + 0j
    v = rng.standard_normal(3) + 0j
    ser = K.poly_dirseries(coeffs, expos, offs, x, v, 3, impl=K.IMPLS[flavor])
    for s in (0.3, -1.7):
        direct = naive_eval(coeffs, expos, offs, x + s * v)
        horner = ser[:, 0] + s * (ser[:, 1] + s * (ser[:, 2] + s * ser[:, 3]))
        np.testing.assert_allclose(horner, direct, rtol=1e-11, atol=1e-12)


def test_flavors_agree_on_everything():
    if len(FLAVORS) < 2:
        pytest.skip("numba unavailable")
    rng = np.random.default_rng(11)
    coeffs, expos, offs = random_system(rng, neq=4, nvar=4)
    x = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    a, b = K.IMPLS["numba"], K.IMPLS["numpy"]
    np.testing.assert_allclose(
        K.poly_eval(coeffs, expos, offs, x, impl=a),
        K.poly_eval(coeffs, expos, offs, x, impl=b),
        rtol=1e-12,
    )
    np.testing.assert_allclose(
        K.poly_jac(coeffs, expos, offs, x, impl=a),
        K.poly_jac(coeffs, expos, offs, x, impl=b),
        rtol=1e-12,
    )
    np.testing.assert_allclose(
        K.poly_dirseries(coeffs, expos, offs, x, v, 3, impl=a),
        K.poly_dirseries(coeffs, expos, offs, x, v, 3, impl=b),
        rtol=1e-12,
    )
    X = rng.uniform(-4, 4, (32, 2))
    np.testing.assert_allclose(K.ackley_values(X, 17.0, 0.22, impl=a), K.ackley_values(X, 17.0, 0.22, impl=b), rtol=1e-13)
    np.testing.assert_allclose(K.himmelblau_values(X, impl=a), K.himmelblau_values(X, impl=b), rtol=1e-13)
    np.testing.assert_allclose(K.rastrigin2_values(X, impl=a), K.rastrigin2_values(X, impl=b), rtol=1e-13)
    P = rng.standard_normal((16, 8)) * 2
    ea, ga = K.dw4_energy_grad(P, impl=a)
    eb, gb = K.dw4_energy_grad(P, impl=b)
    np.testing.assert_allclose(ea, eb, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ga, gb, rtol=1e-12, atol=1e-12)
    S = rng.standard_normal((32, 2))
    np.testing.assert_allclose(
        K.ksd_vstat(X, S, 2.1, impl=a), K.ksd_vstat(X, S, 2.1, impl=b), rtol=1e-12
    )


def test_benchmark_values_at_known_points():
    assert K.ackley_values(np.zeros((1, 2)))[0] == pytest.approx(0.0, abs=1e-12)
    assert K.ackley_values(np.zeros((1, 10)))[0] == pytest.approx(0.0, abs=1e-12)
    # all four Himmelblau minima
    for pt in [(3.0, 2.0), (-2.805118, 3.131312), (-3.779310, -3.283186), (3.584428, -1.848126)]:
        assert K.himmelblau_values(np.array([pt]))[0] == pytest.approx(0.0, abs=1e-9)
    assert K.rastrigin2_values(np.zeros((1, 2)))[0] == pytest.approx(0.0, abs=1e-12)
    assert K.rastrigin2_values(np.array([[0.5, 0.0]]))[0] == pytest.approx(10.25 + 9.0 - 1.0)


def test_dw4_grad_matches_finite_difference():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((3, 8)) * 1.5
    _, g = K.dw4_energy_grad(X)
    h = 1e-6
    for k in range(8):
        e = np.zeros(8)
        e[k] = h
        ep, _ = K.dw4_energy_grad(X + e)
        em, _ = K.dw4_energy_grad(X - e)
        np.testing.assert_allclose(g[:, k], (ep - em) / (2 * h), rtol=1e-5, atol=1e-6)
