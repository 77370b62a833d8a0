"""Polynomial system representation, generators, text format, start systems."""

import math

import numpy as np
import pytest

from npc import poly
from npc.errors import ParseError


def naive_eval(system, x):
    out = np.zeros(system.n_vars, np.complex128)
    for i, eq in enumerate(system.equations):
        for c, expo in eq:
            term = c
            for j, a in enumerate(expo):
                term *= x[j] ** a
            out[i] += term
    return out


def random_point(n, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_canonicalization_merges_and_drops():
    a = poly.PolynomialSystem([[(1, (2,)), (2, (2,)), (1, (0,)), (-1, (0,))]])
    b = poly.PolynomialSystem([[(3, (2,))]])
    assert a == b
    assert a.degrees() == (2,)


def test_constructor_validation():
    with pytest.raises(ValueError, match="square"):
        poly.PolynomialSystem([[(1, (1, 0))], [(1, (0, 1))], [(1, (1, 1))]], 2)
    with pytest.raises(ValueError, match="negative"):
        poly.PolynomialSystem([[(1, (-1,))]], 1)
    with pytest.raises(ValueError, match="length"):
        poly.PolynomialSystem([[(1, (1, 2))]], 1)


def test_katsura_structure():
    sys5 = poly.katsura(5)
    assert sys5.n_vars == 6
    assert sys5.degrees() == (1, 2, 2, 2, 2, 2)
    assert sys5.bezout_count() == 32
    # normalization row: u0 + 2*(u1..u5) - 1
    lin = dict((e, c) for c, e in sys5.equations[0])
    assert lin[(0,) * 6] == -1
    assert lin[(1, 0, 0, 0, 0, 0)] == 1
    assert all(lin[tuple(1 if j == m else 0 for j in range(6))] == 2 for m in range(1, 6))


def test_katsura_matches_symmetric_convolution():
    n = 4
    sys_n = poly.katsura(n)
    x = random_point(n + 1, 1)

    def u(i):
        return x[abs(i)] if abs(i) <= n else 0.0

    expected = [sum(u(i) for i in range(-n, n + 1)) - 1.0]
    for m in range(n):
        expected.append(sum(u(l) * u(m - l) for l in range(-n, n + 1)) - u(m))
    np.testing.assert_allclose(sys_n.eval(x), expected, rtol=1e-12)


def test_katsura_known_root():
    sys1 = poly.katsura(1)
    np.testing.assert_allclose(sys1.eval(np.array([1 / 3, 1 / 3], complex)), 0, atol=1e-15)
    np.testing.assert_allclose(sys1.eval(np.array([1.0, 0.0], complex)), 0, atol=1e-15)


def test_cyclic_structure_and_eval():
    sys5 = poly.cyclic(5)
    assert sys5.degrees() == (1, 2, 3, 4, 5)
    assert sys5.bezout_count() == 120
    x = random_point(5, 2)
    expected = []
    for m in range(1, 5):
        expected.append(sum(math.prod([x[(j + k) % 5] for k in range(m)]) for j in range(5)))
    expected.append(math.prod(x) - 1.0)
    np.testing.assert_allclose(sys5.eval(x), expected, rtol=1e-12)
    ones = np.ones(5, complex)
    np.testing.assert_allclose(sys5.eval(ones), [5, 5, 5, 5, 0], atol=1e-12)


def test_noon_all_ones():
    sys3 = poly.noon(3)
    assert sys3.degrees() == (3, 3, 3)
    np.testing.assert_allclose(sys3.eval(np.ones(3, complex)), 1.9, rtol=1e-12)


def test_chandra_eval():
    n, c = 6, 0.51234
    sysn = poly.chandra(n)
    assert sysn.degrees() == (2,) * n
    expected = [-c * (1.0 + sum(k / (i + k) for i in range(1, n))) for k in range(1, n + 1)]
    np.testing.assert_allclose(sysn.eval(np.ones(n, complex)), expected, rtol=1e-12)


def test_benchmark_system_dispatch():
    assert poly.benchmark_system("noon", 3) == poly.noon(3)
    with pytest.raises(ValueError, match="unknown system"):
        poly.benchmark_system("nope", 3)
    with pytest.raises(ValueError, match="katsura"):
        poly.benchmark_system("katsura", 11)


def test_eval_and_jacobian_against_naive():
    for name, n in (("katsura", 3), ("noon", 3), ("chandra", 4)):
        system = poly.benchmark_system(name, n)
        x = random_point(system.n_vars, hash(name) % 1000)
        np.testing.assert_allclose(system.eval(x), naive_eval(system, x), rtol=1e-11)
        jac = system.jacobian(x)
        h = 1e-7
        for j in range(system.n_vars):
            dx = np.zeros(system.n_vars, complex)
            dx[j] = h
            col = (naive_eval(system, x + dx) - naive_eval(system, x - dx)) / (2 * h)
            np.testing.assert_allclose(jac[:, j], col, rtol=1e-6, atol=1e-8)


def test_total_degree_start_small():
    target = poly.PolynomialSystem(
        [[(1, (2, 0)), (-1, (0, 0))], [(1, (0, 2)), (-4, (0, 0))]]
    )
    start, roots = poly.total_degree_start(target)
    assert len(roots) == 4
    got = sorted((round(r[0].real), round(r[1].real)) for r in roots)
    assert got == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for r in roots:
        assert np.max(np.abs(start.eval(r))) < 1e-12


def test_total_degree_start_katsura5():
    start, roots = poly.total_degree_start(poly.katsura(5))
    assert len(roots) == 32
    assert start.degrees() == poly.katsura(5).degrees()
    for r in roots:
        assert np.max(np.abs(start.eval(r))) < 1e-12
    uniq = {tuple(np.round(r, 9)) for r in roots}
    assert len(uniq) == 32


def test_total_degree_start_cap_and_subset():
    big = poly.cyclic(7)  # Bezout 5040
    with pytest.raises(ValueError, match="n_roots"):
        poly.total_degree_start(big)
    start, roots = poly.total_degree_start(big, rng=3, n_roots=12)
    assert len(roots) == 12
    assert len({tuple(np.round(r, 9)) for r in roots}) == 12
    for r in roots:
        assert np.max(np.abs(start.eval(r))) < 1e-12
    _, again = poly.total_degree_start(big, rng=3, n_roots=12)
    np.testing.assert_array_equal(np.array(roots), np.array(again))


def test_format_parse_round_trip():
    for system in (poly.katsura(4), poly.noon(3), poly.chandra(5)):
        assert poly.parse_system(poly.format_system(system)) == system
    gauss = poly.PolynomialSystem(
        [[(1 + 2j, (3, 0)), (-0.25j, (1, 1))], [(1e-3 - 1e3j, (0, 2)), (5, (0, 0))]]
    )
    assert poly.parse_system(poly.format_system(gauss)) == gauss


def test_parse_merges_duplicates():
    system = poly.parse_system("(1.0,0.0) x1^2 + (2.0,0.0) x1^2\n(0.0,0.0)\n")
    assert system.equations[0] == ((3 + 0j, (2, 0)),)
    assert system.equations[1] == ()


def test_parse_accepts_bare_variable_and_comments():
    text = "# a comment\n\n(1.0,0.0) x1 x2^2\n(-1.0,0.0) x2\n"
    system = poly.parse_system(text)
    assert system.equations[0] == ((1 + 0j, (1, 2)),)
    assert system.equations[1] == ((-1 + 0j, (0, 1)),)


@pytest.mark.parametrize(
    "text,line,frag",
    [
        ("(1.0,0.0) x1\nbogus x1\n", 2, "expected coefficient"),
        ("(1.0,0.0) y1\n", 1, "bad monomial"),
        ("(1.0) x1\n", 1, "comma"),
        ("(a,b) x1\n", 1, "non-numeric"),
        ("(1.0,0.0) x1^-2\n", 1, "bad monomial"),
        ("(1.0,0.0) x1 +\n", 1, "dangling"),
        ("(1.0,0.0) x0\n", 1, "1-based"),
        ("(1.0,0.0) x1\n(1.0,0.0) x3\n", 2, "exceeds system size"),
        ("# only a comment\n", 1, "no equations"),
    ],
)
def test_parse_errors_are_line_precise(text, line, frag):
    with pytest.raises(ParseError, match=frag) as exc:
        poly.parse_system(text)
    assert exc.value.line == line


def test_dirseries_zeroth_order_is_eval():
    system = poly.cyclic(4)
    x = random_point(4, 5)
    v = random_point(4, 6)
    series = system.dirseries(x, v, order=3)
    np.testing.assert_allclose(series[:, 0], system.eval(x), rtol=1e-12)
    h = 1e-6
    fd = (naive_eval(system, x + h * v) - naive_eval(system, x - h * v)) / (2 * h)
    np.testing.assert_allclose(series[:, 1], fd, rtol=1e-6, atol=1e-8)
