"""Square complex polynomial systems.

A system is a list of equations, each a sparse sum of monomials
``(coefficient, exponent vector)``.  Construction canonicalizes every
equation: duplicate exponent vectors are merged, exact-zero coefficients
dropped, terms sorted by exponent vector.  Evaluation, Jacobians, and
directional Taylor series are delegated to the flat-array kernels.

The text format is one equation per line, monomials separated by ``+``
with whitespace around it, each monomial a coefficient ``(<re>,<im>)``
followed by factors ``xJ^A`` (1-based variable index; a bare ``xJ``
means power 1).  Blank lines and lines starting with ``#`` are skipped.
"""

import math
import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import ParseError

BEZOUT_CAP = 4096

_VAR_TOKEN = re.compile(r"^x([0-9]+)(?:\^([0-9]+))?$")


@dataclass(frozen=True)
class PolynomialSystem:
    """Canonical sparse representation of a square polynomial system."""

    n_vars: int
    equations: tuple

    def __init__(self, equations, n_vars=None):
        eqs = [list(eq) for eq in equations]
        if n_vars is None:
            if not eqs or not eqs[0]:
                raise ValueError("cannot infer n_vars from an empty system")
            n_vars = len(eqs[0][0][1])
        if len(eqs) != n_vars:
            raise ValueError(f"system is not square: {len(eqs)} equations, {n_vars} variables")
        canon = []
        for eq in eqs:
            merged = {}
            for coeff, expo in eq:
                expo = tuple(int(a) for a in expo)
                if len(expo) != n_vars:
                    raise ValueError(f"exponent vector {expo} has length != {n_vars}")
                if any(a < 0 for a in expo):
                    raise ValueError(f"negative exponent in {expo}")
                merged[expo] = merged.get(expo, 0j) + complex(coeff)
            terms = tuple(
                (c, e) for e, c in sorted(merged.items()) if c != 0
            )
            canon.append(terms)
        object.__setattr__(self, "n_vars", int(n_vars))
        object.__setattr__(self, "equations", tuple(canon))

    @cached_property
    def arrays(self):
        """Flat (coeffs, expos, offsets) arrays for the evaluation kernels."""
        coeffs, expos, offs = [], [], [0]
        for eq in self.equations:
            for c, e in eq:
                coeffs.append(c)
                expos.append(e)
            offs.append(len(coeffs))
        return (
            np.asarray(coeffs, np.complex128),
            np.asarray(expos, np.int64).reshape(len(coeffs), self.n_vars),
            np.asarray(offs, np.int64),
        )

    def degrees(self):
        return tuple(max((sum(e) for _, e in eq), default=0) for eq in self.equations)

    def bezout_count(self):
        return math.prod(self.degrees())

    def eval(self, x):
        return kernels.poly_eval(*self.arrays, np.asarray(x, np.complex128))

    def jacobian(self, x):
        return kernels.poly_jac(*self.arrays, np.asarray(x, np.complex128))

    def dirseries(self, x, v, order=3):
        """Taylor coefficients of eq(x + s*v) in s, shape (n_vars, order+1)."""
        return kernels.poly_dirseries(
            *self.arrays,
            np.asarray(x, np.complex128),
            np.asarray(v, np.complex128),
            order,
        )


def _parse_coefficient(token, line):
    if not (token.startswith("(") and token.endswith(")")):
        raise ParseError(line, f"expected coefficient '(re,im)', got {token!r}")
    parts = token[1:-1].split(",")
    if len(parts) != 2:
        raise ParseError(line, f"coefficient {token!r} needs exactly one comma")
    try:
        return complex(float(parts[0]), float(parts[1]))
    except ValueError:
        raise ParseError(line, f"non-numeric coefficient {token!r}") from None


def _parse_equation(text, line):
    tokens = text.split()
    terms = []
    i = 0
    while i < len(tokens):
        coeff = _parse_coefficient(tokens[i], line)
        i += 1
        powers = {}
        while i < len(tokens) and tokens[i] != "+":
            m = _VAR_TOKEN.match(tokens[i])
            if m is None:
                raise ParseError(line, f"bad monomial token {tokens[i]!r}")
            j = int(m.group(1))
            if j < 1:
                raise ParseError(line, "variable indices are 1-based")
            powers[j] = powers.get(j, 0) + (int(m.group(2)) if m.group(2) else 1)
            i += 1
        terms.append((coeff, powers))
        if i < len(tokens):
            i += 1  # consume '+'
            if i == len(tokens):
                raise ParseError(line, "dangling '+'")
    return terms


def parse_system(text):
    """Parse the text format; raises ParseError with the offending line."""
    raw = []
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        raw.append((line_no, _parse_equation(stripped, line_no)))
    if not raw:
        raise ParseError(1, "no equations found")
    n = len(raw)
    equations = []
    for line_no, terms in raw:
        eq = []
        for coeff, powers in terms:
            for j in powers:
                if j > n:
                    raise ParseError(line_no, f"variable x{j} exceeds system size {n}")
            expo = tuple(powers.get(j, 0) for j in range(1, n + 1))
            eq.append((coeff, expo))
        equations.append(eq)
    return PolynomialSystem(equations, n)


def load_system(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_system(fh.read())


def format_system(system):
    lines = []
    for eq in system.equations:
        if not eq:
            lines.append("(0.0,0.0)")
            continue
        parts = []
        for c, expo in eq:
            factors = "".join(f" x{j + 1}^{a}" for j, a in enumerate(expo) if a)
            parts.append(f"({c.real!r},{c.imag!r}){factors}")
        lines.append(" + ".join(parts))
    return "\n".join(lines) + "\n"


def total_degree_start(target, rng=None, n_roots=None, cap=BEZOUT_CAP):
    """Start system x_i^(d_i) - 1 and its roots-of-unity solutions.

    Returns all Bezout-many roots when the count fits under `cap`;
    otherwise `n_roots` must be given and that many distinct roots are
    sampled with `rng`.
    """
    degs = target.degrees()
    if any(d < 1 for d in degs):
        raise ValueError("start system needs every equation degree >= 1")
    n = target.n_vars
    bez = math.prod(degs)
    equations = []
    for i, d in enumerate(degs):
        mono = tuple(d if j == i else 0 for j in range(n))
        zero = (0,) * n
        equations.append([(1 + 0j, mono), (-1 + 0j, zero)])
    start = PolynomialSystem(equations, n)
    if n_roots is None:
        if bez > cap:
            raise ValueError(
                f"Bezout count {bez} exceeds cap {cap}; pass n_roots to sample a subset"
            )
        indices = np.arange(bez, dtype=np.int64)
    else:
        if not 1 <= n_roots <= bez:
            raise ValueError(f"n_roots must be in [1, {bez}]")
        rng = np.random.default_rng(rng)
        indices = np.sort(rng.choice(bez, size=n_roots, replace=False))
    roots = []
    for m in indices:
        root = np.empty(n, np.complex128)
        k = int(m)
        for i in range(n - 1, -1, -1):
            k, r = divmod(k, degs[i])
            root[i] = np.exp(2j * np.pi * r / degs[i])
        roots.append(root)
    return start, roots


def _unit(n, *pairs):
    expo = [0] * n
    for idx, power in pairs:
        expo[idx] += power
    return tuple(expo)


def katsura(n):
    """Katsura magnetism equations in the symmetric variables u_0..u_n.

    The convolution sum_l u_|l| * u_|m-l| runs over |l| <= n with terms
    where |m-l| > n dropped; the normalization is u_0 + 2*sum u_m = 1.
    n+1 variables, one linear plus n quadratic equations, Bezout 2^n.
    """
    if not 1 <= n <= 10:
        raise ValueError("katsura supports 1 <= n <= 10")
    nv = n + 1
    lin = [(1 + 0j, _unit(nv, (0, 1)))]
    lin += [(2 + 0j, _unit(nv, (m, 1))) for m in range(1, nv)]
    lin.append((-1 + 0j, _unit(nv)))
    equations = [lin]
    for m in range(n):
        eq = []
        for l in range(-n, n + 1):
            j = m - l
            if abs(j) > n:
                continue
            eq.append((1 + 0j, _unit(nv, (abs(l), 1), (abs(j), 1))))
        eq.append((-1 + 0j, _unit(nv, (m, 1))))
        equations.append(eq)
    return PolynomialSystem(equations, nv)


def cyclic(n):
    """Cyclic n-roots: sums of length-m products of consecutive variables."""
    if not 2 <= n <= 7:
        raise ValueError("cyclic supports 2 <= n <= 7")
    equations = []
    for m in range(1, n):
        eq = []
        for j in range(n):
            pairs = [((j + k) % n, 1) for k in range(m)]
            eq.append((1 + 0j, _unit(n, *pairs)))
        equations.append(eq)
    product = [(1 + 0j, _unit(n, *[(j, 1) for j in range(n)])), (-1 + 0j, _unit(n))]
    equations.append(product)
    return PolynomialSystem(equations, n)


def noon(n, c=1.1):
    """Noonburg neural-network system: x_i * sum_{j!=i} x_j^2 - c*x_i + 1."""
    if not 2 <= n <= 5:
        raise ValueError("noon supports 2 <= n <= 5")
    equations = []
    for i in range(n):
        eq = [(1 + 0j, _unit(n, (i, 1), (j, 2))) for j in range(n) if j != i]
        eq.append((-c + 0j, _unit(n, (i, 1))))
        eq.append((1 + 0j, _unit(n)))
        equations.append(eq)
    return PolynomialSystem(equations, n)


def chandra(n, c=0.51234):
    """Discretized Chandrasekhar H-equation, k = 1..n."""
    if not 1 <= n <= 9:
        raise ValueError("chandra supports 1 <= n <= 9")
    equations = []
    for k in range(1, n + 1):
        eq = [
            (2.0 * n - c + 0j, _unit(n, (k - 1, 1))),
        ]
        for i in range(1, n):
            w = c * k / (i + k)
            eq.append((-w + 0j, _unit(n, (k - 1, 1), (i - 1, 1))))
        eq.append((-2.0 * n + 0j, _unit(n)))
        equations.append(eq)
    return PolynomialSystem(equations, n)


GENERATORS = {"katsura": katsura, "cyclic": cyclic, "noon": noon, "chandra": chandra}


def benchmark_system(name, n):
    if name not in GENERATORS:
        raise ValueError(f"unknown system {name!r}; choose from {sorted(GENERATORS)}")
    return GENERATORS[name](n)
