"""Numeric hot-loop kernels in two interchangeable flavors.

Every kernel here has a loop implementation compiled with numba ``@njit``
and a vectorized pure-numpy implementation.  The active flavor is chosen
once at import time: numpy is used when numba is not importable or when
``NPC_NO_NUMBA=1`` (or ``true``/``yes``) is set in the environment.
``benchmarks/kernel_bench.py`` times both flavors side by side, and the
test suite checks they agree.

Polynomial systems are passed in a flat CSR-like layout:

* ``coeffs``: complex128 array, one entry per monomial over all equations
* ``expos``:  int64 array (n_monomials, n_vars) of exponents
* ``offs``:   int64 array (n_eqs + 1,) of monomial offsets per equation
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
    numba = None


def _flag_off():
    return os.environ.get("NPC_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")


USING_NUMBA = numba is not None and not _flag_off()


def _njit(fn):
    if numba is None:
        return None
    return numba.njit(cache=True)(fn)


# ---------------------------------------------------------------------------
# polynomial system evaluation


def _poly_eval_loop(coeffs, expos, offs, x, out):
    nvar = x.shape[0]
    for ie in range(offs.shape[0] - 1):
        acc = 0.0 + 0.0j
        for m in range(offs[ie], offs[ie + 1]):
            term = coeffs[m]
            for j in range(nvar):
                e = expos[m, j]
                for _ in range(e):
                    term *= x[j]
            acc += term
        out[ie] = acc


def _poly_jac_loop(coeffs, expos, offs, x, out):
    nvar = x.shape[0]
    for ie in range(offs.shape[0] - 1):
        for j in range(nvar):
            acc = 0.0 + 0.0j
            for m in range(offs[ie], offs[ie + 1]):
                ej = expos[m, j]
                if ej == 0:
                    continue
                term = coeffs[m] * ej
                for k in range(nvar):
                    e = expos[m, k]
                    if k == j:
                        e -= 1
                    for _ in range(e):
                        term *= x[k]
                acc += term
            out[ie, j] = acc


def _poly_dirseries_loop(coeffs, expos, offs, x, v, order, out):
    # Truncated Taylor series in s of each equation along x + s*v.
    # out has shape (n_eqs, order+1) and must be zeroed by the caller.
    nvar = x.shape[0]
    kk = order + 1
    cur = np.empty(kk, np.complex128)
    tmp = np.empty(kk, np.complex128)
    fac = np.empty(kk, np.complex128)
    pw = np.empty(32, np.complex128)
    for ie in range(offs.shape[0] - 1):
        for m in range(offs[ie], offs[ie + 1]):
            cur[0] = coeffs[m]
            for k in range(1, kk):
                cur[k] = 0.0 + 0.0j
            for j in range(nvar):
                e = expos[m, j]
                if e == 0:
                    continue
                # factor series of (x_j + s v_j)^e up to s^order
                pw[0] = 1.0 + 0.0j
                for p in range(1, e + 1):
                    pw[p] = pw[p - 1] * x[j]
                binom = 1.0
                vp = 1.0 + 0.0j
                top = min(e, order)
                for k in range(kk):
                    fac[k] = 0.0 + 0.0j
                for k in range(top + 1):
                    fac[k] = binom * pw[e - k] * vp
                    binom = binom * (e - k) / (k + 1)
                    vp *= v[j]
                # truncated product cur := cur * fac
                for k in range(kk):
                    acc = 0.0 + 0.0j
                    for i in range(k + 1):
                        acc += cur[i] * fac[k - i]
                    tmp[k] = acc
                for k in range(kk):
                    cur[k] = tmp[k]
            for k in range(kk):
                out[ie, k] += cur[k]


def _poly_eval_np(coeffs, expos, offs, x, out):
    terms = coeffs * np.prod(x[None, :] ** expos, axis=1)
    np.add.reduceat(terms, offs[:-1], out=out)
    out[offs[:-1] == offs[1:]] = 0.0


def _poly_jac_np(coeffs, expos, offs, x, out):
    nvar = x.shape[0]
    for j in range(nvar):
        ej = expos[:, j]
        dexp = expos.copy()
        dexp[:, j] = np.maximum(ej - 1, 0)
        terms = coeffs * ej * np.prod(x[None, :] ** dexp, axis=1)
        col = np.empty(offs.shape[0] - 1, np.complex128)
        np.add.reduceat(terms, offs[:-1], out=col)
        col[offs[:-1] == offs[1:]] = 0.0
        out[:, j] = col


def _poly_dirseries_np(coeffs, expos, offs, x, v, order, out):
    nmon, nvar = expos.shape
    kk = order + 1
    cur = np.zeros((nmon, kk), np.complex128)
    cur[:, 0] = coeffs
    for j in range(nvar):
        e = expos[:, j]
        emax = int(e.max()) if nmon else 0
        pw = np.ones((nmon, emax + 1), np.complex128)
        for p in range(1, emax + 1):
            pw[:, p] = pw[:, p - 1] * x[j]
        fac = np.zeros((nmon, kk), np.complex128)
        binom = np.ones(nmon)
        vp = np.ones(nmon, np.complex128)
        for k in range(kk):
            live = e >= k
            fac[live, k] = binom[live] * pw[live, e[live] - k] * vp[live]
            binom = binom * (e - k) / (k + 1)
            vp = vp * v[j]
        nxt = np.zeros_like(cur)
        for k in range(kk):
            for i in range(k + 1):
                nxt[:, k] += cur[:, i] * fac[:, k - i]
        touched = e > 0
        cur[touched] = nxt[touched]
    for k in range(kk):
        col = np.empty(offs.shape[0] - 1, np.complex128)
        np.add.reduceat(cur[:, k], offs[:-1], out=col)
        col[offs[:-1] == offs[1:]] = 0.0
        out[:, k] = col


# ---------------------------------------------------------------------------
# benchmark objective batches (rows of X are points)


def _ackley_loop(X, amp, decay, out):
    m, n = X.shape
    two_pi = 2.0 * math.pi
    for i in range(m):
        s = 0.0
        c = 0.0
        for j in range(n):
            xi = X[i, j]
            s += xi * xi
            c += math.cos(two_pi * xi)
        out[i] = (
            -amp * math.exp(-decay * math.sqrt(s / n))
            - math.exp(c / n)
            + amp
            + math.e
        )


def _ackley_np(X, amp, decay, out):
    n = X.shape[1]
    s = np.sqrt(np.sum(X * X, axis=1) / n)
    c = np.mean(np.cos(2.0 * np.pi * X), axis=1)
    np.copyto(out, -amp * np.exp(-decay * s) - np.exp(c) + amp + math.e)


def _himmelblau_loop(X, out):
    for i in range(X.shape[0]):
        x = X[i, 0]
        y = X[i, 1]
        a = x * x + y - 11.0
        b = x + y * y - 7.0
        out[i] = a * a + b * b


def _himmelblau_np(X, out):
    x = X[:, 0]
    y = X[:, 1]
    np.copyto(out, (x * x + y - 11.0) ** 2 + (x + y * y - 7.0) ** 2)


def _rastrigin2_loop(X, out):
    # 2-d variant with asymmetric cosine weights (9, 1)
    two_pi = 2.0 * math.pi
    for i in range(X.shape[0]):
        x = X[i, 0]
        y = X[i, 1]
        out[i] = 10.0 + x * x + y * y - 9.0 * math.cos(two_pi * x) - math.cos(two_pi * y)


def _rastrigin2_np(X, out):
    x = X[:, 0]
    y = X[:, 1]
    np.copyto(
        out,
        10.0 + x * x + y * y - 9.0 * np.cos(2.0 * np.pi * x) - np.cos(2.0 * np.pi * y),
    )


# ---------------------------------------------------------------------------
# kernelized Stein discrepancy, V-statistic over all ordered pairs


def _ksd_loop(X, S, h2, out):
    n, d = X.shape
    acc = 0.0
    for i in range(n):
        for j in range(n):
            d2 = 0.0
            ss = 0.0
            sdx = 0.0
            sdy = 0.0
            for k in range(d):
                diff = X[i, k] - X[j, k]
                d2 += diff * diff
                ss += S[i, k] * S[j, k]
                sdx += S[i, k] * diff
                sdy += S[j, k] * diff
            kv = math.exp(-d2 / (2.0 * h2))
            # grad_y k = k*diff/h2, grad_x k = -k*diff/h2
            acc += kv * (ss + sdx / h2 - sdy / h2 + d / h2 - d2 / (h2 * h2))
    out[0] = acc / (n * n)


def _ksd_np(X, S, h2, out):
    n, d = X.shape
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    kv = np.exp(-d2 / (2.0 * h2))
    dots = np.sum(S * X, axis=1)
    a = S @ X.T
    term = (S @ S.T) + (dots[:, None] - a) / h2 - (a.T - dots[None, :]) / h2
    term += d / h2 - d2 / (h2 * h2)
    out[0] = float(np.sum(kv * term) / (n * n))


# ---------------------------------------------------------------------------
# pairwise double-well potential for clusters of 4 planar particles


def _dw4_loop(X, a, b, c, d0, tau, energy, grad):
    n = X.shape[0]
    for s in range(n):
        e = 0.0
        for k in range(8):
            grad[s, k] = 0.0
        for i in range(4):
            for j in range(i + 1, 4):
                dx = X[s, 2 * i] - X[s, 2 * j]
                dy = X[s, 2 * i + 1] - X[s, 2 * j + 1]
                d = math.sqrt(dx * dx + dy * dy)
                r = d - d0
                e += (a * r + b * r * r + c * r * r * r * r) / (2.0 * tau)
                if d > 1e-12:
                    f = (a + 2.0 * b * r + 4.0 * c * r * r * r) / (2.0 * tau * d)
                    grad[s, 2 * i] += f * dx
                    grad[s, 2 * i + 1] += f * dy
                    grad[s, 2 * j] -= f * dx
                    grad[s, 2 * j + 1] -= f * dy
        energy[s] = e


_DW4_PAIRS = [(i, j) for i in range(4) for j in range(i + 1, 4)]


def _dw4_np(X, a, b, c, d0, tau, energy, grad):
    p = X.reshape(X.shape[0], 4, 2)
    ii = np.array([q[0] for q in _DW4_PAIRS])
    jj = np.array([q[1] for q in _DW4_PAIRS])
    diff = p[:, ii, :] - p[:, jj, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    r = d - d0
    np.copyto(energy, np.sum(a * r + b * r * r + c * r**4, axis=1) / (2.0 * tau))
    safe = np.where(d > 1e-12, d, 1.0)
    f = np.where(d > 1e-12, (a + 2.0 * b * r + 4.0 * c * r**3) / (2.0 * tau * safe), 0.0)
    g = np.zeros_like(p)
    fd = f[:, :, None] * diff
    for q, (i, j) in enumerate(_DW4_PAIRS):
        g[:, i, :] += fd[:, q, :]
        g[:, j, :] -= fd[:, q, :]
    np.copyto(grad, g.reshape(X.shape[0], 8))


# ---------------------------------------------------------------------------
# flavor selection and public wrappers

_LOOPS = {
    "poly_eval": _poly_eval_loop,
    "poly_jac": _poly_jac_loop,
    "poly_dirseries": _poly_dirseries_loop,
    "ackley": _ackley_loop,
    "himmelblau": _himmelblau_loop,
    "rastrigin2": _rastrigin2_loop,
    "ksd": _ksd_loop,
    "dw4": _dw4_loop,
}
_VEC = {
    "poly_eval": _poly_eval_np,
    "poly_jac": _poly_jac_np,
    "poly_dirseries": _poly_dirseries_np,
    "ackley": _ackley_np,
    "himmelblau": _himmelblau_np,
    "rastrigin2": _rastrigin2_np,
    "ksd": _ksd_np,
    "dw4": _dw4_np,
}

IMPLS = {"numpy": _VEC}
if numba is not None:
    IMPLS["numba"] = {name: _njit(fn) for name, fn in _LOOPS.items()}

_ACTIVE = IMPLS["numba"] if USING_NUMBA else IMPLS["numpy"]


def poly_eval(coeffs, expos, offs, x, impl=None):
    fn = (impl or _ACTIVE)["poly_eval"]
    out = np.empty(offs.shape[0] - 1, np.complex128)
    fn(coeffs, expos, offs, np.asarray(x, np.complex128), out)
    return out


def poly_jac(coeffs, expos, offs, x, impl=None):
    fn = (impl or _ACTIVE)["poly_jac"]
    out = np.empty((offs.shape[0] - 1, expos.shape[1]), np.complex128)
    fn(coeffs, expos, offs, np.asarray(x, np.complex128), out)
    return out


def poly_dirseries(coeffs, expos, offs, x, v, order, impl=None):
    fn = (impl or _ACTIVE)["poly_dirseries"]
    out = np.zeros((offs.shape[0] - 1, order + 1), np.complex128)
    fn(
        coeffs,
        expos,
        offs,
        np.asarray(x, np.complex128),
        np.asarray(v, np.complex128),
        order,
        out,
    )
    return out


def ackley_values(X, amp=20.0, decay=0.2, impl=None):
    fn = (impl or _ACTIVE)["ackley"]
    X = np.atleast_2d(np.asarray(X, np.float64))
    out = np.empty(X.shape[0])
    fn(X, amp, decay, out)
    return out


def himmelblau_values(X, impl=None):
    fn = (impl or _ACTIVE)["himmelblau"]
    X = np.atleast_2d(np.asarray(X, np.float64))
    out = np.empty(X.shape[0])
    fn(X, out)
    return out


def rastrigin2_values(X, impl=None):
    fn = (impl or _ACTIVE)["rastrigin2"]
    X = np.atleast_2d(np.asarray(X, np.float64))
    out = np.empty(X.shape[0])
    fn(X, out)
    return out


def ksd_vstat(X, S, h, impl=None):
    """Mean of the Stein kernel u_q over all N^2 ordered pairs (RBF kernel)."""
    fn = (impl or _ACTIVE)["ksd"]
    X = np.ascontiguousarray(X, np.float64)
    S = np.ascontiguousarray(S, np.float64)
    out = np.empty(1)
    fn(X, S, float(h) ** 2, out)
    return float(out[0])


def dw4_energy_grad(X, a=0.0, b=-4.0, c=0.9, d0=4.0, tau=1.0, impl=None):
    fn = (impl or _ACTIVE)["dw4"]
    X = np.atleast_2d(np.ascontiguousarray(X, np.float64))
    energy = np.empty(X.shape[0])
    grad = np.empty_like(X)
    fn(X, a, b, c, d0, tau, energy, grad)
    return energy, grad
