"""Dense LU with partial pivoting and damped weighted least squares.

Shared by the Newton/Gauss-Newton correctors.  The factorization counter
exists so tests can pin how many factorizations a caller performs (the
path tracker reuses one factorization for several solves).
"""

import numpy as np


class SingularMatrix(Exception):
    """Pivot below tolerance during LU elimination."""


class DegenerateSystem(Exception):
    """Normal equations could not be solved."""


PIVOT_TOL = 1e-14

_counts = {"lu_factor": 0}


def factorization_count():
    return _counts["lu_factor"]


def reset_factorization_count():
    _counts["lu_factor"] = 0


def lu_factor(a):
    """Factor a square matrix in place (copy) with partial pivoting.

    Returns (lu, piv).  Raises SingularMatrix when the best available
    pivot has magnitude below PIVOT_TOL.
    """
    a = np.array(a, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    piv = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[p, k]) < PIVOT_TOL:
            raise SingularMatrix(f"pivot {abs(a[p, k]):.3e} below {PIVOT_TOL:.0e} at column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        a[k + 1 :, k] /= a[k, k]
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k, k + 1 :])
    _counts["lu_factor"] += 1
    return a, piv


def lu_solve_factored(lu, piv, b):
    n = lu.shape[0]
    x = np.asarray(b, dtype=lu.dtype)[piv].copy()
    for k in range(1, n):
        x[k] -= lu[k, :k] @ x[:k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - lu[k, k + 1 :] @ x[k + 1 :]) / lu[k, k]
    return x


def lu_solve(a, b):
    lu, piv = lu_factor(a)
    return lu_solve_factored(lu, piv, b)


def weighted_least_squares(jacobian, residuals, weights, damping=1e-9):
    """Solve the damped normal equations for a weighted least-squares step.

    Returns the step minimizing sum_i w_i * ||r_i + J_i s||^2 + damping*||s||^2.
    All-zero weights legitimately give a zero step.  Raises DegenerateSystem
    when the damped normal matrix is still singular.
    """
    j = np.asarray(jacobian, float)
    r = np.asarray(residuals, float)
    w = np.asarray(weights, float)
    if np.any(w < 0):
        raise ValueError("negative weights")
    jw = j * w[:, None]
    normal = jw.T @ j + damping * np.eye(j.shape[1])
    rhs = -(jw.T @ r)
    try:
        return lu_solve(normal, rhs)
    except SingularMatrix as exc:
        raise DegenerateSystem(str(exc)) from exc


def norm2(v):
    return float(np.linalg.norm(np.asarray(v).ravel()))


def norm_inf(v):
    v = np.asarray(v).ravel()
    return float(np.max(np.abs(v))) if v.size else 0.0
