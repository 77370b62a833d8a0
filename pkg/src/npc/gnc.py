"""Robust point-cloud registration by graduated non-convexity.

The homotopy interpolates from plain least squares (u=0) to the
Geman-McClure robust objective (u=1).  The predictor is the closed-form
Black-Rangarajan weight update; the corrector is one damped Gauss-Newton
step on the weighted least-squares problem.
"""

import math
from dataclasses import dataclass

import numpy as np

from .engine import HomotopyProblem, Tolerance
from .errors import ParseError, UnsupportedFormat
from .linalg import DegenerateSystem, norm_inf, weighted_least_squares

FD_STEP = 1e-6
DEFAULT_NOISE = 0.01


def canonicalize_axis_angle(w):
    """Wrap an axis-angle vector so its norm lies in [0, pi]."""
    w = np.asarray(w, float)
    theta = np.linalg.norm(w)
    if theta <= np.pi or theta < 1e-15:
        return w
    axis = w / theta
    theta = math.fmod(theta, 2.0 * np.pi)
    if theta > np.pi:
        theta -= 2.0 * np.pi  # negative angle: flip via the axis
    return axis * theta


def rotation_matrix(w):
    w = np.asarray(w, float)
    theta = np.linalg.norm(w)
    if theta < 1e-15:
        return np.eye(3)
    k = w / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray  # axis-angle, norm <= pi
    translation: np.ndarray

    @staticmethod
    def identity():
        return RigidTransform(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_params(p):
        p = np.asarray(p, float)
        return RigidTransform(canonicalize_axis_angle(p[:3]), p[3:6].copy())

    def params(self):
        return np.concatenate([self.rotation, self.translation])

    def matrix(self):
        return rotation_matrix(self.rotation)

    def apply(self, points):
        return np.asarray(points, float) @ self.matrix().T + self.translation


@dataclass
class RegistrationInstance:
    source: np.ndarray
    target: np.ndarray
    inlier_mask: np.ndarray
    noise_sigma: float
    c_bar: float


def residuals(instance, transform):
    """Euclidean distance per correspondence."""
    diff = transform.apply(instance.source) - instance.target
    return np.linalg.norm(diff, axis=1)


def gm_homotopy_value(instance, transform, u):
    r2 = residuals(instance, transform) ** 2
    c2 = instance.c_bar**2
    return float(np.sum(c2 * r2 / (c2 + u * r2)))


def update_weights(instance, transform, u):
    """Closed-form Black-Rangarajan weight update (the predictor)."""
    r2 = residuals(instance, transform) ** 2
    c2 = instance.c_bar**2
    return (c2 / (u * r2 + c2)) ** 2


def _residual_vector(instance, params):
    tf = RigidTransform(params[:3], params[3:6])
    return (tf.apply(instance.source) - instance.target).ravel()


def gauss_newton_step(instance, transform, weights):
    """Damped weighted GN step on the 6 transform parameters."""
    weights = np.asarray(weights, float)
    if not np.any(weights > 0):
        raise DegenerateSystem("all correspondence weights are zero")
    p = transform.params()
    r = _residual_vector(instance, p)
    jac = np.empty((r.size, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = FD_STEP
        jac[:, j] = (_residual_vector(instance, p + e) - _residual_vector(instance, p - e)) / (2 * FD_STEP)
    w3 = np.repeat(weights, 3)
    return weighted_least_squares(jac, r, w3)


def gauss_newton_correct_once(instance, transform, weights):
    step = gauss_newton_step(instance, transform, weights)
    return RigidTransform.from_params(transform.params() + step)


def synth_registration(n_points, outlier_ratio, noise_sigma, seed):
    """Random instance: box cloud, rigid motion, clamped noise, box outliers."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    src = rng.uniform(-1.0, 1.0, (n_points, 3))
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    gt = RigidTransform(axis * rng.uniform(0.0, np.pi / 2), rng.uniform(-0.5, 0.5, 3))
    tgt = gt.apply(src)
    if noise_sigma > 0:
        noise = rng.normal(0.0, noise_sigma, (n_points, 3))
        norms = np.linalg.norm(noise, axis=1)
        # instance contract: inlier residuals under ground truth <= 3 sigma
        over = norms > 3.0 * noise_sigma
        noise[over] *= (3.0 * noise_sigma / norms[over])[:, None]
        tgt = tgt + noise
    n_out = int(round(n_points * outlier_ratio))
    mask = np.ones(n_points, bool)
    if n_out:
        idx = rng.choice(n_points, n_out, replace=False)
        mask[idx] = False
        lo, hi = tgt.min(axis=0), tgt.max(axis=0)
        tgt[idx] = rng.uniform(lo, hi, (n_out, 3))
    c_bar = 3.0 * noise_sigma if noise_sigma > 0 else 3.0 * DEFAULT_NOISE
    return RegistrationInstance(src, tgt, mask, noise_sigma, c_bar), gt


def registration_errors(estimate, ground_truth):
    """(geodesic rotation error in radians, euclidean translation error)."""
    r_rel = ground_truth.matrix().T @ estimate.matrix()
    c = (np.trace(r_rel) - 1.0) / 2.0
    e_r = math.acos(min(1.0, max(-1.0, c)))
    e_t = float(np.linalg.norm(estimate.translation - ground_truth.translation))
    return e_r, e_t


def load_ply(path):
    """Read vertex positions from the ASCII PLY subset."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    def fail(i, msg):
        raise ParseError(i + 1, msg)

    if not lines or lines[0].strip() != "ply":
        fail(0, "missing 'ply' magic")
    n_vertex = None
    props = []
    i = 1
    saw_format = False
    while i < len(lines):
        tok = lines[i].split()
        if not tok or tok[0] == "comment":
            i += 1
            continue
        if tok[0] == "format":
            if tok[1:] != ["ascii", "1.0"]:
                raise UnsupportedFormat(f"line {i + 1}: only 'format ascii 1.0' is supported")
            saw_format = True
        elif tok[0] == "element":
            if len(tok) != 3 or tok[1] != "vertex":
                fail(i, f"unsupported element {' '.join(tok[1:2])!r}")
            try:
                n_vertex = int(tok[2])
            except ValueError:
                fail(i, f"bad vertex count {tok[2]!r}")
        elif tok[0] == "property":
            if n_vertex is None:
                fail(i, "property before element vertex")
            if len(tok) != 3 or tok[1] not in ("float", "float32", "float64", "double"):
                fail(i, f"expected 'property float <name>', got {lines[i]!r}")
            props.append(tok[2])
        elif tok[0] == "end_header":
            i += 1
            break
        else:
            fail(i, f"unexpected header line {lines[i]!r}")
        i += 1
    else:
        fail(len(lines) - 1, "missing end_header")
    if not saw_format:
        fail(i - 1, "missing format line")
    if n_vertex is None:
        fail(i - 1, "missing element vertex line")
    if props != ["x", "y", "z"]:
        fail(i - 1, f"vertex properties must be x, y, z; got {props}")
    pts = np.empty((n_vertex, 3))
    for k in range(n_vertex):
        if i + k >= len(lines):
            fail(len(lines) - 1, f"expected {n_vertex} vertices, file ends after {k}")
        tok = lines[i + k].split()
        if len(tok) != 3:
            fail(i + k, f"expected 3 coordinates, got {len(tok)}")
        try:
            pts[k] = [float(t) for t in tok]
        except ValueError:
            fail(i + k, f"bad float in {lines[i + k]!r}")
    return pts


@dataclass
class GncSolution:
    transform: RigidTransform
    weights: np.ndarray


class RegistrationProblem(HomotopyProblem):
    kind = "gnc"
    warmup_plan = (Tolerance(1e-6), 20)

    def __init__(self, instance):
        self.instance = instance

    def init_solution(self, rng):
        n = len(self.instance.source)
        return GncSolution(RigidTransform.identity(), np.ones(n))

    def predict(self, sol, u_from, u_to):
        return GncSolution(sol.transform, update_weights(self.instance, sol.transform, u_to))

    def correct_once(self, sol, u, rng):
        step = gauss_newton_step(self.instance, sol.transform, sol.weights)
        tf = RigidTransform.from_params(sol.transform.params() + step)
        return GncSolution(tf, sol.weights), norm_inf(step)

    def criterion(self, sol, u, rng):
        return norm_inf(gauss_newton_step(self.instance, sol.transform, sol.weights))

    def target_metric(self, sol):
        return gm_homotopy_value(self.instance, sol.transform, 1.0)


def sample_training_instance(rng):
    """Randomized synthetic registration family for policy training."""
    ratio = rng.uniform(0.6, 0.9)
    instance, gt = synth_registration(100, ratio, DEFAULT_NOISE, rng)
    return RegistrationProblem(instance), gt
