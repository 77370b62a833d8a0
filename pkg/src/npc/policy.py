"""Tiny policy/value networks with built-in reverse-mode gradients.

The policy observes the engine's 4-dimensional solver state and emits a
2-dimensional action (step size, corrector budget).  Networks are plain
numpy MLPs with two 16-unit rectified-linear hidden layers; actions are
squashed through tanh and mapped affinely into per-kind bounds, with the
matching change-of-variables terms in the log-probability.  Everything is
64-bit and deterministic given an rng.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import MaxIters, PcAction, ScheduleController, Tolerance
from .errors import VersionError

FORMAT_VERSION = 1
HIDDEN = (16, 16)
STATE_DIM = 4
ACTION_DIM = 2
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
NORM_VAR_FLOOR = 1e-8

ACTION_BOUNDS = {
    # (delta_u, MaxIters budget)
    "gnc": (np.array([1e-3, 1.0]), np.array([0.5, 20.0])),
    "gh": (np.array([1e-3, 1.0]), np.array([0.5, 20.0])),
    "ald": (np.array([1e-3, 1.0]), np.array([0.5, 20.0])),
    # (delta_u, log10 Tolerance)
    "hc": (np.array([1e-3, -12.0]), np.array([0.5, -2.0])),
}


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Mlp:
    """Fully connected stack; relu on hidden layers, linear output."""

    def __init__(self, sizes, rng, out_gain):
        self.weights = []
        self.biases = []
        for i, (m, n) in enumerate(zip(sizes[1:], sizes[:-1])):
            gain = out_gain if i == len(sizes) - 2 else math.sqrt(2.0)
            self.weights.append(_orthogonal(rng, m, n, gain))
            self.biases.append(np.zeros(m))

    def forward(self, x):
        """Batch forward pass; returns output and the backprop cache."""
        acts = [np.atleast_2d(np.asarray(x, float))]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w.T + b
            acts.append(np.maximum(z, 0.0) if i < len(self.weights) - 1 else z)
        return acts[-1], acts

    def backward(self, acts, grad_out):
        """Gradients of sum(grad_out * output) w.r.t. params and input."""
        grads_w, grads_b = [], []
        g = np.atleast_2d(grad_out)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w.append(g.T @ acts[i])
            grads_b.append(g.sum(axis=0))
            g = g @ self.weights[i]
            if i > 0:
                g = g * (acts[i] > 0.0)
        return grads_w[::-1], grads_b[::-1], g

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


@dataclass
class RunningNormalizer:
    """Streaming per-dimension mean/variance (parallel Welford updates)."""

    mean: np.ndarray
    var: np.ndarray
    count: float = 0.0

    @classmethod
    def fresh(cls, dim):
        return cls(np.zeros(dim), np.ones(dim), 0.0)

    def update(self, batch):
        batch = np.atleast_2d(np.asarray(batch, float))
        n = batch.shape[0]
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        m2 = self.var * self.count + b_var * n + delta**2 * (self.count * n / total)
        self.var = m2 / total
        self.count = total

    def normalize(self, x):
        return (np.asarray(x, float) - self.mean) / np.sqrt(np.maximum(self.var, NORM_VAR_FLOOR))


@dataclass
class PolicyModel:
    policy_net: Mlp
    log_std: np.ndarray
    value_net: Mlp
    normalizer: RunningNormalizer
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    problem_kind: str
    budget_variant: str
    metadata: dict = field(default_factory=dict)

    def params(self):
        """All trainable arrays, in a stable order."""
        return self.policy_net.params() + [self.log_std] + self.value_net.params()

    def clamp_log_std(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)


def new_policy(kind, seed=0):
    if kind not in ACTION_BOUNDS:
        raise ValueError(f"unknown problem kind: {kind!r}")
    rng = np.random.default_rng(seed)
    lo, hi = ACTION_BOUNDS[kind]
    return PolicyModel(
        policy_net=Mlp((STATE_DIM, *HIDDEN, ACTION_DIM), rng, out_gain=0.01),
        log_std=np.zeros(ACTION_DIM),
        value_net=Mlp((STATE_DIM, *HIDDEN, 1), rng, out_gain=1.0),
        normalizer=RunningNormalizer.fresh(STATE_DIM),
        bounds_lo=lo.copy(),
        bounds_hi=hi.copy(),
        problem_kind=kind,
        budget_variant="tolerance" if kind == "hc" else "max_iters",
    )


def _as_state_array(state):
    arr = state.as_array() if hasattr(state, "as_array") else np.asarray(state, float)
    return arr.astype(float)


def policy_forward(model, state):
    """Normalized deterministic forward pass: (mean, log_std, value)."""
    obs = model.normalizer.normalize(_as_state_array(state))
    mean = model.policy_net.forward(obs)[0][0]
    value = model.value_net.forward(obs)[0][0, 0]
    log_std = np.clip(model.log_std, LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std, float(value)


def _squash(model, raw):
    return model.bounds_lo + (np.tanh(raw) + 1.0) / 2.0 * (model.bounds_hi - model.bounds_lo)


def _log_one_minus_tanh_sq(x):
    # log(1 - tanh(x)^2) = 2*(log 2 - x - softplus(-2x)), stable for large |x|
    return 2.0 * (math.log(2.0) - x - np.logaddexp(0.0, -2.0 * x))


def squashed_log_prob(model, raw, mean, log_std):
    """Log-density of the bounded action, raw-normal minus squash Jacobians."""
    std = np.exp(log_std)
    base = -0.5 * ((raw - mean) / std) ** 2 - log_std - 0.5 * math.log(2.0 * math.pi)
    correction = _log_one_minus_tanh_sq(raw) + np.log((model.bounds_hi - model.bounds_lo) / 2.0)
    return float(np.sum(base - correction))


def _to_action(model, vec):
    delta_u = float(vec[0])
    if model.budget_variant == "max_iters":
        return PcAction(delta_u, MaxIters(int(round(vec[1]))))
    return PcAction(delta_u, Tolerance(10.0 ** float(vec[1])))


def sample_and_squash(model, state, rng):
    """Draw a bounded action; log-prob is computed before budget rounding."""
    mean, log_std, _ = policy_forward(model, state)
    raw = mean + np.exp(log_std) * rng.standard_normal(ACTION_DIM)
    log_prob = squashed_log_prob(model, raw, mean, log_std)
    return _to_action(model, _squash(model, raw)), raw, log_prob


def deterministic_action(model, state):
    """The mean action (no sampling); used for evaluation runs."""
    mean, _, _ = policy_forward(model, state)
    return _to_action(model, _squash(model, mean))


def mask_state(arr, masked):
    """Zero out the named state dimensions (ablation hook)."""
    if not masked:
        return arr
    arr = arr.copy()
    for name in masked:
        arr[STATE_FIELDS.index(name)] = 0.0
    return arr


STATE_FIELDS = ("level", "attained_tolerance", "corrector_iters", "convergence_velocity")


class PolicyController(ScheduleController):
    """Engine controller that queries the policy once per accepted level.

    In training mode actions are sampled and every (state, raw, log_prob,
    value) tuple is pushed to the recorder; evaluation uses the mean action
    with frozen normalizer statistics.
    """

    def __init__(self, model, training=False, recorder=None, masked_fields=()):
        self.model = model
        self.training = training
        self.recorder = recorder
        self.masked_fields = tuple(masked_fields)

    def action(self, state, rng):
        arr = mask_state(_as_state_array(state), self.masked_fields)
        if not self.training:
            return deterministic_action(self.model, arr)
        self.model.normalizer.update(arr[None, :])
        action, raw, log_prob = sample_and_squash(self.model, arr, rng)
        if self.recorder is not None:
            _, _, value = policy_forward(self.model, arr)
            self.recorder(arr, raw, log_prob, value)
        return action


# ---------------------------------------------------------------------------
# serialization


def _layers_to_json(net):
    return [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(net.weights, net.biases)]


def _layers_from_json(entries, sizes):
    expected = list(zip(sizes[1:], sizes[:-1]))
    if len(entries) != len(expected):
        raise VersionError(f"expected {len(expected)} layers, file has {len(entries)}")
    net = Mlp.__new__(Mlp)
    net.weights, net.biases = [], []
    for entry, shape in zip(entries, expected):
        w = np.asarray(entry["w"], float)
        b = np.asarray(entry["b"], float)
        if w.shape != shape or b.shape != (shape[0],):
            raise VersionError(f"layer shape {w.shape} does not match expected {shape}")
        net.weights.append(w)
        net.biases.append(b)
    return net


def save_policy(model, path):
    doc = {
        "format_version": FORMAT_VERSION,
        "state_dim": STATE_DIM,
        "action_dim": ACTION_DIM,
        "hidden": list(HIDDEN),
        "activation": "relu",
        "policy_layers": _layers_to_json(model.policy_net),
        "log_std": model.log_std.tolist(),
        "value_layers": _layers_to_json(model.value_net),
        "normalizer": {
            "mean": model.normalizer.mean.tolist(),
            "var": model.normalizer.var.tolist(),
            "count": model.normalizer.count,
        },
        "action_bounds": {"lo": model.bounds_lo.tolist(), "hi": model.bounds_hi.tolist()},
        "problem_kind": model.problem_kind,
        "budget_variant": model.budget_variant,
        "metadata": model.metadata,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_policy(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VersionError(f"unreadable policy file: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported policy format {doc.get('format_version')!r}")
    try:
        if doc["hidden"] != list(HIDDEN) or doc["state_dim"] != STATE_DIM or doc["action_dim"] != ACTION_DIM:
            raise VersionError(
                f"architecture {doc['state_dim']}-{doc['hidden']}-{doc['action_dim']} "
                f"does not match {STATE_DIM}-{list(HIDDEN)}-{ACTION_DIM}"
            )
        norm = doc["normalizer"]
        model = PolicyModel(
            policy_net=_layers_from_json(doc["policy_layers"], (STATE_DIM, *HIDDEN, ACTION_DIM)),
            log_std=np.asarray(doc["log_std"], float),
            value_net=_layers_from_json(doc["value_layers"], (STATE_DIM, *HIDDEN, 1)),
            normalizer=RunningNormalizer(
                np.asarray(norm["mean"], float), np.asarray(norm["var"], float), float(norm["count"])
            ),
            bounds_lo=np.asarray(doc["action_bounds"]["lo"], float),
            bounds_hi=np.asarray(doc["action_bounds"]["hi"], float),
            problem_kind=doc["problem_kind"],
            budget_variant=doc["budget_variant"],
            metadata=doc.get("metadata", {}),
        )
    except (KeyError, TypeError) as exc:
        raise VersionError(f"malformed policy file: {exc}") from exc
    if model.log_std.shape != (ACTION_DIM,):
        raise VersionError("log_std has the wrong shape")
    return model
