"""Proximal policy optimization over engine episodes.

One episode is one predictor-corrector solve: the policy is queried once
per accepted level, the per-level reward is the clipped convergence
velocity, and a terminal bonus pays for finishing under the iteration
ceiling.  Gradients are computed by this module's own reverse-mode pass
through the numpy networks; the optimizer is the usual adaptive-moment
rule.  Hyperparameters default to the common library settings.
"""

import copy
import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import compute_convergence_velocity, default_limits, solve
from .policy import PolicyController, new_policy

VELOCITY_CLIP = 10.0


@dataclass(frozen=True)
class RewardConfig:
    lambda1: float
    lambda2: float
    t_max: int


def reward_config(kind):
    """Per-kind reward scaling; ceilings match the engine's total caps."""
    table = {
        "gnc": RewardConfig(1e3, 1e-3, 480),
        "gh": RewardConfig(1.0, 1e-3, 1002),
        "ald": RewardConfig(10.0, 1e-3, 820),
        "hc": RewardConfig(1e-3, 1e-1, 400),
    }
    if kind not in table:
        raise ValueError(f"unknown problem kind: {kind!r}")
    return table[kind]


def compute_rewards(trace, cfg):
    """Per-level rewards for a finished episode.

    Each accepted level pays lambda1 times its convergence velocity
    (clipped to +-10); a successful final level adds lambda2*(T_max - T).
    """
    rewards = [
        cfg.lambda1 * min(max(rec.velocity, -VELOCITY_CLIP), VELOCITY_CLIP)
        for rec in trace.records
    ]
    if rewards and trace.success:
        rewards[-1] += cfg.lambda2 * (cfg.t_max - trace.total_corrector_iters)
    return rewards


@dataclass
class PpoConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    rollout_steps: int = 2048
    minibatch: int = 64
    epochs: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


class RolloutBuffer:
    """Flat per-step storage; episodes are delimited by done flags."""

    def __init__(self):
        self.states = []
        self.raw_actions = []
        self.log_probs = []
        self.rewards = []
        self.values = []
        self.dones = []

    def add_episode(self, steps, rewards):
        if len(steps) != len(rewards):
            raise ValueError("one reward per recorded step")
        for i, ((state, raw, log_prob, value), reward) in enumerate(zip(steps, rewards)):
            self.states.append(state)
            self.raw_actions.append(raw)
            self.log_probs.append(log_prob)
            self.rewards.append(reward)
            self.values.append(value)
            self.dones.append(i == len(steps) - 1)

    @property
    def size(self):
        return len(self.states)

    def arrays(self):
        if not self.dones or not self.dones[-1]:
            raise ValueError("buffer must end on an episode boundary")
        return (
            np.asarray(self.states, float),
            np.asarray(self.raw_actions, float),
            np.asarray(self.log_probs, float),
            np.asarray(self.rewards, float),
            np.asarray(self.values, float),
            np.asarray(self.dones, float),
        )


def gae(buffer, gamma, lam):
    """Generalized advantage estimation; episodes never cross the buffer end."""
    _, _, _, rewards, values, dones = buffer.arrays()
    n = rewards.size
    advantages = np.empty(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        next_value = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        acc = delta + gamma * lam * nonterminal * acc
        advantages[t] = acc
    return advantages, advantages + values


def _log_one_minus_tanh_sq(x):
    return 2.0 * (math.log(2.0) - x - np.logaddexp(0.0, -2.0 * x))


def ppo_loss_and_grads(model, states, raws, old_log_probs, advantages, returns, hp):
    """Clipped-surrogate loss and gradients for every model parameter.

    Advantages must arrive already normalized; gradients come back in
    model.params() order.
    """
    obs = model.normalizer.normalize(states)
    mean, acts_p = model.policy_net.forward(obs)
    values, acts_v = model.value_net.forward(obs)
    values = values[:, 0]
    log_std = model.log_std
    std = np.exp(log_std)
    n = states.shape[0]

    z = (raws - mean) / std
    base = -0.5 * z**2 - log_std - 0.5 * math.log(2.0 * math.pi)
    correction = _log_one_minus_tanh_sq(raws) + np.log((model.bounds_hi - model.bounds_lo) / 2.0)
    new_log_probs = np.sum(base - correction, axis=1)

    ratio = np.exp(new_log_probs - old_log_probs)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - hp.clip_range, 1.0 + hp.clip_range) * advantages
    objective = np.minimum(unclipped, clipped)
    bound_mask = (advantages > 0) & (ratio > 1.0 + hp.clip_range)
    assert np.all(objective[bound_mask] <= unclipped[bound_mask] + 1e-12)
    policy_loss = -np.mean(objective)
    value_loss = np.mean((values - returns) ** 2)
    entropy = float(np.sum(log_std) + log_std.size * 0.5 * math.log(2.0 * math.pi * math.e))
    loss = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy

    # d loss / d new_log_prob: gradient flows only where the unclipped
    # surrogate is the active branch of the min
    active = (unclipped <= clipped).astype(float)
    d_logp = -(active * ratio * advantages) / n
    d_mean = d_logp[:, None] * z / std
    d_log_std = np.sum(d_logp[:, None] * (z**2 - 1.0), axis=0) - hp.entropy_coef
    pw, pb, _ = model.policy_net.backward(acts_p, d_mean)
    d_value = (hp.value_coef * 2.0 * (values - returns) / n)[:, None]
    vw, vb, _ = model.value_net.backward(acts_v, d_value)

    grads = []
    for w, b in zip(pw, pb):
        grads.extend([w, b])
    grads.append(d_log_std)
    for w, b in zip(vw, vb):
        grads.extend([w, b])
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "approx_kl": float(np.mean(old_log_probs - new_log_probs)),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > hp.clip_range)),
    }
    return float(loss), grads, stats


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class AdamOptimizer:
    """Adaptive-moment gradient rule over a fixed list of parameter arrays."""

    def __init__(self, params, hp):
        self.params = params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.learning_rate = hp.learning_rate
        self.beta1, self.beta2, self.eps = hp.adam_beta1, hp.adam_beta2, hp.adam_eps

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.learning_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def ppo_update(model, optimizer, buffer, hp, rng):
    """Epochs of shuffled minibatch updates; returns aggregate statistics."""
    states, raws, old_log_probs, _, _, _ = buffer.arrays()
    advantages, returns = gae(buffer, hp.gamma, hp.gae_lambda)
    n = buffer.size
    agg = {"skipped": 0, "grad_norm": 0.0}
    batches = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch):
            idx = order[start : start + hp.minibatch]
            adv = advantages[idx]
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            loss, grads, stats = ppo_loss_and_grads(
                model, states[idx], raws[idx], old_log_probs[idx], adv, returns[idx], hp
            )
            if not math.isfinite(loss):
                agg["skipped"] += 1
                optimizer.learning_rate /= 2.0
                continue
            agg["grad_norm"] += clip_grad_norm(grads, hp.max_grad_norm)
            optimizer.step(grads)
            model.clamp_log_std()
            batches += 1
            for key, val in stats.items():
                agg[key] = agg.get(key, 0.0) + val
    for key in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "grad_norm"):
        if batches:
            agg[key] = agg.get(key, 0.0) / batches
    return agg


class TrainingDiverged(Exception):
    """Mean episode reward became non-finite; carries the best snapshot."""

    def __init__(self, message, model=None, curve=()):
        super().__init__(message)
        self.model = model
        self.curve = list(curve)


@dataclass
class TrainConfig:
    kind: str
    total_env_steps: int = 300_000
    reward: RewardConfig = None
    limits: object = None
    masked_fields: tuple = ()
    curve_path: object = None

    def __post_init__(self):
        if self.reward is None:
            self.reward = reward_config(self.kind)
        if self.limits is None:
            self.limits = default_limits(self.kind)


def run_episode(problem, model, cfg, rng):
    """One training episode; returns recorded steps, rewards, and the trace."""
    steps = []
    controller = PolicyController(
        model,
        training=True,
        recorder=lambda *tup: steps.append(tup),
        masked_fields=cfg.masked_fields,
    )
    trace = solve(problem, controller, cfg.limits, rng)
    rewards = compute_rewards(trace, cfg.reward)
    # an aborted final action has no accepted level and earns no reward
    return steps[: len(rewards)], rewards, trace


def train(sampler, cfg, hp=None, seed=0, resume=None, log=None):
    """Alternate rollout collection and updates; returns (best model, curve).

    The curve rows are (env_steps, mean_reward, mean_iters), also written
    to cfg.curve_path when given.  The best-mean-reward snapshot is kept.
    """
    hp = hp or PpoConfig()
    seq = np.random.SeedSequence(seed)
    init_seed, update_seed = seq.spawn(2)
    model = resume if resume is not None else new_policy(cfg.kind, seed=init_seed)
    optimizer = AdamOptimizer(model.params(), hp)
    update_rng = np.random.default_rng(update_seed)
    best_reward = -math.inf
    best_model = copy.deepcopy(model)
    curve = []
    env_steps = 0
    episode_index = 0
    while env_steps < cfg.total_env_steps:
        buffer = RolloutBuffer()
        episode_rewards = []
        episode_iters = []
        while buffer.size < hp.rollout_steps:
            rng = np.random.default_rng(np.random.SeedSequence((seed, episode_index)))
            episode_index += 1
            problem = sampler(rng)
            steps, rewards, trace = run_episode(problem, model, cfg, rng)
            if not steps:
                continue
            buffer.add_episode(steps, rewards)
            episode_rewards.append(sum(rewards))
            episode_iters.append(trace.total_corrector_iters)
        mean_reward = float(np.mean(episode_rewards))
        if not math.isfinite(mean_reward):
            raise TrainingDiverged(
                f"mean episode reward became {mean_reward} at {env_steps} env steps",
                model=best_model,
                curve=curve,
            )
        env_steps += buffer.size
        ppo_update(model, optimizer, buffer, hp, update_rng)
        curve.append((env_steps, mean_reward, float(np.mean(episode_iters))))
        if log is not None:
            log(f"steps={env_steps} reward={mean_reward:.4f} iters={np.mean(episode_iters):.1f}")
        if mean_reward >= best_reward:
            best_reward = mean_reward
            best_model = copy.deepcopy(model)
    if cfg.curve_path is not None:
        write_curve(curve, cfg.curve_path)
    return best_model, curve


def write_curve(curve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["env_steps", "mean_reward", "mean_iters"])
        writer.writerows(curve)
