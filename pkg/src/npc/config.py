"""Experiment configuration: per-kind defaults, JSON files, flag overrides.

A config is a single JSON object; command-line flags override file
values, and the file overrides the built-in defaults for its problem
kind.  Validation failures raise InvalidConfig, which the CLI maps to
exit code 2.
"""

import json
import os
from dataclasses import dataclass, field

from .errors import VersionError
from .policy import STATE_FIELDS, load_policy

PROBLEM_KINDS = ("gnc", "gh", "hc", "ald")

DEFAULT_PROBLEMS = {
    "gh": {"kind": "gh", "objective": "himmelblau"},
    "gnc": {"kind": "gnc", "n_points": 100, "outlier_ratio": 0.8, "noise_sigma": 0.01},
    "hc": {"kind": "hc", "system": "katsura", "n": 5},
    "ald": {"kind": "ald", "target": "gmm", "k": 40, "target_seed": 0, "n_particles": 512},
}

DEFAULT_TRIALS = {"gh": 50, "gnc": 50, "ald": 50, "hc": 1}

TRAINING_DISTS = {
    "gh": "ackley-random",
    "gnc": "synthetic",
    "hc": "quadratic-3",
    "ald": "gmm-random",
}


class InvalidConfig(Exception):
    """Configuration failed validation."""


@dataclass
class ExperimentConfig:
    problem: dict
    controller: dict
    trials: int
    seed: int
    out: str
    mask_state: tuple = ()
    train: dict = field(default_factory=dict)


def default_config(kind="gh"):
    if kind not in PROBLEM_KINDS:
        raise InvalidConfig(f"unknown problem kind: {kind!r}")
    return ExperimentConfig(
        problem=dict(DEFAULT_PROBLEMS[kind]),
        controller={"type": "classic"},
        trials=DEFAULT_TRIALS[kind],
        seed=0,
        out="results",
        mask_state=(),
        train={
            "dist": TRAINING_DISTS[kind],
            "total_env_steps": 300_000,
            "rollout_steps": 2048,
            "lambda1": None,
            "lambda2": None,
            "t_max": None,
        },
    )


def load_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise InvalidConfig(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config file is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise InvalidConfig("config root must be a JSON object")
    return doc


def build_config(doc=None, overrides=None):
    """Merge defaults, a config file document, and CLI flag overrides."""
    doc = doc or {}
    overrides = overrides or {}
    file_problem = doc.get("problem") or {}
    kind = overrides.get("problem_kind") or file_problem.get("kind") or "gh"
    cfg = default_config(kind)
    # a --problem flag that contradicts the file drops the file's params
    if file_problem.get("kind", kind) == kind:
        cfg.problem.update(file_problem)
        cfg.problem["kind"] = kind
    if "controller" in doc:
        cfg.controller = dict(doc["controller"])
    for key in ("trials", "seed", "out"):
        if key in doc:
            setattr(cfg, key, doc[key])
    if "mask_state" in doc:
        cfg.mask_state = tuple(doc["mask_state"])
    if "train" in doc:
        cfg.train.update(doc["train"])

    if overrides.get("policy") is not None:
        cfg.controller = {"type": "policy", "path": overrides["policy"]}
    if overrides.get("seed") is not None:
        cfg.seed = int(overrides["seed"])
    if overrides.get("trials") is not None:
        cfg.trials = int(overrides["trials"])
    if overrides.get("out") is not None:
        cfg.out = overrides["out"]
    if overrides.get("mask_state"):
        cfg.mask_state = tuple(overrides["mask_state"])
    if overrides.get("trials_dist") is not None:
        cfg.train["dist"] = overrides["trials_dist"]
    if overrides.get("steps") is not None:
        cfg.train["total_env_steps"] = int(overrides["steps"])
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if not isinstance(cfg.trials, int) or cfg.trials < 1:
        raise InvalidConfig(f"trials must be an integer >= 1, got {cfg.trials!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise InvalidConfig(f"seed must be a non-negative integer, got {cfg.seed!r}")
    kind = cfg.problem.get("kind")
    if kind not in PROBLEM_KINDS:
        raise InvalidConfig(f"unknown problem kind: {kind!r}")
    ctype = cfg.controller.get("type")
    if ctype not in ("classic", "policy", "sweep", "grid"):
        raise InvalidConfig(f"unknown controller type: {ctype!r}")
    if ctype == "policy":
        path = cfg.controller.get("path")
        if not path or not os.path.exists(path):
            raise InvalidConfig(f"policy file not found: {path!r}")
        try:
            model = load_policy(path)
        except VersionError as exc:
            raise InvalidConfig(f"policy file rejected: {exc}")
        if model.problem_kind != kind:
            raise InvalidConfig(
                f"policy was trained for {model.problem_kind!r} but the problem kind is {kind!r}"
            )
    elif ctype == "sweep":
        levels = cfg.controller.get("levels")
        budgets = cfg.controller.get("budgets")
        if not levels or not budgets:
            raise InvalidConfig("sweep controller needs non-empty levels and budgets lists")
        if any(int(v) < 1 for v in list(levels) + list(budgets)):
            raise InvalidConfig("sweep levels and budgets must be positive integers")
    elif ctype == "grid":
        spacing = float(cfg.controller.get("spacing", 0.0))
        if not 0.0 < spacing <= 1.0:
            raise InvalidConfig(f"grid spacing must be in (0, 1], got {spacing}")
        if int(cfg.controller.get("budget", 0)) < 1:
            raise InvalidConfig("grid budget must be a positive integer")
    unknown = [name for name in cfg.mask_state if name not in STATE_FIELDS]
    if unknown:
        raise InvalidConfig(f"unknown state fields in mask: {unknown}; choose from {STATE_FIELDS}")
    return cfg
