"""Run configuration: JSON file + flag overrides -> one frozen effective dict.

Unknown keys are rejected (with their dotted path) rather than ignored, and
every defaulted value is materialized so the echoed effective config is
self-contained. The config hash (sha256 of the canonical effective JSON,
with execution-only keys removed) is stamped into every output file:
worker count and output directory cannot change results, so runs that
differ only there hash alike and stay byte-comparable.
"""

from __future__ import annotations

import copy
import hashlib
import json

__all__ = ["DEFAULTS", "ConfigError", "load_config", "effective_config",
           "result_config", "config_hash", "parse_budget"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "jobs": 1,
    "out": "runs/latest",
    "data": {
        "path": None,        # load a saved dataset instead of generating one
        "classes": 10,
        "samples": 2000,
        "dims": 64,
        "sigma": 0.08,
    },
    "model": {
        "path": None,        # load a checkpoint instead of training
        "kind": "mlp",
        "hidden": [64],
        "feature_dim": 32,
        "kernel": 3,
        "conv_channels": [8],
    },
    "train": {
        "epochs": 30,
        "step_size": 0.01,
    },
    "solver": {
        "tol": 1e-9,
        "max_iter": 50,
        "regularization": 1e-10,
    },
    "attack": {
        "methods": ["latentqp", "cwk", "ad"],
        "k_values": [1, 3, 5],
        "budgets": ["1x60"],
        "step_size": None,   # None -> per-family schedule
        "loss_weight": None, # None -> per-method/K default
        "margin": 0.2,
        "warmup_steps": 5,
        "penalty_norm": 2,
        "init_sigma": 0.001,
        "weight_range": [1.0, 19.0],
        "ad_decay": 0.5,
        "ad_complement_mass": 0.1,
        "family": "toy",
        "traces": False,
    },
    "eval": {
        "num_images": 200,
        "groups_per_image": 5,
    },
    "sweep": {
        "method": "latentqp",
        "k": 3,
        "budget": "9x30",
    },
}


def _merge(base: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        dotted = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted} must be a table")
            out[key] = _merge(base[key], value, dotted)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None) -> dict:
    """Parse + validate a JSON config file against the schema; None -> defaults."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    with open(path) as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be an object")
    return _merge(DEFAULTS, user, "")


def effective_config(path: str | None, *, seed: int | None = None, jobs: int | None = None,
                     out: str | None = None) -> dict:
    """File values with CLI flag overrides applied; all defaults materialized."""
    cfg = load_config(path)
    if seed is not None:
        cfg["seed"] = int(seed)
    if jobs is not None:
        if jobs < 1:
            raise ConfigError("jobs must be at least 1")
        cfg["jobs"] = int(jobs)
    if out is not None:
        cfg["out"] = out
    return cfg


# keys that steer execution but can never change the computed results
_EXECUTION_KEYS = ("jobs", "out")


def result_config(cfg: dict) -> dict:
    """The slice of the config results may depend on (drops jobs/out)."""
    return {k: copy.deepcopy(v) for k, v in cfg.items() if k not in _EXECUTION_KEYS}


def config_hash(cfg: dict) -> str:
    canon = json.dumps(result_config(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def parse_budget(text: str) -> tuple[int, int]:
    """'3x60' -> (3, 60)."""
    try:
        n, m = text.lower().split("x")
        n, m = int(n), int(m)
    except ValueError as exc:
        raise ConfigError(f"budget must look like '1x60', got {text!r}") from exc
    if n < 1 or m < 1:
        raise ConfigError("budget parts must be positive")
    return n, m
