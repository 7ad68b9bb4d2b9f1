"""Scenario configuration: defaults, deep-merge loading, dotted-path overrides."""

from __future__ import annotations

import copy
import json
from typing import Any

from .engine import ConfigError

DEFAULTS: dict = {
    "name": "unnamed",
    "architecture": "microservices",
    "sim": {
        "seed": 42,
        "horizon_s": 600.0,
        "replications": 10,
        "warmup_frac": 0.1,
    },
    "workload": {
        "profile": {
            "kind": "constant",
            "base_rate": 5.0,          # sessions per second
            "amplitude": 0.0,
            "period_s": 3600.0,
            "spikes": [],
        },
        "users": None,                 # optional; maps to base_rate via user_cycle_s
        "user_cycle_s": 200.0,
        "population": 3000,
        "grammar": {
            "funnel": [["search", 1.0], ["view", 0.8], ["book", 0.3], ["pay", 0.95]],
        },
        "think_time": {"kind": "lognormal", "median_s": 2.0, "sigma": 0.8},
        "cancel_prob": 0.05,
        "attributes": {
            "destinations": 200,
            "zipf_s": 1.1,
            "price_bands": ["budget", "standard", "premium"],
            "payment_channels": ["card", "wallet", "bank"],
        },
    },
    "topology": {
        "network": {
            "gateway_overhead_s": 0.01,
            "hop_latency_s": 0.02,
            "broker_latency_s": 0.05,
        },
        "services": {
            "gateway":        {"mean_s": 0.01, "servers": 1, "queue_capacity": 500, "timeout_s": 5.0},
            "search":         {"mean_s": 0.12, "servers": 2, "queue_capacity": 300, "timeout_s": 5.0},
            "booking":        {"mean_s": 0.20, "servers": 2, "queue_capacity": 300, "timeout_s": 5.0},
            "payment":        {"mean_s": 0.25, "servers": 3, "queue_capacity": 300, "timeout_s": 5.0},
            "profile":        {"mean_s": 0.08, "servers": 1, "queue_capacity": 300, "timeout_s": 5.0},
            "recommendation": {"mean_s": 0.15, "servers": 3, "queue_capacity": 300, "timeout_s": 5.0},
            "notification":   {"mean_s": 0.05, "servers": 1, "queue_capacity": 500, "timeout_s": None},
        },
        "balancer": "least-connections",
        "cache": {
            "enabled": True,
            "station": "search",
            "capacity": 100,
            "ttl_s": 30.0,
            "hit_time_s": 0.005,
            "keyed_by": "destination",
        },
        "breaker": {"enabled": True, "threshold": 8, "cooldown_s": 10.0},
        "retry": {"max_attempts": 2, "backoff_s": 0.2},
        "monolith": {
            "servers": 8,
            "alpha": 0.5,
            "knee": 24,
            "queue_capacity": 100,
            "timeout_s": 5.0,
            "exclude_steps": ["gateway"],
        },
    },
    "scaling": {
        "kind": "none",
        "rho_target": 0.6,
        "up_threshold": 0.7,
        "down_threshold": 0.3,
        "sustain": 3,
        "cooldown_s": 60.0,
        "interval_s": 10.0,
        "provisioning_delay_s": 30.0,
        "limits": {},                  # station -> [min, max]
    },
    "analytics": {
        "forecaster": "seasonal-naive",
        "params": {"period": 30, "lags": 6},
        "interval_s": 10.0,
        "band": 0.2,
        "refit_every": 6,
        "eval_holdout_frac": 0.5,
        "eval_refit_every": 24,
    },
    "recommendation_model": {
        "personalized": True,
        "k": 3,
        "cluster_relevance": [0.5, 0.6, 0.7],
        "base_hit_rate": 0.35,
    },
    "faults": {"outages": []},
    "cost": {"unit_cost_per_instance_s": 0.0001},
    "sla": {"p95_s": 3.0},
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def merge_defaults(cfg: dict) -> dict:
    return deep_merge(DEFAULTS, cfg)


def load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return merge_defaults(cfg)


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply one `dotted.path=value` override; values parse as JSON when
    possible and fall back to strings."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key.path=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = path.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return cfg


def get_path(cfg: dict, path: str) -> Any:
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"config path {path!r} not found")
        node = node[part]
    return node


def resolve(cfg: dict) -> dict:
    """Final validation and derived fields (users -> arrival rate)."""
    cfg = copy.deepcopy(cfg)
    sim = cfg["sim"]
    if sim["horizon_s"] <= 0:
        raise ConfigError("horizon must be positive")
    if not 0.0 <= sim["warmup_frac"] < 1.0:
        raise ConfigError("warmup fraction must lie in [0, 1)")
    if sim["replications"] < 1:
        raise ConfigError("replications must be >= 1")
    arch = cfg["architecture"]
    if arch not in ("monolith", "microservices"):
        raise ConfigError(f"unknown architecture {arch!r}")
    if arch == "monolith" and cfg["scaling"]["kind"] != "none":
        raise ConfigError("the monolith has a fixed server count; scaling.kind must be 'none'")
    wl = cfg["workload"]
    users = wl.get("users")
    if users is not None:
        cycle = float(wl["user_cycle_s"])
        if cycle <= 0:
            raise ConfigError("user_cycle_s must be positive")
        wl["profile"]["base_rate"] = float(users) / cycle
    for name in cfg["scaling"].get("limits", {}):
        if arch == "microservices" and name not in cfg["topology"]["services"]:
            raise ConfigError(f"scaling limits reference unknown station {name!r}")
    return cfg
