"""Shipped reference scenarios.

mono_ref / micro_ref share the same peak workload and differ only in
architecture; spike_reactive / spike_predictive share a recurring-surge
workload and differ only in the scaling trigger; sweep_users drives the
concurrent-user scalability sweep; forecast_demo is a workload-only trace
for forecaster evaluation. All numeric values here are calibration inputs,
not measurements.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .config import merge_defaults
from .engine import ConfigError

_PEAK_WORKLOAD = {
    "profile": {"kind": "constant", "base_rate": 37.5},
}

# Wide-area transport constants shared by both reference architectures; the
# microservices build pays one hop per service transition, the monolith only
# the entry overhead.
_PEAK_NETWORK = {
    "gateway_overhead_s": 0.12,
    "hop_latency_s": 0.06,
    "broker_latency_s": 0.05,
}

_PEAK_MONOLITH = {
    "servers": 16,
    "alpha": 0.3,
    "knee": 70,
    "queue_capacity": 28,
    "timeout_s": 5.0,
    "exclude_steps": ["gateway"],
}

# Transaction stations (booking, payment) are floored at their offered-load
# size so tail waits never endanger bookings; the read paths (gateway,
# recommendation) run hot, which is where the monolith-vs-microservices
# response gap is decided.
_MICRO_REF_SERVERS = {
    "gateway":        {"servers": 1},
    "search":         {"servers": 2},
    "booking":        {"servers": 3},
    "payment":        {"servers": 6},
    "profile":        {"servers": 1},
    "recommendation": {"servers": 5},
    "notification":   {"servers": 1},
}

_MICRO_LIMITS = {
    "gateway": [1, 4],
    "search": [2, 8],
    "booking": [3, 8],
    "payment": [6, 16],
    "profile": [1, 4],
    "recommendation": [5, 16],
    "notification": [1, 4],
}

_SPIKES = [
    {"start_s": 150.0, "duration_s": 60.0, "multiplier": 3.0},
    {"start_s": 450.0, "duration_s": 60.0, "multiplier": 3.0},
    {"start_s": 750.0, "duration_s": 60.0, "multiplier": 3.0},
    {"start_s": 1050.0, "duration_s": 60.0, "multiplier": 3.0},
    {"start_s": 1350.0, "duration_s": 60.0, "multiplier": 3.0},
    {"start_s": 1650.0, "duration_s": 60.0, "multiplier": 3.0},
]

_SPIKE_LIMITS = {
    "gateway": [1, 3],
    "search": [1, 4],
    "booking": [1, 3],
    "payment": [2, 7],
    "profile": [1, 2],
    "recommendation": [2, 7],
    "notification": [1, 3],
}

_SPIKE_SERVERS = {
    "gateway":        {"servers": 1},
    "search":         {"servers": 1},
    "booking":        {"servers": 1},
    "payment":        {"servers": 2},
    "profile":        {"servers": 1},
    "recommendation": {"servers": 2},
    "notification":   {"servers": 1},
}

_SPIKE_BASE = {
    "architecture": "microservices",
    # warmup discards the first surge, the one no forecaster can have seen
    "sim": {"horizon_s": 1800.0, "replications": 10, "warmup_frac": 0.15},
    "workload": {
        "profile": {"kind": "spike-overlay", "base_rate": 8.0, "amplitude": 0.0,
                    "spikes": _SPIKES},
    },
    "topology": {
        "services": _SPIKE_SERVERS,
        "retry": {"max_attempts": 2, "backoff_s": 0.5},
    },
    "scaling": {
        "rho_target": 0.6,
        "up_threshold": 0.7,
        "down_threshold": 0.3,
        "sustain": 3,
        "cooldown_s": 60.0,
        "interval_s": 10.0,
        "provisioning_delay_s": 30.0,
        "limits": _SPIKE_LIMITS,
    },
    "analytics": {
        "forecaster": "seasonal-naive",
        "params": {"period": 30, "lags": 6},   # one spike period = 30 ticks of 10 s
        "interval_s": 10.0,
        "refit_every": 6,
    },
}

SCENARIOS: dict[str, dict] = {
    "mono_ref": {
        "name": "mono_ref",
        "architecture": "monolith",
        "sim": {"horizon_s": 600.0, "replications": 10},
        "workload": copy.deepcopy(_PEAK_WORKLOAD),
        "topology": {
            "network": copy.deepcopy(_PEAK_NETWORK),
            "monolith": copy.deepcopy(_PEAK_MONOLITH),
            "monolith_retry": {"max_attempts": 3, "backoff_s": 1.5},
        },
        "scaling": {"kind": "none"},
        "analytics": {"forecaster": "seasonal-naive", "params": {"period": 30}},
        "recommendation_model": {"personalized": False},
    },
    "micro_ref": {
        "name": "micro_ref",
        "architecture": "microservices",
        "sim": {"horizon_s": 600.0, "replications": 10},
        "workload": copy.deepcopy(_PEAK_WORKLOAD),
        "topology": {
            "network": copy.deepcopy(_PEAK_NETWORK),
            "services": copy.deepcopy(_MICRO_REF_SERVERS),
            "retry": {"max_attempts": 2, "backoff_s": 0.2},
        },
        "scaling": {"kind": "predictive", "rho_target": 0.9,
                    "limits": copy.deepcopy(_MICRO_LIMITS)},
        "analytics": {"forecaster": "ar-ls", "params": {"lags": 6}},
        "recommendation_model": {"personalized": True},
    },
    "spike_reactive": dict(copy.deepcopy(_SPIKE_BASE), **{
        "name": "spike_reactive",
        "scaling": dict(copy.deepcopy(_SPIKE_BASE["scaling"]), kind="reactive"),
    }),
    "spike_predictive": dict(copy.deepcopy(_SPIKE_BASE), **{
        "name": "spike_predictive",
        "scaling": dict(copy.deepcopy(_SPIKE_BASE["scaling"]), kind="predictive"),
    }),
    "sweep_users": {
        "name": "sweep_users",
        "architecture": "microservices",
        # warmup covers the autoscaler's cold start: forecast history plus
        # one provisioning delay before the operating point is representative
        "sim": {"horizon_s": 600.0, "replications": 3, "warmup_frac": 0.25},
        "workload": {
            "users": 1000,
            "user_cycle_s": 200.0,
        },
        "topology": {
            "network": copy.deepcopy(_PEAK_NETWORK),
            "services": copy.deepcopy(_MICRO_REF_SERVERS),
            "retry": {"max_attempts": 2, "backoff_s": 0.2},
            "monolith": copy.deepcopy(_PEAK_MONOLITH),
            "monolith_retry": {"max_attempts": 3, "backoff_s": 1.5},
        },
        "scaling": {"kind": "predictive", "rho_target": 0.82,
                    "limits": copy.deepcopy(_MICRO_LIMITS)},
        "analytics": {"forecaster": "ar-ls", "params": {"lags": 6}},
        "sweep": {"parameter": "workload.users", "values": [1000, 5000, 10000]},
    },
    "forecast_demo": {
        "name": "forecast_demo",
        "architecture": "microservices",
        "sim": {"horizon_s": 14400.0, "replications": 1},
        "workload": {
            "profile": {
                "kind": "spike-overlay",
                "base_rate": 15.0,
                "amplitude": 0.5,
                "period_s": 3600.0,
                "spikes": [
                    {"start_s": 500.0, "duration_s": 300.0, "multiplier": 2.5},
                    {"start_s": 4100.0, "duration_s": 240.0, "multiplier": 3.0},
                    {"start_s": 7300.0, "duration_s": 300.0, "multiplier": 2.2},
                    {"start_s": 9500.0, "duration_s": 360.0, "multiplier": 2.8},
                    {"start_s": 12200.0, "duration_s": 300.0, "multiplier": 2.5},
                ],
            },
        },
        "analytics": {
            "forecaster": "ar-ls",
            "params": {"lags": 6, "period": 60},
            "interval_s": 60.0,
            "band": 0.2,
            "eval_holdout_frac": 0.5,
            "eval_refit_every": 24,
        },
    },
}


def scenario_names() -> list[str]:
    return sorted(SCENARIOS)


def get_scenario(name: str) -> dict:
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; shipped: {', '.join(scenario_names())}")
    return merge_defaults(copy.deepcopy(SCENARIOS[name]))


def write_scenario_files(out_dir) -> list[str]:
    """Emit each shipped scenario as a standalone JSON config file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in scenario_names():
        path = out / f"{name}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(SCENARIOS[name], fh, indent=2, sort_keys=True)
        written.append(str(path))
    return written
