"""Command-line interface.

Subcommands: run, compare, sweep, validate, calibrate, forecast-eval.
--config accepts either a path to a JSON scenario file or the name of a
shipped scenario (mono_ref, micro_ref, spike_reactive, spike_predictive,
sweep_users, forecast_demo). RESVSIM_OUT_DIR sets the default output
directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

from . import config as cfgmod
from . import scenarios as scen
from .analytics.forecast import FORECASTER_NAMES, DemandSeries, walk_forward_accuracy
from .engine import ConfigError, Engine
from .experiment import (
    calibrate,
    compare_experiments,
    run_experiment,
    run_single,
    sweep,
)
from .metrics import CSV_COLUMNS, flat_row
from .workload import ArrivalProfile, generate_arrivals

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _load_config(spec: str, overrides: list[str]) -> dict:
    if spec in scen.scenario_names():
        cfg = scen.get_scenario(spec)
    else:
        cfg = cfgmod.load_config_file(spec)
    for ov in overrides or []:
        cfgmod.apply_override(cfg, ov)
    return cfg


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("RESVSIM_OUT_DIR") or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: ("" if row.get(c) is None else row.get(c)) for c in columns})


def _apply_common(cfg: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        cfg["sim"]["seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        cfg["sim"]["replications"] = args.replications
    if getattr(args, "quick", False):
        cfg["sim"]["horizon_s"] = min(float(cfg["sim"]["horizon_s"]), 200.0)
        cfg["sim"]["replications"] = min(int(cfg["sim"]["replications"]), 2)
    return cfg


# ---------------------------------------------------------------------------
# subcommands

def cmd_run(args) -> int:
    cfg = _apply_common(_load_config(args.config, args.override), args)
    out = _out_dir(args)
    result = run_experiment(cfg)
    rows = [flat_row(rep, i) for i, rep in enumerate(result.reports)]
    _write_csv(out / f"{result.name}_runs.csv", CSV_COLUMNS, rows)
    report = {
        "schema_version": 1,
        "scenario": result.name,
        "seeds": result.seeds,
        "aggregate": result.aggregate(),
        "replications": [rep.to_json() for rep in result.reports],
        "scaling_actions": result.scaling_actions,
    }
    with open(out / f"{result.name}_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, default=str)
    if args.trace:
        trace, _ = run_single(cfg, result.seeds[0])
        trace.export_jsonl(out / f"{result.name}_trace.jsonl")
    agg = result.aggregate()
    mean_resp = agg.get("mean_response_s", {}).get("mean")
    print(f"{result.name}: {len(result.reports)} replication(s); "
          f"mean response {mean_resp if mean_resp is None else round(mean_resp, 4)} s; "
          f"reports in {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg_a = _apply_common(_load_config(args.config_a, args.override), args)
    cfg_b = _apply_common(_load_config(args.config_b, args.override), args)
    comparison, res_a, res_b = compare_experiments(
        cfg_a, cfg_b, replications=args.replications, base_seed=args.seed)
    out = _out_dir(args)
    rows = []
    for kpi, row in comparison.rows.items():
        rows.append({"kpi": kpi, "a": row["a"], "b": row["b"],
                     "delta": row["delta"], "ratio": row["ratio"]})
    _write_csv(out / f"compare_{res_a.name}_vs_{res_b.name}.csv",
               ["kpi", "a", "b", "delta", "ratio"], rows)
    print(comparison.table())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _apply_common(_load_config(args.config, args.override), args)
    parameter = args.param or cfg.get("sweep", {}).get("parameter")
    if args.values:
        values = [json.loads(v) for v in args.values.split(",")]
    else:
        values = cfg.get("sweep", {}).get("values")
    if not parameter or not values:
        raise ConfigError("sweep needs --param and --values (or a config 'sweep' section)")
    result = sweep(cfg, parameter, values, replications=args.replications)
    rows = result.rows()
    columns = ["value"] + [c for c in rows[0] if c != "value"]
    out = _out_dir(args)
    _write_csv(out / f"{cfg.get('name', 'sweep')}_sweep.csv", columns, rows)
    for row in rows:
        print(f"{parameter}={row['value']}: mean_response_s={row.get('mean_response_s')}, "
              f"p95={row.get('p95_response_s')}, throughput={row.get('throughput_rps')}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_validation

    checks = run_validation(quick=args.quick)
    for check in checks:
        print(check.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_OK if not failed else EXIT_FAIL


def cmd_calibrate(args) -> int:
    cfg = _apply_common(_load_config(args.config, args.override), args)
    targets = {}
    for spec in args.target or []:
        if "=" not in spec:
            raise ConfigError(f"target must look like kpi=value, got {spec!r}")
        key, val = spec.split("=", 1)
        targets[key] = float(val)
    tunables = []
    for spec in args.tune or []:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"tunable must look like path:lo:hi, got {spec!r}")
        tunables.append({"path": parts[0], "lo": float(parts[1]), "hi": float(parts[2])})
    result = calibrate(cfg, targets, tunables, budget=args.budget,
                       probe_replications=args.probe_replications)
    out = _out_dir(args)
    with open(out / f"{cfg.get('name', 'calibrated')}_tuned.json", "w", encoding="utf-8") as fh:
        json.dump(result["config"], fh, indent=2)
    print(f"{'KPI':<26}{'target':>12}{'achieved':>12}")
    for kpi, target in (result.get("targets") or {}).items():
        got = result["achieved"].get(kpi)
        print(f"{kpi:<26}{target:>12.4g}{got if got is None else round(got, 4):>12}")
    if result.get("warning"):
        print(f"warning: {result['warning']}")
    print(f"loss={result['loss']} evaluations={result['evaluations']}; "
          f"tuned config written to {out}")
    return EXIT_OK


def cmd_forecast_eval(args) -> int:
    cfg = _apply_common(_load_config(args.config, args.override), args)
    cfg = cfgmod.resolve(cfg)
    analytics = cfg["analytics"]
    band = args.band if args.band is not None else float(analytics.get("band", 0.2))
    profile = ArrivalProfile.from_config(cfg["workload"]["profile"])
    horizon = float(cfg["sim"]["horizon_s"])
    seed = int(cfg["sim"]["seed"])
    times = generate_arrivals(profile, horizon, Engine(seed).rng("arrivals"))
    interval = float(analytics["interval_s"])
    n_bins = max(1, math.ceil(horizon / interval))
    counts = [0] * n_bins
    for t in times:
        idx = int(t / interval)
        if 0 <= idx < n_bins:
            counts[idx] += 1
    series = DemandSeries(interval_s=interval, counts=counts)
    rows = []
    params = dict(analytics.get("params", {}))
    for name in FORECASTER_NAMES:
        acc, _, _ = walk_forward_accuracy(
            series, name, params, band=band,
            holdout_frac=float(analytics.get("eval_holdout_frac", 0.5)),
            refit_every=int(analytics.get("eval_refit_every", 24)))
        rows.append({"forecaster": name, "accuracy_pct": acc, "band": band})
        print(f"{name:<16} accuracy = {acc:.2f}% (band {band:.0%})")
    out = _out_dir(args)
    _write_csv(out / f"{cfg.get('name', 'forecast')}_forecast_eval.csv",
               ["forecaster", "accuracy_pct", "band"], rows)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resvsim",
        description="Discrete-event comparison of monolithic vs. microservices "
                    "travel-reservation architectures with forecast-driven autoscaling.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_positional=True):
        if config_positional:
            p.add_argument("--config", required=True,
                           help="scenario JSON path or shipped scenario name")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replications", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--override", action="append", default=[],
                       metavar="PATH=VALUE", help="dotted config override (repeatable)")
        p.add_argument("--quick", action="store_true",
                       help="shorter horizons and fewer replications")

    p_run = sub.add_parser("run", help="run one scenario with replications")
    common(p_run)
    p_run.add_argument("--trace", action="store_true",
                       help="also export the first replication's request trace (JSONL)")
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="run two scenarios on the same seeds")
    p_cmp.add_argument("--config-a", required=True)
    p_cmp.add_argument("--config-b", required=True)
    common(p_cmp, config_positional=False)
    p_cmp.set_defaults(fn=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="run a scenario across parameter values")
    common(p_sweep)
    p_sweep.add_argument("--param", default=None, help="dotted config path")
    p_sweep.add_argument("--values", default=None, help="comma-separated JSON values")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_val = sub.add_parser("validate", help="analytic-oracle validation suite")
    p_val.add_argument("--quick", action="store_true",
                       help="reduced horizons, 10%% tolerances")
    p_val.set_defaults(fn=cmd_validate)

    p_cal = sub.add_parser("calibrate", help="tune config paths toward KPI targets")
    common(p_cal)
    p_cal.add_argument("--target", action="append", default=[], metavar="KPI=VALUE")
    p_cal.add_argument("--tune", action="append", default=[], metavar="PATH:LO:HI")
    p_cal.add_argument("--budget", type=int, default=30)
    p_cal.add_argument("--probe-replications", type=int, default=2)
    p_cal.set_defaults(fn=cmd_calibrate)

    p_fc = sub.add_parser("forecast-eval",
                          help="fit each forecaster on a scenario's demand trace")
    common(p_fc)
    p_fc.add_argument("--band", type=float, default=None,
                      help="relative correctness band (default from config)")
    p_fc.set_defaults(fn=cmd_forecast_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
