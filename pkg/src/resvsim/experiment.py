"""Scenario execution: single runs, replications, comparisons, sweeps,
load-capacity search and target calibration."""

from __future__ import annotations

import bisect
import copy
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import config as cfgmod
from .analytics import FeatureMatrix, kmeans_fit, walk_forward_accuracy
from .analytics.cluster import assign_all
from .analytics.forecast import DemandSeries
from .autoscale import Autoscaler, ScalingPolicy
from .engine import ConfigError, Engine, EventKind, RngStream, dist_mean
from .metrics import KpiReport, assemble_report, scalability
from .topology import (
    FlowDriver,
    build_microservices,
    build_monolith,
    expected_station_visits,
)
from .trace import RunTrace, StationFinal
from .workload import (
    ArrivalProfile,
    AttributeSampler,
    BehaviorRecord,
    FlowGrammar,
    expand_session,
    generate_arrivals,
    make_think_dist,
)

# two-sided 95% Student-t critical values by degrees of freedom
_T95 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447, 7: 2.365,
        8: 2.306, 9: 2.262, 10: 2.228, 11: 2.201, 12: 2.179, 13: 2.160, 14: 2.145,
        15: 2.131, 16: 2.120, 17: 2.110, 18: 2.101, 19: 2.093, 20: 2.086,
        21: 2.080, 22: 2.074, 23: 2.069, 24: 2.064, 25: 2.060, 26: 2.056,
        27: 2.052, 28: 2.048, 29: 2.045, 30: 2.042}


def t_critical_95(df: int) -> float:
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    return _T95.get(df, 1.960)


class Simulation:
    """One fully wired run: workload, topology, driver, autoscaler, faults."""

    def __init__(self, config: dict, seed: int):
        self.config = cfgmod.resolve(config)
        self.seed = int(seed)
        sim = self.config["sim"]
        self.horizon_s = float(sim["horizon_s"])
        self.warmup_s = self.horizon_s * float(sim["warmup_frac"])
        self.engine = Engine(self.seed)

        arch = self.config["architecture"]
        if arch == "monolith":
            self.topology = build_monolith(self.config)
        else:
            self.topology = build_microservices(self.config)
        self.driver = FlowDriver(self.engine, self.topology)
        self._initial_servers = {name: st.servers for name, st in self.driver.stations.items()}

        self._build_workload()
        self._build_autoscaler()
        self.driver.schedule_outages(self.config["faults"]["outages"])

        self._warmup_snapshots: dict[str, dict] = {}
        if self.warmup_s > 0:
            self.engine.at(self.warmup_s, EventKind.METRIC_TICK, self._take_snapshots)

    # -- construction ----------------------------------------------------------

    def _build_workload(self) -> None:
        wl = self.config["workload"]
        profile = ArrivalProfile.from_config(wl["profile"])
        arrivals = generate_arrivals(profile, self.horizon_s, self.engine.rng("arrivals"))
        grammar = FlowGrammar.from_config(wl["grammar"])
        think = make_think_dist(wl["think_time"])
        sampler = AttributeSampler(wl["attributes"])
        session_rng = self.engine.rng("sessions")
        population = int(wl["population"])
        cancel_prob = float(wl.get("cancel_prob", 0.0))

        self.grammar = grammar
        self.session_times = arrivals
        self.behavior: list[BehaviorRecord] = []
        n_requests = 0
        for sid, t0 in enumerate(arrivals):
            uid = int(session_rng.random() * population)
            session = expand_session(t0, grammar, session_rng, think_dist=think,
                                     attr_sampler=sampler, user_id=uid, session_id=sid)
            booked = False
            for step in session.steps:
                t = t0 + step.offset_s
                if t >= self.horizon_s:
                    continue
                self.behavior.append(BehaviorRecord(uid, t, step.kind, step.attributes))
                self.engine.at(t, EventKind.ARRIVAL,
                               lambda now, k=step.kind, a=step.attributes, u=uid, s=sid:
                               self.driver.submit(k, a, now, u, s))
                n_requests += 1
                if step.kind == "book":
                    booked = True
            if booked and cancel_prob > 0 and session_rng.random() < cancel_prob:
                t_cancel = t0 + session.steps[-1].offset_s + 1.0
                if t_cancel < self.horizon_s:
                    self.behavior.append(BehaviorRecord(
                        uid, t_cancel, "cancel", dict(session.steps[-1].attributes)))
        self.scheduled_requests = n_requests

        interval = float(self.config["analytics"]["interval_s"])
        n_bins = max(1, math.ceil(self.horizon_s / interval))
        counts = [0] * n_bins
        for t in arrivals:
            idx = int(t / interval)
            if 0 <= idx < n_bins:
                counts[idx] += 1
        self.demand = DemandSeries(interval_s=interval, counts=counts, start_s=0.0)
        self._demand_counts = counts
        self._demand_interval = interval

    def _build_autoscaler(self) -> None:
        scaling = self.config["scaling"]
        self.autoscaler: Optional[Autoscaler] = None
        if scaling["kind"] == "none" or not scaling.get("limits"):
            return
        policy = ScalingPolicy(
            kind=scaling["kind"],
            rho_target=float(scaling["rho_target"]),
            up_threshold=float(scaling["up_threshold"]),
            down_threshold=float(scaling["down_threshold"]),
            sustain=int(scaling["sustain"]),
            cooldown_s=float(scaling["cooldown_s"]),
            interval_s=float(scaling["interval_s"]),
            provisioning_delay_s=float(scaling["provisioning_delay_s"]),
        )
        limits = {name: (int(lo), int(hi))
                  for name, (lo, hi) in scaling["limits"].items()}
        seeds = expected_station_visits(self.grammar, self.topology.flows)
        interval = self._demand_interval
        counts = self._demand_counts
        times = self.session_times

        def session_counts(now: float) -> list[int]:
            return counts[:int(now / interval)]

        def sessions_started(now: float) -> int:
            return bisect.bisect_right(times, now)

        analytics = self.config["analytics"]
        forecaster = analytics["forecaster"]
        oracle_counts = [float(c) for c in counts] if forecaster == "oracle" else None
        cache = self.driver.cache
        self.autoscaler = Autoscaler(
            self.engine, policy, limits,
            visit_ratio_seeds=seeds,
            demand_interval_s=interval,
            session_counts=session_counts,
            sessions_started=sessions_started,
            forecaster=forecaster,
            forecaster_params=dict(analytics.get("params", {})),
            oracle_counts=oracle_counts,
            refit_every=int(analytics.get("refit_every", 6)),
            cached_station=cache.policy.station if cache else None,
            cache_stats=(lambda: (cache.hits, cache.misses)) if cache else None,
        )
        self.autoscaler.start(self.horizon_s)

    def _take_snapshots(self, now: float) -> None:
        for name, st in self.driver.stations.items():
            st._advance(now)
            self._warmup_snapshots[name] = st.snapshot()

    # -- execution ---------------------------------------------------------------

    def run(self) -> RunTrace:
        self.engine.run_until(self.horizon_s)
        stations = {}
        for name, st in self.driver.stations.items():
            cfg = st.cfg
            if isinstance(cfg.service, dict):
                max_rate = max(1.0 / dist_mean(d) for d in cfg.service.values()
                               if dist_mean(d) > 0)
            else:
                mean = dist_mean(cfg.service)
                max_rate = 1.0 / mean if mean > 0 else float("inf")
            stations[name] = StationFinal(
                name=name,
                arrivals=st.arrivals,
                completions=st.completions,
                rejected_overflow=st.rejected_overflow,
                rejected_outage=st.rejected_outage,
                timeouts=st.timeouts,
                busy_area=st.busy_area,
                server_area=st.server_area,
                n_area=st.n_area,
                time_in_station=st.time_in_station,
                departures=st.departures,
                final_servers=st.servers,
                initial_servers=self._initial_servers[name],
                max_service_rate=max_rate,
                instance_events=list(st.instance_events),
            )
        return RunTrace(
            scenario=self.config.get("name", "unnamed"),
            architecture=self.config["architecture"],
            seed=self.seed,
            horizon_s=self.horizon_s,
            warmup_s=self.warmup_s,
            gateway_overhead_s=self.topology.gateway_overhead_s,
            hop_latency_s=self.topology.hop_latency_s,
            requests=self.driver.requests,
            generated=dict(self.driver.generated),
            completed=dict(self.driver.completed),
            failed=dict(self.driver.failed),
            stations=stations,
            warmup_snapshots=dict(self._warmup_snapshots),
            sync_stations=sorted(self.topology.sync_stations()),
            transaction_types=self.topology.transaction_types,
            scaling_actions=self.autoscaler.actions if self.autoscaler else [],
            util_log=self.autoscaler.util_log if self.autoscaler else {},
            broker_published=self.driver.broker.published,
            broker_delivered=self.driver.broker.delivered,
            async_completions=self.driver.async_completions,
            async_failures=self.driver.async_failures,
            outages=list(self.config["faults"]["outages"]),
            demand=self.demand,
            sessions=len(self.session_times),
            behavior=self.behavior,
        )


# ---------------------------------------------------------------------------
# per-run KPI assembly

def _recommendation_hit_rate(trace: RunTrace, config: dict, seed: int) -> float:
    """Segment users on their behavior counts and fold the configured
    per-cluster relevance into one hit rate; non-personalized runs use the
    flat base rate."""
    model_cfg = config["recommendation_model"]
    base = float(model_cfg["base_hit_rate"])
    if not model_cfg.get("personalized", False):
        return base
    actions = ("search", "view", "book", "pay")
    per_user: dict[int, list[float]] = {}
    for rec in trace.behavior:
        if rec.action not in actions:
            continue
        row = per_user.setdefault(rec.user_id, [0.0] * len(actions))
        row[actions.index(rec.action)] += 1.0
    k = int(model_cfg["k"])
    if len(per_user) < max(k, 2):
        return base
    users = sorted(per_user)
    columns = {name: [per_user[u][i] for u in users] for i, name in enumerate(actions)}
    features = FeatureMatrix.from_columns(columns, method="z-score")
    model = kmeans_fit(features.matrix, k, RngStream(seed, "analytics:kmeans"))
    assign = assign_all(model, features.matrix)
    relevance = list(model_cfg["cluster_relevance"])
    hit = 0.0
    for c in range(k):
        share = float(np.mean(assign == c))
        hit += share * relevance[c % len(relevance)]
    return hit


def _prediction_accuracy(trace: RunTrace, config: dict) -> Optional[float]:
    analytics = config["analytics"]
    name = analytics["forecaster"]
    if trace.demand is None:
        return None
    if name == "oracle":
        return 100.0
    try:
        acc, _, _ = walk_forward_accuracy(
            trace.demand, name, dict(analytics.get("params", {})),
            band=float(analytics.get("band", 0.2)),
            holdout_frac=float(analytics.get("eval_holdout_frac", 0.5)),
            refit_every=int(analytics.get("eval_refit_every", 24)),
        )
    except ConfigError:
        return None
    return acc


def run_single(config: dict, seed: int, scenario: Optional[str] = None) -> tuple[RunTrace, KpiReport]:
    cfg = copy.deepcopy(config)
    if scenario:
        cfg["name"] = scenario
    sim = Simulation(cfg, seed)
    trace = sim.run()
    report = assemble_report(
        trace, sim.config,
        prediction_accuracy_pct=_prediction_accuracy(trace, sim.config),
        recommendation_hit_rate=_recommendation_hit_rate(trace, sim.config, seed),
    )
    return trace, report


# ---------------------------------------------------------------------------
# replications

@dataclass
class ExperimentResult:
    name: str
    config: dict
    seeds: list[int]
    reports: list[KpiReport]
    scaling_actions: list[list[dict]] = None   # per replication

    def kpi_values(self, fld: str) -> list[float]:
        return [getattr(r, fld) for r in self.reports if getattr(r, fld) is not None]

    def aggregate(self) -> dict[str, dict]:
        out = {}
        numeric = [
            "mean_response_s", "p50_response_s", "p95_response_s", "p99_response_s",
            "max_response_s", "throughput_rps", "peak_throughput_rps", "availability_pct",
            "error_rate_pct", "tx_success_rate_pct", "tx_error_rate_pct", "mean_latency_s",
            "prediction_accuracy_pct", "operational_cost", "cost_per_transaction",
            "satisfaction_score", "recommendation_hit_rate", "mean_utilization",
        ]
        for fld in numeric:
            vals = self.kpi_values(fld)
            if not vals:
                continue
            n = len(vals)
            mean = sum(vals) / n
            entry = {"mean": mean, "n": n}
            if n >= 2:
                var = sum((v - mean) ** 2 for v in vals) / (n - 1)
                entry["ci95_half"] = t_critical_95(n - 1) * math.sqrt(var / n)
            out[fld] = entry
        return out


def run_experiment(config: dict, replications: Optional[int] = None,
                   base_seed: Optional[int] = None) -> ExperimentResult:
    cfg = cfgmod.resolve(config)
    reps = int(replications if replications is not None else cfg["sim"]["replications"])
    seed0 = int(base_seed if base_seed is not None else cfg["sim"]["seed"])
    seeds = [seed0 + i for i in range(reps)]
    reports = []
    actions = []
    for s in seeds:
        trace, report = run_single(cfg, s)
        reports.append(report)
        actions.append([a.to_json() for a in trace.scaling_actions])
    return ExperimentResult(name=cfg.get("name", "unnamed"), config=cfg,
                            seeds=seeds, reports=reports, scaling_actions=actions)


# ---------------------------------------------------------------------------
# comparison

@dataclass
class Comparison:
    name_a: str
    name_b: str
    rows: dict[str, dict]   # kpi -> {a, b, delta, ratio}

    def table(self) -> str:
        lines = [f"{'KPI':<28}{self.name_a:>14}{self.name_b:>14}{'delta':>14}{'ratio b/a':>12}"]
        for kpi, row in self.rows.items():
            a = "n/a" if row["a"] is None else f"{row['a']:.4g}"
            b = "n/a" if row["b"] is None else f"{row['b']:.4g}"
            d = "n/a" if row["delta"] is None else f"{row['delta']:+.4g}"
            r = "n/a" if row["ratio"] is None else f"{row['ratio']:.3f}"
            lines.append(f"{kpi:<28}{a:>14}{b:>14}{d:>14}{r:>12}")
        return "\n".join(lines)


def compare_experiments(config_a: dict, config_b: dict,
                        replications: Optional[int] = None,
                        base_seed: Optional[int] = None) -> tuple[Comparison, ExperimentResult, ExperimentResult]:
    """Run both configs over the identical seed list and pair the aggregates."""
    cfg_a = cfgmod.resolve(config_a)
    seed0 = int(base_seed if base_seed is not None else cfg_a["sim"]["seed"])
    res_a = run_experiment(config_a, replications=replications, base_seed=seed0)
    res_b = run_experiment(config_b, replications=replications, base_seed=seed0)
    agg_a = res_a.aggregate()
    agg_b = res_b.aggregate()
    rows = {}
    for kpi in sorted(set(agg_a) | set(agg_b)):
        a = agg_a.get(kpi, {}).get("mean")
        b = agg_b.get(kpi, {}).get("mean")
        delta = (b - a) if a is not None and b is not None else None
        ratio = (b / a) if a not in (None, 0) and b is not None else None
        rows[kpi] = {"a": a, "b": b, "delta": delta, "ratio": ratio}
    return Comparison(res_a.name, res_b.name, rows), res_a, res_b


# ---------------------------------------------------------------------------
# sweeps and capacity

@dataclass
class SweepResult:
    parameter: str
    values: list
    results: list[ExperimentResult]

    def rows(self) -> list[dict]:
        out = []
        prev = None
        for value, res in zip(self.values, self.results):
            agg = res.aggregate()
            row = {"value": value}
            for kpi, entry in agg.items():
                row[kpi] = entry["mean"]
            resources = _mean_instances(res)
            row["mean_instances"] = resources
            if prev is not None and prev.get("peak_throughput_rps") and prev.get("mean_instances"):
                load_factor = row.get("peak_throughput_rps", 0.0) / prev["peak_throughput_rps"]
                resource_factor = resources / prev["mean_instances"]
                row["scalability_pct"] = scalability(load_factor, resource_factor) \
                    if resource_factor != 1.0 and load_factor > 0 else None
            else:
                row["scalability_pct"] = None
            out.append(row)
            prev = row
        return out


def _mean_instances(res: ExperimentResult) -> float:
    # mean_utilization-weighted server seconds are not tracked per report;
    # derive mean instance count from cost (cost = instance_seconds * unit)
    unit = float(res.config["cost"]["unit_cost_per_instance_s"])
    horizon = float(res.config["sim"]["horizon_s"])
    costs = res.kpi_values("operational_cost")
    if not costs or unit <= 0 or horizon <= 0:
        return 0.0
    return (sum(costs) / len(costs)) / unit / horizon


def sweep(config: dict, parameter: str, values: list,
          replications: Optional[int] = None) -> SweepResult:
    if not values:
        raise ConfigError("sweep needs at least one value")
    results = []
    for value in values:
        cfg = copy.deepcopy(config)
        cfgmod.apply_override(cfg, f"{parameter}={json.dumps(value)}")
        cfg["name"] = f"{config.get('name', 'sweep')}@{parameter}={value}"
        results.append(run_experiment(cfg, replications=replications))
    return SweepResult(parameter=parameter, values=list(values), results=results)


def find_load_capacity(config: dict, sla_p95_s: Optional[float] = None,
                       rate_lo: float = 1.0, rate_hi: float = 64.0,
                       probe_horizon_s: float = 360.0, seed: Optional[int] = None,
                       iterations: int = 7, probe_warmup_frac: float = 0.3) -> dict:
    """Max offered session rate whose p95 response stays under the SLA,
    found by binary search over probe runs.

    Probes discard a generous warmup so an autoscaled topology is measured
    at its settled capacity, not during controller spin-up."""
    cfg = cfgmod.resolve(config)
    sla = float(sla_p95_s if sla_p95_s is not None else cfg["sla"]["p95_s"])
    probe_seed = int(seed if seed is not None else cfg["sim"]["seed"])

    def probe(rate: float) -> tuple[bool, KpiReport]:
        c = copy.deepcopy(cfg)
        c["workload"]["users"] = None
        c["workload"]["profile"]["base_rate"] = rate
        c["sim"]["horizon_s"] = probe_horizon_s
        c["sim"]["warmup_frac"] = max(float(c["sim"]["warmup_frac"]), probe_warmup_frac)
        c["sim"]["replications"] = 1
        _, report = run_single(c, probe_seed)
        ok = report.p95_response_s is not None and report.p95_response_s <= sla
        return ok, report

    lo, hi = rate_lo, rate_hi
    ok_lo, report_lo = probe(lo)
    if not ok_lo:
        return {"rate": 0.0, "throughput_rps": 0.0, "p95_response_s": report_lo.p95_response_s,
                "sla_p95_s": sla}
    ok_hi, _ = probe(hi)
    while ok_hi and hi < 4096:
        lo = hi
        hi *= 2
        ok_hi, _ = probe(hi)
    best_report = report_lo
    for _ in range(iterations):
        mid = (lo + hi) / 2.0
        ok, report = probe(mid)
        if ok:
            lo = mid
            best_report = report
        else:
            hi = mid
    return {"rate": lo, "throughput_rps": best_report.throughput_rps,
            "p95_response_s": best_report.p95_response_s, "sla_p95_s": sla}


# ---------------------------------------------------------------------------
# calibration

def calibrate(config: dict, targets: dict[str, float], tunables: list[dict],
              budget: int = 30, probe_replications: int = 2,
              base_seed: Optional[int] = None) -> dict:
    """Coordinate search over tunable config paths minimizing the summed
    squared relative error against KPI targets.

    Calibration tunes free parameters toward an operating point; it is not a
    correctness check. Returns the tuned config, the achieved-vs-target
    table, and a warning when the budget expires without improvement.
    """
    if not targets:
        raise ConfigError("calibrate needs at least one target")
    cfg = copy.deepcopy(config)
    if not tunables:
        return {"config": cfg, "achieved": {}, "loss": None, "evaluations": 0,
                "warning": "no tunables given; config returned unchanged"}

    evals = 0

    def loss_of(c: dict) -> tuple[float, dict]:
        nonlocal evals
        evals += 1
        res = run_experiment(c, replications=probe_replications, base_seed=base_seed)
        agg = res.aggregate()
        achieved = {}
        loss = 0.0
        for kpi, target in targets.items():
            got = agg.get(kpi, {}).get("mean")
            achieved[kpi] = got
            if got is None:
                loss += 4.0   # missing KPI counts as 200% error
            else:
                scale = max(abs(target), 1e-9)   # zero targets stay best-effort
                loss += ((got - target) / scale) ** 2
        return loss, achieved

    best_loss, best_achieved = loss_of(cfg)
    initial_loss = best_loss
    brackets = {t["path"]: [float(t["lo"]), float(t["hi"])] for t in tunables}
    while evals < budget:
        improved = False
        for tun in tunables:
            path = tun["path"]
            lo, hi = brackets[path]
            candidates = [lo + i * (hi - lo) / 4.0 for i in range(5)]
            if tun.get("integer"):
                candidates = sorted({round(c) for c in candidates})
            best_val = cfgmod.get_path(cfg, path)
            for cand in candidates:
                if evals >= budget:
                    break
                trial = copy.deepcopy(cfg)
                cfgmod.apply_override(trial, f"{path}={cand}")
                trial_loss, trial_achieved = loss_of(trial)
                if trial_loss < best_loss - 1e-12:
                    best_loss, best_achieved = trial_loss, trial_achieved
                    best_val = cand
                    cfg = trial
                    improved = True
            span = (hi - lo) / 2.0
            center = float(best_val)
            brackets[path] = [max(lo, center - span / 2.0), min(hi, center + span / 2.0)]
            if evals >= budget:
                break
        if not improved:
            break
    result = {"config": cfg, "achieved": best_achieved, "loss": best_loss,
              "evaluations": evals, "targets": dict(targets)}
    rms_rel_err = math.sqrt(best_loss / len(targets))
    if best_loss >= initial_loss and evals >= budget:
        result["warning"] = "budget exhausted without improvement; returning best so far"
    elif rms_rel_err > 0.10:
        result["warning"] = (f"targets not reached (rms relative error "
                             f"{rms_rel_err:.1%}); returning best so far")
    return result
