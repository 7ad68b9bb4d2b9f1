"""KPI formulas over run traces and report assembly.

Response time is end-to-end (queueing, service, retries, backoffs) over the
synchronous path only; latency is the transport-only component (gateway
overhead plus per-hop network latency), so latency <= response time for
every completed request. Success and error rates over transactions sum to
exactly 100.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .engine import OUTCOME_SUCCESS
from .topology import RequestRecord
from .trace import RunTrace

CSV_SCHEMA_VERSION = 1


class EmptyTraceError(ValueError):
    """Raised by rate metrics that are undefined on an empty trace."""


# ---------------------------------------------------------------------------
# per-request metrics

def response_time(request: RequestRecord) -> float:
    """Seconds from arrival to the final synchronous-hop completion."""
    if request.response_s is None:
        raise ValueError(f"request {request.id} did not complete")
    return request.response_s


def latency(request: RequestRecord, gateway_overhead_s: float, hop_latency_s: float) -> float:
    """Transport-only round-trip component: gateway overhead plus one network
    hop per recorded synchronous hop transition (retries traverse again)."""
    transitions = max(0, len(request.hops) - 1)
    return gateway_overhead_s + hop_latency_s * transitions


# ---------------------------------------------------------------------------
# aggregates

def percentile(sorted_values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile over pre-sorted samples."""
    if not sorted_values:
        raise EmptyTraceError("no samples")
    idx = max(0, math.ceil(q * len(sorted_values)) - 1)
    return sorted_values[min(idx, len(sorted_values) - 1)]


def throughput(completions: int, window_s: float) -> float:
    if window_s <= 0:
        raise ValueError("throughput window must be positive")
    return completions / window_s


def peak_throughput(completion_times: Sequence[float], window_s: float,
                    bin_s: float = 10.0) -> float:
    """Highest completions-per-second over fixed bins."""
    if not completion_times or window_s <= 0:
        return 0.0
    n_bins = max(1, math.ceil(window_s / bin_s))
    counts = [0] * n_bins
    t0 = min(completion_times)
    for t in completion_times:
        idx = int((t - t0) / bin_s)
        if 0 <= idx < n_bins:
            counts[idx] += 1
    return max(counts) / bin_s


def availability(trace: RunTrace) -> float:
    """Percent of the horizon during which every synchronous-path station had
    at least one instance serving. Without injected outages this is 100."""
    if trace.horizon_s <= 0:
        return 100.0
    sync = set(trace.sync_stations)
    intervals = []
    for out in trace.outages:
        if out["station"] not in sync:
            continue
        start = max(0.0, float(out["start_s"]))
        end = min(trace.horizon_s, float(out["start_s"]) + float(out["duration_s"]))
        if end > start:
            intervals.append((start, end))
    intervals.sort()
    down = 0.0
    cur_start, cur_end = None, None
    for start, end in intervals:
        if cur_end is None or start > cur_end:
            if cur_end is not None:
                down += cur_end - cur_start
            cur_start, cur_end = start, end
        else:
            cur_end = max(cur_end, end)
    if cur_end is not None:
        down += cur_end - cur_start
    return 100.0 * (1.0 - down / trace.horizon_s)


def error_rate(failed: int, total: int) -> float:
    if total <= 0:
        raise EmptyTraceError("error rate undefined on an empty trace")
    return 100.0 * failed / total


def success_rate(successes: int, total: int) -> float:
    if total <= 0:
        raise EmptyTraceError("success rate undefined with no transactions")
    return 100.0 * successes / total


def scalability(load_factor: float, resource_factor: float) -> Optional[float]:
    """Load-capacity growth per unit of resource growth, as a percent.

    Factors are multiplicative (2.0 = doubled). Returns None when resources
    did not change (zero denominator in the underlying delta form).
    """
    if load_factor <= 0 or resource_factor <= 0:
        raise ValueError("scalability factors must be positive")
    if resource_factor == 1.0:
        return None
    return 100.0 * load_factor / resource_factor


def operational_cost(trace: RunTrace, unit_cost_per_instance_s: float) -> float:
    """Instance-seconds across all stations times the unit cost."""
    if unit_cost_per_instance_s < 0:
        raise ValueError("unit cost must be >= 0")
    return sum(st.server_area for st in trace.stations.values()) * unit_cost_per_instance_s


def satisfaction(p95_response_s: float, recommendation_hit_rate: float) -> float:
    """Synthetic 1-10 proxy: 60% weight on tail response time against a 3 s
    tolerance, 40% on recommendation relevance."""
    if p95_response_s < 0 or not 0.0 <= recommendation_hit_rate <= 1.0:
        raise ValueError("satisfaction inputs out of range")
    score = 1.0 + 9.0 * (0.6 * max(0.0, 1.0 - p95_response_s / 3.0)
                         + 0.4 * recommendation_hit_rate)
    return min(10.0, max(1.0, score))


# ---------------------------------------------------------------------------
# report

@dataclass
class KpiReport:
    scenario: str
    architecture: str
    seed: int
    horizon_s: float
    warmup_s: float
    requests_total: int
    requests_ok: int
    mean_response_s: Optional[float]
    p50_response_s: Optional[float]
    p95_response_s: Optional[float]
    p99_response_s: Optional[float]
    max_response_s: Optional[float]
    throughput_rps: float
    peak_throughput_rps: float
    availability_pct: float
    error_rate_pct: Optional[float]
    transactions_total: int
    tx_success_rate_pct: Optional[float]
    tx_error_rate_pct: Optional[float]
    mean_latency_s: Optional[float]
    prediction_accuracy_pct: Optional[float]
    scalability_pct: Optional[float]
    operational_cost: float
    cost_per_transaction: Optional[float]
    satisfaction_score: Optional[float]
    recommendation_hit_rate: Optional[float]
    mean_utilization: Optional[float]
    station_utilization: dict[str, float] = field(default_factory=dict)
    failure_reasons: dict[str, int] = field(default_factory=dict)
    littles_law: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


CSV_COLUMNS = [
    "schema_version", "scenario", "architecture", "seed", "replication",
    "horizon_s", "warmup_s", "requests_total", "requests_ok",
    "mean_response_s", "p50_response_s", "p95_response_s", "p99_response_s",
    "max_response_s", "throughput_rps", "peak_throughput_rps",
    "availability_pct", "error_rate_pct", "transactions_total",
    "tx_success_rate_pct", "tx_error_rate_pct", "mean_latency_s",
    "prediction_accuracy_pct", "scalability_pct", "operational_cost",
    "cost_per_transaction", "satisfaction_score", "recommendation_hit_rate",
    "mean_utilization",
]


def flat_row(report: KpiReport, replication: int = 0) -> dict:
    row = {col: getattr(report, col, None) for col in CSV_COLUMNS
           if col not in ("schema_version", "replication")}
    row["schema_version"] = CSV_SCHEMA_VERSION
    row["replication"] = replication
    return {col: row[col] for col in CSV_COLUMNS}


def littles_law_diagnostics(trace: RunTrace) -> dict[str, dict]:
    """Post-warmup L vs lambda*W per station."""
    window = trace.horizon_s - trace.warmup_s
    out = {}
    for name, st in trace.stations.items():
        snap = trace.warmup_snapshots.get(name, {})
        n_area = st.n_area - snap.get("n_area", 0.0)
        arrivals = st.arrivals - snap.get("arrivals", 0)
        departures = st.departures - snap.get("departures", 0)
        time_in = st.time_in_station - snap.get("time_in_station", 0.0)
        if window <= 0 or departures == 0:
            continue
        big_l = n_area / window
        lam = arrivals / window
        w = time_in / departures
        rel = abs(big_l - lam * w) / big_l if big_l > 0 else 0.0
        out[name] = {"L": big_l, "lambda": lam, "W": w, "rel_err": rel}
    return out


def station_utilizations(trace: RunTrace) -> dict[str, float]:
    out = {}
    for name, st in trace.stations.items():
        snap = trace.warmup_snapshots.get(name, {})
        busy = st.busy_area - snap.get("busy_area", 0.0)
        server = st.server_area - snap.get("server_area", 0.0)
        out[name] = busy / server if server > 0 else 0.0
    return out


def measured_requests(trace: RunTrace) -> list[RequestRecord]:
    """Requests arriving after the warmup cut, the KPI population."""
    return [r for r in trace.requests if r.arrival_s >= trace.warmup_s]


def response_percentile(trace: RunTrace, q: float,
                        windows: Optional[list[tuple[float, float]]] = None) -> Optional[float]:
    """Percentile of successful response times, optionally restricted to
    requests arriving inside the given time windows."""
    def in_windows(t: float) -> bool:
        return windows is None or any(a <= t < b for a, b in windows)

    vals = sorted(r.response_s for r in measured_requests(trace)
                  if r.outcome == OUTCOME_SUCCESS and in_windows(r.arrival_s))
    if not vals:
        return None
    return percentile(vals, q)


def assemble_report(trace: RunTrace, config: dict,
                    prediction_accuracy_pct: Optional[float] = None,
                    recommendation_hit_rate: Optional[float] = None,
                    scalability_pct: Optional[float] = None,
                    replication_seed: Optional[int] = None) -> KpiReport:
    """Populate every KPI from a finished run; empty runs produce zeros and
    n/a fields without raising."""
    reqs = measured_requests(trace)
    ok = [r for r in reqs if r.outcome == OUTCOME_SUCCESS]
    failed = [r for r in reqs if r.outcome is not None and r.outcome != OUTCOME_SUCCESS]
    window = trace.horizon_s - trace.warmup_s

    responses = sorted(r.response_s for r in ok)
    mean_resp = sum(responses) / len(responses) if responses else None
    p50 = percentile(responses, 0.50) if responses else None
    p95 = percentile(responses, 0.95) if responses else None
    p99 = percentile(responses, 0.99) if responses else None
    max_resp = responses[-1] if responses else None

    completion_times = [r.arrival_s + r.response_s for r in ok]
    tput = throughput(len(ok), window) if window > 0 else 0.0
    peak = peak_throughput(completion_times, window) if completion_times else 0.0

    err = error_rate(len(failed), len(reqs)) if reqs else None

    tx_types = set(trace.transaction_types)
    tx = [r for r in reqs if r.kind in tx_types and r.outcome is not None]
    tx_ok = sum(1 for r in tx if r.outcome == OUTCOME_SUCCESS)
    tx_success = success_rate(tx_ok, len(tx)) if tx else None
    tx_error = 100.0 - tx_success if tx_success is not None else None

    latencies = [latency(r, trace.gateway_overhead_s, trace.hop_latency_s) for r in ok]
    mean_lat = sum(latencies) / len(latencies) if latencies else None

    unit_cost = float(config.get("cost", {}).get("unit_cost_per_instance_s", 0.0))
    cost = operational_cost(trace, unit_cost)
    cost_per_tx = cost / tx_ok if tx_ok > 0 else None

    sat = None
    if p95 is not None and recommendation_hit_rate is not None:
        sat = satisfaction(p95, recommendation_hit_rate)

    utils = station_utilizations(trace)
    reasons: dict[str, int] = {}
    for r in failed:
        reasons[r.outcome] = reasons.get(r.outcome, 0) + 1

    return KpiReport(
        scenario=trace.scenario,
        architecture=trace.architecture,
        seed=trace.seed if replication_seed is None else replication_seed,
        horizon_s=trace.horizon_s,
        warmup_s=trace.warmup_s,
        requests_total=len(reqs),
        requests_ok=len(ok),
        mean_response_s=mean_resp,
        p50_response_s=p50,
        p95_response_s=p95,
        p99_response_s=p99,
        max_response_s=max_resp,
        throughput_rps=tput,
        peak_throughput_rps=peak,
        availability_pct=availability(trace),
        error_rate_pct=err,
        transactions_total=len(tx),
        tx_success_rate_pct=tx_success,
        tx_error_rate_pct=tx_error,
        mean_latency_s=mean_lat,
        prediction_accuracy_pct=prediction_accuracy_pct,
        scalability_pct=scalability_pct,
        operational_cost=cost,
        cost_per_transaction=cost_per_tx,
        satisfaction_score=sat,
        recommendation_hit_rate=recommendation_hit_rate,
        mean_utilization=(sum(utils.values()) / len(utils)) if utils else None,
        station_utilization=utils,
        failure_reasons=reasons,
        littles_law=littles_law_diagnostics(trace),
    )
