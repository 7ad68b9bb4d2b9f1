"""Run artifacts: per-request records, per-station integrals, JSONL export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .analytics.forecast import DemandSeries
from .autoscale import ScalingAction
from .topology import RequestRecord
from .workload import BehaviorRecord


@dataclass
class StationFinal:
    """Closed-out station statistics at the end of a run."""

    name: str
    arrivals: int
    completions: int
    rejected_overflow: int
    rejected_outage: int
    timeouts: int
    busy_area: float
    server_area: float
    n_area: float
    time_in_station: float
    departures: int
    final_servers: int
    initial_servers: int
    max_service_rate: float
    instance_events: list[tuple[float, int]] = field(default_factory=list)


@dataclass
class RunTrace:
    scenario: str
    architecture: str
    seed: int
    horizon_s: float
    warmup_s: float
    gateway_overhead_s: float
    hop_latency_s: float
    requests: list[RequestRecord]
    generated: dict[str, int]
    completed: dict[str, int]
    failed: dict[str, int]
    stations: dict[str, StationFinal]
    warmup_snapshots: dict[str, dict]
    sync_stations: list[str]
    transaction_types: tuple[str, ...]
    scaling_actions: list[ScalingAction] = field(default_factory=list)
    util_log: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    broker_published: int = 0
    broker_delivered: int = 0
    async_completions: int = 0
    async_failures: int = 0
    outages: list[dict] = field(default_factory=list)
    demand: Optional[DemandSeries] = None
    sessions: int = 0
    behavior: list[BehaviorRecord] = field(default_factory=list)

    # -- conservation ----------------------------------------------------------

    def in_flight(self) -> dict[str, int]:
        """Requests still in the system when the run ended, per type."""
        out = {}
        for kind, gen in self.generated.items():
            out[kind] = gen - self.completed.get(kind, 0) - self.failed.get(kind, 0)
        return out

    def conservation_holds(self) -> bool:
        open_requests = sum(1 for r in self.requests if r.outcome is None)
        return sum(self.in_flight().values()) == open_requests and \
            all(v >= 0 for v in self.in_flight().values())

    # -- export ----------------------------------------------------------------

    def to_jsonl(self) -> str:
        """One line per request: {id, type, arrival_s, response_s|null, outcome, hops}."""
        lines = [json.dumps(rec.to_json(), separators=(",", ":")) for rec in self.requests]
        return "\n".join(lines) + ("\n" if lines else "")

    def export_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())
