"""Service graphs for the two architectures under test.

build_microservices() produces seven independent stations (gateway, search,
booking, payment, profile, recommendation, notification) with per-flow hop
lists; build_monolith() collapses each flow into a single station whose
per-request service time is the sum of the flow's step times, inflated by a
load-dependent contention factor. The FlowDriver runs requests through
either graph on an Engine, applying cache, circuit-breaker and retry
policies and publishing asynchronous hops through a simulated broker.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .engine import (
    ConfigError,
    Engine,
    EventKind,
    Exponential,
    Job,
    OUTCOME_BREAKER,
    OUTCOME_OVERFLOW,
    OUTCOME_SUCCESS,
    OUTCOME_TIMEOUT,
    Station,
    StationConfig,
    make_dist,
)

MICRO_STATIONS = ("gateway", "search", "booking", "payment", "profile",
                  "recommendation", "notification")
REQUEST_TYPES = ("search", "view", "book", "pay")
TRANSACTION_TYPES = ("book", "pay")

RETRYABLE = (OUTCOME_TIMEOUT, OUTCOME_OVERFLOW, OUTCOME_BREAKER)


# ---------------------------------------------------------------------------
# policies

@dataclass(frozen=True)
class CachePolicy:
    capacity: int = 200
    ttl_s: float = 60.0
    hit_time_s: float = 0.005
    keyed_by: str = "destination"
    station: str = "search"

    def __post_init__(self):
        if self.capacity < 0:
            raise ConfigError("cache capacity must be >= 0")
        if self.ttl_s <= 0:
            raise ConfigError("cache ttl must be positive")


class LruTtlCache:
    """LRU cache with per-entry TTL; lookups refresh recency."""

    def __init__(self, policy: CachePolicy):
        self.policy = policy
        self._entries: OrderedDict[str, float] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def lookup(self, key: str, now: float) -> bool:
        inserted = self._entries.get(key)
        if inserted is not None and now - inserted <= self.policy.ttl_s:
            self._entries.move_to_end(key)
            self.hits += 1
            return True
        if inserted is not None:
            del self._entries[key]
        self.misses += 1
        return False

    def put(self, key: str, now: float) -> None:
        if self.policy.capacity == 0:
            return
        self._entries[key] = now
        self._entries.move_to_end(key)
        while len(self._entries) > self.policy.capacity:
            self._entries.popitem(last=False)


def cache_lookup(cache: LruTtlCache, key: str, now: float) -> bool:
    return cache.lookup(key, now)


@dataclass(frozen=True)
class BreakerConfig:
    threshold: int = 5
    cooldown_s: float = 10.0

    def __post_init__(self):
        if self.threshold < 1:
            raise ConfigError("breaker threshold must be >= 1")
        if self.cooldown_s <= 0:
            raise ConfigError("breaker cooldown must be positive")


CLOSED, OPEN, HALF_OPEN = "closed", "open", "half-open"


class Breaker:
    """Circuit breaker state machine.

    Transitions: closed->open when consecutive failures reach the threshold;
    open->half-open when the cooldown elapses (the next call is the probe);
    half-open->closed on probe success; half-open->open on probe failure.
    """

    def __init__(self, config: BreakerConfig):
        self.config = config
        self.state = CLOSED
        self.consecutive_failures = 0
        self.open_until = 0.0
        self._probe_in_flight = False
        self.transitions: list[tuple[str, str]] = []

    def _move(self, new_state: str) -> None:
        if new_state != self.state:
            self.transitions.append((self.state, new_state))
            self.state = new_state

    def allow(self, now: float) -> bool:
        if self.state == CLOSED:
            return True
        if self.state == OPEN:
            if now >= self.open_until:
                self._move(HALF_OPEN)
                self._probe_in_flight = True
                return True
            return False
        # half-open: a single probe at a time
        if not self._probe_in_flight:
            self._probe_in_flight = True
            return True
        return False

    def on_result(self, success: bool, now: float) -> str:
        if self.state == HALF_OPEN:
            self._probe_in_flight = False
            if success:
                self.consecutive_failures = 0
                self._move(CLOSED)
            else:
                self.open_until = now + self.config.cooldown_s
                self._move(OPEN)
            return self.state
        if success:
            self.consecutive_failures = 0
        else:
            self.consecutive_failures += 1
            if self.state == CLOSED and self.consecutive_failures >= self.config.threshold:
                self.open_until = now + self.config.cooldown_s
                self._move(OPEN)
        return self.state


def breaker_on_result(breaker: Breaker, result: str, now: float) -> str:
    """Feed one call outcome into the breaker; returns the new state."""
    return breaker.on_result(result == OUTCOME_SUCCESS, now)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 1
    backoff_s: float = 0.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ConfigError("retry max_attempts must be >= 1")
        if self.backoff_s < 0:
            raise ConfigError("retry backoff must be >= 0")


def retry_wrap(policy: RetryPolicy, call: Callable[[int], tuple[str, float]]) -> tuple[str, float, int]:
    """Drive `call(attempt) -> (outcome, elapsed_s)` under the retry policy.

    Transient failures (timeout, queue-overflow, breaker-open) are retried
    after a fixed backoff; the returned elapsed time spans every attempt and
    every backoff. Returns (final outcome, total elapsed, attempts made).
    """
    total = 0.0
    outcome = OUTCOME_TIMEOUT
    attempt = 0
    for attempt in range(1, policy.max_attempts + 1):
        outcome, elapsed = call(attempt)
        total += elapsed
        if outcome == OUTCOME_SUCCESS or outcome not in RETRYABLE:
            return outcome, total, attempt
        if attempt < policy.max_attempts:
            total += policy.backoff_s
    return outcome, total, attempt


def route(balancer, in_flight: Sequence[int]) -> int:
    """Pick an instance index for the next request."""
    if len(in_flight) == 0:
        raise ConfigError("cannot route over an empty instance list")
    return balancer.pick(in_flight)


# ---------------------------------------------------------------------------
# topology

SYNC, ASYNC = "sync", "async"


@dataclass(frozen=True)
class Hop:
    station: str
    mode: str = SYNC

    def __post_init__(self):
        if self.mode not in (SYNC, ASYNC):
            raise ConfigError(f"hop mode must be sync or async, got {self.mode!r}")


@dataclass
class ServiceTopology:
    architecture: str
    stations: dict[str, StationConfig]
    flows: dict[str, list[Hop]]
    gateway_overhead_s: float = 0.01
    hop_latency_s: float = 0.02
    broker_latency_s: float = 0.05
    cache: Optional[CachePolicy] = None
    breaker: Optional[BreakerConfig] = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    transaction_types: tuple[str, ...] = TRANSACTION_TYPES

    def __post_init__(self):
        for kind, hops in self.flows.items():
            seen = set()
            for hop in hops:
                if hop.station not in self.stations:
                    raise ConfigError(f"flow {kind!r} references unknown station {hop.station!r}")
                if hop.mode == SYNC:
                    if hop.station in seen:
                        raise ConfigError(f"flow {kind!r} revisits station {hop.station!r}; "
                                          "synchronous hop lists must be acyclic")
                    seen.add(hop.station)

    def sync_stations(self) -> set[str]:
        out = set()
        for hops in self.flows.values():
            out.update(h.station for h in hops if h.mode == SYNC)
        return out

    def sync_hop_count(self, kind: str) -> int:
        return sum(1 for h in self.flows[kind] if h.mode == SYNC)


def _station_cfg(name: str, svc: dict, balancer: str) -> StationConfig:
    spec = dict(svc)
    spec.setdefault("kind", "exponential")
    dist = make_dist({k: v for k, v in spec.items()
                      if k in ("kind", "rate", "mean_s", "median_s", "sigma", "value_s")})
    return StationConfig(
        name=name,
        servers=int(svc.get("servers", 1)),
        service=dist,
        queue_capacity=svc.get("queue_capacity"),
        timeout_s=svc.get("timeout_s"),
        balancer=balancer,
    )


def default_flows() -> dict[str, list[Hop]]:
    return {
        "search": [Hop("gateway"), Hop("search")],
        "view": [Hop("gateway"), Hop("recommendation")],
        "book": [Hop("gateway"), Hop("booking"), Hop("payment"), Hop("notification", ASYNC)],
        "pay": [Hop("gateway"), Hop("profile"), Hop("payment"), Hop("notification", ASYNC)],
    }


def build_microservices(config: dict) -> ServiceTopology:
    """Service-per-station topology: independently sized stations, cached
    search, asynchronous notification via the broker."""
    topo_cfg = config["topology"]
    services = topo_cfg["services"]
    missing = [s for s in MICRO_STATIONS if s not in services]
    if missing:
        raise ConfigError(f"microservices config missing service definitions: {missing}")
    balancer = topo_cfg.get("balancer", "least-connections")
    stations = {name: _station_cfg(name, services[name], balancer) for name in MICRO_STATIONS}

    flows = default_flows()
    if "flows" in topo_cfg:
        flows = {kind: [Hop(h[0], h[1] if len(h) > 1 else SYNC) for h in hops]
                 for kind, hops in topo_cfg["flows"].items()}

    cache_cfg = topo_cfg.get("cache", {})
    cache = None
    if cache_cfg.get("enabled", True):
        cache = CachePolicy(
            capacity=int(cache_cfg.get("capacity", 200)),
            ttl_s=float(cache_cfg.get("ttl_s", 60.0)),
            hit_time_s=float(cache_cfg.get("hit_time_s", 0.005)),
            keyed_by=cache_cfg.get("keyed_by", "destination"),
            station=cache_cfg.get("station", "search"),
        )
    breaker_cfg = topo_cfg.get("breaker", {})
    breaker = None
    if breaker_cfg.get("enabled", True):
        breaker = BreakerConfig(threshold=int(breaker_cfg.get("threshold", 5)),
                                cooldown_s=float(breaker_cfg.get("cooldown_s", 10.0)))
    retry_cfg = topo_cfg.get("retry", {})
    retry = RetryPolicy(max_attempts=int(retry_cfg.get("max_attempts", 1)),
                        backoff_s=float(retry_cfg.get("backoff_s", 0.0)))
    net = topo_cfg.get("network", {})
    return ServiceTopology(
        architecture="microservices",
        stations=stations,
        flows=flows,
        gateway_overhead_s=float(net.get("gateway_overhead_s", 0.01)),
        hop_latency_s=float(net.get("hop_latency_s", 0.02)),
        broker_latency_s=float(net.get("broker_latency_s", 0.05)),
        cache=cache,
        breaker=breaker,
        retry=retry,
    )


def monolith_step_means(config: dict) -> dict[str, float]:
    """Per-request-type mean service seconds for the single monolith station:
    the sum of the flow's step times, async steps included (the monolith runs
    them inline), the gateway station excluded (there is none)."""
    topo_cfg = config["topology"]
    services = topo_cfg["services"]
    mono = topo_cfg.get("monolith", {})
    excluded = set(mono.get("exclude_steps", ["gateway"]))
    flows = default_flows()
    means = {}
    for kind, hops in flows.items():
        total = 0.0
        for hop in hops:
            if hop.station in excluded:
                continue
            svc = services[hop.station]
            total += float(svc.get("mean_s", 1.0 / float(svc.get("rate", 1.0))))
        means[kind] = total
    return means


def build_monolith(config: dict) -> ServiceTopology:
    """Single-station topology with load-dependent service inflation
    f(n) = 1 + alpha * max(0, n - knee) / knee and a fixed server count."""
    topo_cfg = config["topology"]
    mono = topo_cfg.get("monolith", {})
    alpha = float(mono.get("alpha", 0.0))
    knee = int(mono.get("knee", 1))
    if alpha < 0:
        raise ConfigError("monolith contention alpha must be >= 0")
    if knee < 1:
        raise ConfigError("monolith contention knee must be >= 1")
    per_type = {kind: Exponential(1.0 / mean) if mean > 0 else make_dist({"kind": "deterministic", "value_s": 0.0})
                for kind, mean in monolith_step_means(config).items()}
    station = StationConfig(
        name="monolith",
        servers=int(mono.get("servers", 8)),
        service=per_type,
        queue_capacity=mono.get("queue_capacity"),
        timeout_s=mono.get("timeout_s"),
        balancer=topo_cfg.get("balancer", "least-connections"),
        contention_alpha=alpha,
        contention_knee=knee,
    )
    flows = {kind: [Hop("monolith")] for kind in REQUEST_TYPES}
    net = topo_cfg.get("network", {})
    retry_cfg = topo_cfg.get("monolith_retry", {"max_attempts": 1, "backoff_s": 0.0})
    return ServiceTopology(
        architecture="monolith",
        stations={"monolith": station},
        flows=flows,
        gateway_overhead_s=float(net.get("gateway_overhead_s", 0.01)),
        hop_latency_s=float(net.get("hop_latency_s", 0.02)),
        broker_latency_s=float(net.get("broker_latency_s", 0.05)),
        cache=None,
        breaker=None,
        retry=RetryPolicy(max_attempts=int(retry_cfg.get("max_attempts", 1)),
                          backoff_s=float(retry_cfg.get("backoff_s", 0.0))),
    )


def expected_station_visits(grammar, flows: dict[str, list[Hop]]) -> dict[str, float]:
    """Expected station arrivals per session implied by the funnel grammar;
    seeds the autoscaler's demand split before run data accrues."""
    steps = grammar.expected_steps()
    visits: dict[str, float] = {}
    for kind, expected in steps.items():
        for hop in flows.get(kind, []):
            visits[hop.station] = visits.get(hop.station, 0.0) + expected
    return visits


# ---------------------------------------------------------------------------
# broker

class Broker:
    """Reliable asynchronous channel with fixed delivery latency."""

    def __init__(self, engine: Engine, latency_s: float):
        self.engine = engine
        self.latency_s = latency_s
        self.published = 0
        self.delivered = 0

    def publish(self, consumer: Station, kind: str, now: float,
                on_outcome: Callable[[str, float], None]) -> None:
        self.published += 1

        def deliver(t: float) -> None:
            self.delivered += 1
            consumer.offer(Job(kind, on_outcome), t)

        self.engine.at(now + self.latency_s, EventKind.MESSAGE_DELIVERY, deliver)


# ---------------------------------------------------------------------------
# request records and the flow driver

@dataclass
class HopRecord:
    station: str
    enqueue_s: float
    start_s: Optional[float] = None
    done_s: Optional[float] = None

    def to_json(self) -> dict:
        return {"station": self.station, "enqueue_s": self.enqueue_s,
                "start_s": self.start_s, "done_s": self.done_s}


@dataclass
class RequestRecord:
    id: int
    kind: str
    user_id: int
    session_id: int
    arrival_s: float
    response_s: Optional[float] = None
    outcome: Optional[str] = None  # None while in flight
    hops: list[HopRecord] = field(default_factory=list)
    attempts: int = 1

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "type": self.kind,
            "arrival_s": self.arrival_s,
            "response_s": self.response_s,
            "outcome": self.outcome if self.outcome is not None else "in-flight",
            "hops": [h.to_json() for h in self.hops],
        }


class FlowDriver:
    """Drives typed requests through a ServiceTopology on an Engine."""

    def __init__(self, engine: Engine, topology: ServiceTopology):
        self.engine = engine
        self.topology = topology
        self.stations: dict[str, Station] = {
            name: engine.add_station(cfg) for name, cfg in topology.stations.items()
        }
        self.cache = LruTtlCache(topology.cache) if topology.cache else None
        self.breakers: dict[str, Breaker] = {}
        if topology.breaker is not None:
            self.breakers = {name: Breaker(topology.breaker) for name in topology.stations}
        self.broker = Broker(engine, topology.broker_latency_s)
        self.requests: list[RequestRecord] = []
        self.generated: dict[str, int] = {}
        self.completed: dict[str, int] = {}
        self.failed: dict[str, int] = {}
        # per-station offered demand including breaker-shed attempts (cache
        # hits excluded); autoscalers must see demand the station never did
        self.hop_demand: dict[str, int] = {name: 0 for name in topology.stations}
        self.async_completions = 0
        self.async_failures = 0
        self._next_id = 0

    # -- entry ---------------------------------------------------------------

    def submit(self, kind: str, attributes: dict, now: float,
               user_id: int = 0, session_id: int = 0) -> RequestRecord:
        if kind not in self.topology.flows:
            raise ConfigError(f"no flow defined for request type {kind!r}")
        rec = RequestRecord(id=self._next_id, kind=kind, user_id=user_id,
                            session_id=session_id, arrival_s=now)
        self._next_id += 1
        self.requests.append(rec)
        self.generated[kind] = self.generated.get(kind, 0) + 1
        entry = now + self.topology.gateway_overhead_s
        self.engine.at(entry, EventKind.ARRIVAL,
                       lambda t: self._run_hop(rec, attributes, 0, 1, t))
        return rec

    # -- flow machinery -------------------------------------------------------

    def _run_hop(self, rec: RequestRecord, attrs: dict, hop_idx: int, attempt: int, now: float) -> None:
        hops = self.topology.flows[rec.kind]
        # publish any consecutive async hops, then land on the next sync hop
        while hop_idx < len(hops) and hops[hop_idx].mode == ASYNC:
            self._publish_async(hops[hop_idx], rec.kind, now)
            hop_idx += 1
        if hop_idx >= len(hops):
            self._finish(rec, OUTCOME_SUCCESS, now)
            return
        hop = hops[hop_idx]
        station = self.stations[hop.station]

        cache = self.cache
        cache_key = None
        if cache is not None and cache.policy.station == hop.station:
            cache_key = attrs.get(cache.policy.keyed_by)
            if cache_key is not None and cache.lookup(cache_key, now):
                done = now + cache.policy.hit_time_s
                rec.hops.append(HopRecord(hop.station, now, now, done))
                self.engine.at(done, EventKind.SERVICE_COMPLETE,
                               lambda t: self._advance_flow(rec, attrs, hop_idx, t))
                return

        self.hop_demand[hop.station] += 1
        breaker = self.breakers.get(hop.station)
        if breaker is not None and not breaker.allow(now):
            rec.hops.append(HopRecord(hop.station, now))
            self._hop_failed(rec, attrs, hop_idx, attempt, OUTCOME_BREAKER, now)
            return

        hop_rec = HopRecord(hop.station, now)
        rec.hops.append(hop_rec)
        job_box: list[Job] = []

        def on_outcome(outcome: str, t: float) -> None:
            job = job_box[0]
            hop_rec.start_s = job.start_s
            hop_rec.done_s = job.done_s
            if breaker is not None and outcome in (OUTCOME_SUCCESS, OUTCOME_TIMEOUT, OUTCOME_OVERFLOW):
                breaker.on_result(outcome == OUTCOME_SUCCESS, t)
            if outcome == OUTCOME_SUCCESS:
                if cache_key is not None:
                    cache.put(cache_key, t)
                self._advance_flow(rec, attrs, hop_idx, t)
            else:
                self._hop_failed(rec, attrs, hop_idx, attempt, outcome, t)

        job = Job(rec.kind, on_outcome)
        job_box.append(job)
        station.offer(job, now)

    def _advance_flow(self, rec: RequestRecord, attrs: dict, hop_idx: int, now: float) -> None:
        hops = self.topology.flows[rec.kind]
        nxt = hop_idx + 1
        # fire-and-forget any async hops that immediately follow
        while nxt < len(hops) and hops[nxt].mode == ASYNC:
            self._publish_async(hops[nxt], rec.kind, now)
            nxt += 1
        if nxt >= len(hops):
            self._finish(rec, OUTCOME_SUCCESS, now)
        else:
            self.engine.at(now + self.topology.hop_latency_s, EventKind.ARRIVAL,
                           lambda t: self._run_hop(rec, attrs, nxt, 1, t))

    def _hop_failed(self, rec: RequestRecord, attrs: dict, hop_idx: int,
                    attempt: int, outcome: str, now: float) -> None:
        policy = self.topology.retry
        if outcome in RETRYABLE and attempt < policy.max_attempts:
            rec.attempts += 1
            self.engine.at(now + policy.backoff_s, EventKind.ARRIVAL,
                           lambda t: self._run_hop(rec, attrs, hop_idx, attempt + 1, t))
        else:
            self._finish(rec, outcome, now)

    def _publish_async(self, hop: Hop, kind: str, now: float) -> None:
        def on_async(outcome: str, t: float) -> None:
            if outcome == OUTCOME_SUCCESS:
                self.async_completions += 1
            else:
                self.async_failures += 1

        self.broker.publish(self.stations[hop.station], kind, now, on_async)

    def _finish(self, rec: RequestRecord, outcome: str, now: float) -> None:
        rec.outcome = outcome
        if outcome == OUTCOME_SUCCESS:
            rec.response_s = now - rec.arrival_s
            self.completed[rec.kind] = self.completed.get(rec.kind, 0) + 1
        else:
            self.failed[rec.kind] = self.failed.get(rec.kind, 0) + 1

    # -- fault injection -------------------------------------------------------

    def schedule_outages(self, outages: list[dict]) -> None:
        for out in outages:
            st = self.stations[out["station"]]
            start = float(out["start_s"])
            end = start + float(out["duration_s"])
            self.engine.at(start, EventKind.SCALE_EFFECTIVE,
                           lambda t, s=st: s.set_outage(True, t))
            self.engine.at(end, EventKind.SCALE_EFFECTIVE,
                           lambda t, s=st: s.set_outage(False, t))
