"""Deterministic discrete-event kernel and multi-server queueing stations.

The kernel advances a virtual clock through a priority queue of events
ordered by (time, sequence); the sequence counter makes execution order
total and therefore reproducible. Stations are FIFO multi-server queues
with optional bounded capacity, per-request timeouts and an optional
load-dependent service-time inflation used by the monolith model.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np


class SimulationError(RuntimeError):
    """Contract violation inside the kernel (e.g. scheduling in the past)."""


class ConfigError(ValueError):
    """Invalid configuration, rejected at load time."""


# ---------------------------------------------------------------------------
# random streams

def _stream_entropy(stream_id: str) -> int:
    digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class RngStream:
    """Named random substream.

    The same (seed, stream_id) pair always yields the identical sample
    sequence, and distinct stream ids are statistically independent, so
    adding a consumer of one stream never perturbs draws on another.
    """

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed)
        self.stream_id = stream_id
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, _stream_entropy(stream_id)])
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def random(self) -> float:
        return float(self.gen.random())

    def exponential(self, mean: float) -> float:
        return float(self.gen.exponential(mean))

    def standard_normal(self) -> float:
        return float(self.gen.standard_normal())


# ---------------------------------------------------------------------------
# service-time distributions

@dataclass(frozen=True)
class Exponential:
    rate: float  # completions per second; mean = 1/rate

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"exponential rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class LogNormal:
    median_s: float
    sigma: float

    def __post_init__(self):
        if not (self.median_s > 0 and math.isfinite(self.median_s)):
            raise ConfigError(f"lognormal median must be positive, got {self.median_s}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"lognormal sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Deterministic:
    value_s: float

    def __post_init__(self):
        if not (self.value_s >= 0 and math.isfinite(self.value_s)):
            raise ConfigError(f"deterministic value must be >= 0, got {self.value_s}")


ServiceDist = Union[Exponential, LogNormal, Deterministic]


def make_dist(spec: dict) -> ServiceDist:
    """Build a distribution from a config mapping.

    Accepted forms: {"kind": "exponential", "rate": r} or {"kind":
    "exponential", "mean_s": m}; {"kind": "lognormal", "median_s": m,
    "sigma": s}; {"kind": "deterministic", "value_s": v}.
    """
    kind = spec.get("kind", "exponential")
    if kind == "exponential":
        if "rate" in spec:
            return Exponential(float(spec["rate"]))
        if "mean_s" in spec:
            mean = float(spec["mean_s"])
            if mean <= 0:
                raise ConfigError(f"exponential mean must be positive, got {mean}")
            return Exponential(1.0 / mean)
        raise ConfigError("exponential distribution needs 'rate' or 'mean_s'")
    if kind == "lognormal":
        return LogNormal(float(spec["median_s"]), float(spec["sigma"]))
    if kind == "deterministic":
        return Deterministic(float(spec["value_s"]))
    raise ConfigError(f"unknown distribution kind {kind!r}")


def sample_service_time(dist: ServiceDist, rng: RngStream) -> float:
    """Draw one service time in seconds; deterministic given the stream state."""
    if isinstance(dist, Deterministic):
        return dist.value_s
    if isinstance(dist, Exponential):
        return rng.exponential(1.0 / dist.rate)
    if isinstance(dist, LogNormal):
        return math.exp(math.log(dist.median_s) + dist.sigma * rng.standard_normal())
    raise TypeError(f"not a service distribution: {dist!r}")


def dist_mean(dist: ServiceDist) -> float:
    if isinstance(dist, Deterministic):
        return dist.value_s
    if isinstance(dist, Exponential):
        return 1.0 / dist.rate
    if isinstance(dist, LogNormal):
        return dist.median_s * math.exp(dist.sigma ** 2 / 2.0)
    raise TypeError(f"not a service distribution: {dist!r}")


# ---------------------------------------------------------------------------
# events

class EventKind(Enum):
    ARRIVAL = "arrival"
    SERVICE_START = "service-start"
    SERVICE_COMPLETE = "service-complete"
    TIMEOUT = "timeout"
    MESSAGE_DELIVERY = "message-delivery"
    SCALE_EFFECTIVE = "scale-action-effective"
    METRIC_TICK = "metric-tick"


@dataclass(slots=True)
class Event:
    time: float
    sequence: int
    kind: EventKind
    fn: Callable[[float], None]
    payload: Any = None

    def __lt__(self, other: "Event") -> bool:
        if self.time != other.time:
            return self.time < other.time
        return self.sequence < other.sequence


# ---------------------------------------------------------------------------
# load balancers

class RoundRobin:
    """Cycles instance indices 0, 1, ..., n-1, 0, ..."""

    def __init__(self):
        self._next = 0

    def pick(self, in_flight: Sequence[int]) -> int:
        idx = self._next % len(in_flight)
        self._next += 1
        return idx


class LeastConnections:
    """Index with the fewest in-flight requests; lowest index on ties."""

    def pick(self, in_flight: Sequence[int]) -> int:
        best = 0
        for i in range(1, len(in_flight)):
            if in_flight[i] < in_flight[best]:
                best = i
        return best


def make_balancer(name: str):
    if name == "round-robin":
        return RoundRobin()
    if name == "least-connections":
        return LeastConnections()
    raise ConfigError(f"unknown balancer {name!r}")


# ---------------------------------------------------------------------------
# stations

OUTCOME_SUCCESS = "success"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_OVERFLOW = "queue-overflow"
OUTCOME_BREAKER = "breaker-open"
OUTCOME_OUTAGE = "outage"

FAILURE_OUTCOMES = (OUTCOME_TIMEOUT, OUTCOME_OVERFLOW, OUTCOME_BREAKER, OUTCOME_OUTAGE)


@dataclass
class StationConfig:
    name: str
    servers: int = 1
    service: Union[ServiceDist, dict] = field(default_factory=lambda: Exponential(1.0))
    queue_capacity: Optional[int] = None  # waiting slots beyond the servers; None = unbounded
    timeout_s: Optional[float] = None     # measured from the offer; None = never
    balancer: str = "least-connections"
    contention_alpha: float = 0.0         # service inflation slope past the knee
    contention_knee: int = 1

    def __post_init__(self):
        if self.servers < 1:
            raise ConfigError(f"station {self.name}: servers must be >= 1")
        if self.queue_capacity is not None and self.queue_capacity < 0:
            raise ConfigError(f"station {self.name}: queue capacity must be >= 0")
        if self.timeout_s is not None and self.timeout_s <= 0:
            raise ConfigError(f"station {self.name}: timeout must be positive")
        if self.contention_alpha < 0:
            raise ConfigError(f"station {self.name}: contention alpha must be >= 0")
        if self.contention_knee < 1:
            raise ConfigError(f"station {self.name}: contention knee must be >= 1")

    def service_for(self, kind: str) -> ServiceDist:
        if isinstance(self.service, dict):
            try:
                return self.service[kind]
            except KeyError:
                raise SimulationError(f"station {self.name} has no service time for request type {kind!r}")
        return self.service

    def mean_service_s(self, kind: Optional[str] = None) -> float:
        if isinstance(self.service, dict):
            if kind is not None:
                return dist_mean(self.service[kind])
            return sum(dist_mean(d) for d in self.service.values()) / len(self.service)
        return dist_mean(self.service)


JOB_QUEUED = 0
JOB_SERVING = 1
JOB_DONE = 2
JOB_TIMED_OUT = 3        # gave up while waiting
JOB_TIMED_OUT_SERVING = 4  # caller gave up; server still finishing


class Job:
    """One unit of work offered to a station.

    `on_outcome(outcome, now)` fires exactly once with success, timeout,
    queue-overflow or outage.
    """

    __slots__ = ("kind", "on_outcome", "enqueue_s", "start_s", "done_s", "state", "instance")

    def __init__(self, kind: str, on_outcome: Callable[[str, float], None]):
        self.kind = kind
        self.on_outcome = on_outcome
        self.enqueue_s: float = math.nan
        self.start_s: Optional[float] = None
        self.done_s: Optional[float] = None
        self.state = JOB_QUEUED
        self.instance: int = -1


class Station:
    """FIFO multi-server queueing station with draining scale-down.

    Tracks the time integrals needed downstream: busy-server time, total
    server time (instance-seconds), and number-in-station for Little's law.
    """

    def __init__(self, cfg: StationConfig, engine: "Engine"):
        self.cfg = cfg
        self.name = cfg.name
        self.engine = engine
        self.rng = engine.rng(f"service:{cfg.name}")
        self.balancer = make_balancer(cfg.balancer)
        self._in_flight: list[int] = [0] * cfg.servers
        self._draining: list[bool] = [False] * cfg.servers
        self._serving: list[Optional[Job]] = [None] * cfg.servers
        self._queue: deque[Job] = deque()
        self._waiting = 0          # live queued jobs (timed-out entries are skipped lazily)
        self._busy = 0
        self.in_outage = False

        # lifetime counters
        self.arrivals = 0
        self.completions = 0
        self.rejected_overflow = 0
        self.rejected_outage = 0
        self.timeouts = 0

        # time integrals, advanced lazily before each state change
        self._last_t = engine.clock
        self.busy_area = 0.0
        self.server_area = 0.0
        self.n_area = 0.0
        self.time_in_station = 0.0  # summed over departed jobs
        self.departures = 0

        self.instance_events: list[tuple[float, int]] = [(engine.clock, cfg.servers)]

    # -- capacity -----------------------------------------------------------

    @property
    def servers(self) -> int:
        return len(self._in_flight)

    @property
    def busy(self) -> int:
        return self._busy

    @property
    def in_system(self) -> int:
        return self._waiting + self._busy

    def _advance(self, now: float) -> None:
        dt = now - self._last_t
        if dt > 0:
            self.busy_area += self._busy * dt
            self.server_area += len(self._in_flight) * dt
            self.n_area += (self._waiting + self._busy) * dt
            self._last_t = now

    def snapshot(self) -> dict:
        """Copy of the integrals, used to window statistics (e.g. past warmup)."""
        return {
            "busy_area": self.busy_area,
            "server_area": self.server_area,
            "n_area": self.n_area,
            "time_in_station": self.time_in_station,
            "departures": self.departures,
            "arrivals": self.arrivals,
            "completions": self.completions,
        }

    def add_instances(self, k: int, now: float) -> None:
        self._advance(now)
        for _ in range(k):
            self._in_flight.append(0)
            self._draining.append(False)
            self._serving.append(None)
        self.instance_events.append((now, len(self._in_flight)))
        self._try_start(now)

    def remove_instance(self, now: float) -> None:
        """Scale down by one. An idle instance leaves immediately; otherwise one
        busy instance drains: it finishes its current job and is then removed."""
        self._advance(now)
        for i in range(len(self._in_flight)):
            if self._in_flight[i] == 0 and not self._draining[i]:
                self._remove_slot(i, now)
                return
        for i in range(len(self._in_flight)):
            if not self._draining[i]:
                self._draining[i] = True
                return
        # every instance already draining: nothing left to remove

    def _remove_slot(self, i: int, now: float) -> None:
        del self._in_flight[i]
        del self._draining[i]
        del self._serving[i]
        for j in range(i, len(self._serving)):
            job = self._serving[j]
            if job is not None:
                job.instance = j
        self.instance_events.append((now, len(self._in_flight)))

    # -- queue mechanics ----------------------------------------------------

    def offer(self, job: Job, now: float) -> bool:
        """Admit or reject a job. Rejection (overflow/outage) fires the
        outcome callback before returning."""
        self._advance(now)
        job.enqueue_s = now
        if self.in_outage:
            self.rejected_outage += 1
            job.state = JOB_DONE
            job.on_outcome(OUTCOME_OUTAGE, now)
            return False
        self.arrivals += 1
        free = self._free_instance()
        if free is not None:
            self._start(job, free, now)
        else:
            cap = self.cfg.queue_capacity
            if cap is not None and self._waiting >= cap:
                self.rejected_overflow += 1
                job.state = JOB_DONE
                job.on_outcome(OUTCOME_OVERFLOW, now)
                return False
            self._queue.append(job)
            self._waiting += 1
        if self.cfg.timeout_s is not None:
            self.engine.at(now + self.cfg.timeout_s, EventKind.TIMEOUT,
                           lambda t, j=job: self._on_timeout(j, t), payload=job)
        return True

    def _free_instance(self) -> Optional[int]:
        if self._busy >= len(self._in_flight):
            return None
        if isinstance(self.balancer, LeastConnections):
            # free instances all carry zero in-flight; ties break low
            for i, load in enumerate(self._in_flight):
                if load == 0 and not self._draining[i]:
                    return i
            return None
        candidates = [i for i in range(len(self._in_flight))
                      if self._in_flight[i] == 0 and not self._draining[i]]
        if not candidates:
            return None
        if len(candidates) == 1:
            return candidates[0]
        loads = [self._in_flight[i] for i in candidates]
        return candidates[self.balancer.pick(loads)]

    def _start(self, job: Job, instance: int, now: float) -> None:
        self._in_flight[instance] = 1
        self._serving[instance] = job
        self._busy += 1
        if self._busy > len(self._in_flight):
            raise SimulationError(f"station {self.name}: busy servers exceed instances")
        job.state = JOB_SERVING
        job.start_s = now
        job.instance = instance
        base = sample_service_time(self.cfg.service_for(job.kind), self.rng)
        service = base * self._contention_factor()
        self.engine.at(now + service, EventKind.SERVICE_COMPLETE,
                       lambda t, j=job: self._complete(j, t), payload=job)

    def _contention_factor(self) -> float:
        a = self.cfg.contention_alpha
        if a == 0.0:
            return 1.0
        n0 = self.cfg.contention_knee
        return 1.0 + a * max(0, self.in_system - n0) / n0

    def _complete(self, job: Job, now: float) -> None:
        self._advance(now)
        instance = job.instance
        self._in_flight[instance] = 0
        self._serving[instance] = None
        self._busy -= 1
        if self._draining[instance]:
            self._remove_slot(instance, now)
        if job.state == JOB_SERVING:
            job.state = JOB_DONE
            job.done_s = now
            self.completions += 1
            self.departures += 1
            self.time_in_station += now - job.enqueue_s
            job.on_outcome(OUTCOME_SUCCESS, now)
        # a JOB_TIMED_OUT_SERVING job already reported its outcome
        self._try_start(now)

    def _try_start(self, now: float) -> None:
        while True:
            free = self._free_instance()
            if free is None:
                return
            job = self._next_live()
            if job is None:
                return
            self._waiting -= 1
            self._start(job, free, now)

    def _next_live(self) -> Optional[Job]:
        while self._queue:
            job = self._queue.popleft()
            if job.state == JOB_QUEUED:
                return job
        return None

    def _on_timeout(self, job: Job, now: float) -> None:
        if job.state == JOB_QUEUED:
            self._advance(now)
            job.state = JOB_TIMED_OUT
            self._waiting -= 1
            self.timeouts += 1
            self.departures += 1
            self.time_in_station += now - job.enqueue_s
            job.on_outcome(OUTCOME_TIMEOUT, now)
        elif job.state == JOB_SERVING:
            # caller abandons; the server finishes its work regardless
            self._advance(now)
            job.state = JOB_TIMED_OUT_SERVING
            self.timeouts += 1
            self.departures += 1
            self.time_in_station += now - job.enqueue_s
            job.on_outcome(OUTCOME_TIMEOUT, now)

    # -- fault injection ------------------------------------------------------

    def set_outage(self, down: bool, now: float) -> None:
        self._advance(now)
        self.in_outage = down


# ---------------------------------------------------------------------------
# engine

class Engine:
    """Single-threaded event loop owning the clock, the queue and the stations.

    An engine instance is self-contained; run several in parallel for
    replications, never share one across threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.clock = 0.0
        self._heap: list[Event] = []
        self._seq = 0
        self._streams: dict[str, RngStream] = {}
        self.stations: dict[str, Station] = {}

    def rng(self, stream_id: str) -> RngStream:
        st = self._streams.get(stream_id)
        if st is None:
            st = RngStream(self.seed, stream_id)
            self._streams[stream_id] = st
        return st

    def add_station(self, cfg: StationConfig) -> Station:
        if cfg.name in self.stations:
            raise ConfigError(f"duplicate station {cfg.name!r}")
        st = Station(cfg, self)
        self.stations[cfg.name] = st
        return st

    def schedule(self, event: Event) -> None:
        if event.time < self.clock:
            raise SimulationError(
                f"cannot schedule {event.kind.value} at t={event.time} before clock {self.clock}")
        # heap entries are plain tuples so ordering compares at C speed;
        # the sequence counter is unique, so the Event itself never compares
        heapq.heappush(self._heap, (event.time, event.sequence, event))

    def at(self, time: float, kind: EventKind, fn: Callable[[float], None], payload: Any = None) -> Event:
        ev = Event(time, self._seq, kind, fn, payload)
        self._seq += 1
        self.schedule(ev)
        return ev

    def pending_events(self) -> list[Event]:
        return [entry[2] for entry in self._heap]

    def run_until(self, t_end: float) -> None:
        """Execute all events with time <= t_end, then park the clock at t_end."""
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            time, _, ev = heapq.heappop(heap)
            self.clock = time
            ev.fn(time)
        self.clock = t_end
        for st in self.stations.values():
            st._advance(t_end)
