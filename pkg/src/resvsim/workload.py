"""Synthetic demand: arrival processes, session expansion and behavior logs.

Arrivals come from a non-homogeneous Poisson process sampled by thinning
against a piecewise bound. Sessions unroll a funnel grammar (search ->
view -> book -> pay with branch probabilities) into typed requests with
think-time offsets, and every step also emits a behavior record for the
analytics pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .engine import ConfigError, RngStream, make_dist, sample_service_time


@dataclass(frozen=True)
class Spike:
    start_s: float
    duration_s: float
    multiplier: float

    def __post_init__(self):
        if self.multiplier < 1.0:
            raise ConfigError(f"spike multiplier must be >= 1, got {self.multiplier}")
        if self.duration_s <= 0:
            raise ConfigError("spike duration must be positive")

    def active(self, t: float) -> bool:
        return self.start_s <= t < self.start_s + self.duration_s


@dataclass
class ArrivalProfile:
    """Arrival intensity lambda(t) in sessions per second.

    kinds: constant, diurnal (sinusoid around the base rate), spike-overlay
    (multiplicative spikes on top of constant/diurnal), trace-replay
    (explicit arrival times, no sampling).
    """

    kind: str = "constant"
    base_rate: float = 1.0
    amplitude: float = 0.0          # diurnal swing as a fraction of base in [0, 1]
    period_s: float = 3600.0
    spikes: list[Spike] = field(default_factory=list)
    replay_times: Optional[list[float]] = None

    def __post_init__(self):
        if self.kind not in ("constant", "diurnal", "spike-overlay", "trace-replay"):
            raise ConfigError(f"unknown arrival profile kind {self.kind!r}")
        if self.base_rate < 0 or not math.isfinite(self.base_rate):
            raise ConfigError("base rate must be finite and >= 0")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ConfigError("diurnal amplitude must lie in [0, 1]")
        if self.period_s <= 0:
            raise ConfigError("diurnal period must be positive")
        if self.kind == "trace-replay" and self.replay_times is None:
            raise ConfigError("trace-replay profile needs replay_times")

    @classmethod
    def from_config(cls, cfg: dict) -> "ArrivalProfile":
        spikes = [Spike(float(s["start_s"]), float(s["duration_s"]), float(s["multiplier"]))
                  for s in cfg.get("spikes", [])]
        return cls(
            kind=cfg.get("kind", "constant"),
            base_rate=float(cfg.get("base_rate", 1.0)),
            amplitude=float(cfg.get("amplitude", 0.0)),
            period_s=float(cfg.get("period_s", 3600.0)),
            spikes=spikes,
            replay_times=cfg.get("replay_times"),
        )

    def rate_at(self, t: float) -> float:
        if self.kind == "trace-replay":
            raise ConfigError("trace-replay profile has no intensity function")
        rate = self.base_rate
        if self.kind in ("diurnal", "spike-overlay") and self.amplitude > 0:
            rate *= 1.0 + self.amplitude * math.sin(2.0 * math.pi * t / self.period_s)
        for spike in self.spikes:
            if spike.active(t):
                rate *= spike.multiplier
        return max(rate, 0.0)

    def _segment_bounds(self, horizon: float) -> list[tuple[float, float, float]]:
        """(start, end, rate bound) segments; the bound is exact per segment so
        thinning acceptance stays efficient even with large spike multipliers."""
        cuts = {0.0, horizon}
        for s in self.spikes:
            if s.start_s < horizon:
                cuts.add(max(0.0, s.start_s))
                cuts.add(min(horizon, s.start_s + s.duration_s))
        edges = sorted(cuts)
        segments = []
        for a, b in zip(edges, edges[1:]):
            if b <= a:
                continue
            mult = 1.0
            mid = (a + b) / 2.0
            for s in self.spikes:
                if s.active(mid):
                    mult *= s.multiplier
            bound = self.base_rate * (1.0 + self.amplitude) * mult
            segments.append((a, b, bound))
        return segments


def generate_arrivals(profile: ArrivalProfile, horizon_s: float, rng: RngStream) -> list[float]:
    """Sample sorted arrival times on [0, horizon) from the profile intensity.

    Thinning: candidates at the per-segment bound rate, accepted with
    probability lambda(t)/bound.
    """
    if profile.kind == "trace-replay":
        times = sorted(t for t in profile.replay_times or [] if 0.0 <= t < horizon_s)
        return [float(t) for t in times]
    arrivals: list[float] = []
    for seg_start, seg_end, bound in profile._segment_bounds(horizon_s):
        if bound <= 0:
            continue
        t = seg_start
        while True:
            t += rng.exponential(1.0 / bound)
            if t >= seg_end:
                break
            if rng.random() * bound <= profile.rate_at(t):
                arrivals.append(t)
    return arrivals


# ---------------------------------------------------------------------------
# sessions

@dataclass(frozen=True)
class FlowGrammar:
    """Funnel of (step kind, probability of reaching it given the previous step).

    The first entry has probability 1.0: every session starts there.
    """

    funnel: tuple[tuple[str, float], ...]

    def __post_init__(self):
        if not self.funnel:
            raise ConfigError("flow grammar must contain at least one step")
        for step, p in self.funnel:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"grammar probability for {step!r} must lie in [0, 1], got {p}")
        if self.funnel[0][1] != 1.0:
            raise ConfigError("first grammar step must have probability 1.0")

    @classmethod
    def from_config(cls, cfg: dict) -> "FlowGrammar":
        return cls(tuple((str(k), float(p)) for k, p in cfg["funnel"]))

    def expected_steps(self) -> dict[str, float]:
        """Expected number of each step kind per session."""
        out = {}
        reach = 1.0
        for step, p in self.funnel:
            reach *= p
            out[step] = out.get(step, 0.0) + reach
        return out


@dataclass
class SessionStep:
    kind: str
    offset_s: float                # think-time offset from the session arrival
    attributes: dict = field(default_factory=dict)


@dataclass
class Session:
    user_id: int
    session_id: int
    start_s: float
    steps: list[SessionStep]
    segment_label: Optional[int] = None   # assigned by clustering, when run


class AttributeSampler:
    """Draws per-step attributes: Zipf-distributed destination (doubles as the
    cache key), price band and payment channel."""

    def __init__(self, cfg: dict):
        n = int(cfg.get("destinations", 50))
        s = float(cfg.get("zipf_s", 1.1))
        if n < 1:
            raise ConfigError("need at least one destination")
        weights = [1.0 / (r ** s) for r in range(1, n + 1)]
        total = sum(weights)
        self._cdf = []
        acc = 0.0
        for w in weights:
            acc += w / total
            self._cdf.append(acc)
        self.price_bands = list(cfg.get("price_bands", ["budget", "standard", "premium"]))
        self.payment_channels = list(cfg.get("payment_channels", ["card", "wallet", "bank"]))

    def destination(self, rng: RngStream) -> str:
        u = rng.random()
        for i, c in enumerate(self._cdf):
            if u <= c:
                return f"dest-{i}"
        return f"dest-{len(self._cdf) - 1}"

    def sample(self, rng: RngStream) -> dict:
        return {
            "destination": self.destination(rng),
            "price_band": self.price_bands[int(rng.random() * len(self.price_bands)) % len(self.price_bands)],
            "payment_channel": self.payment_channels[int(rng.random() * len(self.payment_channels)) % len(self.payment_channels)],
        }


def expand_session(arrival_s: float, grammar: FlowGrammar, rng: RngStream,
                   think_dist=None, attr_sampler: Optional[AttributeSampler] = None,
                   user_id: int = 0, session_id: int = 0) -> Session:
    """Unroll one session: sample the funnel, think times and attributes.

    Steps are offered to the topology at arrival + cumulative think time;
    the first step fires at the arrival itself.
    """
    steps: list[SessionStep] = []
    offset = 0.0
    attrs = attr_sampler.sample(rng) if attr_sampler else {}
    for i, (kind, p) in enumerate(grammar.funnel):
        if i == 0:
            taken = True
        else:
            taken = rng.random() < p
        if not taken:
            break
        if i > 0:
            think = sample_service_time(think_dist, rng) if think_dist is not None else 0.0
            offset += max(0.0, think)
        steps.append(SessionStep(kind=kind, offset_s=offset, attributes=dict(attrs)))
    return Session(user_id=user_id, session_id=session_id, start_s=arrival_s, steps=steps)


# ---------------------------------------------------------------------------
# behavior records

BEHAVIOR_ACTIONS = ("search", "view", "book", "pay", "cancel")
_REQUIRED_FIELDS = ("user_id", "timestamp_s", "action")


@dataclass
class BehaviorRecord:
    user_id: int
    timestamp_s: float
    action: str
    attributes: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"user_id": self.user_id, "timestamp_s": self.timestamp_s,
                "action": self.action, "attributes": self.attributes}


class TraceFormatError(ValueError):
    """Malformed behavior trace line, reported with its line number."""


def write_trace(records: list[BehaviorRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def read_trace(path) -> list[BehaviorRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line {lineno}: invalid JSON ({exc})") from exc
            for fld in _REQUIRED_FIELDS:
                if fld not in obj:
                    raise TraceFormatError(f"line {lineno}: missing field {fld!r}")
            records.append(BehaviorRecord(
                user_id=obj["user_id"],
                timestamp_s=float(obj["timestamp_s"]),
                action=obj["action"],
                attributes=obj.get("attributes", {}),
            ))
    return records


def make_think_dist(cfg: dict):
    spec = dict(cfg)
    spec.setdefault("kind", "lognormal")
    return make_dist(spec)
