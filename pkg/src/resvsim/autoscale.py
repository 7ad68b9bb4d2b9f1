"""Reactive and predictive instance-count controllers.

Reactive scaling steps one instance at a time after sustained utilization
pressure; predictive scaling sizes each station from forecast demand with
the offered-load rule c = ceil(rate * E[S] / rho_target). Scale-ups take
effect only after the provisioning delay, which is exactly what makes
prediction worth anything; scale-downs drain immediately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .engine import ConfigError, Engine, EventKind, Station
from .analytics.forecast import DemandSeries, Forecast, OracleForecaster, fit_forecaster, predict


@dataclass(frozen=True)
class ScalingPolicy:
    kind: str = "none"                 # none | reactive | predictive
    rho_target: float = 0.6
    up_threshold: float = 0.7
    down_threshold: float = 0.3
    sustain: int = 3                   # consecutive intervals over/under threshold
    cooldown_s: float = 60.0
    interval_s: float = 10.0           # metric tick spacing
    provisioning_delay_s: float = 30.0

    def __post_init__(self):
        if self.kind not in ("none", "reactive", "predictive"):
            raise ConfigError(f"unknown scaling kind {self.kind!r}")
        if not 0.0 < self.rho_target < 1.0:
            raise ConfigError("target utilization must lie in (0, 1)")
        if not self.down_threshold < self.up_threshold:
            raise ConfigError("down threshold must be below the up threshold")
        if self.sustain < 1:
            raise ConfigError("sustain must be >= 1")
        if self.interval_s <= 0:
            raise ConfigError("metric interval must be positive")
        if self.provisioning_delay_s < 0:
            raise ConfigError("provisioning delay must be >= 0")


@dataclass
class ScalingAction:
    station: str
    decided_at_s: float
    effective_at_s: float
    from_count: int
    to_count: int
    trigger: str                       # reactive | predictive
    forecast_value: Optional[float] = None

    def to_json(self) -> dict:
        return {"decided_at_s": self.decided_at_s, "station": self.station,
                "from": self.from_count, "to": self.to_count,
                "effective_at_s": self.effective_at_s, "trigger": self.trigger,
                "forecast_value": self.forecast_value}


def utilization(busy_server_time: float, servers: float, window_s: float) -> float:
    """Fraction of server capacity used over a trailing window."""
    if window_s <= 0:
        raise ConfigError("utilization window must be positive")
    if servers <= 0:
        return 0.0
    return min(1.0, max(0.0, busy_server_time / (servers * window_s)))


def reactive_decide(policy: ScalingPolicy, util_history: list[float], current: int,
                    min_instances: int, max_instances: int,
                    now: float, last_action_at: float) -> Optional[int]:
    """One step up after `sustain` hot intervals, one step down after
    `sustain` cold ones, respecting the cooldown and the [min, max] clamp.
    Returns the target instance count or None."""
    if len(util_history) < policy.sustain:
        return None
    if now - last_action_at < policy.cooldown_s:
        return None
    window = util_history[-policy.sustain:]
    if all(u > policy.up_threshold for u in window) and current < max_instances:
        return current + 1
    if all(u < policy.down_threshold for u in window) and current > min_instances:
        return current - 1
    return None


def _window_rate(forecast: Forecast, forecast_start_s: float, interval_s: float,
                 lo: float, hi: float) -> float:
    i_lo = max(0, int((lo - forecast_start_s) / interval_s))
    i_hi = max(0, int((hi - forecast_start_s) / interval_s))
    idxs = [min(i, forecast.horizon - 1) for i in range(i_lo, i_hi + 1)]
    return max(forecast.predicted[i] for i in idxs) / interval_s


def predictive_decide(policy: ScalingPolicy, forecast: Forecast, mean_service_s: float,
                      current: int, min_instances: int, max_instances: int,
                      now: float, forecast_start_s: float) -> tuple[Optional[int], float]:
    """Size the station for the demand expected once new capacity can be live.

    The driving rate is the max forecast rate over the intervals covering
    [now + delay, now + delay + interval]; the target is
    clamp(ceil(rate * E[S] / rho_target), min, max). Scale-down moves one
    instance per decision and is suppressed while demand between now and the
    lead window still needs the current capacity (capacity removal is
    immediate, so draining must look at the present, not just the future).
    Returns (target or None, driving rate).
    """
    if forecast is None:
        raise ConfigError("predictive scaling requires a forecast")
    d = policy.interval_s
    lo = now + policy.provisioning_delay_s
    rate = _window_rate(forecast, forecast_start_s, d, lo, lo + policy.interval_s)

    def sized(r: float) -> int:
        return max(min_instances, min(max_instances,
                                      math.ceil(r * mean_service_s / policy.rho_target)))

    target = sized(rate)
    if target == current:
        return None, rate
    if target < current:
        hold_rate = _window_rate(forecast, forecast_start_s, d, now, lo + policy.interval_s)
        if sized(hold_rate) >= current:
            return None, rate
        target = current - 1   # conservative drain, one instance per decision
    return target, rate


def apply_action(engine: Engine, station: Station, action: ScalingAction) -> None:
    """Scale-up lands at effective_at (provisioning delay); scale-down starts
    draining immediately."""
    delta = action.to_count - action.from_count
    if delta > 0:
        engine.at(action.effective_at_s, EventKind.SCALE_EFFECTIVE,
                  lambda t: station.add_instances(delta, t), payload=action)
    elif delta < 0:
        for _ in range(-delta):
            station.remove_instance(action.decided_at_s)


class _StationControl:
    __slots__ = ("station", "min", "max", "util_history", "last_busy", "last_server",
                 "pending_up", "last_action_at", "visit_ratio_seed")

    def __init__(self, station: Station, min_i: int, max_i: int, visit_ratio_seed: float):
        self.station = station
        self.min = min_i
        self.max = max_i
        self.util_history: list[float] = []
        self.last_busy = 0.0
        self.last_server = 0.0
        self.pending_up = 0
        self.last_action_at = -math.inf
        self.visit_ratio_seed = visit_ratio_seed


class Autoscaler:
    """Metric-tick driver binding one policy to a set of stations.

    Runs entirely inside the engine's event loop. For predictive policies,
    session demand is forecast once per tick and split across stations by
    their measured visits-per-session ratio (seeded from the grammar
    expectation until data accrues).
    """

    def __init__(self, engine: Engine, policy: ScalingPolicy,
                 limits: dict[str, tuple[int, int]],
                 visit_ratio_seeds: Optional[dict[str, float]] = None,
                 demand_interval_s: float = 10.0,
                 session_counts: Optional[Callable[[float], list[int]]] = None,
                 sessions_started: Optional[Callable[[float], int]] = None,
                 forecaster: str = "seasonal-naive",
                 forecaster_params: Optional[dict] = None,
                 oracle_counts: Optional[list[float]] = None,
                 refit_every: int = 6,
                 cached_station: Optional[str] = None,
                 cache_stats: Optional[Callable[[], tuple[int, int]]] = None):
        self.engine = engine
        self.policy = policy
        self.demand_interval_s = demand_interval_s
        self.session_counts = session_counts
        self.sessions_started = sessions_started
        self.cached_station = cached_station
        self.cache_stats = cache_stats
        self.forecaster_name = forecaster
        self.forecaster_params = dict(forecaster_params or {})
        self.oracle_counts = oracle_counts
        self.refit_every = refit_every
        self.actions: list[ScalingAction] = []
        self.util_log: dict[str, list[tuple[float, float]]] = {}
        self._model = None
        self._fit_at_interval = -1
        seeds = visit_ratio_seeds or {}
        self._controls: dict[str, _StationControl] = {}
        for name, (lo, hi) in limits.items():
            if lo > hi or lo < 1:
                raise ConfigError(f"station {name}: need 1 <= min <= max, got [{lo}, {hi}]")
            st = engine.stations[name]
            self._controls[name] = _StationControl(st, lo, hi, seeds.get(name, 1.0))
            self.util_log[name] = []

    def start(self, horizon_s: float) -> None:
        if self.policy.kind == "none":
            return
        t = self.policy.interval_s
        while t <= horizon_s:
            self.engine.at(t, EventKind.METRIC_TICK, self._on_tick)
            t += self.policy.interval_s

    # -- tick ------------------------------------------------------------------

    def _on_tick(self, now: float) -> None:
        for name, ctl in self._controls.items():
            st = ctl.station
            st._advance(now)
            du = st.busy_area - ctl.last_busy
            ds = st.server_area - ctl.last_server
            ctl.last_busy = st.busy_area
            ctl.last_server = st.server_area
            util = du / ds if ds > 0 else 0.0
            ctl.util_history.append(util)
            self.util_log[name].append((now, util))

        if self.policy.kind == "reactive":
            self._reactive_tick(now)
        else:
            self._predictive_tick(now)

    def _committed(self, ctl: _StationControl) -> int:
        return ctl.station.servers + ctl.pending_up

    def _issue(self, ctl: _StationControl, target: int, trigger: str,
               now: float, forecast_value: Optional[float] = None) -> None:
        current = self._committed(ctl)
        if target < current and ctl.pending_up > 0:
            return   # capacity still provisioning; do not drain under it
        effective = now + self.policy.provisioning_delay_s if target > current else now
        action = ScalingAction(ctl.station.name, now, effective, current, target,
                               trigger, forecast_value)
        self.actions.append(action)
        ctl.last_action_at = now
        if target > current:
            delta = target - current
            ctl.pending_up += delta

            def activate(t: float, ctl=ctl, delta=delta) -> None:
                ctl.station.add_instances(delta, t)
                ctl.pending_up -= delta

            self.engine.at(effective, EventKind.SCALE_EFFECTIVE, activate, payload=action)
        else:
            removable = min(current - target, ctl.station.servers - 1)
            for _ in range(removable):
                ctl.station.remove_instance(now)

    def _reactive_tick(self, now: float) -> None:
        for name, ctl in self._controls.items():
            target = reactive_decide(self.policy, ctl.util_history, self._committed(ctl),
                                     ctl.min, ctl.max, now, ctl.last_action_at)
            if target is not None:
                self._issue(ctl, target, "reactive", now)

    def _predictive_tick(self, now: float) -> None:
        counts = self.session_counts(now) if self.session_counts else []
        model = self._ensure_model(counts)
        if model is None:
            return
        d = self.demand_interval_s
        horizon = int(math.ceil((self.policy.provisioning_delay_s + self.policy.interval_s) / d)) + 1
        if isinstance(model, OracleForecaster):
            fc = Forecast(horizon, model.predict_from(len(counts), horizon), model.model_id)
        else:
            if len(counts) < model.min_history:
                return
            fc = predict(model, counts, horizon)
        forecast_start = len(counts) * d
        for name, ctl in self._controls.items():
            # size on intended demand from the flow structure; shed load must
            # not shrink capacity plans. Only the cache demonstrably removes
            # backend demand, so the cached station is discounted by the
            # measured miss rate.
            ratio = ctl.visit_ratio_seed
            if name == self.cached_station and self.cache_stats is not None:
                hits, misses = self.cache_stats()
                if hits + misses >= 100:
                    ratio *= misses / (hits + misses)
            station_fc = Forecast(fc.horizon, [v * ratio for v in fc.predicted], fc.model_id)
            mean_s = ctl.station.cfg.mean_service_s()
            target, rate = predictive_decide(self.policy, station_fc, mean_s,
                                             self._committed(ctl), ctl.min, ctl.max,
                                             now, forecast_start)
            if target is not None:
                self._issue(ctl, target, "predictive", now, forecast_value=rate)

    def _ensure_model(self, counts: list[int]):
        if self.oracle_counts is not None:
            if self._model is None:
                self._model = OracleForecaster(self.oracle_counts)
            return self._model
        completed = len(counts)
        if self._model is not None and completed - self._fit_at_interval < self.refit_every:
            return self._model
        params = dict(self.forecaster_params)
        try:
            series = DemandSeries(self.demand_interval_s, counts)
            self._model = fit_forecaster(series, self.forecaster_name, params)
            self._fit_at_interval = completed
        except ConfigError:
            return self._model   # not enough history yet
        return self._model
