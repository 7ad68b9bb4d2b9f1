"""Architecture builders, resilience policies, broker and flow semantics."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resvsim.config import merge_defaults
from resvsim.engine import (
    ConfigError,
    Engine,
    EventKind,
    LeastConnections,
    RoundRobin,
)
from resvsim.experiment import Simulation, run_single
from resvsim.topology import (
    Breaker,
    BreakerConfig,
    CachePolicy,
    FlowDriver,
    Hop,
    LruTtlCache,
    RetryPolicy,
    ServiceTopology,
    breaker_on_result,
    build_microservices,
    build_monolith,
    cache_lookup,
    default_flows,
    expected_station_visits,
    monolith_step_means,
    retry_wrap,
    route,
)
from resvsim.workload import FlowGrammar


def _config(**overrides):
    cfg = merge_defaults({})
    for key, val in overrides.items():
        cfg[key] = val
    return cfg


# ---------------------------------------------------------------------------
# builders

def test_microservices_default_builds_seven_stations():
    topo = build_microservices(_config())
    assert len(topo.stations) == 7
    assert topo.sync_hop_count("search") == 2
    assert [h.mode for h in topo.flows["book"]] == ["sync", "sync", "sync", "async"]


def test_missing_service_definition_is_an_error():
    cfg = _config()
    del cfg["topology"]["services"]["notification"]
    with pytest.raises(ConfigError, match="notification"):
        build_microservices(cfg)


def test_monolith_step_sums_include_async_exclude_gateway():
    means = monolith_step_means(_config())
    # book: booking 0.20 + payment 0.25 + notification 0.05 (inline)
    assert means["book"] == pytest.approx(0.50)
    assert means["search"] == pytest.approx(0.12)
    assert means["view"] == pytest.approx(0.15)
    assert means["pay"] == pytest.approx(0.08 + 0.25 + 0.05)


def test_monolith_contention_factor_hand_values():
    cfg = _config()
    cfg["topology"]["monolith"].update({"alpha": 1.0, "knee": 50})
    topo = build_monolith(cfg)
    eng = Engine(1)
    driver = FlowDriver(eng, topo)
    station = driver.stations["monolith"]
    station._waiting = 100 - station.busy   # force n = 100
    assert station._contention_factor() == pytest.approx(2.0)
    station._waiting = 0
    assert station._contention_factor() == 1.0   # n <= knee


def test_monolith_alpha_zero_disables_contention():
    cfg = _config()
    cfg["topology"]["monolith"].update({"alpha": 0.0})
    topo = build_monolith(cfg)
    eng = Engine(1)
    st = FlowDriver(eng, topo).stations["monolith"]
    st._waiting = 10_000
    assert st._contention_factor() == 1.0


def test_monolith_invalid_contention_rejected():
    cfg = _config()
    cfg["topology"]["monolith"]["alpha"] = -0.5
    with pytest.raises(ConfigError):
        build_monolith(cfg)
    cfg = _config()
    cfg["topology"]["monolith"]["knee"] = 0
    with pytest.raises(ConfigError):
        build_monolith(cfg)


def test_flow_referencing_unknown_station_rejected():
    with pytest.raises(ConfigError, match="unknown station"):
        ServiceTopology(architecture="microservices",
                        stations={}, flows={"x": [Hop("ghost")]})


def test_sync_flow_revisit_rejected():
    cfg = _config()
    cfg["topology"]["flows"] = {"search": [["gateway", "sync"], ["search", "sync"],
                                           ["gateway", "sync"]]}
    with pytest.raises(ConfigError, match="acyclic"):
        build_microservices(cfg)


# ---------------------------------------------------------------------------
# routing

def test_round_robin_cycles_indices():
    rr = RoundRobin()
    picks = [route(rr, [0, 0, 0]) for _ in range(4)]
    assert picks == [0, 1, 2, 0]


def test_least_connections_argmin_and_tie():
    lc = LeastConnections()
    assert route(lc, [2, 0, 1]) == 1
    assert route(lc, [1, 1]) == 0


def test_route_empty_instances_error():
    with pytest.raises(ConfigError):
        route(LeastConnections(), [])


# ---------------------------------------------------------------------------
# cache

def _cache(capacity=2, ttl=10.0):
    return LruTtlCache(CachePolicy(capacity=capacity, ttl_s=ttl))


def test_cache_hit_within_ttl():
    cache = _cache()
    cache.put("a", 0.0)
    assert cache_lookup(cache, "a", 5.0) is True


def test_cache_miss_after_ttl():
    cache = _cache()
    cache.put("a", 0.0)
    assert cache_lookup(cache, "a", 10.5) is False


def test_lru_eviction_order():
    cache = _cache(capacity=2)
    cache.put("a", 0.0)
    cache.put("b", 1.0)
    cache.put("c", 2.0)
    assert cache_lookup(cache, "a", 3.0) is False   # evicted by c


def test_cache_backend_rate_matches_miss_share():
    """With hit ratio h over a Zipf key stream, the backend sees (1-h) of the
    offered search traffic (within 2 percent)."""
    cfg = merge_defaults({
        "sim": {"horizon_s": 400.0, "warmup_frac": 0.0},
        "workload": {
            "profile": {"kind": "constant", "base_rate": 12.0},
            "grammar": {"funnel": [["search", 1.0]]},
            "attributes": {"destinations": 200, "zipf_s": 1.1},
        },
        "scaling": {"kind": "none"},
        "topology": {"services": {"search": {"servers": 4}}},
    })
    sim = Simulation(cfg, 101)
    sim.run()
    cache = sim.driver.cache
    offered = cache.hits + cache.misses
    station_arrivals = sim.driver.stations["search"].arrivals
    hit_ratio = cache.hits / offered
    assert 0.05 < hit_ratio < 0.99
    assert abs(station_arrivals - (1 - hit_ratio) * offered) <= 0.02 * offered


def test_cache_disabled_sends_all_searches_to_backend():
    cfg = merge_defaults({
        "sim": {"horizon_s": 200.0, "warmup_frac": 0.0},
        "workload": {
            "profile": {"kind": "constant", "base_rate": 10.0},
            "grammar": {"funnel": [["search", 1.0]]},
        },
        "scaling": {"kind": "none"},
        "topology": {"cache": {"enabled": False},
                     "services": {"search": {"servers": 4}}},
    })
    sim = Simulation(cfg, 102)
    trace = sim.run()
    assert sim.driver.cache is None
    arrivals = sim.driver.stations["search"].arrivals
    # every search that reached its backend hop hit the station directly
    assert arrivals == sim.driver.hop_demand["search"]
    in_flight = sum(trace.in_flight().values())
    assert trace.generated["search"] - in_flight <= arrivals <= trace.generated["search"]


# ---------------------------------------------------------------------------
# circuit breaker

def test_breaker_opens_after_threshold():
    br = Breaker(BreakerConfig(threshold=3, cooldown_s=5.0))
    breaker_on_result(br, "timeout", 1.0)
    breaker_on_result(br, "timeout", 2.0)
    assert br.state == "closed"
    breaker_on_result(br, "timeout", 3.0)
    assert br.state == "open"
    assert br.open_until == 8.0
    assert br.allow(4.0) is False


def test_breaker_probe_after_cooldown():
    br = Breaker(BreakerConfig(threshold=1, cooldown_s=5.0))
    br.on_result(False, 0.0)
    assert br.state == "open"
    assert br.allow(5.5) is True      # the probe
    assert br.state == "half-open"
    assert br.allow(5.6) is False     # single probe at a time


def test_breaker_half_open_success_closes_and_resets():
    br = Breaker(BreakerConfig(threshold=2, cooldown_s=5.0))
    br.on_result(False, 0.0)
    br.on_result(False, 0.5)
    br.allow(6.0)
    br.on_result(True, 6.2)
    assert br.state == "closed"
    assert br.consecutive_failures == 0


def test_breaker_half_open_failure_reopens():
    br = Breaker(BreakerConfig(threshold=1, cooldown_s=5.0))
    br.on_result(False, 0.0)
    br.allow(6.0)
    br.on_result(False, 6.5)
    assert br.state == "open"
    assert br.open_until == 11.5


_ALLOWED_TRANSITIONS = {
    ("closed", "open"), ("open", "half-open"),
    ("half-open", "closed"), ("half-open", "open"),
}


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(min_value=0.01, max_value=20.0)),
                min_size=1, max_size=60))
def test_breaker_reachable_states_property(events):
    """No driving sequence produces a transition outside the allowed set."""
    br = Breaker(BreakerConfig(threshold=3, cooldown_s=5.0))
    now = 0.0
    for success, dt in events:
        now += dt
        if br.allow(now):
            br.on_result(success, now)
    assert set(br.transitions) <= _ALLOWED_TRANSITIONS


# ---------------------------------------------------------------------------
# retries

def test_retry_first_attempt_success():
    outcome, elapsed, attempts = retry_wrap(
        RetryPolicy(max_attempts=3, backoff_s=0.5), lambda a: ("success", 1.0))
    assert (outcome, elapsed, attempts) == ("success", 1.0, 1)


def test_retry_includes_backoffs_in_elapsed():
    script = {1: ("timeout", 2.0), 2: ("timeout", 2.0), 3: ("success", 1.0)}
    outcome, elapsed, attempts = retry_wrap(
        RetryPolicy(max_attempts=3, backoff_s=0.5), lambda a: script[a])
    assert outcome == "success"
    assert attempts == 3
    assert elapsed == pytest.approx(2.0 + 0.5 + 2.0 + 0.5 + 1.0)


def test_retry_exhaustion_keeps_last_reason():
    outcome, elapsed, attempts = retry_wrap(
        RetryPolicy(max_attempts=3, backoff_s=0.5), lambda a: ("queue-overflow", 0.1))
    assert outcome == "queue-overflow"
    assert attempts == 3


def test_retry_does_not_retry_hard_failures():
    outcome, _, attempts = retry_wrap(
        RetryPolicy(max_attempts=3, backoff_s=0.5), lambda a: ("outage", 0.1))
    assert (outcome, attempts) == ("outage", 1)


# ---------------------------------------------------------------------------
# broker and async semantics

def test_broker_delivery_latency():
    cfg = _config()
    cfg["topology"]["network"]["broker_latency_s"] = 0.05
    topo = build_microservices(cfg)
    eng = Engine(1)
    driver = FlowDriver(eng, topo)
    delivered = []
    eng.at(10.0, EventKind.ARRIVAL,
           lambda t: driver.broker.publish(driver.stations["notification"], "book", t,
                                           lambda o, tt: delivered.append(tt)))
    eng.run_until(20.0)
    assert driver.broker.published == 1
    assert driver.broker.delivered == 1
    # delivered at 10.05, completion shortly after
    assert delivered and delivered[0] >= 10.05


def test_broker_conservation_100_publishes():
    topo = build_microservices(_config())
    eng = Engine(2)
    driver = FlowDriver(eng, topo)
    for i in range(100):
        eng.at(1.0 + i * 0.01, EventKind.ARRIVAL,
               lambda t: driver.broker.publish(driver.stations["notification"], "book", t,
                                               lambda o, tt: None))
    eng.run_until(100.0)
    assert driver.broker.published == 100
    assert driver.broker.delivered == 100


def test_async_hops_do_not_affect_response_time():
    """The booking response lands when payment completes; notification work
    runs later through the broker without touching the client-visible time."""
    cfg = merge_defaults({
        "sim": {"horizon_s": 300.0, "warmup_frac": 0.0},
        "workload": {
            "profile": {"kind": "constant", "base_rate": 2.0},
            "grammar": {"funnel": [["book", 1.0]]},
        },
        "scaling": {"kind": "none"},
    })
    # make the async notification service glacial: if it contributed to
    # response time, the means would be seconds apart
    cfg["topology"]["services"]["notification"]["mean_s"] = 30.0
    cfg["topology"]["services"]["notification"]["servers"] = 64
    sim = Simulation(cfg, 103)
    trace = sim.run()
    ok = [r for r in trace.requests if r.outcome == "success"]
    assert ok
    for rec in ok:
        assert {h.station for h in rec.hops} <= {"gateway", "booking", "payment"}
        assert rec.response_s == pytest.approx(rec.hops[-1].done_s - rec.arrival_s)
    assert trace.broker_published == len(trace.requests)


def test_saturated_async_consumer_leaves_publisher_latency_unchanged():
    base = {
        "sim": {"horizon_s": 400.0, "warmup_frac": 0.1},
        "workload": {
            "profile": {"kind": "constant", "base_rate": 2.0},
            "grammar": {"funnel": [["book", 1.0]]},
        },
        "scaling": {"kind": "none"},
    }
    slow = merge_defaults(base)
    # consumer capacity far below the publish rate: messages pile up
    slow["topology"]["services"]["notification"]["mean_s"] = 5.0
    slow["topology"]["services"]["notification"]["queue_capacity"] = None
    slow["topology"]["services"]["notification"]["timeout_s"] = None
    fast = merge_defaults(base)
    _, slow_rep = run_single(slow, 104)
    _, fast_rep = run_single(fast, 104)
    assert slow_rep.mean_response_s == pytest.approx(fast_rep.mean_response_s, rel=1e-9)


# ---------------------------------------------------------------------------
# architecture equivalence in the degenerate case

def test_monolith_equals_microservices_when_degenerate():
    """alpha=0, one instance everywhere, no transport, no cache/breaker, and
    the monolith summing exactly the same step times: mean responses agree
    within 3 percent at light load."""
    base = {
        "sim": {"horizon_s": 60_000.0, "warmup_frac": 0.05},
        "workload": {
            "profile": {"kind": "constant", "base_rate": 0.3},
            "grammar": {"funnel": [["search", 1.0]]},
            "think_time": {"kind": "deterministic", "value_s": 0.0},
        },
        "topology": {
            "network": {"gateway_overhead_s": 0.0, "hop_latency_s": 0.0},
            "services": {"gateway": {"servers": 1}, "search": {"servers": 1}},
            "cache": {"enabled": False},
            "breaker": {"enabled": False},
            "retry": {"max_attempts": 1},
            "monolith": {"servers": 1, "alpha": 0.0, "knee": 1,
                         "queue_capacity": None, "timeout_s": None,
                         "exclude_steps": []},
        },
        "scaling": {"kind": "none"},
    }
    micro_cfg = merge_defaults(base)
    for svc in micro_cfg["topology"]["services"].values():
        svc["queue_capacity"] = None
        svc["timeout_s"] = None
    mono_cfg = merge_defaults(base)
    mono_cfg["architecture"] = "monolith"
    _, micro = run_single(micro_cfg, 107)
    _, mono = run_single(mono_cfg, 107)
    assert micro.requests_ok > 10_000 and mono.requests_ok > 10_000
    diff = abs(micro.mean_response_s - mono.mean_response_s) / mono.mean_response_s
    assert diff <= 0.03


def test_expected_station_visits():
    grammar = FlowGrammar((("search", 1.0), ("view", 0.8), ("book", 0.3), ("pay", 0.95)))
    visits = expected_station_visits(grammar, default_flows())
    assert visits["gateway"] == pytest.approx(1.0 + 0.8 + 0.24 + 0.228)
    assert visits["payment"] == pytest.approx(0.24 + 0.228)
    assert visits["recommendation"] == pytest.approx(0.8)
