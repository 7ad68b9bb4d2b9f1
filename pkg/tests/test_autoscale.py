"""Scaling controller tests: sizing rules, timing, and bounds."""

import pytest

from resvsim.analytics.forecast import Forecast
from resvsim.autoscale import (
    ScalingAction,
    ScalingPolicy,
    apply_action,
    predictive_decide,
    reactive_decide,
    utilization,
)
from resvsim.engine import ConfigError, Deterministic, Engine, EventKind, Job, StationConfig
from resvsim.experiment import Simulation
from resvsim.scenarios import get_scenario


def _policy(**kw):
    defaults = dict(kind="reactive", rho_target=0.6, up_threshold=0.7,
                    down_threshold=0.3, sustain=3, cooldown_s=60.0,
                    interval_s=10.0, provisioning_delay_s=30.0)
    defaults.update(kw)
    return ScalingPolicy(**defaults)


# ---------------------------------------------------------------------------
# utilization

def test_utilization_idle_station_is_zero():
    assert utilization(0.0, 2, 10.0) == 0.0


def test_utilization_fully_busy_single_server():
    assert utilization(10.0, 1, 10.0) == 1.0


def test_utilization_half_busy_one_of_two():
    # 2 servers, one busy half the window: 5 busy-seconds / 20 server-seconds
    assert utilization(5.0, 2, 10.0) == 0.25


def test_utilization_requires_positive_window():
    with pytest.raises(ConfigError):
        utilization(1.0, 1, 0.0)


# ---------------------------------------------------------------------------
# reactive

def test_reactive_scales_up_after_sustained_heat():
    target = reactive_decide(_policy(), [0.9, 0.9, 0.9], current=2,
                             min_instances=1, max_instances=8,
                             now=100.0, last_action_at=-1e9)
    assert target == 3


def test_reactive_requires_consecutive_intervals():
    target = reactive_decide(_policy(), [0.9, 0.5, 0.9], current=2,
                             min_instances=1, max_instances=8,
                             now=100.0, last_action_at=-1e9)
    assert target is None


def test_reactive_clamped_at_max():
    target = reactive_decide(_policy(), [0.95, 0.95, 0.95], current=8,
                             min_instances=1, max_instances=8,
                             now=100.0, last_action_at=-1e9)
    assert target is None


def test_reactive_scales_down_when_cold():
    target = reactive_decide(_policy(), [0.1, 0.1, 0.1], current=4,
                             min_instances=2, max_instances=8,
                             now=100.0, last_action_at=-1e9)
    assert target == 3


def test_reactive_honors_cooldown():
    target = reactive_decide(_policy(cooldown_s=60.0), [0.9, 0.9, 0.9], current=2,
                             min_instances=1, max_instances=8,
                             now=100.0, last_action_at=70.0)
    assert target is None


# ---------------------------------------------------------------------------
# predictive

def _forecast(rates_per_interval, interval=10.0):
    return Forecast(len(rates_per_interval),
                    [r * interval for r in rates_per_interval], "test")


def test_predictive_offered_load_sizing_rule():
    # rate 8/s, E[S]=0.25 s, rho*=0.5 -> ceil(2 / 0.5) = 4
    policy = _policy(kind="predictive", rho_target=0.5)
    forecast = _forecast([8.0] * 5)
    target, rate = predictive_decide(policy, forecast, 0.25, current=1,
                                     min_instances=1, max_instances=10,
                                     now=0.0, forecast_start_s=0.0)
    assert rate == pytest.approx(8.0)
    assert target == 4


def test_predictive_zero_demand_clamps_to_min():
    policy = _policy(kind="predictive")
    target, _ = predictive_decide(policy, _forecast([0.0] * 5), 0.25, current=3,
                                  min_instances=2, max_instances=10,
                                  now=0.0, forecast_start_s=0.0)
    # conservative drain: one instance per decision toward the min
    assert target == 2


def test_predictive_no_action_when_target_matches():
    policy = _policy(kind="predictive", rho_target=0.5)
    target, _ = predictive_decide(policy, _forecast([8.0] * 5), 0.25, current=4,
                                  min_instances=1, max_instances=10,
                                  now=0.0, forecast_start_s=0.0)
    assert target is None


def test_predictive_uses_lead_window():
    # demand is low now but spikes inside [now+delay, now+delay+interval]
    policy = _policy(kind="predictive", rho_target=0.5, provisioning_delay_s=30.0)
    forecast = _forecast([1.0, 1.0, 1.0, 8.0, 8.0])
    target, rate = predictive_decide(policy, forecast, 0.25, current=1,
                                     min_instances=1, max_instances=10,
                                     now=0.0, forecast_start_s=0.0)
    assert rate == pytest.approx(8.0)
    assert target == 4


def test_predictive_drain_suppressed_while_present_needs_capacity():
    # the lead window is cold, but the current interval is still hot
    policy = _policy(kind="predictive", rho_target=0.5, provisioning_delay_s=30.0)
    forecast = _forecast([8.0, 8.0, 8.0, 1.0, 1.0])
    target, _ = predictive_decide(policy, forecast, 0.25, current=4,
                                  min_instances=1, max_instances=10,
                                  now=0.0, forecast_start_s=0.0)
    assert target is None


def test_policy_validation():
    with pytest.raises(ConfigError):
        ScalingPolicy(kind="reactive", up_threshold=0.3, down_threshold=0.5)
    with pytest.raises(ConfigError):
        ScalingPolicy(kind="predictive", rho_target=1.2)
    with pytest.raises(ConfigError):
        ScalingPolicy(kind="sometimes")


# ---------------------------------------------------------------------------
# applying actions

def test_scale_up_lands_after_provisioning_delay():
    eng = Engine(1)
    st = eng.add_station(StationConfig("svc", servers=1, service=Deterministic(0.1)))
    action = ScalingAction("svc", decided_at_s=100.0, effective_at_s=130.0,
                           from_count=1, to_count=2, trigger="predictive")
    eng.at(100.0, EventKind.METRIC_TICK, lambda t: apply_action(eng, st, action))
    eng.run_until(129.0)
    assert st.servers == 1
    eng.run_until(131.0)
    assert st.servers == 2


def test_scale_down_drains_busy_server():
    eng = Engine(1)
    st = eng.add_station(StationConfig("svc", servers=2, service=Deterministic(5.0)))
    eng.at(1.0, EventKind.ARRIVAL, lambda t: st.offer(Job("job", lambda o, tt: None), t))
    eng.at(1.0, EventKind.ARRIVAL, lambda t: st.offer(Job("job", lambda o, tt: None), t))
    action = ScalingAction("svc", 2.0, 2.0, from_count=2, to_count=1, trigger="reactive")
    eng.at(2.0, EventKind.METRIC_TICK, lambda t: apply_action(eng, st, action))
    eng.run_until(3.0)
    assert st.servers == 2       # both still finishing
    eng.run_until(10.0)
    assert st.servers == 1       # capacity dropped as the first freed


def test_noop_policy_leaves_counts_alone():
    cfg = get_scenario("micro_ref")
    cfg["sim"]["horizon_s"] = 120.0
    cfg["scaling"]["kind"] = "none"
    sim = Simulation(cfg, 7)
    sim.run()
    for name, st in sim.driver.stations.items():
        assert len(st.instance_events) == 1, name


def test_instance_counts_stay_within_limits_through_a_spiky_run():
    cfg = get_scenario("spike_predictive")
    cfg["sim"]["horizon_s"] = 700.0
    sim = Simulation(cfg, 5)
    trace = sim.run()
    limits = cfg["scaling"]["limits"]
    assert trace.scaling_actions, "expected scaling activity"
    for name, (lo, hi) in limits.items():
        counts = [c for _, c in trace.stations[name].instance_events]
        assert all(lo <= c <= hi for c in counts), (name, counts)
    for action in trace.scaling_actions:
        lo, hi = limits[action.station]
        assert lo <= action.to_count <= hi


def test_scaling_actions_logged_with_trigger_and_forecast():
    cfg = get_scenario("spike_predictive")
    cfg["sim"]["horizon_s"] = 700.0
    sim = Simulation(cfg, 5)
    trace = sim.run()
    ups = [a for a in trace.scaling_actions if a.to_count > a.from_count]
    assert ups
    for action in ups:
        assert action.trigger == "predictive"
        assert action.forecast_value is not None
        assert action.effective_at_s == pytest.approx(
            action.decided_at_s + cfg["scaling"]["provisioning_delay_s"])


def test_predictive_anticipates_recurring_surge():
    """Capacity must be in place at surge onset: a scale-up decided at least
    one provisioning delay before a later spike starts."""
    cfg = get_scenario("spike_predictive")
    sim = Simulation(cfg, 9)
    trace = sim.run()
    onset = 750.0   # third spike; forecaster has seen two full periods
    ups = [a for a in trace.scaling_actions
           if a.to_count > a.from_count and onset - 40.0 <= a.effective_at_s <= onset]
    assert ups, "no anticipatory scale-up before the surge"
