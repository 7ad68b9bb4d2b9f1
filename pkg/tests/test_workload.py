"""Arrival process, session grammar and behavior trace tests."""

import math

import pytest

from resvsim.engine import ConfigError, Engine
from resvsim.validate import chi2_critical
from resvsim.workload import (
    ArrivalProfile,
    AttributeSampler,
    BehaviorRecord,
    FlowGrammar,
    Spike,
    TraceFormatError,
    expand_session,
    generate_arrivals,
    make_think_dist,
    read_trace,
    write_trace,
)


def _rng(seed=11, name="arrivals"):
    return Engine(seed).rng(name)


# ---------------------------------------------------------------------------
# arrival generation

def test_constant_rate_poisson_count():
    profile = ArrivalProfile(kind="constant", base_rate=5.0)
    times = generate_arrivals(profile, 200.0, _rng())
    assert all(0.0 <= t < 200.0 for t in times)
    assert times == sorted(times)
    # Poisson(1000): count within 3 standard deviations
    assert abs(len(times) - 1000) <= 3 * math.sqrt(1000)


def test_zero_intensity_yields_no_arrivals():
    profile = ArrivalProfile(kind="constant", base_rate=0.0)
    assert generate_arrivals(profile, 500.0, _rng()) == []


def test_diurnal_trough_and_peak_rates():
    """Full-amplitude diurnal profile: empirical rate near zero at the trough
    and near twice the base at the peak, estimated from narrow bins."""
    base, period = 10.0, 1000.0
    profile = ArrivalProfile(kind="diurnal", base_rate=base, amplitude=1.0, period_s=period)
    cycles = 100
    times = generate_arrivals(profile, cycles * period, _rng(17))
    # narrow bins centered on the peak (P/4) and the trough (3P/4)
    width = period / 10
    peak_lo, trough_lo = 0.2 * period, 0.7 * period
    peak_n = sum(1 for t in times if peak_lo <= (t % period) < peak_lo + width)
    trough_n = sum(1 for t in times if trough_lo <= (t % period) < trough_lo + width)
    peak_rate = peak_n / (cycles * width)
    trough_rate = trough_n / (cycles * width)
    # bin-averaged intensities: 2*base*0.984 at the peak, 2*base*0.008 at the trough
    assert abs(peak_rate - 2 * base) / (2 * base) <= 0.10
    assert trough_rate <= 0.05 * base
    # halves of the cycle integrate to base*(1 +- 2A/pi)
    hot = sum(1 for t in times if (t % period) < period / 2) / cycles / (period / 2)
    assert abs(hot - base * (1 + 2 / math.pi)) / (base * (1 + 2 / math.pi)) <= 0.10


def test_thinning_goodness_of_fit_chi_square():
    base, period = 12.0, 600.0
    profile = ArrivalProfile(kind="diurnal", base_rate=base, amplitude=0.8, period_s=period)
    horizon = 12_000.0
    times = generate_arrivals(profile, horizon, _rng(23))
    assert len(times) >= 100_000
    n_bins = 60
    width = horizon / n_bins
    observed = [0] * n_bins
    for t in times:
        observed[min(n_bins - 1, int(t / width))] += 1
    w = 2 * math.pi / period
    expected = [base * (width + 0.8 / w * (math.cos(w * i * width) - math.cos(w * (i + 1) * width)))
                for i in range(n_bins)]
    stat = sum((o - e) ** 2 / e for o, e in zip(observed, expected))
    assert stat <= chi2_critical(n_bins - 1, 0.99)


def test_spike_multipliers_compose_multiplicatively():
    profile = ArrivalProfile(
        kind="spike-overlay", base_rate=2.0,
        spikes=[Spike(10.0, 20.0, 3.0), Spike(15.0, 20.0, 2.0)])
    assert profile.rate_at(5.0) == 2.0
    assert profile.rate_at(12.0) == 6.0
    assert profile.rate_at(16.0) == 12.0   # overlap: 2 * 3 * 2
    assert profile.rate_at(31.0) == 4.0
    assert profile.rate_at(40.0) == 2.0


def test_trace_replay_profile_returns_given_times():
    profile = ArrivalProfile(kind="trace-replay", replay_times=[5.0, 1.0, 9.0, 99.0])
    assert generate_arrivals(profile, 50.0, _rng()) == [1.0, 5.0, 9.0]


def test_invalid_profiles_rejected():
    with pytest.raises(ConfigError):
        ArrivalProfile(kind="constant", base_rate=-1.0)
    with pytest.raises(ConfigError):
        ArrivalProfile(kind="diurnal", amplitude=1.5)
    with pytest.raises(ConfigError):
        Spike(0.0, 10.0, 0.5)
    with pytest.raises(ConfigError):
        ArrivalProfile(kind="trace-replay")


# ---------------------------------------------------------------------------
# sessions

def test_degenerate_grammar_always_full_funnel():
    grammar = FlowGrammar((("search", 1.0), ("book", 1.0), ("pay", 1.0)))
    rng = _rng(5, "sessions")
    for _ in range(50):
        session = expand_session(10.0, grammar, rng)
        assert [s.kind for s in session.steps] == ["search", "book", "pay"]


def test_zero_probability_branch_stops_funnel():
    grammar = FlowGrammar((("search", 1.0), ("book", 0.0)))
    rng = _rng(5, "sessions")
    for _ in range(50):
        session = expand_session(0.0, grammar, rng)
        assert [s.kind for s in session.steps] == ["search"]


def test_branch_probability_converges_to_binomial_fraction():
    grammar = FlowGrammar((("search", 1.0), ("book", 0.3)))
    rng = _rng(31, "sessions")
    n = 100_000
    booked = sum(1 for _ in range(n)
                 if len(expand_session(0.0, grammar, rng).steps) == 2)
    assert abs(booked / n - 0.3) <= 0.01


def test_think_times_accumulate_and_are_nonnegative():
    grammar = FlowGrammar((("search", 1.0), ("view", 1.0), ("book", 1.0)))
    think = make_think_dist({"median_s": 2.0, "sigma": 0.8})
    rng = _rng(7, "sessions")
    session = expand_session(100.0, grammar, rng, think_dist=think)
    offsets = [s.offset_s for s in session.steps]
    assert offsets[0] == 0.0
    assert all(b >= a for a, b in zip(offsets, offsets[1:]))


def test_session_expansion_deterministic_per_seed():
    grammar = FlowGrammar((("search", 1.0), ("view", 0.8), ("book", 0.3)))
    think = make_think_dist({"median_s": 2.0, "sigma": 0.8})
    sampler = AttributeSampler({"destinations": 20})

    def run():
        rng = _rng(13, "sessions")
        return [(s.kind, s.offset_s, s.attributes["destination"])
                for _ in range(200)
                for s in expand_session(0.0, grammar, rng, think_dist=think,
                                        attr_sampler=sampler).steps]

    assert run() == run()


def test_malformed_grammar_rejected():
    with pytest.raises(ConfigError):
        FlowGrammar((("search", 0.5),))   # first step must be certain
    with pytest.raises(ConfigError):
        FlowGrammar((("search", 1.0), ("book", 1.3)))
    with pytest.raises(ConfigError):
        FlowGrammar(())


def test_expected_steps():
    grammar = FlowGrammar((("search", 1.0), ("view", 0.8), ("book", 0.3), ("pay", 0.95)))
    steps = grammar.expected_steps()
    assert steps["search"] == 1.0
    assert steps["view"] == pytest.approx(0.8)
    assert steps["book"] == pytest.approx(0.24)
    assert steps["pay"] == pytest.approx(0.228)


# ---------------------------------------------------------------------------
# behavior traces

def test_trace_round_trip_identity(tmp_path):
    records = [
        BehaviorRecord(1, 10.0, "search", {"destination": "dest-3", "price_band": "budget"}),
        BehaviorRecord(2, 11.5, "book", {"payment_channel": "card"}),
        BehaviorRecord(1, 12.0, "cancel", {}),
    ]
    path = tmp_path / "trace.jsonl"
    write_trace(records, path)
    assert read_trace(path) == records


def test_empty_trace_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_trace(path) == []


def test_missing_field_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"user_id": 1, "timestamp_s": 5.0, "action": "search"}\n'
                    '{"user_id": 2, "action": "book"}\n')
    with pytest.raises(TraceFormatError, match="line 2.*timestamp_s"):
        read_trace(path)


def test_zipf_attribute_sampler_is_skewed():
    sampler = AttributeSampler({"destinations": 50, "zipf_s": 1.1})
    rng = _rng(3, "sessions")
    draws = [sampler.destination(rng) for _ in range(5000)]
    top = draws.count("dest-0") / len(draws)
    tail = draws.count("dest-40") / len(draws)
    assert top > 5 * max(tail, 1e-9)
