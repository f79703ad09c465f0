from __future__ import annotations

import math

import numpy as np
import pytest

from fedsim.population import (
    AvailabilityTrace,
    DeviceProfile,
    always_available,
    apply_speed_transform,
    availability_probability,
    available_until,
    completion_time,
    generate_diurnal_traces,
    is_available,
    load_traces_csv,
    sample_profiles,
)


def test_sample_profiles_positive_and_deterministic():
    a = sample_profiles(50, seed=3)
    b = sample_profiles(50, seed=3)
    assert all(p.per_sample_compute_time > 0 for p in a)
    assert all(p.uplink_bandwidth > 0 and p.downlink_bandwidth > 0 for p in a)
    assert [p.per_sample_compute_time for p in a] == [p.per_sample_compute_time for p in b]
    assert {p.cluster_id for p in a} <= set(range(6))


def test_sample_profiles_long_tail():
    # frozen from an oracle run: the fleet's compute-time tail is heavy
    profs = sample_profiles(1000, seed=5)
    times = np.array([p.per_sample_compute_time for p in profs])
    assert times.max() / np.median(times) >= 5.0


def test_profile_rejects_nonpositive_rates():
    with pytest.raises(ValueError):
        DeviceProfile(0.0, 1.0, 1.0, 0)
    with pytest.raises(ValueError):
        DeviceProfile(0.1, -1.0, 1.0, 0)


def test_speed_transform_halves_completion_of_fastest_quarter():
    profs = sample_profiles(100, seed=7)
    boosted = apply_speed_transform(profs, 0.25, 2.0)
    order = sorted(range(100), key=lambda i: (profs[i].per_sample_compute_time, i))
    fast = set(order[:25])
    for i in range(100):
        before = completion_time(profs[i], 80, 50_000)
        after = completion_time(boosted[i], 80, 50_000)
        if i in fast:
            assert after == pytest.approx(before / 2.0, rel=1e-12)
        else:
            assert after == before


def test_trace_validation():
    with pytest.raises(ValueError):
        AvailabilityTrace(intervals=((10.0, 5.0),), period=100.0)
    with pytest.raises(ValueError):
        AvailabilityTrace(intervals=((0.0, 10.0), (5.0, 20.0)), period=100.0)
    with pytest.raises(ValueError):
        AvailabilityTrace(intervals=((0.0, 10.0),), period=0.0)


def test_is_available_periodic():
    trace = AvailabilityTrace(intervals=((10.0, 20.0),), period=100.0)
    assert is_available(trace, 15.0)
    assert is_available(trace, 115.0)
    assert not is_available(trace, 25.0)
    assert not is_available(trace, 125.0)
    empty = AvailabilityTrace(intervals=(), period=100.0)
    assert not is_available(empty, 0.0)
    assert is_available(always_available(50.0), 1234.5)


def test_availability_probability_exact_cases():
    trace = AvailabilityTrace(intervals=((0.0, 50.0),), period=100.0)
    assert availability_probability(trace, 0.0, 50.0) == 1.0
    assert availability_probability(trace, 50.0, 100.0) == 0.0
    assert availability_probability(trace, 0.0, 100.0) == 0.5
    # slot spanning several periods
    assert availability_probability(trace, 25.0, 325.0) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        availability_probability(trace, 10.0, 10.0)


def test_availability_probability_matches_monte_carlo():
    traces = generate_diurnal_traces(20, seed=0)
    trace = traces[17]
    rng = np.random.default_rng(0)
    start, end = 1000.0, 40000.0
    pts = rng.uniform(start, end, size=100_000)
    mc = np.mean(
        [any(s <= (p % trace.period) < e for s, e in trace.intervals) for p in pts]
    )
    exact = availability_probability(trace, start, end)
    assert exact == pytest.approx(mc, abs=3e-3)


def test_available_until_window_end_and_wrap():
    trace = AvailabilityTrace(intervals=((10.0, 20.0), (90.0, 100.0)), period=100.0)
    assert available_until(trace, 12.0) == 20.0
    assert available_until(trace, 25.0) == 25.0  # offline
    # the trailing session does not touch the leading one after the wrap
    assert available_until(trace, 95.0) == 100.0
    wrap = AvailabilityTrace(intervals=((0.0, 20.0), (90.0, 100.0)), period=100.0)
    # session runs through the period boundary into the next repetition
    assert available_until(wrap, 95.0) == 120.0
    assert available_until(always_available(100.0), 3.0) == math.inf


def test_diurnal_traces_short_session_share():
    # frozen from an oracle run over 10000 traces
    traces = generate_diurnal_traces(10_000, seed=0)
    lengths = np.array([e - s for tr in traces for (s, e) in tr.intervals])
    assert abs(np.mean(lengths < 600.0) - 0.7) <= 0.03


def test_diurnal_traces_zero_short_fraction_boundary():
    traces = generate_diurnal_traces(200, short_session_fraction=0.0, seed=1)
    lengths = [e - s for tr in traces for (s, e) in tr.intervals]
    assert min(lengths) >= 600.0


def test_diurnal_traces_deterministic_and_valid():
    a = generate_diurnal_traces(30, seed=9)
    b = generate_diurnal_traces(30, seed=9)
    assert a == b
    for tr in a:
        assert tr.period == 86_400.0
        assert 1 <= len(tr.intervals) <= 6


def test_diurnal_traces_rejects_bad_args():
    with pytest.raises(ValueError):
        generate_diurnal_traces(0)
    with pytest.raises(ValueError):
        generate_diurnal_traces(5, short_session_fraction=1.5)
    with pytest.raises(ValueError):
        generate_diurnal_traces(5, period=60.0)


def test_completion_time_formula():
    profile = DeviceProfile(
        per_sample_compute_time=0.01,
        uplink_bandwidth=100_000.0,
        downlink_bandwidth=500_000.0,
        cluster_id=0,
    )
    # 100 samples -> 1 s compute; 50 kB down -> 0.1 s; 50 kB up -> 0.5 s
    assert completion_time(profile, 100, 50_000) == pytest.approx(1.6, rel=1e-12)
    assert completion_time(profile, 0, 0) == 0.0
    with pytest.raises(ValueError):
        completion_time(profile, -1, 0)


def test_load_traces_csv(tmp_path):
    path = tmp_path / "traces.csv"
    path.write_text(
        "learner_id,start,end,period\n"
        "0,0.0,100.0,1000.0\n"
        "0,500.0,600.0,1000.0\n"
        "3,10.0,20.0,200.0\n"
    )
    traces = load_traces_csv(path)
    assert set(traces) == {0, 3}
    assert traces[0].intervals == ((0.0, 100.0), (500.0, 600.0))
    assert traces[3].period == 200.0


def test_load_traces_csv_rejects_bad_header_and_periods(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,start,end,period\n0,0,1,10\n")
    with pytest.raises(ValueError):
        load_traces_csv(bad)
    mixed = tmp_path / "mixed.csv"
    mixed.write_text("learner_id,start,end,period\n0,0,1,10\n0,2,3,20\n")
    with pytest.raises(ValueError):
        load_traces_csv(mixed)
