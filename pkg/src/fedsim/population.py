"""Device population: speed profiles, availability traces, and the cost
model for a round of local work.

Profiles fall into six speed clusters with geometrically spaced per-sample
compute times and a log-normal spread inside each cluster, which produces
the long right tail seen in real device fleets. Availability is a periodic
trace of sessions; the diurnal generator weights session starts toward the
night hours and makes most sessions short.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Shard

CLUSTER_WEIGHTS = (0.25, 0.25, 0.2, 0.15, 0.1, 0.05)
CLUSTER_SPEED_RATIO = 2.0
BASE_COMPUTE_S = 0.02          # per-sample compute time at the fastest cluster's median
COMPUTE_SIGMA = 0.3            # log-normal spread within a cluster
DOWNLINK_MEDIAN = 1_000_000.0  # bytes/s
UPLINK_MEDIAN = 250_000.0      # bytes/s
BANDWIDTH_SIGMA = 0.5

DAY_S = 86_400.0
SHORT_SESSION_MAX_S = 600.0
NIGHT_WINDOW_FRACTION = 0.25   # share of free time treated as the night block
NIGHT_START_WEIGHT = 0.7       # chance the first session starts inside it


@dataclass(frozen=True)
class DeviceProfile:
    per_sample_compute_time: float
    uplink_bandwidth: float
    downlink_bandwidth: float
    cluster_id: int

    def __post_init__(self) -> None:
        if min(self.per_sample_compute_time, self.uplink_bandwidth, self.downlink_bandwidth) <= 0:
            raise ValueError("profile rates must be strictly positive")


@dataclass(frozen=True)
class AvailabilityTrace:
    """Sorted, non-overlapping half-open sessions repeating with `period`."""

    intervals: tuple[tuple[float, float], ...]
    period: float

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ValueError("period must be positive")
        last_end = 0.0
        for start, end in self.intervals:
            if not 0.0 <= start < end <= self.period:
                raise ValueError("intervals must lie within [0, period)")
            if start < last_end:
                raise ValueError("intervals must be sorted and non-overlapping")
            last_end = end

    @property
    def covered(self) -> float:
        return sum(end - start for start, end in self.intervals)


@dataclass
class Learner:
    id: int
    profile: DeviceProfile
    trace: AvailabilityTrace
    shard: Shard
    cooldown_until: int = 0  # first round index at which the learner is eligible again


def sample_profiles(n: int, seed) -> list[DeviceProfile]:
    """Draw `n` device profiles from the clustered long-tail distribution."""
    if n < 1:
        raise ValueError("need at least one profile")
    rng = np.random.default_rng(seed)
    clusters = rng.choice(len(CLUSTER_WEIGHTS), size=n, p=CLUSTER_WEIGHTS)
    compute = (
        BASE_COMPUTE_S
        * CLUSTER_SPEED_RATIO ** clusters.astype(float)
        * rng.lognormal(0.0, COMPUTE_SIGMA, size=n)
    )
    down = DOWNLINK_MEDIAN * rng.lognormal(0.0, BANDWIDTH_SIGMA, size=n)
    up = UPLINK_MEDIAN * rng.lognormal(0.0, BANDWIDTH_SIGMA, size=n)
    return [
        DeviceProfile(
            per_sample_compute_time=float(compute[i]),
            uplink_bandwidth=float(up[i]),
            downlink_bandwidth=float(down[i]),
            cluster_id=int(clusters[i]),
        )
        for i in range(n)
    ]


def apply_speed_transform(
    profiles: list[DeviceProfile], top_fraction: float, speedup: float
) -> list[DeviceProfile]:
    """Speed up the fastest `top_fraction` of devices by `speedup`.

    Compute time divides and both bandwidths multiply, so every completion
    time of an affected device scales by exactly 1/speedup.
    """
    if not 0.0 <= top_fraction <= 1.0:
        raise ValueError("top_fraction must be in [0, 1]")
    if speedup <= 0:
        raise ValueError("speedup must be positive")
    k = int(round(top_fraction * len(profiles)))
    fastest = sorted(range(len(profiles)), key=lambda i: (profiles[i].per_sample_compute_time, i))
    chosen = set(fastest[:k])
    out = []
    for i, p in enumerate(profiles):
        if i in chosen:
            out.append(
                DeviceProfile(
                    per_sample_compute_time=p.per_sample_compute_time / speedup,
                    uplink_bandwidth=p.uplink_bandwidth * speedup,
                    downlink_bandwidth=p.downlink_bandwidth * speedup,
                    cluster_id=p.cluster_id,
                )
            )
        else:
            out.append(p)
    return out


def always_available(period: float = DAY_S) -> AvailabilityTrace:
    return AvailabilityTrace(intervals=((0.0, period),), period=period)


def generate_diurnal_traces(
    n: int,
    period: float = DAY_S,
    short_session_fraction: float = 0.7,
    seed=0,
) -> list[AvailabilityTrace]:
    """Periodic session traces with night-weighted starts.

    Each trace holds 2..6 sessions. A session is short (< 600 s) with
    probability `short_session_fraction`, otherwise long (600 s up to two
    hours, capped for small periods). Session lengths are preserved exactly;
    only the gaps between them are stretched to fit the period.
    """
    if n < 1:
        raise ValueError("need at least one trace")
    if not 0.0 <= short_session_fraction <= 1.0:
        raise ValueError("short_session_fraction must be in [0, 1]")
    if period < 1800.0:
        raise ValueError("period too short to place sessions")
    rng = np.random.default_rng(seed)
    long_max = min(7200.0, 0.45 * period)
    traces = []
    for _ in range(n):
        k = int(rng.integers(2, 7))
        lengths = []
        for _ in range(k):
            if rng.random() < short_session_fraction:
                lengths.append(float(rng.uniform(60.0, SHORT_SESSION_MAX_S)))
            else:
                lengths.append(float(rng.uniform(SHORT_SESSION_MAX_S, long_max)))
        while len(lengths) > 1 and sum(lengths) > 0.5 * period:
            lengths.pop()
        k = len(lengths)
        free = period - sum(lengths)
        # bias the first session start into the early "night" block
        if rng.random() < NIGHT_START_WEIGHT:
            start = float(rng.uniform(0.0, NIGHT_WINDOW_FRACTION * free))
        else:
            start = float(rng.uniform(0.0, free))
        gaps = rng.dirichlet(np.ones(k)) * (free - start)
        intervals = []
        cursor = start
        for i in range(k):
            intervals.append((cursor, cursor + lengths[i]))
            cursor += lengths[i] + float(gaps[i])
        traces.append(AvailabilityTrace(intervals=tuple(intervals), period=period))
    return traces


def is_available(trace: AvailabilityTrace, t: float) -> bool:
    r = t % trace.period
    return any(start <= r < end for start, end in trace.intervals)


def _covered_before(trace: AvailabilityTrace, r: float) -> float:
    # availability measure on [0, r) within one period
    total = 0.0
    for start, end in trace.intervals:
        if start >= r:
            break
        total += min(end, r) - start
    return total


def availability_probability(trace: AvailabilityTrace, start: float, end: float) -> float:
    """Fraction of [start, end) covered by the periodic sessions."""
    if end <= start:
        raise ValueError("need a non-empty time slot")
    per_period = trace.covered

    def cumulative(t: float) -> float:
        k, r = divmod(t, trace.period)
        return k * per_period + _covered_before(trace, r)

    fraction = (cumulative(end) - cumulative(start)) / (end - start)
    # divmod rounding can push the exact ratio a few ulps past the ends
    return min(1.0, max(0.0, fraction))


def available_until(trace: AvailabilityTrace, t: float) -> float:
    """End of the continuous availability window containing `t`.

    Returns `t` itself when the device is offline at `t`, and +inf when the
    trace covers the whole period.
    """
    if trace.covered >= trace.period:
        return math.inf
    r = t % trace.period
    base = t - r
    current = None
    for start, end in trace.intervals:
        if start <= r < end:
            current = end
            break
    if current is None:
        return t
    # chain sessions that touch, including across the period wrap
    while True:
        if current >= trace.period:
            base += trace.period
            current -= trace.period
        follow = None
        for start, end in trace.intervals:
            if start == current:
                follow = end
                break
        if follow is None:
            return base + current
        current = follow


def completion_time(profile: DeviceProfile, samples: int, model_bytes: int) -> float:
    """Compute plus both transfer legs for one round of local work."""
    if samples < 0 or model_bytes < 0:
        raise ValueError("samples and model_bytes must be non-negative")
    return (
        samples * profile.per_sample_compute_time
        + model_bytes / profile.downlink_bandwidth
        + model_bytes / profile.uplink_bandwidth
    )


def load_traces_csv(path: str | Path) -> dict[int, AvailabilityTrace]:
    """Read traces from rows of learner_id,start,end,period."""
    sessions: dict[int, list[tuple[float, float]]] = {}
    periods: dict[int, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["learner_id", "start", "end", "period"]:
            raise ValueError(f"{path}: expected header learner_id,start,end,period")
        for row in reader:
            lid = int(row[0])
            start, end, period = float(row[1]), float(row[2]), float(row[3])
            if lid in periods and periods[lid] != period:
                raise ValueError(f"{path}: learner {lid} has conflicting periods")
            periods[lid] = period
            sessions.setdefault(lid, []).append((start, end))
    return {
        lid: AvailabilityTrace(intervals=tuple(sorted(rows)), period=periods[lid])
        for lid, rows in sessions.items()
    }
