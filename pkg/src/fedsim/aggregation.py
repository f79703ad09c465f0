"""Staleness-aware aggregation of model update deltas.

Fresh deltas from the current round average with weight one. A late delta
from an earlier round gets a damping weight that depends on the chosen
rule:

  equal    no damping
  dynsgd   1 / (staleness + 1)
  adasgd   exp(-(staleness + 1))
  hybrid   (1-beta)/(staleness+1) plus a boost proportional to how far the
           late delta deviates from the fresh mean, normalized against the
           round's largest deviation

All weights are normalized to sum to one before the weighted combine, so
the server step size stays decoupled from the mix composition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCALING_RULES = ("equal", "dynsgd", "adasgd", "hybrid")


@dataclass(frozen=True)
class UpdateRecord:
    """One learner's delta together with its origin and arrival rounds."""

    learner_id: int
    delta: np.ndarray
    origin_round: int
    arrival_round: int
    samples: int = 1

    def __post_init__(self) -> None:
        if self.arrival_round < self.origin_round:
            raise ValueError("arrival_round must be >= origin_round")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")

    @property
    def staleness(self) -> int:
        return self.arrival_round - self.origin_round


@dataclass(frozen=True)
class ScalingRule:
    kind: str = "equal"
    beta: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in SCALING_RULES:
            raise ValueError(f"unknown scaling rule {self.kind!r}")
        if self.kind == "hybrid":
            if self.beta is None or not 0.0 <= self.beta <= 1.0:
                raise ValueError("hybrid rule needs beta in [0, 1]")
        elif self.beta is not None:
            raise ValueError("beta only applies to the hybrid rule")


@dataclass(frozen=True)
class StalenessPolicy:
    """Acceptance bound for late updates; None means unbounded."""

    threshold: int | None = None
    server_lr: float = 1.0

    def __post_init__(self) -> None:
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.server_lr <= 0:
            raise ValueError("server_lr must be positive")


def aggregate_fresh(updates: list[UpdateRecord], sample_weighted: bool = False) -> np.ndarray:
    """Mean of the deltas, summed in ascending learner-id order."""
    if not updates:
        raise ValueError("nothing to aggregate")
    ordered = sorted(updates, key=lambda u: u.learner_id)
    stack = np.stack([u.delta for u in ordered])
    if not sample_weighted:
        return stack.mean(axis=0)
    weights = np.array([u.samples for u in ordered], dtype=float)
    weights /= weights.sum()
    return (weights[:, None] * stack).sum(axis=0)


def server_update(params: np.ndarray, delta: np.ndarray, lr: float = 1.0) -> np.ndarray:
    if params.shape != delta.shape:
        raise ValueError("parameter and delta shapes differ")
    return params + lr * delta


def deviation_score(fresh_mean: np.ndarray, n_fresh: int, stale_delta: np.ndarray) -> float:
    """How much folding one late delta into the fresh mean would move it.

    Measured as the squared distance between the fresh mean and the mean
    with the late delta folded in, normalized by the fresh mean's squared
    norm. A zero fresh mean makes the score zero by convention.
    """
    if n_fresh < 1:
        raise ValueError("need at least one fresh update")
    norm_sq = float(fresh_mean @ fresh_mean)
    if norm_sq == 0.0:
        return 0.0
    folded = (stale_delta + n_fresh * fresh_mean) / (n_fresh + 1)
    diff = fresh_mean - folded
    return float(diff @ diff) / norm_sq


def staleness_weight(
    rule: ScalingRule, staleness: int, deviation: float = 0.0, deviation_max: float = 0.0
) -> float:
    """Unnormalized damping weight for one late update."""
    if staleness < 0:
        raise ValueError("staleness must be >= 0")
    if rule.kind == "equal":
        return 1.0
    if rule.kind == "dynsgd":
        return 1.0 / (staleness + 1)
    if rule.kind == "adasgd":
        return math.exp(-(staleness + 1))
    decay = (1.0 - rule.beta) / (staleness + 1)
    boost = 0.0
    if deviation_max > 0.0:
        boost = rule.beta * (1.0 - math.exp(-deviation / deviation_max))
    return decay + boost


def mixture_weights(
    fresh: list[UpdateRecord], stale: list[UpdateRecord], rule: ScalingRule
) -> tuple[list[float], list[float]]:
    """Unnormalized weights for a fresh+stale mix under `rule`.

    With no fresh updates the hybrid rule has no fresh mean to compare
    against and falls back to plain staleness damping.
    """
    effective = rule
    if rule.kind == "hybrid" and not fresh:
        effective = ScalingRule(kind="dynsgd")
    fresh_weights = [1.0] * len(fresh)
    if not stale:
        return fresh_weights, []
    deviations = [0.0] * len(stale)
    if effective.kind == "hybrid":
        fresh_mean = aggregate_fresh(fresh)
        deviations = [
            deviation_score(fresh_mean, len(fresh), u.delta) for u in stale
        ]
    dev_max = max(deviations) if deviations else 0.0
    stale_weights = [
        staleness_weight(effective, u.staleness, dev, dev_max)
        for u, dev in zip(stale, deviations)
    ]
    return fresh_weights, stale_weights


def aggregate_mixed(
    fresh: list[UpdateRecord],
    stale: list[UpdateRecord],
    rule: ScalingRule,
    sample_weighted: bool = False,
) -> np.ndarray:
    """Normalized weighted combine of fresh and late deltas."""
    if not fresh and not stale:
        raise ValueError("nothing to aggregate")
    if not stale and not sample_weighted:
        return aggregate_fresh(fresh)
    if rule.kind == "equal" and not sample_weighted:
        return aggregate_fresh(fresh + stale)
    fresh_w, stale_w = mixture_weights(fresh, stale, rule)
    tagged = [(u, w) for u, w in zip(fresh, fresh_w)] + [
        (u, w) for u, w in zip(stale, stale_w)
    ]
    tagged.sort(key=lambda pair: pair[0].learner_id)
    weights = np.array([w for _, w in tagged], dtype=float)
    if sample_weighted:
        weights *= np.array([u.samples for u, _ in tagged], dtype=float)
    total = weights.sum()
    if total <= 0:
        raise ValueError("aggregation weights sum to zero")
    weights /= total
    stack = np.stack([u.delta for u, _ in tagged])
    return (weights[:, None] * stack).sum(axis=0)


def staleness_filter(
    updates: list[UpdateRecord], policy: StalenessPolicy
) -> tuple[list[UpdateRecord], list[UpdateRecord]]:
    """Split late updates into (accepted, rejected) under the policy bound."""
    if policy.threshold is None:
        return list(updates), []
    accepted = [u for u in updates if u.staleness <= policy.threshold]
    rejected = [u for u in updates if u.staleness > policy.threshold]
    return accepted, rejected


@dataclass(frozen=True)
class VirtualIterateHistory:
    """Per-round record of a constant-delay run.

    params[t] is the server parameter vector entering round t, for
    t = 0..T; grad_means[t] is the population mean of the per-learner local
    gradient sums computed against params[t], for t = 0..T-1.
    """

    params: list[np.ndarray]
    grad_means: list[np.ndarray]

    def __post_init__(self) -> None:
        if len(self.params) != len(self.grad_means) + 1:
            raise ValueError("need exactly one more parameter snapshot than gradient record")


def check_virtual_iterate(history: VirtualIterateHistory, gamma: float, tau: int) -> float:
    """Largest deviation from the delayed-update accounting identity.

    For a run where every learner participates every round and updates land
    with a constant delay of `tau` rounds, subtracting the in-flight work
    from the server parameters must yield a sequence that steps by exactly
    the current round's mean gradient sum. Returns the max infinity-norm
    residual of that recurrence; analytically it is zero, so anything above
    float-accumulation noise means the server update path is wrong.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    rounds = len(history.grad_means)
    virtual = []
    for t in range(rounds + 1):
        in_flight = np.zeros_like(history.params[0])
        for j in range(1, tau + 1):
            if t - j >= 0:
                in_flight = in_flight + gamma * history.grad_means[t - j]
        virtual.append(history.params[t] - in_flight)
    worst = 0.0
    for t in range(rounds):
        step = virtual[t] - gamma * history.grad_means[t]
        worst = max(worst, float(np.max(np.abs(virtual[t + 1] - step))))
    return worst
