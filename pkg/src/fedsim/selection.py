"""Participant selection strategies and the adaptive participant target.

Strategies work on a round's check-in pool:
  random    uniform draw without replacement
  priority  least-available-first: sort by forecast availability ascending,
            shuffle ties uniformly, take the head of the list
  utility   greedy score of last reported loss times a deadline preference,
            with a slice of the budget reserved for never-selected learners
  all       dispatch the whole pool (handled by the engine)

The adaptive target shrinks the number of fresh participants a round asks
for by the number of stragglers expected to deliver within the current
round-duration estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .population import Learner


@dataclass(frozen=True)
class CheckIn:
    """What the server knows about one available learner at round start."""

    learner_id: int
    availability_prob: float
    expected_completion: float
    last_loss: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.availability_prob <= 1.0:
            raise ValueError("availability_prob must be in [0, 1]")
        if self.expected_completion < 0:
            raise ValueError("expected_completion must be >= 0")


@dataclass(frozen=True)
class SelectionDecision:
    participants: tuple[int, ...]
    target: int


def select_random(pool: list[CheckIn], n: int, seed) -> SelectionDecision:
    """Uniform draw of min(n, len(pool)) learners without replacement."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    ids = [c.learner_id for c in pool]
    take = min(n, len(ids))
    chosen = rng.choice(ids, size=take, replace=False) if take else np.array([], dtype=int)
    return SelectionDecision(participants=tuple(int(i) for i in chosen), target=n)


def select_priority(pool: list[CheckIn], n: int, seed) -> SelectionDecision:
    """Least-available-first selection.

    Learners are ranked by forecast availability ascending; groups with
    identical forecasts are shuffled uniformly so ties carry no id bias.
    With all-distinct forecasts the generator is never consulted.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    order = sorted(range(len(pool)), key=lambda i: (pool[i].availability_prob, i))
    ranked: list[int] = []
    i = 0
    while i < len(order):
        j = i
        while (
            j < len(order)
            and pool[order[j]].availability_prob == pool[order[i]].availability_prob
        ):
            j += 1
        group = order[i:j]
        if len(group) > 1:
            group = [group[k] for k in rng.permutation(len(group))]
        ranked.extend(group)
        i = j
    chosen = ranked[: min(n, len(ranked))]
    return SelectionDecision(
        participants=tuple(pool[i].learner_id for i in chosen), target=n
    )


def _utility_score(checkin: CheckIn, deadline_pref: float) -> float:
    if checkin.last_loss is None:
        return math.inf
    pace = 1.0
    if checkin.expected_completion > 0:
        pace = min(1.0, deadline_pref / checkin.expected_completion)
    return checkin.last_loss * pace


def select_utility(
    pool: list[CheckIn],
    n: int,
    exploration_fraction: float,
    deadline_pref: float,
    seed,
) -> SelectionDecision:
    """Greedy utility selection with a reserved exploration slice.

    The exploration slice is drawn uniformly from learners that have never
    reported a loss; the rest are ranked by last_loss scaled down when the
    expected completion overruns `deadline_pref`. Learners without a loss
    rank at the top of the greedy order too, and score ties break toward
    the lower learner id. A short exploration pool spills its unused slots
    back into the greedy ranking.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= exploration_fraction <= 1.0:
        raise ValueError("exploration_fraction must be in [0, 1]")
    if deadline_pref <= 0:
        raise ValueError("deadline_pref must be positive")
    rng = np.random.default_rng(seed)
    capacity = min(n, len(pool))
    n_explore = int(round(exploration_fraction * capacity))
    fresh_ids = [c.learner_id for c in pool if c.last_loss is None]
    explore_take = min(n_explore, len(fresh_ids))
    explored = (
        [int(i) for i in rng.choice(fresh_ids, size=explore_take, replace=False)]
        if explore_take
        else []
    )
    taken = set(explored)
    ranked = sorted(
        (c for c in pool if c.learner_id not in taken),
        key=lambda c: (-_utility_score(c, deadline_pref), c.learner_id),
    )
    greedy = [c.learner_id for c in ranked[: capacity - len(explored)]]
    return SelectionDecision(participants=tuple(explored + greedy), target=n)


def adaptive_participant_target(
    n0: int, straggler_remaining: list[float], duration_estimate: float
) -> int:
    """Shrink the fresh-participant ask by stragglers due to land in time.

    Counts stragglers whose remaining time fits within the duration
    estimate and subtracts them from the base target, never dropping below
    one participant.
    """
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    arriving = sum(1 for rt in straggler_remaining if rt <= duration_estimate)
    return max(1, n0 - arriving)


def update_round_duration(previous_estimate: float, observed: float, alpha: float) -> float:
    """Exponential smoothing of the round duration, weighted toward the
    newest observation: (1-alpha)*observed + alpha*previous."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if observed < 0 or previous_estimate < 0:
        raise ValueError("durations must be >= 0")
    return (1.0 - alpha) * observed + alpha * previous_estimate


def apply_cooldown(pool: list[Learner], current_round: int) -> list[Learner]:
    """Drop learners still inside their post-participation hold-off."""
    return [l for l in pool if l.cooldown_until <= current_round]


def cooldown_expiry(completion_round: int, cooldown_length: int) -> int:
    """First round at which a learner that reported in `completion_round`
    may check in again."""
    if cooldown_length < 0:
        raise ValueError("cooldown_length must be >= 0")
    return completion_round + cooldown_length + 1
