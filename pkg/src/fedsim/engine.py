"""Round-driven simulation engine.

A round runs: check in the available learners, size the participant target,
select, dispatch local training, collect completions under the round-end
policy, fold matured late updates in, aggregate, advance the clock. Two
round-end policies exist:

  OC  over-commit: dispatch extra participants and close the round at the
      target-th completion; the overflow keeps computing as stragglers.
  DL  deadline: the round always lasts exactly the deadline; too few
      on-time arrivals abort it.

With stale acceptance on, stragglers deliver their deltas at a later round
boundary and are damped by the configured scaling rule. With it off, any
work that misses its round is discarded and counted as wastage.

All randomness flows from one experiment seed through named child streams,
so a config runs to bit-identical metrics every time.
"""
from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (
    ScalingRule,
    StalenessPolicy,
    UpdateRecord,
    VirtualIterateHistory,
    aggregate_mixed,
    server_update,
    staleness_filter,
)
from .data import Dataset, PartitionSpec, generate_dataset, partition, train_test_split
from .metrics import MetricsLog
from .model import (
    evaluate,
    init_params,
    local_update,
    loss_and_gradient,
    samples_processed,
)
from .population import (
    Learner,
    always_available,
    apply_speed_transform,
    availability_probability,
    available_until,
    completion_time,
    generate_diurnal_traces,
    is_available,
    sample_profiles,
)
from .selection import (
    CheckIn,
    SelectionDecision,
    adaptive_participant_target,
    cooldown_expiry,
    select_priority,
    select_random,
    select_utility,
    update_round_duration,
)

MODES = ("OC", "DL")
SELECTORS = ("random", "priority", "utility", "all")
AVAILABILITY_MODELS = ("AllAvail", "DynAvail")

# child-stream tags hanging off the experiment seed
_S_SPLIT, _S_PARTITION, _S_PROFILES, _S_TRACES, _S_TRAIN, _S_SELECT, _S_NOISE = range(7)


def _child_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(seed), *key))


@dataclass
class ExperimentConfig:
    """Everything a run needs; defaults give a small over-commit setup."""

    name: str = "experiment"
    # population
    n_learners: int = 100
    availability: str = "AllAvail"
    trace_period: float = 86_400.0
    short_session_fraction: float = 0.7
    hw_speedup_fraction: float = 0.0
    hw_speedup_factor: float = 1.0
    # round structure
    n0: int = 10
    mode: str = "OC"
    overcommit_factor: float = 1.3
    deadline: float | None = None
    target_ratio: float = 0.8
    # selection
    selector: str = "random"
    exploration_fraction: float = 0.1
    cooldown: int | None = None  # None: 5 for priority, 0 otherwise
    apt: bool = False
    predictor_noise: float = 0.0
    rt_noise: float = 0.0
    # aggregation
    saa: bool = False
    rule: str = "equal"
    beta: float = 0.35
    staleness_threshold: int | None = None
    server_lr: float = 1.0
    literal_alg2: bool = False
    sample_weighted: bool = False
    # local training
    gamma: float = 0.05
    local_steps: int = 5
    batch_size: int = 16
    model_bytes: int = 50_000
    # data
    classes: int = 4
    dim: int = 8
    per_class: int = 250
    spread: float = 1.0
    data_seed: int = 7
    test_fraction: float = 0.2
    partition: str = "uniform_iid"
    label_fraction: float = 0.1
    label_distribution: str = "balanced"
    zipf_alpha: float = 1.95
    # run control
    rounds: int = 100
    alpha: float = 0.25
    seed: int = 0
    eval_stride: int = 1
    record_trajectory: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}, got {self.selector!r}")
        if self.availability not in AVAILABILITY_MODELS:
            raise ValueError(
                f"availability must be one of {AVAILABILITY_MODELS}, got {self.availability!r}"
            )
        if self.mode == "OC" and self.overcommit_factor < 1.0:
            raise ValueError("overcommit_factor must be >= 1 in OC mode")
        if self.mode == "DL" and (self.deadline is None or self.deadline <= 0):
            raise ValueError("DL mode needs a positive deadline")
        if not 0.0 <= self.target_ratio <= 1.0:
            raise ValueError("target_ratio must be in [0, 1]")
        if self.n_learners < 1 or self.n0 < 1:
            raise ValueError("n_learners and n0 must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.local_steps < 1 or self.batch_size < 1:
            raise ValueError("local_steps and batch_size must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")
        if self.cooldown is not None and self.cooldown < 0:
            raise ValueError("cooldown must be >= 0")
        if self.predictor_noise < 0 or self.rt_noise < 0:
            raise ValueError("noise knobs must be >= 0")
        # these raise on their own bad values
        self.scaling_rule()
        self.staleness_policy()
        self.partition_spec()

    @property
    def cooldown_length(self) -> int:
        if self.cooldown is not None:
            return self.cooldown
        return 5 if self.selector == "priority" else 0

    def scaling_rule(self) -> ScalingRule:
        return ScalingRule(self.rule, beta=self.beta if self.rule == "hybrid" else None)

    def staleness_policy(self) -> StalenessPolicy:
        return StalenessPolicy(threshold=self.staleness_threshold, server_lr=self.server_lr)

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(
            kind=self.partition,
            label_fraction=self.label_fraction,
            per_learner_distribution=self.label_distribution,
            zipf_alpha=self.zipf_alpha,
        )


class Clock:
    """Monotone simulated time in seconds."""

    def __init__(self) -> None:
        self.now = 0.0

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("time cannot run backwards")
        self.now += dt


@dataclass
class _WorkItem:
    """One dispatched piece of local training in flight."""

    learner_id: int
    delta: np.ndarray
    report_loss: float
    origin_round: int
    dispatch_time: float
    compute_s: float
    comm_s: float
    finish_time: float
    dropout_time: float  # inf when the trace never cuts the work short
    samples: int

    @property
    def completed(self) -> bool:
        return self.finish_time <= self.dropout_time

    @property
    def resolve_time(self) -> float:
        return min(self.finish_time, self.dropout_time)

    def cost(self) -> tuple[float, float]:
        """(compute_s, comm_s) actually spent, truncated at a dropout."""
        if self.completed:
            return self.compute_s, self.comm_s
        elapsed = self.dropout_time - self.dispatch_time
        down = self.comm_s / 2  # download leg runs first, upload after compute
        if elapsed <= down:
            return 0.0, elapsed
        if elapsed <= down + self.compute_s:
            return elapsed - down, down
        return self.compute_s, elapsed - self.compute_s


@dataclass
class RoundState:
    """Book-keeping for one round of the loop."""

    index: int
    selected: tuple[int, ...]
    dispatch_time: float
    mu: float
    arrivals: list[UpdateRecord] = field(default_factory=list)
    pending_stragglers: dict[int, float] = field(default_factory=dict)
    duration: float = 0.0
    outcome: str = "success"


@dataclass
class _CollectResult:
    fresh: list[_WorkItem]
    leftovers: list[_WorkItem]
    duration: float
    shortfall: bool


def collect_oc(items: list[_WorkItem], n_target: int, dispatch_time: float) -> _CollectResult:
    """Close the round at the n_target-th completion.

    When dropouts leave fewer completions than the target the round fails
    and lasts until its last dispatched item resolves.
    """
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    finished = sorted(
        (w for w in items if w.completed), key=lambda w: (w.finish_time, w.learner_id)
    )
    if len(finished) < n_target:
        duration = max(w.resolve_time for w in items) - dispatch_time
        return _CollectResult(fresh=[], leftovers=list(items), duration=duration, shortfall=True)
    cutoff = finished[n_target - 1].finish_time
    fresh = finished[:n_target]
    taken = {id(w) for w in fresh}
    leftovers = [w for w in items if id(w) not in taken]
    return _CollectResult(
        fresh=fresh, leftovers=leftovers, duration=cutoff - dispatch_time, shortfall=False
    )


def collect_dl(
    items: list[_WorkItem], deadline: float, min_success: int, dispatch_time: float
) -> _CollectResult:
    """Fixed-length round: arrivals by dispatch+deadline count, inclusive."""
    if deadline <= 0:
        raise ValueError("deadline must be positive")
    boundary = dispatch_time + deadline
    on_time = sorted(
        (w for w in items if w.completed and w.finish_time <= boundary),
        key=lambda w: (w.finish_time, w.learner_id),
    )
    taken = {id(w) for w in on_time}
    leftovers = [w for w in items if id(w) not in taken]
    shortfall = len(on_time) < min_success
    return _CollectResult(
        fresh=on_time, leftovers=leftovers, duration=deadline, shortfall=shortfall
    )


def track_stragglers(
    pending: list[_WorkItem], current_round: int, round_end: float
) -> tuple[list[_WorkItem], list[_WorkItem], list[_WorkItem]]:
    """Split in-flight work into (matured, dropped, still pending).

    Only items dispatched in earlier rounds are eligible; an item matures at
    the first round boundary at or past its finish time. Items whose trace
    cut them off come back as dropped, with their partial cost to charge.
    """
    matured, dropped, still = [], [], []
    for w in pending:
        if w.origin_round < current_round and w.resolve_time <= round_end:
            (matured if w.completed else dropped).append(w)
        else:
            still.append(w)
    matured.sort(key=lambda w: w.learner_id)
    dropped.sort(key=lambda w: w.learner_id)
    return matured, dropped, still


def dataset_for(cfg: ExperimentConfig) -> Dataset:
    """Generate the synthetic dataset an experiment runs on.

    Keyed by ``data_seed`` rather than the run seed so that arms compared
    across seeds train on identical data.
    """
    return generate_dataset(
        cfg.classes, cfg.dim, cfg.per_class, spread=cfg.spread, seed=cfg.data_seed
    )


def _build_population(cfg: ExperimentConfig, dataset: Dataset):
    train_idx, test_idx = train_test_split(
        dataset, cfg.test_fraction, _child_seed(cfg.seed, _S_SPLIT)
    )
    assert np.intersect1d(train_idx, test_idx).size == 0
    shards = partition(
        dataset,
        cfg.n_learners,
        cfg.partition_spec(),
        _child_seed(cfg.seed, _S_PARTITION),
        train_indices=train_idx,
    )
    profiles = sample_profiles(cfg.n_learners, _child_seed(cfg.seed, _S_PROFILES))
    if cfg.hw_speedup_fraction > 0.0 and cfg.hw_speedup_factor != 1.0:
        profiles = apply_speed_transform(profiles, cfg.hw_speedup_fraction, cfg.hw_speedup_factor)
    if cfg.availability == "AllAvail":
        traces = [always_available(cfg.trace_period) for _ in range(cfg.n_learners)]
    else:
        traces = generate_diurnal_traces(
            cfg.n_learners,
            cfg.trace_period,
            cfg.short_session_fraction,
            _child_seed(cfg.seed, _S_TRACES),
        )
    learners = [
        Learner(id=i, profile=profiles[i], trace=traces[i], shard=shards[i])
        for i in range(cfg.n_learners)
    ]
    return train_idx, test_idx, learners


def run_experiment(cfg: ExperimentConfig, dataset: Dataset) -> MetricsLog:
    """Simulate `cfg.rounds` rounds over `dataset` and return the metrics."""
    cfg.validate()
    train_idx, test_idx, learners = _build_population(cfg, dataset)
    workload = {
        l.id: samples_processed(len(l.shard), cfg.batch_size, cfg.local_steps)
        for l in learners
        if len(l.shard) > 0
    }
    estimate = {
        lid: completion_time(learners[lid].profile, n, cfg.model_bytes)
        for lid, n in workload.items()
    }
    params = init_params(dataset.n_classes, dataset.dim)
    if cfg.mode == "DL":
        duration_est = float(cfg.deadline)
    else:
        duration_est = float(statistics.median(estimate.values()))
    rule = cfg.scaling_rule()
    policy = cfg.staleness_policy()
    effective_lr = cfg.server_lr * (cfg.gamma if cfg.literal_alg2 else 1.0)
    clock = Clock()
    log = MetricsLog()
    if cfg.record_trajectory:
        log.trajectory = [params.copy()]

    def measure() -> tuple[float, float]:
        acc = evaluate(params, dataset, test_idx)
        loss, _ = loss_and_gradient(params, dataset, train_idx)
        return acc, loss

    accuracy, train_loss = measure()
    log.append_row(0, clock.now, accuracy, train_loss, 0, 0, 0, "initial")

    pending: list[_WorkItem] = []
    busy_until: dict[int, float] = {}
    last_loss: dict[int, float] = {}

    def discard(item: _WorkItem) -> None:
        compute_s, comm_s = item.cost()
        log.record_work(item.learner_id, compute_s, comm_s, "discarded")

    def retire(item: _WorkItem, current_round: int) -> None:
        """A completed report reached the server: refresh its sender's state."""
        last_loss[item.learner_id] = item.report_loss
        learners[item.learner_id].cooldown_until = cooldown_expiry(
            current_round, cfg.cooldown_length
        )

    for t in range(1, cfg.rounds + 1):
        t0 = clock.now
        noise_rng = np.random.default_rng(_child_seed(cfg.seed, _S_NOISE, t))
        # ---- check-in: available, idle, out of cooldown, holding data
        pool: list[CheckIn] = []
        for l in learners:
            if len(l.shard) == 0 or l.cooldown_until > t:
                continue
            if busy_until.get(l.id, -math.inf) > t0:
                continue
            if not is_available(l.trace, t0):
                continue
            prob = availability_probability(l.trace, t0 + duration_est, t0 + 2 * duration_est)
            if cfg.predictor_noise > 0.0:
                shift = noise_rng.uniform(-cfg.predictor_noise, cfg.predictor_noise)
                prob = float(np.clip(prob + shift, 0.0, 1.0))
            pool.append(
                CheckIn(
                    learner_id=l.id,
                    availability_prob=prob,
                    expected_completion=estimate[l.id],
                    last_loss=last_loss.get(l.id),
                )
            )
        # ---- shrink the target by stragglers due back within the estimate
        n_target = cfg.n0
        if cfg.apt and pending:
            remaining = []
            for w in sorted(pending, key=lambda w: w.learner_id):
                if not w.completed:
                    continue
                rt = w.finish_time - t0
                if cfg.rt_noise > 0.0:
                    rt *= 1.0 + noise_rng.uniform(-cfg.rt_noise, cfg.rt_noise)
                remaining.append(rt)
            n_target = adaptive_participant_target(cfg.n0, remaining, duration_est)
        # ---- selection
        select_seed = _child_seed(cfg.seed, _S_SELECT, t)
        if cfg.selector == "all":
            decision = SelectionDecision(
                participants=tuple(c.learner_id for c in pool), target=n_target
            )
        else:
            want = n_target
            if cfg.mode == "OC":
                want = math.ceil(cfg.overcommit_factor * n_target)
            if cfg.selector == "random":
                decision = select_random(pool, want, select_seed)
            elif cfg.selector == "priority":
                decision = select_priority(pool, want, select_seed)
            else:
                pref = float(cfg.deadline) if cfg.mode == "DL" else duration_est
                decision = select_utility(pool, want, cfg.exploration_fraction, pref, select_seed)
        state = RoundState(
            index=t, selected=decision.participants, dispatch_time=t0, mu=duration_est
        )
        n_discarded = 0
        fresh_records: list[UpdateRecord] = []
        if not state.selected:
            # nobody checked in: wait out one estimated round and retry
            state.outcome = "skipped"
            state.duration = float(cfg.deadline) if cfg.mode == "DL" else duration_est
        else:
            # ---- dispatch local training
            items: list[_WorkItem] = []
            for lid in sorted(state.selected):
                l = learners[lid]
                delta = local_update(
                    params,
                    l.shard,
                    dataset,
                    cfg.gamma,
                    cfg.local_steps,
                    cfg.batch_size,
                    _child_seed(cfg.seed, _S_TRAIN, t, lid),
                )
                report_loss, _ = loss_and_gradient(params, dataset, l.shard.sample_indices)
                compute_s = workload[lid] * l.profile.per_sample_compute_time
                comm_s = cfg.model_bytes / l.profile.downlink_bandwidth + (
                    cfg.model_bytes / l.profile.uplink_bandwidth
                )
                finish = t0 + compute_s + comm_s
                dropout = math.inf
                if cfg.availability == "DynAvail":
                    window_end = available_until(l.trace, t0)
                    if window_end < finish:
                        dropout = window_end
                item = _WorkItem(
                    learner_id=lid,
                    delta=delta,
                    report_loss=report_loss,
                    origin_round=t,
                    dispatch_time=t0,
                    compute_s=compute_s,
                    comm_s=comm_s,
                    finish_time=finish,
                    dropout_time=dropout,
                    samples=workload[lid],
                )
                items.append(item)
                busy_until[lid] = item.resolve_time
            # ---- close the round
            if cfg.mode == "OC":
                result = collect_oc(items, min(n_target, len(items)), t0)
            else:
                base = len(items) if cfg.selector == "all" else n_target
                min_success = math.ceil(cfg.target_ratio * base)
                result = collect_dl(items, float(cfg.deadline), min_success, t0)
            state.duration = result.duration
            if result.shortfall:
                state.outcome = "failed"
                if cfg.mode == "OC":
                    # the whole round is written off
                    for w in result.leftovers:
                        discard(w)
                        if w.completed:
                            retire(w, t)
                    n_discarded += len(result.leftovers)
                    leftovers = []
                elif cfg.saa:
                    # aborted, but the on-time arrivals are kept back and
                    # folded in at a later round instead of being thrown away
                    leftovers = result.fresh + result.leftovers
                else:
                    for w in result.fresh:
                        discard(w)
                        retire(w, t)
                    n_discarded += len(result.fresh)
                    leftovers = result.leftovers
            else:
                leftovers = result.leftovers
                for w in sorted(result.fresh, key=lambda w: w.learner_id):
                    fresh_records.append(
                        UpdateRecord(
                            learner_id=w.learner_id,
                            delta=w.delta,
                            origin_round=w.origin_round,
                            arrival_round=t,
                            samples=w.samples,
                        )
                    )
                    log.record_work(w.learner_id, w.compute_s, w.comm_s, "fresh")
                    retire(w, t)
            # ---- leftovers either keep running (stale acceptance) or are cut
            if cfg.saa:
                pending.extend(leftovers)
            else:
                for w in leftovers:
                    discard(w)
                    if w.completed:
                        retire(w, t)
                n_discarded += len(leftovers)
        round_end = t0 + state.duration
        # ---- stragglers from earlier rounds maturing at this boundary
        stale_records: list[UpdateRecord] = []
        if pending:
            matured, dropped, pending = track_stragglers(pending, t, round_end)
            for w in dropped:
                discard(w)
            n_discarded += len(dropped)
            pairs = [
                (
                    w,
                    UpdateRecord(
                        learner_id=w.learner_id,
                        delta=w.delta,
                        origin_round=w.origin_round,
                        arrival_round=t,
                        samples=w.samples,
                    ),
                )
                for w in matured
            ]
            accepted, _rejected = staleness_filter([rec for _, rec in pairs], policy)
            accepted_ids = {id(rec) for rec in accepted}
            for w, rec in pairs:
                if id(rec) in accepted_ids:
                    log.record_work(w.learner_id, w.compute_s, w.comm_s, "stale_used")
                    stale_records.append(rec)
                else:
                    discard(w)
                    n_discarded += 1
                retire(w, t)
            if t == cfg.rounds and pending:
                # run is over: whatever is still in flight can never land
                for w in sorted(pending, key=lambda w: w.learner_id):
                    discard(w)
                n_discarded += len(pending)
                pending = []
        state.arrivals = fresh_records + stale_records
        state.pending_stragglers = {w.learner_id: w.resolve_time for w in pending}
        # ---- aggregate and step the server model
        if state.arrivals:
            mixed = aggregate_mixed(fresh_records, stale_records, rule, cfg.sample_weighted)
            params = server_update(params, mixed, effective_lr)
        # ---- bookkeeping and the metrics row
        if state.outcome != "skipped":
            duration_est = update_round_duration(duration_est, state.duration, cfg.alpha)
        clock.advance(state.duration)
        if t % cfg.eval_stride == 0 or t == cfg.rounds:
            accuracy, train_loss = measure()
        log.append_row(
            t,
            clock.now,
            accuracy,
            train_loss,
            len(fresh_records),
            len(stale_records),
            n_discarded,
            state.outcome,
        )
        if cfg.record_trajectory:
            log.trajectory.append(params.copy())
    return log


def run_constant_delay(
    dataset: Dataset,
    shards,
    gamma: float,
    local_steps: int,
    batch_size: int,
    tau: int,
    rounds: int,
    seed: int = 0,
) -> VirtualIterateHistory:
    """Reference mode: every learner trains every round and the mean update
    lands exactly `tau` rounds late with equal weight.

    Records the server parameters and the population-mean gradient sums so
    the delayed-update accounting identity can be checked against the run.
    """
    if tau < 0 or rounds < 1:
        raise ValueError("tau must be >= 0 and rounds >= 1")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    params = init_params(dataset.n_classes, dataset.dim)
    history_params = [params.copy()]
    grad_means = []
    mean_deltas = []
    for t in range(rounds):
        deltas = [
            local_update(
                params,
                shard,
                dataset,
                gamma,
                local_steps,
                batch_size,
                _child_seed(seed, _S_TRAIN, t, shard.owner),
            )
            for shard in shards
        ]
        mean_delta = np.stack(deltas).mean(axis=0)
        mean_deltas.append(mean_delta)
        grad_means.append(-mean_delta / gamma)
        if t >= tau:
            params = params + mean_deltas[t - tau]
        history_params.append(params.copy())
    return VirtualIterateHistory(params=history_params, grad_means=grad_means)
