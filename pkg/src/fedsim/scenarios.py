"""Canned experiment contrasts with pass bands.

Each scenario runs a small set of arms over three seeds, averages the
headline numbers, and checks them against bands frozen from calibration
runs.  `fedsim replicate <name>` prints the resulting report.

The five scenarios:

- ``safa_wastage``: select-all dispatch under a tight deadline burns most
  of its budget on late or over-stale updates; priority selection with
  unbounded staleness admission wastes a small fraction.
- ``priority_vs_random_noniid``: on label-limited shards with availability
  churn, availability-prioritized selection beats loss-proportional
  sampling on both final accuracy and population coverage.
- ``scaling_rules``: every stale-weight scaling rule stays near the fully
  synchronous reference accuracy.
- ``apt_tradeoff``: shrinking the fresh-participant target by the number
  of in-flight stragglers cuts resource spend without hurting accuracy.
- ``hw_advance``: doubling device speed across the fleet roughly halves
  the simulated time to a fixed accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from statistics import mean
from typing import Callable

from .engine import ExperimentConfig, dataset_for, run_experiment
from .metrics import MetricsLog

SCENARIO_SEEDS = (0, 1, 2)


@dataclass(frozen=True)
class ScenarioReport:
    """Outcome of one scenario run: band verdicts plus printable detail."""

    name: str
    passed: bool
    lines: tuple[str, ...]
    stats: dict[str, float] = field(default_factory=dict)


# --- arm configs, frozen after calibration ---------------------------------


def _safa_arms() -> dict[str, ExperimentConfig]:
    base = dict(
        n_learners=200,
        availability="AllAvail",
        mode="DL",
        deadline=0.15,
        saa=True,
        rule="dynsgd",
        gamma=0.1,
        local_steps=5,
        batch_size=16,
        classes=4,
        dim=8,
        per_class=250,
        data_seed=7,
        rounds=400,
    )
    return {
        "select_all": ExperimentConfig(
            name="safa-all",
            n0=20,
            target_ratio=0.1,
            selector="all",
            staleness_threshold=5,
            **base,
        ),
        "priority": ExperimentConfig(
            name="safa-priority",
            n0=5,
            target_ratio=0.8,
            selector="priority",
            staleness_threshold=None,
            **base,
        ),
    }


def _noniid_arms() -> dict[str, ExperimentConfig]:
    def arm(selector: str) -> ExperimentConfig:
        return ExperimentConfig(
            name=f"noniid-{selector}",
            n_learners=300,
            availability="DynAvail",
            trace_period=1800.0,
            n0=8,
            mode="OC",
            overcommit_factor=1.3,
            selector=selector,
            saa=True,
            rule="dynsgd",
            staleness_threshold=None,
            gamma=0.1,
            local_steps=20,
            batch_size=8,
            model_bytes=100_000,
            classes=5,
            dim=8,
            per_class=300,
            data_seed=7,
            partition="label_limited",
            label_fraction=0.1,
            label_distribution="uniform",
            rounds=500,
        )

    return {
        "priority": arm("priority"),
        "utility": arm("utility"),
        "random": arm("random"),
    }


def _scaling_arms() -> dict[str, ExperimentConfig]:
    base = dict(
        n_learners=10,
        n0=5,
        mode="OC",
        selector="random",
        gamma=0.1,
        local_steps=5,
        batch_size=16,
        classes=4,
        dim=8,
        per_class=250,
        data_seed=7,
        rounds=200,
    )
    arms = {
        "sync": ExperimentConfig(
            name="sync", overcommit_factor=1.0, saa=False, **base
        )
    }
    for rule in ("equal", "dynsgd", "adasgd", "hybrid"):
        arms[rule] = ExperimentConfig(
            name=f"stale-{rule}",
            overcommit_factor=2.0,
            saa=True,
            rule=rule,
            staleness_threshold=3,
            **base,
        )
    return arms


def _apt_arms() -> dict[str, ExperimentConfig]:
    def arm(apt: bool) -> ExperimentConfig:
        return ExperimentConfig(
            name=f"apt-{'on' if apt else 'off'}",
            n_learners=60,
            n0=10,
            mode="OC",
            overcommit_factor=1.5,
            selector="random",
            apt=apt,
            saa=True,
            rule="dynsgd",
            staleness_threshold=None,
            gamma=0.1,
            local_steps=5,
            batch_size=16,
            classes=4,
            dim=8,
            per_class=250,
            data_seed=7,
            rounds=200,
        )

    return {"fixed_target": arm(False), "adaptive_target": arm(True)}


_HW_TARGET = 0.85


def _hw_arms() -> dict[str, ExperimentConfig]:
    def arm(boosted: bool) -> ExperimentConfig:
        return ExperimentConfig(
            name=f"hw-{'fast' if boosted else 'base'}",
            n_learners=50,
            n0=10,
            mode="OC",
            overcommit_factor=1.3,
            selector="random",
            hw_speedup_fraction=1.0 if boosted else 0.0,
            hw_speedup_factor=2.0,
            gamma=0.1,
            local_steps=5,
            batch_size=16,
            classes=4,
            dim=8,
            per_class=250,
            data_seed=7,
            rounds=150,
        )

    return {"baseline": arm(False), "advanced": arm(True)}


_ARM_BUILDERS: dict[str, Callable[[], dict[str, ExperimentConfig]]] = {
    "safa_wastage": _safa_arms,
    "priority_vs_random_noniid": _noniid_arms,
    "scaling_rules": _scaling_arms,
    "apt_tradeoff": _apt_arms,
    "hw_advance": _hw_arms,
}

SCENARIO_NAMES = tuple(_ARM_BUILDERS)


def scenario_arms(name: str) -> dict[str, ExperimentConfig]:
    """Arm configs for `name`, seed 0; reseed with dataclasses.replace."""
    if name not in _ARM_BUILDERS:
        raise ValueError(
            f"unknown scenario {name!r}; valid: {', '.join(SCENARIO_NAMES)}"
        )
    return _ARM_BUILDERS[name]()


def run_arm(
    cfg: ExperimentConfig, seeds: tuple[int, ...] = SCENARIO_SEEDS
) -> list[MetricsLog]:
    """Run one arm once per seed on its own dataset."""
    dataset = dataset_for(cfg)
    return [run_experiment(replace(cfg, seed=s), dataset) for s in seeds]


def _verdict(label: str, ok: bool) -> str:
    return f"  band {label}: {'PASS' if ok else 'FAIL'}"


def _seed_list(values: list[float]) -> str:
    return " ".join(f"{v:.3f}" for v in values)


# --- scenario runners ------------------------------------------------------


def _run_safa_wastage(seeds: tuple[int, ...]) -> ScenarioReport:
    arms = scenario_arms("safa_wastage")
    ratios: dict[str, float] = {}
    lines: list[str] = []
    for label, cfg in arms.items():
        per_seed = []
        for log in run_arm(cfg, seeds):
            last = log.rows[-1]
            per_seed.append(last.cumulative_wastage_s / last.cumulative_resource_s)
        ratios[label] = mean(per_seed)
        lines.append(
            f"  {label:11s} wastage/resource mean {ratios[label]:.3f}"
            f"  (seeds: {_seed_list(per_seed)})"
        )
    in_band = 0.6 <= ratios["select_all"] <= 0.9
    gap = ratios["select_all"] >= 3.0 * ratios["priority"]
    lines.append(_verdict(f"0.60 <= {ratios['select_all']:.3f} <= 0.90", in_band))
    lines.append(
        _verdict(
            f"{ratios['select_all']:.3f} >= 3 x {ratios['priority']:.3f}", gap
        )
    )
    return ScenarioReport(
        name="safa_wastage",
        passed=in_band and gap,
        lines=tuple(lines),
        stats={
            "select_all_ratio": ratios["select_all"],
            "priority_ratio": ratios["priority"],
        },
    )


def _run_noniid(seeds: tuple[int, ...]) -> ScenarioReport:
    arms = scenario_arms("priority_vs_random_noniid")
    stats: dict[str, float] = {}
    lines: list[str] = []
    for label, cfg in arms.items():
        accs, rates = [], []
        for log in run_arm(cfg, seeds):
            accs.append(log.final_accuracy())
            rates.append(log.unique_participant_rate(cfg.n_learners))
        stats[f"{label}_acc"] = mean(accs)
        stats[f"{label}_uniq"] = mean(rates)
        lines.append(
            f"  {label:8s} accuracy mean {stats[f'{label}_acc']:.4f}"
            f" (seeds: {_seed_list(accs)})"
            f"  coverage mean {stats[f'{label}_uniq']:.4f}"
        )
    acc_ok = stats["priority_acc"] >= stats["utility_acc"]
    uniq_ok = stats["priority_uniq"] >= stats["utility_uniq"]
    lines.append(
        _verdict(
            f"priority accuracy {stats['priority_acc']:.4f} >="
            f" utility {stats['utility_acc']:.4f}",
            acc_ok,
        )
    )
    lines.append(
        _verdict(
            f"priority coverage {stats['priority_uniq']:.4f} >="
            f" utility {stats['utility_uniq']:.4f}",
            uniq_ok,
        )
    )
    lines.append("  (random arm shown for context, no band)")
    return ScenarioReport(
        name="priority_vs_random_noniid",
        passed=acc_ok and uniq_ok,
        lines=tuple(lines),
        stats=stats,
    )


def _run_scaling_rules(seeds: tuple[int, ...]) -> ScenarioReport:
    arms = scenario_arms("scaling_rules")
    stats: dict[str, float] = {}
    lines: list[str] = []
    for label, cfg in arms.items():
        accs = [log.final_accuracy() for log in run_arm(cfg, seeds)]
        stats[f"{label}_acc"] = mean(accs)
        lines.append(
            f"  {label:7s} accuracy mean {stats[f'{label}_acc']:.4f}"
            f" (seeds: {_seed_list(accs)})"
        )
    floor = stats["sync_acc"] - 0.05
    passed = True
    for rule in ("equal", "dynsgd", "adasgd", "hybrid"):
        ok = stats[f"{rule}_acc"] >= floor
        passed = passed and ok
        lines.append(_verdict(f"{rule} {stats[f'{rule}_acc']:.4f} >= {floor:.4f}", ok))
    return ScenarioReport(
        name="scaling_rules", passed=passed, lines=tuple(lines), stats=stats
    )


def _run_apt_tradeoff(seeds: tuple[int, ...]) -> ScenarioReport:
    arms = scenario_arms("apt_tradeoff")
    stats: dict[str, float] = {}
    lines: list[str] = []
    for label, cfg in arms.items():
        accs, spend = [], []
        for log in run_arm(cfg, seeds):
            accs.append(log.final_accuracy())
            spend.append(log.rows[-1].cumulative_resource_s)
        stats[f"{label}_acc"] = mean(accs)
        stats[f"{label}_resource"] = mean(spend)
        lines.append(
            f"  {label:15s} accuracy mean {stats[f'{label}_acc']:.4f}"
            f"  resource mean {stats[f'{label}_resource']:.1f}s"
        )
    saves = stats["adaptive_target_resource"] < stats["fixed_target_resource"]
    holds = stats["adaptive_target_acc"] >= stats["fixed_target_acc"] - 0.03
    lines.append(
        _verdict(
            f"resource {stats['adaptive_target_resource']:.1f}"
            f" < {stats['fixed_target_resource']:.1f}",
            saves,
        )
    )
    lines.append(
        _verdict(
            f"accuracy {stats['adaptive_target_acc']:.4f} >="
            f" {stats['fixed_target_acc']:.4f} - 0.03",
            holds,
        )
    )
    return ScenarioReport(
        name="apt_tradeoff", passed=saves and holds, lines=tuple(lines), stats=stats
    )


def _run_hw_advance(seeds: tuple[int, ...]) -> ScenarioReport:
    arms = scenario_arms("hw_advance")
    stats: dict[str, float] = {}
    lines: list[str] = []
    for label, cfg in arms.items():
        accs, ttas = [], []
        for log in run_arm(cfg, seeds):
            accs.append(log.final_accuracy())
            hit = log.time_to_accuracy(_HW_TARGET)
            ttas.append(hit[0] if hit is not None else math.inf)
        stats[f"{label}_acc"] = mean(accs)
        stats[f"{label}_tta"] = mean(ttas)
        lines.append(
            f"  {label:8s} accuracy mean {stats[f'{label}_acc']:.4f}"
            f"  time to {_HW_TARGET:.2f} mean {stats[f'{label}_tta']:.1f}s"
            f" (seeds: {_seed_list(ttas)})"
        )
    reached = math.isfinite(stats["baseline_tta"]) and math.isfinite(
        stats["advanced_tta"]
    )
    faster = reached and stats["advanced_tta"] <= 0.7 * stats["baseline_tta"]
    held = abs(stats["advanced_acc"] - stats["baseline_acc"]) <= 0.02
    lines.append(
        _verdict(
            f"time to target {stats['advanced_tta']:.1f}"
            f" <= 0.7 x {stats['baseline_tta']:.1f}",
            faster,
        )
    )
    lines.append(
        _verdict(
            f"|accuracy gap| {abs(stats['advanced_acc'] - stats['baseline_acc']):.4f}"
            " <= 0.02",
            held,
        )
    )
    return ScenarioReport(
        name="hw_advance", passed=faster and held, lines=tuple(lines), stats=stats
    )


_RUNNERS: dict[str, Callable[[tuple[int, ...]], ScenarioReport]] = {
    "safa_wastage": _run_safa_wastage,
    "priority_vs_random_noniid": _run_noniid,
    "scaling_rules": _run_scaling_rules,
    "apt_tradeoff": _run_apt_tradeoff,
    "hw_advance": _run_hw_advance,
}


def run_scenario(
    name: str, seeds: tuple[int, ...] = SCENARIO_SEEDS
) -> ScenarioReport:
    """Run one named scenario and evaluate its bands."""
    if name not in _RUNNERS:
        raise ValueError(
            f"unknown scenario {name!r}; valid: {', '.join(SCENARIO_NAMES)}"
        )
    if not seeds:
        raise ValueError("seeds must be non-empty")
    return _RUNNERS[name](tuple(seeds))
