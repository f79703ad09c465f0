"""Per-round metrics log and resource accounting.

Every dispatched piece of work lands in exactly one of three buckets:
useful fresh time, useful stale time, or wastage. The cumulative resource
column is defined as the sum of the three buckets, so the conservation
identity holds exactly on every row by construction.

CSV exports format floats with repr(), which round-trips, so exporting an
imported log reproduces the file byte for byte.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

CSV_COLUMNS = (
    "round",
    "sim_time",
    "test_accuracy",
    "train_loss",
    "cumulative_resource_s",
    "cumulative_wastage_s",
    "unique_participants",
    "n_fresh",
    "n_stale",
    "n_discarded",
    "round_outcome",
)

DISPOSITIONS = ("fresh", "stale_used", "discarded")

OUTCOMES = ("initial", "success", "failed", "skipped")


@dataclass(frozen=True)
class MetricsRow:
    round: int
    sim_time: float
    test_accuracy: float
    train_loss: float
    cumulative_resource_s: float
    cumulative_wastage_s: float
    unique_participants: int
    n_fresh: int
    n_stale: int
    n_discarded: int
    round_outcome: str

    def __post_init__(self) -> None:
        if self.round_outcome not in OUTCOMES:
            raise ValueError(f"unknown round outcome {self.round_outcome!r}")


class MetricsLog:
    """Accumulates per-round rows plus the work-time buckets behind them."""

    def __init__(self) -> None:
        self.rows: list[MetricsRow] = []
        self.fresh_time_s = 0.0
        self.stale_time_s = 0.0
        self.wastage_time_s = 0.0
        self.aggregated_ids: set[int] = set()
        self.trajectory: list[np.ndarray] | None = None

    @property
    def cumulative_resource_s(self) -> float:
        return self.fresh_time_s + self.stale_time_s + self.wastage_time_s

    def record_work(
        self, learner_id: int, compute_s: float, comm_s: float, disposition: str
    ) -> None:
        """Charge one work item's cost to its bucket.

        Learners whose update was folded into the model (fresh or stale)
        count toward the unique-participant tally.
        """
        if disposition not in DISPOSITIONS:
            raise ValueError(f"unknown disposition {disposition!r}")
        if compute_s < 0 or comm_s < 0:
            raise ValueError("work times must be >= 0")
        cost = compute_s + comm_s
        if disposition == "fresh":
            self.fresh_time_s += cost
            self.aggregated_ids.add(learner_id)
        elif disposition == "stale_used":
            self.stale_time_s += cost
            self.aggregated_ids.add(learner_id)
        else:
            self.wastage_time_s += cost

    def append_row(
        self,
        round_index: int,
        sim_time: float,
        test_accuracy: float,
        train_loss: float,
        n_fresh: int,
        n_stale: int,
        n_discarded: int,
        round_outcome: str,
    ) -> None:
        self.rows.append(
            MetricsRow(
                round=round_index,
                sim_time=sim_time,
                test_accuracy=test_accuracy,
                train_loss=train_loss,
                cumulative_resource_s=self.cumulative_resource_s,
                cumulative_wastage_s=self.wastage_time_s,
                unique_participants=len(self.aggregated_ids),
                n_fresh=n_fresh,
                n_stale=n_stale,
                n_discarded=n_discarded,
                round_outcome=round_outcome,
            )
        )

    def time_to_accuracy(self, target: float) -> tuple[float, float] | None:
        """Simulated time and resource spent when `target` is first reached;
        None when the log never gets there."""
        for row in self.rows:
            if row.test_accuracy >= target:
                return row.sim_time, row.cumulative_resource_s
        return None

    def unique_participant_rate(self, total_learners: int) -> float:
        if total_learners < 1:
            raise ValueError("total_learners must be >= 1")
        return len(self.aggregated_ids) / total_learners

    def final_accuracy(self) -> float:
        if not self.rows:
            raise ValueError("empty log")
        return self.rows[-1].test_accuracy


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_metrics(log: MetricsLog, path: str | Path) -> None:
    """Write the log as CSV or JSON depending on the file extension."""
    path = Path(path)
    if path.suffix == ".json":
        payload = [
            {name: getattr(row, name) for name in CSV_COLUMNS} for row in log.rows
        ]
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in log.rows:
            writer.writerow([_format_value(getattr(row, name)) for name in CSV_COLUMNS])


def import_metrics(path: str | Path) -> MetricsLog:
    """Load an exported log. Work-time buckets are reconstructed from the
    cumulative columns so conservation checks still apply."""
    path = Path(path)
    log = MetricsLog()
    if path.suffix == ".json":
        records = json.loads(path.read_text())
    else:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{path}: unexpected columns {header}")
            records = [dict(zip(CSV_COLUMNS, row)) for row in reader]
    for rec in records:
        row = MetricsRow(
            round=int(rec["round"]),
            sim_time=float(rec["sim_time"]),
            test_accuracy=float(rec["test_accuracy"]),
            train_loss=float(rec["train_loss"]),
            cumulative_resource_s=float(rec["cumulative_resource_s"]),
            cumulative_wastage_s=float(rec["cumulative_wastage_s"]),
            unique_participants=int(rec["unique_participants"]),
            n_fresh=int(rec["n_fresh"]),
            n_stale=int(rec["n_stale"]),
            n_discarded=int(rec["n_discarded"]),
            round_outcome=str(rec["round_outcome"]),
        )
        log.rows.append(row)
    if log.rows:
        last = log.rows[-1]
        log.wastage_time_s = last.cumulative_wastage_s
        log.fresh_time_s = last.cumulative_resource_s - last.cumulative_wastage_s
    return log


def export_curves(log: MetricsLog, prefix: str | Path) -> tuple[Path, Path]:
    """Emit two-column plot files: resource vs accuracy and time vs accuracy."""
    prefix = Path(prefix)
    resource_path = prefix.with_name(prefix.name + "_resource_accuracy.dat")
    time_path = prefix.with_name(prefix.name + "_time_accuracy.dat")
    with open(resource_path, "w") as fh:
        fh.write("# cumulative_resource_s test_accuracy\n")
        for row in log.rows:
            fh.write(f"{_format_value(row.cumulative_resource_s)} {_format_value(row.test_accuracy)}\n")
    with open(time_path, "w") as fh:
        fh.write("# sim_time_s test_accuracy\n")
        for row in log.rows:
            fh.write(f"{_format_value(row.sim_time)} {_format_value(row.test_accuracy)}\n")
    return resource_path, time_path
