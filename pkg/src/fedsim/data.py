"""Synthetic classification data and per-learner partitioning.

Datasets are Gaussian class blobs in feature space. Partitioners carve the
training split into disjoint per-learner shards, either IID or with a
label-limited skew where each learner only holds a small subset of labels
and spreads its quota over them (balanced, uniform-random, or Zipf-ranked).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Class means are drawn from N(0, MEAN_SCALE^2) per coordinate; with the
# default spread of 1.0 this keeps classes mostly separable at small dims.
MEAN_SCALE = 2.0

_PARTITION_KINDS = ("uniform_iid", "label_limited")
_LABEL_DISTRIBUTIONS = ("balanced", "uniform", "zipf")

# Retry budget for re-drawing label subsets until every training label has
# at least one holder. Coverage is needed so shards can cover the split.
_COVERAGE_TRIES = 200


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer labels in [0, n_classes)."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be 1-D and match features rows")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Shard:
    """Index list into the global dataset owned by one learner."""

    owner: int
    sample_indices: np.ndarray

    def __post_init__(self) -> None:
        if len(np.unique(self.sample_indices)) != len(self.sample_indices):
            raise ValueError("shard indices must be unique")

    def __len__(self) -> int:
        return len(self.sample_indices)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split the training data across learners.

    kind: "uniform_iid" assigns every sample to a uniformly random learner;
        "label_limited" restricts each learner to a random label subset.
    label_fraction: fraction of all labels each learner may hold.
    per_learner_distribution: how a learner's quota is spread over its
        labels ("balanced", "uniform", or "zipf").
    zipf_alpha: exponent for the Zipf rank weights.
    """

    kind: str = "uniform_iid"
    label_fraction: float = 0.1
    per_learner_distribution: str = "balanced"
    zipf_alpha: float = 1.95

    def __post_init__(self) -> None:
        if self.kind not in _PARTITION_KINDS:
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if self.per_learner_distribution not in _LABEL_DISTRIBUTIONS:
            raise ValueError(
                f"unknown per-learner distribution {self.per_learner_distribution!r}"
            )
        if not 0.0 < self.label_fraction <= 1.0:
            raise ValueError("label_fraction must be in (0, 1]")
        if self.zipf_alpha <= 0.0:
            raise ValueError("zipf_alpha must be positive")


def generate_dataset(
    classes: int, dim: int, per_class: int, spread: float = 1.0, seed: int | None = 0
) -> Dataset:
    """Draw a Gaussian-blob dataset with `per_class` samples per class.

    Class means come first from the generator, then the sample noise, so a
    fixed seed pins the whole dataset bit-for-bit.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, MEAN_SCALE, size=(classes, dim))
    noise = rng.normal(size=(classes, per_class, dim))
    features = (means[:, None, :] + spread * noise).reshape(classes * per_class, dim)
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    return Dataset(features=features, labels=labels, n_classes=classes)


def train_test_split(
    dataset: Dataset, test_fraction: float = 0.2, seed: int | None = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled split; returns sorted (train, test) indices."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n_samples)
    n_test = int(round(test_fraction * dataset.n_samples))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return train_idx, test_idx


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer shares summing to `total`, proportional to non-negative weights.

    Ties in the fractional parts go to earlier entries, which keeps the
    result independent of float ordering quirks.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.sum() <= 0:
        weights = np.ones_like(weights)
    raw = weights / weights.sum() * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def _label_subsets(
    rng: np.random.Generator, learners: int, subset_size: int, present: np.ndarray
) -> list[np.ndarray]:
    """Random label subsets, re-drawn until every present label has a holder.

    When full coverage is impossible (learners * subset_size < number of
    labels) or the retry budget runs out, uncovered labels are appended to
    the smallest subsets so no training sample is left unassignable.
    """
    n_labels = len(present)
    size = min(subset_size, n_labels)
    feasible = learners * size >= n_labels
    subsets: list[np.ndarray] = []
    for _ in range(_COVERAGE_TRIES if feasible else 1):
        subsets = [rng.choice(present, size=size, replace=False) for _ in range(learners)]
        if not feasible or len(np.unique(np.concatenate(subsets))) == n_labels:
            break
    covered = set(np.concatenate(subsets).tolist())
    leftovers = [c for c in present.tolist() if c not in covered]
    for label in leftovers:
        target = min(range(learners), key=lambda i: (len(subsets[i]), i))
        subsets[target] = np.append(subsets[target], label)
    return subsets


def _quotas(n_train: int, learners: int) -> np.ndarray:
    base = n_train // learners
    quota = np.full(learners, base, dtype=np.int64)
    quota[: n_train % learners] += 1
    return quota


def _label_demands(
    rng: np.random.Generator, subset: np.ndarray, quota: int, spec: PartitionSpec
) -> np.ndarray:
    """How many samples of each of its labels one learner asks for."""
    s = len(subset)
    if spec.per_learner_distribution == "balanced":
        return _largest_remainder(quota, np.ones(s))
    if spec.per_learner_distribution == "uniform":
        return rng.multinomial(quota, np.full(s, 1.0 / s))
    ranks = np.arange(1, s + 1, dtype=float)
    return _largest_remainder(quota, ranks ** -spec.zipf_alpha)


def _partition_iid(
    rng: np.random.Generator, train_indices: np.ndarray, learners: int
) -> list[list[int]]:
    owners = rng.integers(0, learners, size=len(train_indices))
    assigned: list[list[int]] = [[] for _ in range(learners)]
    for idx, owner in zip(train_indices.tolist(), owners.tolist()):
        assigned[owner].append(idx)
    # An unlucky draw can leave a learner empty; steal one sample from the
    # largest shard so every learner can actually train.
    for owner in range(learners):
        if assigned[owner]:
            continue
        donor = max(range(learners), key=lambda i: (len(assigned[i]), -i))
        take = int(rng.integers(len(assigned[donor])))
        assigned[owner].append(assigned[donor].pop(take))
    return assigned


def _partition_label_limited(
    rng: np.random.Generator,
    dataset: Dataset,
    train_indices: np.ndarray,
    learners: int,
    spec: PartitionSpec,
) -> list[list[int]]:
    train_labels = dataset.labels[train_indices]
    present = np.unique(train_labels)
    subset_size = max(1, round(spec.label_fraction * dataset.n_classes))
    subsets = _label_subsets(rng, learners, subset_size, present)
    quotas = _quotas(len(train_indices), learners)
    demands = [
        _label_demands(rng, subsets[i], int(quotas[i]), spec) for i in range(learners)
    ]
    assigned: list[list[int]] = [[] for _ in range(learners)]
    # Each label pool is split among its holders in proportion to their
    # demands; this keeps shards disjoint while covering every sample.
    for label in present.tolist():
        pool = train_indices[train_labels == label]
        pool = rng.permutation(pool)
        takers = [i for i in range(learners) if label in subsets[i]]
        wants = np.array(
            [demands[i][list(subsets[i]).index(label)] for i in takers], dtype=float
        )
        shares = _largest_remainder(len(pool), wants)
        start = 0
        for taker, share in zip(takers, shares.tolist()):
            assigned[taker].extend(pool[start : start + share].tolist())
            start += share
    return assigned


def partition(
    dataset: Dataset,
    learners: int,
    spec: PartitionSpec,
    seed: int | None = 0,
    train_indices: np.ndarray | None = None,
) -> list[Shard]:
    """Split the training indices into one disjoint shard per learner.

    Args:
        dataset: the global dataset.
        learners: number of shards to produce.
        spec: partitioning strategy.
        seed: generator seed; fixed seed gives a fixed partition.
        train_indices: indices considered trainable. Defaults to the whole
            dataset.

    Returns:
        A list of `learners` shards whose union is exactly `train_indices`.
    """
    if train_indices is None:
        train_indices = np.arange(dataset.n_samples)
    train_indices = np.asarray(train_indices)
    if learners < 1:
        raise ValueError("learners must be >= 1")
    if learners > len(train_indices):
        raise ValueError(
            f"cannot split {len(train_indices)} training samples across {learners} learners"
        )
    rng = np.random.default_rng(seed)
    if spec.kind == "uniform_iid":
        assigned = _partition_iid(rng, train_indices, learners)
    else:
        assigned = _partition_label_limited(rng, dataset, train_indices, learners, spec)
    return [
        Shard(owner=i, sample_indices=np.sort(np.asarray(assigned[i], dtype=np.int64)))
        for i in range(learners)
    ]


def export_csv(dataset: Dataset, path: str | Path) -> None:
    """Write features and labels as f0..f{dim-1},label rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def import_csv(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: expected a trailing 'label' column")
        dim = len(header) - 1
        feats: list[list[float]] = []
        labels: list[int] = []
        for row in reader:
            feats.append([float(v) for v in row[:dim]])
            labels.append(int(row[dim]))
    features = np.asarray(feats, dtype=float).reshape(len(feats), dim)
    label_arr = np.asarray(labels, dtype=np.int64)
    n_classes = int(label_arr.max()) + 1 if len(label_arr) else 2
    return Dataset(features=features, labels=label_arr, n_classes=max(2, n_classes))
