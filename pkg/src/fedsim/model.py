"""Multinomial logistic regression on flat parameter vectors.

Parameters live in a single float64 vector of length n_classes * dim +
n_classes (row-major weight matrix followed by the bias). Keeping the model
flat lets the aggregation code treat updates as plain vectors.
"""
from __future__ import annotations

import numpy as np

from .data import Dataset, Shard


def param_length(n_classes: int, dim: int) -> int:
    return n_classes * dim + n_classes


def init_params(n_classes: int, dim: int) -> np.ndarray:
    """All-zero start; the cross-entropy there is exactly log(n_classes)."""
    return np.zeros(param_length(n_classes, dim))


def _unpack(params: np.ndarray, n_classes: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if params.shape != (param_length(n_classes, dim),):
        raise ValueError("parameter vector has the wrong length")
    weights = params[: n_classes * dim].reshape(n_classes, dim)
    bias = params[n_classes * dim :]
    return weights, bias


def _logits(params: np.ndarray, dataset: Dataset, indices: np.ndarray) -> np.ndarray:
    weights, bias = _unpack(params, dataset.n_classes, dataset.dim)
    return dataset.features[indices] @ weights.T + bias


def loss_and_gradient(
    params: np.ndarray, dataset: Dataset, indices: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its exact gradient over the given rows.

    Returns:
        (loss, gradient) with the gradient laid out like the parameters.
    """
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("cannot evaluate a loss over zero samples")
    if not np.all(np.isfinite(params)):
        raise ValueError("non-finite parameters")
    x = dataset.features[indices]
    y = dataset.labels[indices]
    z = _logits(params, dataset, indices)
    zmax = z.max(axis=1, keepdims=True)
    log_norm = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    batch = len(indices)
    loss = float(-log_probs[np.arange(batch), y].mean())
    probs = np.exp(log_probs)
    probs[np.arange(batch), y] -= 1.0
    probs /= batch
    grad_w = probs.T @ x
    grad_b = probs.sum(axis=0)
    grad = np.concatenate([grad_w.ravel(), grad_b])
    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise ValueError("non-finite loss or gradient")
    return loss, grad


def evaluate(params: np.ndarray, dataset: Dataset, indices: np.ndarray) -> float:
    """Argmax accuracy; argmax breaks ties toward the lowest class id."""
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise ValueError("cannot evaluate accuracy over zero samples")
    predictions = np.argmax(_logits(params, dataset, indices), axis=1)
    return float(np.mean(predictions == dataset.labels[indices]))


def batch_schedule(n_samples: int, batch_size: int, steps: int, seed) -> list[np.ndarray]:
    """Minibatch index arrays for `steps` SGD steps.

    Sampling is without replacement within an epoch: each epoch is a fresh
    permutation cut into consecutive slices, the last one possibly short.
    """
    if n_samples < 1 or batch_size < 1 or steps < 1:
        raise ValueError("n_samples, batch_size, and steps must be >= 1")
    rng = np.random.default_rng(seed)
    batches: list[np.ndarray] = []
    while len(batches) < steps:
        perm = rng.permutation(n_samples)
        for start in range(0, n_samples, batch_size):
            batches.append(perm[start : start + batch_size])
            if len(batches) == steps:
                break
    return batches


def samples_processed(n_samples: int, batch_size: int, steps: int) -> int:
    """Total samples touched by `steps` steps of the epoch batch cycle."""
    if n_samples < 1 or batch_size < 1 or steps < 1:
        raise ValueError("n_samples, batch_size, and steps must be >= 1")
    per_epoch = [
        min(batch_size, n_samples - start) for start in range(0, n_samples, batch_size)
    ]
    full, extra = divmod(steps, len(per_epoch))
    return full * n_samples + sum(per_epoch[:extra])


def local_update(
    params: np.ndarray,
    shard: Shard | np.ndarray,
    dataset: Dataset,
    gamma: float,
    steps: int,
    batch_size: int,
    seed,
) -> np.ndarray:
    """Run `steps` minibatch SGD steps from `params` and return the delta.

    The caller's parameter vector is never mutated; the returned delta is
    (final - initial), so it already carries the step size.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    indices = shard.sample_indices if isinstance(shard, Shard) else np.asarray(shard)
    if len(indices) == 0:
        raise ValueError("cannot train on an empty shard")
    current = params.copy()
    for batch in batch_schedule(len(indices), batch_size, steps, seed):
        _, grad = loss_and_gradient(current, dataset, indices[batch])
        current -= gamma * grad
    return current - params
