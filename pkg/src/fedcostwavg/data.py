"""Synthetic datasets and uneven partitioning across simulated centers.

Two tasks:

- ``blobs-classification``: class-conditional Gaussian clusters, near-balanced
  integer labels.
- ``linear-regression``: targets from a hidden random linear map plus Gaussian
  noise (exactly realizable when noise is 0).

Non-IID-ness comes from label-skew Dirichlet partitioning: per class, center
proportions are drawn from a symmetric Dirichlet(beta).  Smaller beta means
more skew.  Regression datasets have no labels, so all samples are treated as
one class there, which skews only the center sizes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TASKS = ("blobs-classification", "linear-regression")

MAX_PARTITION_ATTEMPTS = 1000


@dataclass
class Dataset:
    task: str
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.task, self.inputs[idx], self.targets[idx])


@dataclass
class Partition:
    """Disjoint index lists, one per center, covering the whole dataset."""

    center_indices: list[np.ndarray]

    @property
    def n_centers(self) -> int:
        return len(self.center_indices)

    def sizes(self) -> list[int]:
        return [len(ix) for ix in self.center_indices]


def generate(
    task: str,
    n: int,
    input_dim: int,
    n_classes: int = 1,
    noise: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Deterministic synthetic dataset for the given task."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    if n < 1 or input_dim < 1:
        raise ConfigError("n and input_dim must be >= 1")
    if noise < 0:
        raise ConfigError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    if task == "blobs-classification":
        if not 1 <= n_classes <= n:
            raise ConfigError(f"need n >= n_classes >= 1, got n={n}, n_classes={n_classes}")
        centers = rng.uniform(-4.0, 4.0, (n_classes, input_dim))
        labels = np.arange(n, dtype=np.int64) % n_classes
        rng.shuffle(labels)
        inputs = centers[labels] + noise * rng.standard_normal((n, input_dim))
        return Dataset(task, inputs, labels)
    hidden_w = rng.standard_normal((input_dim, 1))
    hidden_b = rng.standard_normal(1)
    inputs = rng.standard_normal((n, input_dim))
    targets = inputs @ hidden_w + hidden_b + noise * rng.standard_normal((n, 1))
    return Dataset(task, inputs, targets)


def partition_dirichlet(dataset: Dataset, n_centers: int, beta: float, seed: int) -> Partition:
    """Split a dataset across centers with Dirichlet(beta)-skewed proportions.

    Every center is guaranteed non-empty: draws leaving a center empty are
    retried with an incremented seed offset, up to MAX_PARTITION_ATTEMPTS.
    """
    if n_centers < 1 or n_centers > dataset.n:
        raise ConfigError(f"n_centers must be in [1, {dataset.n}], got {n_centers}")
    if not beta > 0:
        raise ConfigError("beta must be > 0")

    if np.issubdtype(np.asarray(dataset.targets).dtype, np.integer):
        class_indices = [np.flatnonzero(dataset.targets == c) for c in np.unique(dataset.targets)]
    else:
        class_indices = [np.arange(dataset.n)]

    for attempt in range(MAX_PARTITION_ATTEMPTS):
        rng = np.random.default_rng(seed + attempt)
        buckets: list[list[np.ndarray]] = [[] for _ in range(n_centers)]
        for idx in class_indices:
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(n_centers, beta))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for center, chunk in enumerate(np.split(idx, cuts)):
                buckets[center].append(chunk)
        merged = [np.sort(np.concatenate(b)) for b in buckets]
        if all(len(m) > 0 for m in merged):
            return Partition(merged)
    raise ConfigError(
        f"could not draw a partition with all {n_centers} centers non-empty "
        f"in {MAX_PARTITION_ATTEMPTS} attempts (beta={beta})"
    )


def split_train_val(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint covering split; train gets floor(fraction * n) examples."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    n_train = int(np.floor(fraction * dataset.n))
    train_idx = np.sort(perm[:n_train])
    val_idx = np.sort(perm[n_train:])
    return dataset.subset(train_idx), dataset.subset(val_idx)


def dump_csv(dataset: Dataset, path) -> None:
    """Write the dataset as CSV: feature columns x0..xD-1, then the target."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        d = dataset.inputs.shape[1]
        header = [f"x{i}" for i in range(d)]
        if np.issubdtype(np.asarray(dataset.targets).dtype, np.integer):
            writer.writerow(header + ["label"])
            for row, y in zip(dataset.inputs, dataset.targets):
                writer.writerow([repr(float(v)) for v in row] + [int(y)])
        else:
            t = dataset.targets.shape[1]
            writer.writerow(header + [f"y{i}" for i in range(t)])
            for row, ys in zip(dataset.inputs, dataset.targets):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(v)) for v in ys])


def load_csv(path, task: str) -> Dataset:
    """Inverse of dump_csv for the given task."""
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_features = sum(1 for name in header if name.startswith("x"))
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path} holds no data rows")
    inputs = np.array([[float(v) for v in row[:n_features]] for row in rows])
    if task == "blobs-classification":
        targets = np.array([int(row[n_features]) for row in rows], dtype=np.int64)
    else:
        targets = np.array([[float(v) for v in row[n_features:]] for row in rows])
    return Dataset(task, inputs, targets)
