"""Datasets, synthetic federated data, non-IID partitioners and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from fedsim.errors import (
    DataIOError,
    InvalidSpecError,
    NonNumericCellError,
    RaggedRowsError,
    TooManyClientsError,
)
from fedsim.rng import Rng


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix (n_samples x n_features) with integer labels in ``0..n_classes-1``."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"features must be a non-empty 2-D array, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} samples")
        if self.n_classes < 1 or y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)

    def columns(self, cols) -> "Dataset":
        return Dataset(self.features[:, list(cols)], self.labels, self.n_classes)

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        return Dataset(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            max(p.n_classes for p in parts),
        )


@dataclass(frozen=True)
class Partition:
    """client_id -> sorted array of sample indices."""

    assignments: dict[int, np.ndarray]

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(self.assignments[k]) for k in sorted(self.assignments)]

    def __getitem__(self, client_id: int) -> np.ndarray:
        return self.assignments[client_id]


def _make_partition(groups) -> Partition:
    return Partition({k: np.sort(np.asarray(g, dtype=np.int64)) for k, g in enumerate(groups)})


def check_partition(p: Partition, n_samples: int) -> None:
    """Raise ``AssertionError`` unless ``p`` is disjoint, covering and has no empty client."""
    assert sorted(p.assignments) == list(range(p.n_clients)), "client IDs must be 0..n-1"
    allidx = np.concatenate([p.assignments[k] for k in range(p.n_clients)])
    assert all(len(p.assignments[k]) > 0 for k in range(p.n_clients)), "empty client"
    assert len(allidx) == n_samples, "partition does not cover the dataset exactly once"
    assert np.array_equal(np.sort(allidx), np.arange(n_samples)), "overlapping or missing indices"


# ---------------------------------------------------------------------------
# Synthetic (alpha, beta)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Synthetic(alpha, beta) federated benchmark.

    ``alpha`` controls how much client models differ and ``beta`` how much
    client feature distributions differ; both are standard deviations.
    ``samples_per_client`` is an int (same for all) or one int per client.
    """

    alpha: float
    beta: float
    n_clients: int
    samples_per_client: int | tuple[int, ...]
    n_features: int = 60
    n_classes: int = 10

    def sizes(self) -> list[int]:
        s = self.samples_per_client
        if isinstance(s, (int, np.integer)):
            return [int(s)] * self.n_clients
        return [int(v) for v in s]

    def validate(self) -> None:
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)) or self.alpha < 0 or self.beta < 0:
            raise InvalidSpecError("alpha and beta must be finite and non-negative")
        if self.n_clients < 1 or self.n_features < 1 or self.n_classes < 1:
            raise InvalidSpecError("n_clients, n_features and n_classes must be positive")
        sizes = self.sizes()
        if len(sizes) != self.n_clients or min(sizes) < 1:
            raise InvalidSpecError("samples_per_client must give one positive size per client")


def generate_synthetic(spec: SyntheticSpec, seed: int, return_models: bool = False):
    """Per-client datasets from the Synthetic(alpha, beta) generator.

    For client k: ``u_k ~ N(0, alpha^2)``, ``B_k ~ N(0, beta^2)``; model
    ``W_k ~ N(u_k, 1)`` (d x C) and ``b_k ~ N(u_k, 1)``; feature mean
    ``v_k ~ N(B_k, 1)`` per coordinate; ``x ~ N(v_k, diag(j^-1.2))``; label
    ``argmax(x W_k + b_k)``.

    With ``return_models`` the generating ``(W_k, b_k)`` pairs are returned too.
    """
    spec.validate()
    d, C = spec.n_features, spec.n_classes
    sigma = np.arange(1, d + 1, dtype=np.float64) ** -1.2
    datasets, models = [], []
    for k, n_k in enumerate(spec.sizes()):
        rng = Rng(seed, "synthetic", k)
        u_k = spec.alpha * rng.normal()
        B_k = spec.beta * rng.normal()
        W = rng.normal((d, C), loc=u_k)
        b = rng.normal(C, loc=u_k)
        v = rng.normal(d, loc=B_k)
        x = v + np.sqrt(sigma) * rng.normal((n_k, d))
        y = np.argmax(x @ W + b, axis=1)
        datasets.append(Dataset(x, y, C))
        models.append((W, b))
    return (datasets, models) if return_models else datasets


# ---------------------------------------------------------------------------
# Partitioners
# ---------------------------------------------------------------------------


def partition_iid(dataset: Dataset, n_clients: int, seed: int) -> Partition:
    """Uniformly random, near-equal split."""
    if not 1 <= n_clients <= dataset.n_samples:
        raise TooManyClientsError(f"cannot split {dataset.n_samples} samples among {n_clients} clients")
    perm = Rng(seed, "partition_iid").permutation(dataset.n_samples)
    return _make_partition(np.array_split(perm, n_clients))


def partition_lda(dataset: Dataset, n_clients: int, alpha: float, seed: int) -> Partition:
    """Label-skewed split: per class, client shares drawn from Dirichlet(alpha).

    Each sample of class c goes to a client drawn from that class's shares.
    Clients left empty steal one sample (the highest index) from the
    currently largest client, lowest ID on ties, until none is empty.
    """
    if alpha <= 0 or not np.isfinite(alpha):
        raise InvalidSpecError("alpha must be positive and finite")
    if not 1 <= n_clients <= dataset.n_samples:
        raise TooManyClientsError(f"cannot split {dataset.n_samples} samples among {n_clients} clients")
    rng = Rng(seed, "partition_lda")
    groups: list[list[int]] = [[] for _ in range(n_clients)]
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        shares = rng.dirichlet(np.full(n_clients, alpha))
        owner = rng.categorical(shares, idx.size)
        for k in range(n_clients):
            groups[k].extend(idx[owner == k].tolist())
    while True:
        empty = [k for k in range(n_clients) if not groups[k]]
        if not empty:
            break
        donor = max(range(n_clients), key=lambda k: (len(groups[k]), -k))
        groups[donor].sort()
        groups[empty[0]].append(groups[donor].pop())
    return _make_partition(groups)


def power_law_sizes(n_samples: int, n_clients: int, exponent: float, min_samples: int) -> list[int]:
    """Client sizes proportional to ``rank^-exponent``, floored at ``min_samples``, summing to ``n_samples``.

    Sizes are non-increasing in rank.
    """
    if min_samples < 1:
        raise InvalidSpecError("min_samples must be positive")
    if n_clients < 1 or n_clients * min_samples > n_samples:
        raise TooManyClientsError(
            f"{n_clients} clients x {min_samples} minimum exceeds {n_samples} samples"
        )
    ranks = np.arange(1, n_clients + 1, dtype=np.float64)
    raw = ranks**-exponent
    target = raw / raw.sum() * n_samples
    sizes = [max(min_samples, int(np.floor(t))) for t in target]
    diff = n_samples - sum(sizes)
    k = 0
    while diff > 0:
        # add to a prefix: keeps the sequence non-increasing
        sizes[k % n_clients] += 1
        diff -= 1
        k += 1
    while diff < 0:
        # take from the last client holding the maximum: keeps it non-increasing
        top = max(sizes)
        j = max(i for i, s in enumerate(sizes) if s == top)
        sizes[j] -= 1
        diff += 1
    return sizes


def partition_power_law(
    dataset: Dataset, n_clients: int, exponent: float = 1.0, min_samples: int = 10, seed: int = 0
) -> Partition:
    """Power-law client sizes; samples handed out class-contiguously.

    Samples are ordered by class (shuffled within each class) and sliced into
    consecutive blocks of the sizes from :func:`power_law_sizes`.
    """
    sizes = power_law_sizes(dataset.n_samples, n_clients, exponent, min_samples)
    rng = Rng(seed, "partition_power_law")
    order = np.concatenate(
        [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in range(dataset.n_classes)]
    )
    bounds = np.cumsum(sizes)[:-1]
    return _make_partition(np.split(order, bounds))


def partition_one_class(dataset: Dataset, n_clients: int, seed: int = 0) -> Partition:
    """Classes dealt round-robin to clients: class rank i goes to client ``i % n_clients``.

    Only classes that occur in ``dataset`` are dealt, so every client is
    non-empty. The split is fully determined by the labels; ``seed`` is
    accepted for interface symmetry.
    """
    present = np.unique(dataset.labels)
    if n_clients > dataset.n_classes or n_clients > present.size:
        raise TooManyClientsError(
            f"{n_clients} clients but only {present.size} of {dataset.n_classes} classes present"
        )
    groups: list[list[int]] = [[] for _ in range(n_clients)]
    for i, c in enumerate(present):
        groups[i % n_clients].extend(np.flatnonzero(dataset.labels == c).tolist())
    return _make_partition(groups)


def label_histograms(dataset: Dataset, partition: Partition) -> np.ndarray:
    """(n_clients x n_classes) label counts."""
    return np.stack(
        [np.bincount(dataset.labels[partition[k]], minlength=dataset.n_classes) for k in range(partition.n_clients)]
    )


def mean_label_entropy(dataset: Dataset, partition: Partition) -> float:
    """Average over clients of the Shannon entropy (nats) of the client's label distribution."""
    hist = label_histograms(dataset, partition).astype(np.float64)
    p = hist / hist.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    return float(ent.mean())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv(path, label_column: int, skip_header: bool = False) -> Dataset:
    """Read a numeric CSV; labels are remapped to dense ``0..C-1`` in numeric order.

    ``label_column`` may be negative (counted from the end).
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if skip_header:
        rows = rows[1:]
    rows = [(i, r) for i, r in enumerate(rows, start=2 if skip_header else 1) if r]
    if not rows:
        raise DataIOError(f"{path}: no data rows")
    width = len(rows[0][1])
    if not -width <= label_column < width:
        raise InvalidSpecError(f"label_column {label_column} out of range for {width} columns")
    lc = label_column % width
    table = np.empty((len(rows), width))
    for r, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise RaggedRowsError(lineno, width, len(row))
        for c, cell in enumerate(row):
            try:
                table[r, c] = float(cell)
            except ValueError:
                raise NonNumericCellError(lineno, c, cell) from None
    raw = table[:, lc]
    bad = np.flatnonzero(~np.isfinite(raw) | (raw != np.round(raw)))
    if bad.size:
        lineno, row = rows[bad[0]]
        raise NonNumericCellError(lineno, lc, row[lc])
    values, labels = np.unique(raw, return_inverse=True)
    features = np.delete(table, lc, axis=1)
    return Dataset(features, labels.reshape(-1), len(values))
