"""Turn a RunConfig into concrete data: train/test sets, the client partition and the model spec."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedsim import data as fdata
from fedsim.data import Dataset, Partition, SyntheticSpec
from fedsim.harness.config import RunConfig
from fedsim.models import ModelSpec
from fedsim.rng import Rng


@dataclass(frozen=True, eq=False)
class Experiment:
    config: RunConfig
    model: ModelSpec
    train: Dataset
    test: Dataset
    partition: Partition | None

    @property
    def seed(self) -> int:
        return self.config.seed


def _holdout(n: int, fraction: float, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_test = min(int(round(fraction * n)), n - 1)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def load_data(config: RunConfig) -> tuple[Dataset, Dataset, list[int]]:
    """Train pool, test set and, for synthetic data, the per-client train sizes (natural split)."""
    ds = config.dataset
    frac = ds["test_fraction"]
    if ds["kind"] == "synthetic":
        spc = ds["samples_per_client"]
        spec = SyntheticSpec(
            alpha=ds["alpha"],
            beta=ds["beta"],
            n_clients=ds["n_clients"],
            samples_per_client=tuple(spc) if isinstance(spc, list) else spc,
            n_features=ds["n_features"],
            n_classes=ds["n_classes"],
        )
        clients = fdata.generate_synthetic(spec, config.seed)
        train_parts, test_parts = [], []
        for k, client in enumerate(clients):
            tr, te = _holdout(client.n_samples, frac, Rng(config.seed, "holdout", k))
            train_parts.append(client.subset(tr))
            if te.size:
                test_parts.append(client.subset(te))
        train = Dataset.concat(train_parts)
        test = Dataset.concat(test_parts) if test_parts else train
        return train, test, [p.n_samples for p in train_parts]
    full = fdata.load_csv(ds["path"], ds["label_column"], ds["skip_header"])
    tr, te = _holdout(full.n_samples, frac, Rng(config.seed, "holdout"))
    train = full.subset(tr)
    return train, (full.subset(te) if te.size else train), []


def make_partition(config: RunConfig, train: Dataset, natural_sizes: list[int]) -> Partition | None:
    p = config.partition
    if p is None:
        return None
    method, n = p["method"], p["n_clients"]
    if method == "natural":
        bounds = np.cumsum(natural_sizes)[:-1]
        return Partition({k: idx for k, idx in enumerate(np.split(np.arange(train.n_samples), bounds))})
    if method == "iid":
        return fdata.partition_iid(train, n, config.seed)
    if method == "lda":
        return fdata.partition_lda(train, n, p["alpha"], config.seed)
    if method == "power_law":
        return fdata.partition_power_law(train, n, p["exponent"], p["min_samples"], config.seed)
    return fdata.partition_one_class(train, n, config.seed)


def prepare(config: RunConfig) -> Experiment:
    train, test, natural = load_data(config)
    m = config.model
    model = ModelSpec(
        kind=m["kind"],
        n_features=train.n_features,
        n_classes=max(train.n_classes, m.get("n_classes", 0)),
        hidden_dim=m.get("hidden_dim"),
        activation=m.get("activation", "tanh"),
        l2=m.get("l2", 0.0),
    )
    return Experiment(config, model, train, test, make_partition(config, train, natural))
