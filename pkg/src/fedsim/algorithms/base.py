"""Types shared by the training protocols, and the FedAvg weighted average."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedsim.errors import EmptyUpdateSetError, ShapeMismatchError


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    client_id: int
    params: np.ndarray
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError(f"client {self.client_id}: n_samples must be >= 1")


@dataclass(eq=False)
class RoundResult:
    """Coordinator-side record of one round.

    ``params`` is the global vector, or an (n_workers x n_params) stack for
    decentralized runs.
    """

    round: int
    params: np.ndarray
    train_loss: float
    test_loss: float
    test_accuracy: float
    wallclock_seconds: float


def check_same_shape(vectors) -> int:
    vectors = list(vectors)
    if not vectors:
        raise EmptyUpdateSetError("no updates to aggregate")
    shape = np.shape(vectors[0])
    for v in vectors[1:]:
        if np.shape(v) != shape:
            raise ShapeMismatchError(f"parameter shapes differ: {shape} vs {np.shape(v)}")
    return len(vectors)


def fedavg_aggregate(updates: list[ClientUpdate]) -> np.ndarray:
    """Sample-count weighted coordinate-wise mean of client models.

    Updates are combined in client-ID order as offsets from the first one,
    ``w_0 + sum_k (n_k / N) (w_k - w_0)``. Algebraically this is
    ``sum_k (n_k / N) w_k``; the offset form returns identical inputs exactly
    and makes the result independent of list order.
    """
    check_same_shape([u.params for u in updates])
    ordered = sorted(updates, key=lambda u: u.client_id)
    total = sum(int(u.n_samples) for u in ordered)
    anchor = np.asarray(ordered[0].params, dtype=np.float64)
    out = anchor.copy()
    for u in ordered[1:]:
        out += (int(u.n_samples) / total) * (np.asarray(u.params, dtype=np.float64) - anchor)
    return out
