"""Robust aggregation rules and the model-replacement attack.

Aggregators plug into FedAvg through :func:`aggregate`, which dispatches on
an :class:`AggregatorSpec`. Ties are always broken toward the lowest index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from fedsim.algorithms.base import ClientUpdate, check_same_shape, fedavg_aggregate
from fedsim.errors import EmptyUpdateSetError, InvalidSpecError, ShapeMismatchError, TooFewClientsError
from fedsim.rng import Rng

KINDS = ("mean", "clip", "weak_dp", "rfa", "krum", "multi_krum")
# Weiszfeld converges sublinearly when the median sits near a data point;
# 100 steps can leave the objective ~1e-4 above optimum, 2000 covers that case.
RFA_MAX_ITER = 2000


@dataclass(frozen=True)
class AggregatorSpec:
    kind: str = "mean"
    C: float = 1.0
    sigma: float = 0.0
    f: int = 0
    m: int = 1
    tol: float = 1e-7
    max_iter: int = RFA_MAX_ITER
    epsilon: float = 1e-10

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpecError(f"aggregator kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("C", "sigma", "tol", "epsilon"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidSpecError(f"{name} must be finite")
        if self.C <= 0 or self.sigma < 0 or self.f < 0 or self.m < 1:
            raise InvalidSpecError("need C > 0, sigma >= 0, f >= 0, m >= 1")

    def to_dict(self) -> dict:
        """Only the fields that mean something for this kind."""
        keep = {
            "mean": (),
            "clip": ("C",),
            "weak_dp": ("C", "sigma"),
            "rfa": ("tol", "max_iter", "epsilon"),
            "krum": ("f",),
            "multi_krum": ("f", "m"),
        }[self.kind]
        d = asdict(self)
        return {"kind": self.kind, **{k: d[k] for k in keep}}


@dataclass(frozen=True)
class AttackSpec:
    """Model-replacement attack settings.

    ``source`` is ``"fixed"`` (the malicious model is ``target``, or a vector
    filled with ``value``) or ``"label_flip"`` (the attacker trains on labels
    shifted by one class and boosts the result).
    """

    attacker_ids: tuple[int, ...] = ()
    gamma: float = 1.0
    source: str = "fixed"
    value: float = 0.0
    target: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.source not in ("fixed", "label_flip"):
            raise InvalidSpecError(f"attack source must be 'fixed' or 'label_flip', got {self.source!r}")
        if not np.isfinite(self.gamma):
            raise InvalidSpecError("gamma must be finite")


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def clip_update(update, global_params, C: float) -> np.ndarray:
    """Scale the difference from the global model to L2 norm at most ``C``."""
    update, global_params = _vec(update), _vec(global_params)
    if update.shape != global_params.shape:
        raise ShapeMismatchError(f"update {update.shape} vs global {global_params.shape}")
    delta = update - global_params
    norm = float(np.linalg.norm(delta))
    if norm == 0.0 or norm <= C:
        return update
    return global_params + delta * (C / norm)


def weak_dp_aggregate(updates: list[ClientUpdate], global_params, C: float, sigma: float, seed: int) -> np.ndarray:
    """Clip each update, take the FedAvg mean, then add N(0, sigma^2) noise to every coordinate."""
    clipped = [ClientUpdate(u.client_id, clip_update(u.params, global_params, C), u.n_samples) for u in updates]
    mean = fedavg_aggregate(clipped)
    if sigma == 0.0:
        return mean
    return mean + sigma * Rng(seed, "weak_dp").normal(mean.shape)


def weiszfeld(points, weights=None, tol: float = 1e-7, max_iter: int = RFA_MAX_ITER, epsilon: float = 1e-10):
    """Smoothed Weiszfeld iteration for the weighted geometric median.

    Starts at the weighted mean and repeats
    ``z <- sum_k b_k x_k / sum_k b_k`` with ``b_k = a_k / max(eps, |z - x_k|)``
    until the step is shorter than ``tol`` or ``max_iter`` steps were taken.

    A step that would raise the objective (possible only through rounding
    once the iterate has converged) ends the iteration without being taken.

    Returns:
        ``(z, objectives)`` where ``objectives[t]`` is ``sum_k a_k |z_t - x_k|``
        at the start point (t = 0) and after each accepted step.
    """
    if len(points) == 0:
        raise EmptyUpdateSetError("no points")
    check_same_shape(points)
    X = np.stack([_vec(p) for p in points])
    a = np.ones(len(X)) if weights is None else _vec(weights)
    if a.shape != (len(X),) or np.any(a <= 0):
        raise ValueError("weights must be positive, one per point")
    # canonical (lexicographic) point order: the result must not depend on list order
    order = np.lexsort(np.column_stack([X, a]).T[::-1])
    X, a = X[order], a[order]
    a = a / a.sum()
    z = a @ X
    dist = np.linalg.norm(X - z, axis=1)
    objectives = [float(a @ dist)]
    for _ in range(max_iter):
        beta = a / np.maximum(epsilon, dist)
        z_new = beta @ X / beta.sum()
        dist_new = np.linalg.norm(X - z_new, axis=1)
        obj = float(a @ dist_new)
        if obj > objectives[-1]:
            # only rounding can raise the objective; keep the better point
            break
        step = float(np.linalg.norm(z_new - z))
        z, dist = z_new, dist_new
        objectives.append(obj)
        if step < tol:
            break
    return z, objectives


def rfa_geometric_median(points, weights=None, tol: float = 1e-7, max_iter: int = RFA_MAX_ITER, epsilon: float = 1e-10):
    """Robust federated aggregation: the (smoothed) weighted geometric median."""
    return weiszfeld(points, weights, tol, max_iter, epsilon)[0]


def krum_scores(updates, f: int) -> np.ndarray:
    """Per update, the sum of squared distances to its ``n - f - 2`` nearest other updates."""
    n = check_same_shape(updates)
    k = n - f - 2
    if k < 1:
        raise TooFewClientsError(f"krum with f={f} needs at least {f + 3} updates, got {n}")
    X = np.stack([_vec(u) for u in updates])
    sq = np.array([[float(np.sum((X[i] - X[j]) ** 2)) for j in range(n)] for i in range(n)])
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = others[:k].sum()
    return scores


def krum(updates, f: int) -> tuple[int, np.ndarray]:
    """Select the update with the lowest Krum score; returns ``(index, update)``.

    Only ``n - f - 2 >= 1`` is enforced here; the Byzantine-resilience bound
    ``n >= 2f + 3`` is checked when a run configuration is validated.
    """
    scores = krum_scores(updates, f)
    i = int(np.argmin(scores))
    return i, _vec(updates[i]).copy()


def multi_krum(updates, f: int, m: int) -> np.ndarray:
    """Unweighted mean of the ``m`` best-scoring updates.

    The chosen vectors are summed in lexicographic order so the result does
    not depend on the order of ``updates``.
    """
    n = len(updates)
    if not 1 <= m <= n - f - 2:
        raise TooFewClientsError(f"multi_krum needs 1 <= m <= n - f - 2 = {n - f - 2}, got m={m}")
    scores = krum_scores(updates, f)
    chosen = np.stack([_vec(updates[i]) for i in np.argsort(scores, kind="stable")[:m]])
    total = np.zeros_like(chosen[0])
    for row in chosen[np.lexsort(chosen.T[::-1])]:
        total += row
    return total / m


def attack_model_replacement(w_mal, w_global, gamma: float) -> np.ndarray:
    """Boosted malicious submission ``gamma * (w_mal - w_global) + w_global``."""
    w_mal, w_global = _vec(w_mal), _vec(w_global)
    if w_mal.shape != w_global.shape:
        raise ShapeMismatchError(f"malicious {w_mal.shape} vs global {w_global.shape}")
    # w_mal + (gamma - 1)(w_mal - w_global): same value, exact at gamma = 1
    return w_mal + (gamma - 1.0) * (w_mal - w_global)


def aggregate(spec: AggregatorSpec, updates: list[ClientUpdate], global_params, seed: int = 0) -> np.ndarray:
    """Combine one round of client updates according to ``spec``.

    Krum-family rules and clipping see updates in client-ID order. Krum
    variants ignore sample counts; RFA uses them as weights.
    """
    ordered = sorted(updates, key=lambda u: u.client_id)
    if spec.kind == "mean":
        return fedavg_aggregate(ordered)
    if spec.kind == "clip":
        return fedavg_aggregate(
            [ClientUpdate(u.client_id, clip_update(u.params, global_params, spec.C), u.n_samples) for u in ordered]
        )
    if spec.kind == "weak_dp":
        return weak_dp_aggregate(ordered, global_params, spec.C, spec.sigma, seed)
    vectors = [u.params for u in ordered]
    if spec.kind == "rfa":
        return rfa_geometric_median(vectors, [u.n_samples for u in ordered], spec.tol, spec.max_iter, spec.epsilon)
    if spec.kind == "krum":
        return krum(vectors, spec.f)[1]
    return multi_krum(vectors, spec.f, spec.m)
