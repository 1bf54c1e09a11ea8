"""Vertical FL for logistic regression between two feature-partitioned parties.

Party A (worker 1) holds feature columns ``cols_a`` and their weight rows.
Party B (worker 0) holds ``cols_b``, the bias and the labels, and
coordinates. Both derive the same batch order from the run seed. Per batch::

    A -> B   PARTIAL_LOGITS {partial_logits, control}   X_A W_A   (batch x C)
    B -> A   RESIDUALS      {residuals, control}        (softmax - onehot) / batch

B continues A's partial sum over its own columns, adds the bias, and both
parties step their own weights with ``X_p^T residuals``. At the end of each
round A reports its weight block in METRICS {model, control}.
"""

from __future__ import annotations

import time

import numpy as np

from fedsim.algorithms.base import RoundResult
from fedsim.algorithms.fedavg import train_seed
from fedsim.comm import WorkerManager, tags
from fedsim.harness.config import check_feature_split, default_vfl_columns
from fedsim.models import batches, cross_entropy_residual, evaluate, init_params, ordered_affine, ordered_xt_dot
from fedsim.rng import Rng, derive

LABEL_PARTY = 0
FEATURE_PARTY = 1


def worker_ids(exp) -> list[int]:
    return [LABEL_PARTY, FEATURE_PARTY]


def feature_split(exp) -> tuple[list[int], list[int]]:
    d = exp.model.n_features
    return check_feature_split(exp.config.algorithm.get("vfl_columns") or default_vfl_columns(d), d)


class _Party(WorkerManager):
    def __init__(self, exp, worker_id: int, transport, cols, init=None):
        super().__init__(worker_id, transport, on_unknown=exp.config.algorithm["on_unknown"])
        self.exp = exp
        spec = exp.model
        full = init_params(spec, derive(exp.seed, "init")) if init is None else np.asarray(init, dtype=np.float64)
        W = full[: spec.n_features * spec.n_classes].reshape(spec.n_features, spec.n_classes)
        self.cols = cols
        self.W = W[cols].copy()
        self.X = exp.train.features[:, cols]
        self.indices = np.arange(exp.train.n_samples)
        self.round = 0
        self._queue: list[np.ndarray] = []

    def _plan_round(self) -> None:
        self.round += 1
        alg = self.exp.config.algorithm
        rng = Rng(train_seed(self.exp.seed, self.round), "batches")
        self._queue = [idx for _ in range(alg["epochs"]) for idx in batches(self.indices, alg["batch_size"], rng)]
        self._queue.reverse()

    def _step(self, idx, R) -> None:
        spec = self.exp.model
        grad = ordered_xt_dot(self.X[idx], R) + spec.l2 * self.W
        self.W = self.W - self.exp.config.algorithm["lr"] * grad


class FeatureParty(_Party):
    def __init__(self, exp, transport, init=None):
        cols_a, _ = feature_split(exp)
        super().__init__(exp, FEATURE_PARTY, transport, cols_a, init)
        self._current = None
        self._batch = 0
        self.register_message_receive_handler(tags.RESIDUALS, self._on_residuals)

    def on_start(self) -> None:
        self._plan_round()
        self._send_next()

    def _send_next(self) -> None:
        if not self._queue:
            self.send(tags.METRICS, LABEL_PARTY, {"model": self.W, "control": self.round})
            if self.round < self.exp.config.algorithm["rounds"]:
                self._plan_round()
                self._send_next()
            return
        self._current = self._queue.pop()
        self._batch += 1
        partial = ordered_affine(self.X[self._current], self.W)
        self.send(tags.PARTIAL_LOGITS, LABEL_PARTY, {"partial_logits": partial, "control": self._batch})

    def _on_residuals(self, msg) -> None:
        R = msg["residuals"].reshape(len(self._current), self.exp.model.n_classes)
        self._step(self._current, R)
        self._send_next()


class LabelParty(_Party):
    def __init__(self, exp, transport, on_round=None, init=None):
        cols_a, cols_b = feature_split(exp)
        super().__init__(exp, LABEL_PARTY, transport, cols_b, init)
        self.cols_a = cols_a
        spec = exp.model
        full = init_params(spec, derive(exp.seed, "init")) if init is None else np.asarray(init, dtype=np.float64)
        self.b = full[spec.n_features * spec.n_classes :].copy()
        self.labels = exp.train.labels
        self.on_round = on_round
        self.results: list[RoundResult] = []
        self._losses: list[float] = []
        self.register_message_receive_handler(tags.PARTIAL_LOGITS, self._on_partial)
        self.register_message_receive_handler(tags.METRICS, self._on_report)

    def on_start(self) -> None:
        self._t0 = time.perf_counter()
        self._plan_round()

    def _on_partial(self, msg) -> None:
        if not self._queue:
            self._plan_round()
        idx = self._queue.pop()
        C = self.exp.model.n_classes
        acc = msg["partial_logits"].reshape(len(idx), C)
        logits = ordered_affine(self.X[idx], self.W, self.b, acc=acc)
        loss, R = cross_entropy_residual(logits, self.labels[idx])
        self._losses.append(loss)
        self.send(tags.RESIDUALS, FEATURE_PARTY, {"residuals": R, "control": msg["control"]})
        self._step(idx, R)
        self.b = self.b - self.exp.config.algorithm["lr"] * R.sum(axis=0)

    def joined_params(self, W_a: np.ndarray) -> np.ndarray:
        spec = self.exp.model
        W = np.empty((spec.n_features, spec.n_classes))
        W[self.cols_a] = W_a
        W[self.cols] = self.W
        return np.concatenate([W.ravel(), self.b])

    def _on_report(self, msg) -> None:
        spec = self.exp.model
        W_a = msg["model"].reshape(len(self.cols_a), spec.n_classes)
        params = self.joined_params(W_a)
        test_loss, acc = evaluate(spec, params, self.exp.test)
        result = RoundResult(
            msg["control"], params, float(np.mean(self._losses)), test_loss, acc, time.perf_counter() - self._t0
        )
        self.results.append(result)
        if self.on_round:
            self.on_round(result)
        self._losses = []
        if msg["control"] == self.exp.config.algorithm["rounds"]:
            self.finish_all([FEATURE_PARTY, LABEL_PARTY])


def build_worker(exp, worker_id: int, transport, on_round=None, init=None) -> WorkerManager:
    if worker_id == LABEL_PARTY:
        return LabelParty(exp, transport, on_round, init)
    return FeatureParty(exp, transport, init)
