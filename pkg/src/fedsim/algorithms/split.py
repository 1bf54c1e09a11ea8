"""Split learning of an MLP cut after the hidden activation.

The client (worker 1) owns the data and the input->hidden block (W1, b1);
the server (worker 0) owns hidden->output (W2, b2) and sees only hidden
activations and labels. Per batch::

    client -> server   ACTIVATIONS      {activations, labels, control}
    server -> client   GRAD_ACTIVATIONS {grad_activations, control}

At the end of each round the client reports its block in METRICS {model,
control} so the server can evaluate the joined model.
"""

from __future__ import annotations

import time

import numpy as np

from fedsim.algorithms.base import RoundResult
from fedsim.algorithms.fedavg import train_seed
from fedsim.comm import WorkerManager, tags
from fedsim.models import (
    cross_entropy_residual,
    evaluate,
    init_params,
    mlp_head_backward,
    mlp_hidden,
    mlp_hidden_backward,
    batches,
)
from fedsim.rng import Rng, derive

SERVER_ID = 0
CLIENT_ID = 1


def worker_ids(exp) -> list[int]:
    return [SERVER_ID, CLIENT_ID]


class SplitServer(WorkerManager):
    def __init__(self, exp, transport, on_round=None, init=None):
        super().__init__(SERVER_ID, transport, on_unknown=exp.config.algorithm["on_unknown"])
        self.exp = exp
        spec = exp.model
        full = init_params(spec, derive(exp.seed, "init")) if init is None else np.asarray(init, dtype=np.float64)
        self.params = full[spec.split_index :].copy()
        self.on_round = on_round
        self.results: list[RoundResult] = []
        self.round = 1
        self._losses: list[float] = []
        self.register_message_receive_handler(tags.ACTIVATIONS, self._on_activations)
        self.register_message_receive_handler(tags.METRICS, self._on_report)

    def on_start(self) -> None:
        self._t0 = time.perf_counter()

    def _unpack(self):
        spec = self.exp.model
        h, C = spec.hidden_dim, spec.n_classes
        return self.params[: h * C].reshape(h, C), self.params[h * C :]

    def _on_activations(self, msg) -> None:
        spec = self.exp.model
        labels = msg["labels"].astype(np.int64)
        A = msg["activations"].reshape(len(labels), spec.hidden_dim)
        W2, b2 = self._unpack()
        loss, R = cross_entropy_residual(A @ W2 + b2, labels)
        gW2, gb2, dA = mlp_head_backward(spec, W2, A, R)
        if spec.l2:
            loss += 0.5 * spec.l2 * float(np.sum(W2**2))
        self._losses.append(loss)
        self.params = self.params - self.exp.config.algorithm["lr"] * np.concatenate([gW2.ravel(), gb2])
        self.send(tags.GRAD_ACTIVATIONS, CLIENT_ID, {"grad_activations": dA, "control": msg["control"]})

    def _on_report(self, msg) -> None:
        params = np.concatenate([msg["model"], self.params])
        test_loss, acc = evaluate(self.exp.model, params, self.exp.test)
        result = RoundResult(
            self.round, params, float(np.mean(self._losses)), test_loss, acc, time.perf_counter() - self._t0
        )
        self.results.append(result)
        if self.on_round:
            self.on_round(result)
        self._losses = []
        if self.round == self.exp.config.algorithm["rounds"]:
            self.finish_all([CLIENT_ID, SERVER_ID])
        self.round += 1


class SplitClient(WorkerManager):
    def __init__(self, exp, transport, init=None):
        super().__init__(CLIENT_ID, transport, on_unknown=exp.config.algorithm["on_unknown"])
        self.exp = exp
        spec = exp.model
        full = init_params(spec, derive(exp.seed, "init")) if init is None else np.asarray(init, dtype=np.float64)
        self.params = full[: spec.split_index].copy()
        self.indices = np.arange(exp.train.n_samples)
        self.round = 0
        self._queue: list[np.ndarray] = []
        self._batch = 0
        self._cache = None
        self.register_message_receive_handler(tags.GRAD_ACTIVATIONS, self._on_grad)

    def on_start(self) -> None:
        self._begin_round()

    def _begin_round(self) -> None:
        self.round += 1
        alg = self.exp.config.algorithm
        # same stream and epoch loop as models.train_epochs, so batch order matches local training
        rng = Rng(train_seed(self.exp.seed, self.round), "batches")
        self._queue = [idx for _ in range(alg["epochs"]) for idx in batches(self.indices, alg["batch_size"], rng)]
        self._queue.reverse()
        self._send_next()

    def _unpack(self):
        spec = self.exp.model
        d, h = spec.n_features, spec.hidden_dim
        return self.params[: d * h].reshape(d, h), self.params[d * h :]

    def _send_next(self) -> None:
        if not self._queue:
            self.send(tags.METRICS, SERVER_ID, {"model": self.params, "control": self.round})
            if self.round < self.exp.config.algorithm["rounds"]:
                self._begin_round()
            return
        idx = self._queue.pop()
        X = self.exp.train.features[idx]
        W1, b1 = self._unpack()
        Z, A = mlp_hidden(self.exp.model, W1, b1, X)
        self._cache = (X, Z, A)
        self._batch += 1
        self.send(
            tags.ACTIVATIONS,
            SERVER_ID,
            {"activations": A, "labels": self.exp.train.labels[idx], "control": self._batch},
        )

    def _on_grad(self, msg) -> None:
        X, Z, A = self._cache
        dA = msg["grad_activations"].reshape(A.shape)
        W1, _ = self._unpack()
        gW1, gb1 = mlp_hidden_backward(self.exp.model, W1, X, Z, A, dA)
        self.params = self.params - self.exp.config.algorithm["lr"] * np.concatenate([gW1.ravel(), gb1])
        self._send_next()


def build_worker(exp, worker_id: int, transport, on_round=None, init=None) -> WorkerManager:
    if worker_id == SERVER_ID:
        return SplitServer(exp, transport, on_round, init)
    return SplitClient(exp, transport, init)
