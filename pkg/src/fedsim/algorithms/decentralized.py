"""Serverless gossip training over a TopologyManager graph.

Every worker, each round: trains locally, sends GOSSIP_MODEL to its
out-neighbors, waits for the round's models from all in-neighbors and mixes
``w_i <- w_i + sum_j W[i, j] (w_j - w_i)`` with the mixing matrix ``W``.
It then reports METRICS {round, model, train_loss} to worker 0, which
assembles the per-round record and sends FINISH after the last round.
"""

from __future__ import annotations

import time
from collections import defaultdict

import numpy as np

from fedsim.algorithms.base import RoundResult
from fedsim.algorithms.fedavg import train_seed
from fedsim.comm import WorkerManager, tags
from fedsim.models import evaluate, init_params, train_epochs
from fedsim.rng import Rng, derive
from fedsim.topology import build_topology, mixing_matrix

COLLECTOR_ID = 0


def worker_ids(exp) -> list[int]:
    return list(range(exp.config.n_clients))


def initial_params(exp, worker_id: int) -> np.ndarray:
    """Shared initialization, plus per-worker Gaussian offsets when ``init_scale > 0``."""
    base = init_params(exp.model, derive(exp.seed, "init"))
    scale = exp.config.algorithm["init_scale"]
    if scale > 0:
        base = base + scale * Rng(exp.seed, "init_offset", worker_id).normal(base.shape)
    return base


class GossipWorker(WorkerManager):
    def __init__(self, exp, worker_id: int, transport, on_round=None, init=None):
        cfg = exp.config
        super().__init__(worker_id, transport, on_unknown=cfg.algorithm["on_unknown"])
        self.exp = exp
        self.topology = build_topology(cfg.topology)
        self.W = mixing_matrix(self.topology)
        self.sources = self.topology.in_neighbors(worker_id)
        self.targets = self.topology.out_neighbors(worker_id)
        self.indices = exp.partition[worker_id]
        self.params = initial_params(exp, worker_id) if init is None else np.array(init, dtype=np.float64)
        self.rounds = cfg.algorithm["rounds"]
        self.round = 0
        self._trained = 0
        self._loss = 0.0
        self._inbox: dict[int, dict[int, np.ndarray]] = defaultdict(dict)
        self.register_message_receive_handler(tags.GOSSIP_MODEL, self._on_gossip)
        if worker_id == COLLECTOR_ID:
            self.on_round = on_round
            self.results: list[RoundResult] = []
            self._reports: dict[int, dict[int, tuple[np.ndarray, float]]] = defaultdict(dict)
            self._next_report = 1
            self.register_message_receive_handler(tags.METRICS, self._on_metrics)

    def on_start(self) -> None:
        self._t0 = time.perf_counter()
        self.round = 1
        self._advance()

    def _local_step(self) -> None:
        alg = self.exp.config.algorithm
        self.params, self._loss = train_epochs(
            self.exp.model,
            self.params,
            self.exp.train,
            self.indices,
            alg["epochs"],
            alg["batch_size"],
            alg["lr"],
            train_seed(self.exp.seed, self.round),
        )
        self._trained = self.round
        for j in self.targets:
            self.send(tags.GOSSIP_MODEL, j, {"round": self.round, "model": self.params})

    def _advance(self) -> None:
        while self.round <= self.rounds:
            if self._trained < self.round:
                self._local_step()
            got = self._inbox[self.round]
            if any(j not in got for j in self.sources):
                return
            mixed = self.params.copy()
            for j in self.sources:
                mixed += self.W[self.worker_id, j] * (got[j] - self.params)
            self.params = mixed
            del self._inbox[self.round]
            self.send(
                tags.METRICS,
                COLLECTOR_ID,
                {"round": self.round, "model": self.params, "train_loss": float(self._loss)},
            )
            self.round += 1

    def _on_gossip(self, msg) -> None:
        self._inbox[msg["round"]][msg.sender_id] = msg["model"]
        self._advance()

    def _on_metrics(self, msg) -> None:
        self._reports[msg["round"]][msg.sender_id] = (msg["model"], msg["train_loss"])
        n = self.topology.n_workers
        while len(self._reports.get(self._next_report, ())) == n:
            r = self._next_report
            reports = self._reports.pop(r)
            stacked = np.stack([reports[i][0] for i in range(n)])
            sizes = np.array([len(self.exp.partition[i]) for i in range(n)], dtype=np.float64)
            train_loss = float(sum(reports[i][1] * sizes[i] for i in range(n)) / sizes.sum())
            evals = [evaluate(self.exp.model, stacked[i], self.exp.test) for i in range(n)]
            result = RoundResult(
                r,
                stacked,
                train_loss,
                float(np.mean([e[0] for e in evals])),
                float(np.mean([e[1] for e in evals])),
                time.perf_counter() - self._t0,
            )
            self.results.append(result)
            if self.on_round:
                self.on_round(result)
            self._next_report += 1
            if r == self.rounds:
                self.finish_all(range(n))


def build_worker(exp, worker_id: int, transport, on_round=None, init=None) -> WorkerManager:
    return GossipWorker(exp, worker_id, transport, on_round, init)
