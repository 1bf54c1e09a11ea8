"""FedAvg over a star: server (worker 0) and clients (workers 1..n).

Round r:
  server -> sampled clients   GLOBAL_MODEL {round, model}
  client -> server            CLIENT_UPDATE {round, model, n_samples, train_loss}
The server aggregates once every sampled client has answered, evaluates and
starts round r + 1; after the last round it sends FINISH to everyone.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from fedsim import robust
from fedsim.algorithms.base import ClientUpdate, RoundResult
from fedsim.comm import WorkerManager, tags
from fedsim.data import Dataset
from fedsim.errors import FedSimError
from fedsim.models import evaluate, init_params, train_epochs
from fedsim.rng import Rng, derive
from fedsim.topology import TopologySpec, build_topology

log = logging.getLogger(__name__)

SERVER_ID = 0


def worker_ids(exp) -> list[int]:
    return list(range(exp.config.n_clients + 1))


def train_seed(seed: int, round_: int) -> int:
    """Seed for local training in a round; shared by all clients so equal data gives equal models."""
    return derive(seed, "local_train", round_)


def sample_clients(seed: int, round_: int, n_clients: int, k: int) -> list[int]:
    """``k`` client IDs (0-based) drawn without replacement, returned ascending."""
    return sorted(int(i) for i in Rng(seed, "sample_clients", round_).permutation(n_clients)[:k])


class FedAvgServer(WorkerManager):
    def __init__(self, exp, transport, on_round=None):
        cfg = exp.config
        super().__init__(SERVER_ID, transport, on_unknown=cfg.algorithm["on_unknown"])
        self.exp = exp
        self.topology = build_topology(cfg.topology or TopologySpec("star", cfg.n_clients + 1, hub_id=0))
        self.clients = self.topology.out_neighbors(SERVER_ID)
        self.params = init_params(exp.model, derive(cfg.seed, "init"))
        self.on_round = on_round
        self.results: list[RoundResult] = []
        self.round = 0
        self._expected: set[int] = set()
        self._updates: dict[int, tuple[ClientUpdate, float]] = {}
        self.register_message_receive_handler(tags.CLIENT_UPDATE, self._on_update)

    def on_start(self) -> None:
        self._t0 = time.perf_counter()
        shape = self.exp.model.to_json()
        for c in self.clients:
            self.send(tags.INIT_MODEL, c, {"model_shape": shape})
        self._begin_round()

    def _begin_round(self) -> None:
        self.round += 1
        cfg = self.exp.config
        chosen = sample_clients(cfg.seed, self.round, len(self.clients), cfg.clients_per_round)
        self._expected = {self.clients[i] for i in chosen}
        self._updates = {}
        for wid in sorted(self._expected):
            self.send(tags.GLOBAL_MODEL, wid, {"round": self.round, "model": self.params})

    def _on_update(self, msg) -> None:
        if msg["round"] != self.round or msg.sender_id not in self._expected:
            raise FedSimError(f"unexpected update from {msg.sender_id} for round {msg['round']}")
        update = ClientUpdate(msg.sender_id - 1, msg["model"], msg["n_samples"])
        self._updates[msg.sender_id] = (update, msg["train_loss"])
        if len(self._updates) == len(self._expected):
            self._close_round()

    def _close_round(self) -> None:
        cfg = self.exp.config
        received = [self._updates[w] for w in sorted(self._updates)]
        updates = [u for u, _ in received]
        self.params = robust.aggregate(
            cfg.aggregator, updates, self.params, seed=derive(cfg.seed, "aggregate", self.round)
        )
        total = sum(u.n_samples for u in updates)
        train_loss = sum(loss * u.n_samples for u, loss in received) / total
        test_loss, acc = evaluate(self.exp.model, self.params, self.exp.test)
        result = RoundResult(
            self.round, self.params.copy(), train_loss, test_loss, acc, time.perf_counter() - self._t0
        )
        self.results.append(result)
        if self.on_round:
            self.on_round(result)
        if self.round < cfg.algorithm["rounds"]:
            self._begin_round()
        else:
            self.finish_all(list(self.clients) + [SERVER_ID])


class FedAvgClient(WorkerManager):
    def __init__(self, exp, worker_id: int, transport):
        cfg = exp.config
        super().__init__(worker_id, transport, on_unknown=cfg.algorithm["on_unknown"])
        self.exp = exp
        self.client_id = worker_id - 1
        self.indices = exp.partition[self.client_id]
        attack = cfg.attack
        self.attacker = attack is not None and self.client_id in attack.attacker_ids
        self.register_message_receive_handler(tags.INIT_MODEL, self._on_init)
        self.register_message_receive_handler(tags.GLOBAL_MODEL, self._on_global)

    def _on_init(self, msg) -> None:
        if msg["model_shape"] != self.exp.model.to_json():
            raise FedSimError(f"client {self.client_id}: server model {msg['model_shape']} differs from local spec")

    def _train(self, params, dataset: Dataset, round_: int):
        alg = self.exp.config.algorithm
        return train_epochs(
            self.exp.model,
            params,
            dataset,
            self.indices,
            alg["epochs"],
            alg["batch_size"],
            alg["lr"],
            train_seed(self.exp.seed, round_),
        )

    def _malicious(self, global_params, round_: int):
        attack = self.exp.config.attack
        model = self.exp.model
        if attack.source == "label_flip":
            train = self.exp.train
            flipped = Dataset(train.features, (train.labels + 1) % model.n_classes, model.n_classes)
            w_mal, loss = self._train(global_params, flipped, round_)
        else:
            if attack.target is not None:
                w_mal = np.asarray(attack.target, dtype=np.float64)
            else:
                w_mal = np.full(model.n_params, attack.value)
            loss = evaluate(model, w_mal, self.exp.train.subset(self.indices))[0]
        return robust.attack_model_replacement(w_mal, global_params, attack.gamma), loss

    def _on_global(self, msg) -> None:
        r = msg["round"]
        if self.attacker:
            params, loss = self._malicious(msg["model"], r)
        else:
            params, loss = self._train(msg["model"], self.exp.train, r)
        self.send(
            tags.CLIENT_UPDATE,
            SERVER_ID,
            {"round": r, "model": params, "n_samples": len(self.indices), "train_loss": float(loss)},
        )


def build_worker(exp, worker_id: int, transport, on_round=None) -> WorkerManager:
    if worker_id == SERVER_ID:
        return FedAvgServer(exp, transport, on_round)
    return FedAvgClient(exp, worker_id, transport)
