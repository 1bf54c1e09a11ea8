"""Launching a protocol: deterministic simulation, threaded TCP on localhost, or one distributed worker."""

from __future__ import annotations

import logging
import threading

from fedsim.algorithms import decentralized, fedavg, split, vfl
from fedsim.comm import InProcessTransport, Simulator, TcpTransport
from fedsim.harness.experiment import Experiment, prepare

log = logging.getLogger(__name__)

PROTOCOLS = {
    "fedavg": fedavg,
    "decentralized": decentralized,
    "split": split,
    "vfl": vfl,
}
COORDINATOR_ID = 0


def protocol(exp: Experiment):
    return PROTOCOLS[exp.config.algorithm["kind"]]


def _as_experiment(config_or_exp) -> Experiment:
    return config_or_exp if isinstance(config_or_exp, Experiment) else prepare(config_or_exp)


def simulate(config_or_exp, on_round=None, transport: InProcessTransport | None = None, **worker_kwargs):
    """Run every worker in-process under the deterministic scheduler.

    Returns the coordinator's list of RoundResults. Pass ``transport`` to
    inspect the delivery trace afterwards. Extra keyword arguments go to
    the protocol's ``build_worker`` (e.g. ``init`` for custom initial params,
    as a callable ``worker_id -> params``).
    """
    exp = _as_experiment(config_or_exp)
    proto = protocol(exp)
    ids = proto.worker_ids(exp)
    transport = transport or InProcessTransport(ids)
    workers = [_build(proto, exp, wid, transport, on_round, worker_kwargs) for wid in ids]
    Simulator(transport, workers).run()
    return workers[0].results


def _build(proto, exp, wid, transport, on_round, worker_kwargs):
    kwargs = dict(worker_kwargs)
    if "init" in kwargs and callable(kwargs["init"]):
        kwargs["init"] = kwargs["init"](wid)
    if wid == COORDINATOR_ID:
        return proto.build_worker(exp, wid, transport, on_round=on_round, **kwargs)
    return proto.build_worker(exp, wid, transport, **kwargs)


def run_tcp_local(config_or_exp, on_round=None, timeout: float = 120.0, **worker_kwargs):
    """All workers in threads of this process, talking over TCP on 127.0.0.1."""
    exp = _as_experiment(config_or_exp)
    proto = protocol(exp)
    ids = proto.worker_ids(exp)
    transports = {wid: TcpTransport(wid) for wid in ids}
    peers = {wid: t.address for wid, t in transports.items()}
    for t in transports.values():
        t.set_peers(peers)
    workers = [_build(proto, exp, wid, transports[wid], on_round, worker_kwargs) for wid in ids]
    errors: list[BaseException] = []

    def target(w):
        try:
            w.run(timeout=timeout)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=target, args=(w,), daemon=True) for w in workers]
    try:
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    finally:
        for t in transports.values():
            t.close()
    if errors:
        raise errors[0]
    return workers[0].results


def run_worker(config_or_exp, worker_id: int, peers: dict[int, tuple[str, int]], on_round=None, timeout=None):
    """Run a single worker of a multi-process deployment; returns results on the coordinator."""
    exp = _as_experiment(config_or_exp)
    proto = protocol(exp)
    if worker_id not in proto.worker_ids(exp):
        raise ValueError(f"worker {worker_id} is not part of this {exp.config.algorithm['kind']} run")
    missing = set(proto.worker_ids(exp)) - set(peers)
    if missing:
        raise ValueError(f"peer table lacks workers {sorted(missing)}")
    transport = TcpTransport(worker_id, listen=peers[worker_id], peers=peers)
    worker = _build(proto, exp, worker_id, transport, on_round, {})
    try:
        worker.run(timeout=timeout)
    finally:
        transport.close()
    return getattr(worker, "results", None)


def run_fedavg(config, mode: str = "simulate", **kwargs):
    return _run("fedavg", config, mode, **kwargs)


def run_decentralized(config, mode: str = "simulate", **kwargs):
    return _run("decentralized", config, mode, **kwargs)


def run_split_learning(config, mode: str = "simulate", **kwargs):
    return _run("split", config, mode, **kwargs)


def run_vfl(config, mode: str = "simulate", **kwargs):
    return _run("vfl", config, mode, **kwargs)


def _run(kind, config, mode, **kwargs):
    exp = _as_experiment(config)
    if exp.config.algorithm["kind"] != kind:
        raise ValueError(f"config describes {exp.config.algorithm['kind']!r}, not {kind!r}")
    if mode == "simulate":
        return simulate(exp, **kwargs)
    if mode == "tcp":
        return run_tcp_local(exp, **kwargs)
    raise ValueError(f"mode must be 'simulate' or 'tcp', got {mode!r}")
