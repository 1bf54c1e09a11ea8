"""Acceptance suite: one block per criterion, tolerances and time budgets as stated.

Each test carries ``@pytest.mark.criterion(n, title)``; ``conftest.py`` prints
a PASS/FAIL line per criterion at the end of the session.
"""

import itertools
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from conftest import synthetic_config
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from strategies import messages

from fedsim.algorithms import runtime
from fedsim.algorithms.base import ClientUpdate, fedavg_aggregate
from fedsim.algorithms.decentralized import initial_params
from fedsim.algorithms.fedavg import train_seed
from fedsim.comm import InProcessTransport, Message, TcpTransport, decode_message, encode_message
from fedsim.data import Dataset
from fedsim.harness import runner
from fedsim.harness.config import config_from_dict
from fedsim.harness.experiment import prepare
from fedsim.models import ModelSpec, gradient_check, init_params, local_train
from fedsim.rng import derive
from fedsim.robust import (
    attack_model_replacement,
    clip_update,
    krum,
    rfa_geometric_median,
    weak_dp_aggregate,
    weiszfeld,
)

criterion = pytest.mark.criterion


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, budget {self.seconds}s"


# ---------------------------------------------------------------- 1


@criterion(1, "codec roundtrip, FIFO, TCP == simulate")
def test_codec_fifo_and_tcp_equivalence():
    checked = []

    # batches of 20 per example: 10,000 messages at half the per-example overhead
    @settings(max_examples=500, deadline=None, database=None, suppress_health_check=list(HealthCheck))
    @given(st.lists(messages(), min_size=20, max_size=20))
    def roundtrip(batch):
        for m in batch:
            assert decode_message(encode_message(m)) == m
        checked.extend(batch)

    with Budget(30):
        roundtrip()
        assert len(checked) >= 10_000

        inproc = InProcessTransport([0, 1])
        for i in range(1000):
            inproc.send(Message(3, 0, 1, {"i": i}))
        assert [inproc.poll(1)["i"] for _ in range(1000)] == list(range(1000))

        a, b = TcpTransport(0), TcpTransport(1)
        peers = {0: a.address, 1: b.address}
        a.set_peers(peers)
        b.set_peers(peers)
        try:
            for i in range(1000):
                a.send(Message(3, 0, 1, {"i": i}))
            assert [b.receive(timeout=10)["i"] for _ in range(1000)] == list(range(1000))
        finally:
            a.close()
            b.close()

        cfg = config_from_dict(synthetic_config({"kind": "fedavg", "rounds": 3, "clients_per_round": 4}, n_clients=4))
        sim = runtime.simulate(cfg)
        tcp = runtime.run_tcp_local(cfg, timeout=20)
        assert len(sim) == len(tcp) == 3
        assert all(s.params.tobytes() == t.params.tobytes() for s, t in zip(sim, tcp))


# ---------------------------------------------------------------- 2


@criterion(2, "gradient suite < 1e-6 vs central differences")
def test_gradient_suite():
    rng = np.random.default_rng(20240901)
    with Budget(10):
        for kind in ("logistic_regression", "mlp"):
            worst = 0.0
            for _ in range(100):
                d, C, h = (int(v) for v in rng.integers(1, 7, 3))
                spec = ModelSpec(kind, d, max(C, 2), hidden_dim=h if kind == "mlp" else None, l2=float(rng.uniform(0, 0.1)))
                n = int(rng.integers(1, 9))
                batch = Dataset(rng.normal(size=(n, d)), rng.integers(0, spec.n_classes, n), spec.n_classes)
                err, _ = gradient_check(spec, rng.normal(scale=0.7, size=spec.n_params), batch)
                worst = max(worst, err)
            assert worst < 1e-6, f"{kind}: {worst:.2e}"


# ---------------------------------------------------------------- 3


@criterion(3, "FedAvg weighted average and weight scaling")
def test_fedavg_algebra():
    out = fedavg_aggregate([ClientUpdate(0, np.array([0.0, 2.0]), 1), ClientUpdate(1, np.array([4.0, 2.0]), 3)])
    np.testing.assert_allclose(out, [3.0, 2.0], rtol=0, atol=1e-15)
    w = np.array([0.1, -0.7, 3.3])
    assert fedavg_aggregate([ClientUpdate(k, w, k + 1) for k in range(4)]).tobytes() == w.tobytes()
    rng = np.random.default_rng(3)
    for _ in range(500):
        n = int(rng.integers(1, 9))
        ups = [ClientUpdate(k, rng.normal(size=6), int(rng.integers(1, 1000))) for k in range(n)]
        factor = int(rng.integers(2, 10_000))
        scaled = [ClientUpdate(u.client_id, u.params, u.n_samples * factor) for u in ups]
        assert fedavg_aggregate(scaled).tobytes() == fedavg_aggregate(ups).tobytes()


# ---------------------------------------------------------------- 4


def _random_two_party_config(rng, kind):
    d = int(rng.integers(2, 9))
    C = int(rng.integers(2, 5))
    batch_size = int(rng.integers(2, 9))
    n_batches = int(rng.integers(1, 6))
    n_train = int(rng.integers(batch_size * (n_batches - 1) + 1, batch_size * n_batches + 1))
    n_total = n_train + 5
    model = {"kind": "mlp", "hidden_dim": int(rng.integers(1, 9)), "activation": str(rng.choice(["tanh", "relu"]))}
    if kind == "vfl":
        model = {"kind": "logistic_regression"}
    model["l2"] = float(rng.choice([0.0, 0.01]))
    algorithm = {"kind": kind, "rounds": 1, "batch_size": batch_size, "lr": float(rng.uniform(0.05, 0.5))}
    if kind == "vfl":
        k = int(rng.integers(1, d))
        algorithm["vfl_columns"] = [list(range(k)), list(range(k, d))]
    doc = synthetic_config(algorithm, n_clients=1, samples=n_total, d=d, C=C, seed=int(rng.integers(0, 2**31)), model=model)
    doc["dataset"]["test_fraction"] = 5 / n_total
    exp = prepare(config_from_dict(doc))
    assert -(-exp.train.n_samples // batch_size) <= 5
    return exp


@criterion(4, "split learning and VFL match their centralized oracles bitwise")
@pytest.mark.parametrize("kind", ["split", "vfl"])
def test_oracle_equivalence(kind):
    rng = np.random.default_rng({"split": 41, "vfl": 42}[kind])
    with Budget(60):
        for _ in range(20):
            exp = _random_two_party_config(rng, kind)
            alg = exp.config.algorithm
            (res,) = runtime.simulate(exp)
            oracle = local_train(
                exp.model,
                init_params(exp.model, derive(exp.seed, "init")),
                exp.train,
                np.arange(exp.train.n_samples),
                alg["epochs"],
                alg["batch_size"],
                alg["lr"],
                train_seed(exp.seed, 1),
            )
            assert res.params.tobytes() == oracle.tobytes()


# ---------------------------------------------------------------- 5


def _brute_force_krum(points, f):
    n, k = len(points), len(points) - f - 2
    scores = [
        min(
            sum(float(np.sum((points[i] - points[j]) ** 2)) for j in subset)
            for subset in itertools.combinations([j for j in range(n) if j != i], k)
        )
        for i in range(n)
    ]
    return scores.index(min(scores))


@criterion(5, "Krum oracle and model-replacement instance")
def test_krum_and_replacement():
    rng = np.random.default_rng(5)
    for _ in range(500):
        n = int(rng.integers(3, 9))
        f = int(rng.integers(0, n - 2))
        pts = rng.integers(-3, 4, size=(n, int(rng.integers(1, 5)))).astype(float) * 0.25
        if rng.random() < 0.5:
            pts = rng.normal(size=pts.shape)
        i, vec = krum(pts, f)
        assert i == _brute_force_krum(pts, f) and vec.tobytes() == pts[i].tobytes()

    n = 5
    g = np.array([0.5, -1.0, 2.0, 0.0])
    w_mal = np.array([4.0, 4.0, -4.0, 8.0])
    submitted = [attack_model_replacement(w_mal, g, float(n))] + [g.copy() for _ in range(n - 1)]
    mean = fedavg_aggregate([ClientUpdate(k, w, 1) for k, w in enumerate(submitted)])
    assert mean.tobytes() == w_mal.tobytes()
    i, _ = krum(submitted, f=1)
    assert i != 0

    benign = [g + 1e-3 * rng.normal(size=4) for _ in range(n - 1)]
    attacked = benign + [attack_model_replacement(w_mal, g, float(n))]
    i, _ = krum(attacked, f=1)
    assert i < n - 1


# ---------------------------------------------------------------- 6


def _grid_objective(X, a):
    """Minimum of the weighted distance sum over a zooming 201x201 grid on the bounding box."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    best = np.inf
    for _ in range(12):
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], 201), np.linspace(lo[1], hi[1], 201))
        G = np.column_stack([gx.ravel(), gy.ravel()])
        vals = np.linalg.norm(G[:, None, :] - X[None], axis=2) @ a
        i = int(np.argmin(vals))
        best = min(best, float(vals[i]))
        span = (hi - lo) / 20
        lo, hi = G[i] - span, G[i] + span
    return best


@criterion(6, "RFA symmetry, monotone objective, grid oracle")
def test_rfa():
    tol = 1e-7
    z = rfa_geometric_median([[0, 0], [1, 0], [0, 1], [1, 1]], tol=tol)
    assert np.linalg.norm(z - 0.5) <= tol
    rng = np.random.default_rng(6)
    instances = []
    for t in range(200):
        dim = 2 if t < 50 else int(rng.integers(1, 6))
        X = rng.normal(size=(int(rng.integers(1, 9)), dim)) * rng.uniform(0.1, 10)
        instances.append((X, rng.uniform(0.2, 3, len(X))))
    for t in range(60):
        X = rng.normal(size=(5, 2)) * rng.uniform(0.1, 10)
        instances.append((X, np.ones(5) if t % 2 else rng.uniform(0.2, 3, 5)))
    for X, a in instances:
        z, objectives = weiszfeld(X, a)
        assert all(cur <= prev for prev, cur in zip(objectives, objectives[1:]))
        if X.shape[1] == 2 and len(X) >= 3:
            an = a / a.sum()
            ours = float(an @ np.linalg.norm(X - z, axis=1))
            best = _grid_objective(X, an)
            assert ours - best <= 1e-6 * best


# ---------------------------------------------------------------- 7


def _max_pairwise_distance(stack: np.ndarray) -> float:
    return max(float(np.linalg.norm(a - b)) for a, b in itertools.combinations(stack, 2))


@criterion(7, "ring consensus below 1e-8 within 200 rounds, monotone")
def test_decentralized_consensus():
    cfg = config_from_dict(
        synthetic_config(
            {"kind": "decentralized", "rounds": 200, "lr": 0.0, "init_scale": 1.0},
            n_clients=4,
            topology={"kind": "ring", "n_workers": 4},
        )
    )
    exp = prepare(cfg)
    inits = np.stack([initial_params(exp, k) for k in range(4)])
    assert np.ptp(inits, axis=0).max() > 0.5
    disagreement = [_max_pairwise_distance(r.params) for r in runtime.run_decentralized(exp)]
    assert disagreement[-1] < 1e-8
    assert all(cur <= prev for prev, cur in zip(disagreement, disagreement[1:]))
    above_floor = [d for d in disagreement if d > 1e-12]
    assert all(cur < prev for prev, cur in zip(above_floor, above_floor[1:]))


# ---------------------------------------------------------------- 8


def _gap_config(seed, partition):
    doc = synthetic_config(
        {"kind": "fedavg", "rounds": 100, "clients_per_round": 10, "lr": 0.05, "batch_size": 10},
        n_clients=30,
        samples=100,
        d=60,
        C=40,
        seed=seed,
        partition={"n_clients": 30, **partition},
    )
    doc["dataset"].update(alpha=0.0, beta=0.0)
    return config_from_dict(doc)


@criterion(8, "one_class accuracy below lda(alpha=100) over 5 seeds")
def test_non_iid_gap():
    with Budget(300):
        acc = {}
        for name, part in (("one_class", {"method": "one_class"}), ("lda", {"method": "lda", "alpha": 100.0})):
            acc[name] = [runtime.run_fedavg(_gap_config(seed, part))[-1].test_accuracy for seed in runner.CANONICAL_SEEDS]
    print(f"\nfinal test accuracy  one_class {np.mean(acc['one_class']):.4f}  lda(100) {np.mean(acc['lda']):.4f}")
    assert np.mean(acc["one_class"]) < np.mean(acc["lda"])


# ---------------------------------------------------------------- 9


@criterion(9, "weak DP: exact sigma=0 reduction, noise std within 5%")
def test_weak_dp():
    rng = np.random.default_rng(9)
    g = rng.normal(size=4)
    ups = [ClientUpdate(k, g + rng.normal(size=4) * 2, int(rng.integers(1, 9))) for k in range(5)]
    clipped = [ClientUpdate(u.client_id, clip_update(u.params, g, 0.8), u.n_samples) for u in ups]
    base = fedavg_aggregate(clipped)
    assert weak_dp_aggregate(ups, g, 0.8, 0.0, seed=1).tobytes() == base.tobytes()
    sigma = 0.3
    with Budget(30):
        draws = np.stack([weak_dp_aggregate(ups, g, 0.8, sigma, seed=s) for s in range(10_000)])
    std = draws.std(axis=0, ddof=1)
    assert np.all(np.abs(std - sigma) <= 0.05 * sigma), std
    np.testing.assert_allclose(draws.mean(axis=0), base, atol=4 * sigma / np.sqrt(10_000))


# ---------------------------------------------------------------- 10


def _cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "fedsim.harness.cli", *args], capture_output=True, text=True, timeout=120, env=dict(os.environ)
    )


@criterion(10, "CLI exit codes, schema paths, deterministic JSONL")
def test_cli_contract(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(synthetic_config({"kind": "fedavg", "rounds": 3, "clients_per_round": 2})))
    runs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.jsonl"
        proc = _cli("run", "--config", str(good), "--output", str(out))
        assert proc.returncode == 0, proc.stderr
        raw = out.read_bytes()
        assert raw.endswith(b"\n") and b"\r" not in raw
        runs.append([runner.strip_wallclock(line) for line in raw.decode("utf-8").splitlines()])
    assert runs[0] == runs[1] and [r["round"] for r in runs[0]] == [1, 2, 3]

    for doc, pointer in (
        (synthetic_config({"kind": "fedavg", "rounds": 0}), "/algorithm/rounds"),
        (synthetic_config({"kind": "krumm", "rounds": 1}), "/algorithm/kind"),
        ({**synthetic_config({"kind": "fedavg", "rounds": 1}), "typo": 1}, "/"),
    ):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        proc = _cli("run", "--config", str(bad))
        assert proc.returncode == 2 and f"config error: {pointer}" in proc.stderr, proc.stderr

    cross = tmp_path / "cross.json"
    cross.write_text(json.dumps(synthetic_config({"kind": "fedavg", "rounds": 1}, aggregator={"kind": "krum", "f": 1})))
    assert _cli("run", "--config", str(cross)).returncode == 2

    broken = tmp_path / "broken.json"
    broken.write_text(
        json.dumps(
            {"dataset": {"kind": "csv", "path": str(tmp_path / "absent.csv")}, "partition": {"method": "iid", "n_clients": 2},
             "model": {"kind": "logistic_regression"}, "algorithm": {"kind": "fedavg", "rounds": 1}}
        )
    )
    assert _cli("run", "--config", str(broken)).returncode == 3
