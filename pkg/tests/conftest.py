"""Shared fixtures and the per-criterion PASS/FAIL report for the acceptance suite."""

from __future__ import annotations

import socket
from collections import OrderedDict

import numpy as np
import pytest

from fedsim.harness.config import config_from_dict

_CRITERIA: "OrderedDict[int, dict]" = OrderedDict()


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "tests": 0})
    if call.when == "call":
        entry["tests"] += 1
    if call.excinfo is not None:
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["passed"] and entry["tests"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {entry['title']} ({entry['tests']} tests)")


def free_ports(n: int) -> list[int]:
    socks = []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def synthetic_config(algorithm: dict, n_clients: int = 4, samples: int = 30, d: int = 5, C: int = 3, **extra) -> dict:
    doc = {
        "seed": extra.pop("seed", 0),
        "dataset": {
            "kind": "synthetic",
            "alpha": 0.5,
            "beta": 0.5,
            "n_clients": n_clients,
            "samples_per_client": samples,
            "n_features": d,
            "n_classes": C,
        },
        "model": {"kind": "logistic_regression"},
        "algorithm": algorithm,
    }
    doc.update(extra)
    return doc


@pytest.fixture
def make_config():
    def make(algorithm, **kwargs):
        return config_from_dict(synthetic_config(algorithm, **kwargs))

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
