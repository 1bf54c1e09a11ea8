"""A model-replacement attacker against FedAvg with and without robust aggregation.

One of ten clients submits ``gamma * (w_mal - w_global) + w_global`` every
round, boosted so that a plain average lands on its malicious model. The
script reports how far each aggregator's final model sits from the attacker's
target and how well it still classifies.

    python3 demos/robust_aggregation.py
"""

import argparse

import numpy as np
from _common import synthetic

from fedsim.algorithms import runtime
from fedsim.harness.config import config_from_dict

AGGREGATORS = [
    {"kind": "mean"},
    {"kind": "clip", "C": 1.0},
    {"kind": "weak_dp", "C": 1.0, "sigma": 0.01},
    {"kind": "rfa"},
    {"kind": "krum", "f": 1},
    {"kind": "multi_krum", "f": 1, "m": 3},
]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rounds", type=int, default=20)
    parser.add_argument("--gamma", type=float, default=10.0)
    parser.add_argument("--value", type=float, default=5.0, help="every malicious parameter is set to this")
    args = parser.parse_args()

    print(f"{'aggregator':<12}{'distance to w_mal':>20}{'test accuracy':>16}")
    for agg in AGGREGATORS:
        doc = synthetic(
            {"kind": "fedavg", "rounds": args.rounds, "clients_per_round": 10, "lr": 0.1},
            aggregator=agg,
            attack={"attacker_ids": [0], "gamma": args.gamma, "source": "fixed", "value": args.value},
        )
        final = runtime.run_fedavg(config_from_dict(doc))[-1]
        distance = float(np.linalg.norm(final.params - args.value))
        print(f"{agg['kind']:<12}{distance:>20.3f}{final.test_accuracy:>16.4f}")


if __name__ == "__main__":
    main()
