"""Config builder shared by the demo scripts."""


def synthetic(algorithm: dict, n_clients: int = 10, samples: int = 60, d: int = 20, C: int = 5, seed: int = 0, **extra):
    doc = {
        "seed": seed,
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
