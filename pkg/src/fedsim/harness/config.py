"""Run configuration: JSON schema, defaults, cross-field validation and digest."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import jsonschema

from fedsim.errors import CrossFieldError, DataIOError, FeatureGapError, FeatureOverlapError, SchemaError
from fedsim.robust import AggregatorSpec, AttackSpec
from fedsim.topology import TopologySpec, build_topology

U64_MAX = 2**64 - 1

_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "model", "algorithm"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": U64_MAX},
        "mode": {"enum": ["simulate", "distributed"]},
        "output": {"type": ["string", "null"]},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["synthetic", "csv"]},
                "alpha": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "n_clients": _POS_INT,
                "n_features": _POS_INT,
                "n_classes": _POS_INT,
                "samples_per_client": {
                    "oneOf": [_POS_INT, {"type": "array", "items": _POS_INT, "minItems": 1}]
                },
                "path": {"type": "string"},
                "label_column": _INT,
                "skip_header": {"type": "boolean"},
                "test_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "partition": {
            "type": "object",
            "additionalProperties": False,
            "required": ["method"],
            "properties": {
                "method": {"enum": ["natural", "iid", "lda", "power_law", "one_class"]},
                "n_clients": _POS_INT,
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "exponent": {"type": "number", "minimum": 0},
                "min_samples": _POS_INT,
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["logistic_regression", "mlp"]},
                "n_features": _POS_INT,
                "n_classes": _POS_INT,
                "hidden_dim": _POS_INT,
                "activation": {"enum": ["tanh", "relu"]},
                "l2": {"type": "number", "minimum": 0},
            },
        },
        "algorithm": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "rounds"],
            "properties": {
                "kind": {"enum": ["fedavg", "decentralized", "split", "vfl"]},
                "rounds": _POS_INT,
                "clients_per_round": _POS_INT,
                "epochs": _POS_INT,
                "batch_size": _POS_INT,
                "lr": {"type": "number", "minimum": 0},
                "init_scale": {"type": "number", "minimum": 0},
                "vfl_columns": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                },
                "on_unknown": {"enum": ["raise", "warn"]},
            },
        },
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["star", "ring", "full_mesh", "hierarchical", "custom"]},
                "n_workers": _POS_INT,
                "hub_id": {"type": "integer", "minimum": 0},
                "group_size": _POS_INT,
                "edges": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 0},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                },
            },
        },
        "aggregator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["mean", "clip", "weak_dp", "rfa", "krum", "multi_krum"]},
                "C": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "minimum": 0},
                "f": {"type": "integer", "minimum": 0},
                "m": _POS_INT,
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": _POS_INT,
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "attack": {
            "type": "object",
            "additionalProperties": False,
            "required": ["attacker_ids", "gamma"],
            "properties": {
                "attacker_ids": {"type": "array", "items": {"type": "integer", "minimum": 0}, "uniqueItems": True},
                "gamma": _NUM,
                "source": {"enum": ["fixed", "label_flip"]},
                "value": _NUM,
                "target": {"type": "array", "items": _NUM},
            },
        },
    },
}

_DATASET_DEFAULTS = {
    "synthetic": {"n_features": 60, "n_classes": 10, "test_fraction": 0.2},
    "csv": {"label_column": -1, "skip_header": False, "test_fraction": 0.2},
}
_PARTITION_DEFAULTS = {"alpha": 0.5, "exponent": 1.0, "min_samples": 10}
_ALGORITHM_DEFAULTS = {"epochs": 1, "batch_size": 10, "lr": 0.1, "init_scale": 0.0, "on_unknown": "raise"}


@dataclass(frozen=True)
class RunConfig:
    """A validated experiment description.

    Sections are kept as plain dicts with every default filled in, next to
    the typed specs the rest of the package consumes.
    """

    dataset: dict
    partition: dict | None
    model: dict
    algorithm: dict
    topology: TopologySpec | None
    aggregator: AggregatorSpec
    attack: AttackSpec | None
    seed: int = 0
    mode: str = "simulate"
    output: str | None = None
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_clients(self) -> int:
        if self.partition is not None:
            return self.partition["n_clients"]
        return self.dataset.get("n_clients", 1)

    @property
    def clients_per_round(self) -> int:
        return self.algorithm.get("clients_per_round", self.n_clients)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "mode": self.mode,
            "output": self.output,
            "dataset": self.dataset,
            "model": self.model,
            "algorithm": self.algorithm,
            "aggregator": self.aggregator.to_dict(),
        }
        if self.partition is not None:
            d["partition"] = self.partition
        if self.topology is not None:
            d["topology"] = self.topology.to_dict()
        if self.attack is not None:
            d["attack"] = {
                "attacker_ids": list(self.attack.attacker_ids),
                "gamma": self.attack.gamma,
                "source": self.attack.source,
                "value": self.attack.value,
            }
            if self.attack.target is not None:
                d["attack"]["target"] = list(self.attack.target)
        return copy.deepcopy(d)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; ``mode`` and ``output`` are excluded."""
        d = self.to_dict()
        d.pop("mode")
        d.pop("output")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        return hashlib.sha256(canon.encode("ascii")).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return config_from_dict(d)


def _schema_check(doc) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        pointer = "".join(f"/{p}" for p in error.absolute_path)
        raise SchemaError(pointer, error.message)


def check_feature_split(columns, n_features: int) -> tuple[list[int], list[int]]:
    """Validate a two-party vertical split of ``range(n_features)``."""
    a, b = (sorted(int(c) for c in part) for part in columns)
    if not a or not b:
        raise FeatureGapError("each vertical party must hold at least one feature column")
    if len(set(a)) != len(a) or len(set(b)) != len(b) or set(a) & set(b):
        raise FeatureOverlapError(f"columns {sorted(set(a) & set(b)) or 'repeated'} assigned twice")
    covered = set(a) | set(b)
    if covered != set(range(n_features)):
        missing = sorted(set(range(n_features)) - covered)
        extra = sorted(covered - set(range(n_features)))
        raise FeatureGapError(f"feature split leaves out columns {missing} / references unknown {extra}")
    return a, b


def config_from_dict(doc: dict) -> RunConfig:
    """Validate ``doc`` and build a :class:`RunConfig` with defaults filled in."""
    _schema_check(doc)
    doc = copy.deepcopy(doc)
    dataset = {**_DATASET_DEFAULTS[doc["dataset"]["kind"]], **doc["dataset"]}
    if dataset["kind"] == "synthetic":
        for key in ("alpha", "beta", "n_clients", "samples_per_client"):
            if key not in dataset:
                raise SchemaError(f"/dataset/{key}", f"'{key}' is required for synthetic data")
        dataset["alpha"] = float(dataset["alpha"])
        dataset["beta"] = float(dataset["beta"])
        spc = dataset["samples_per_client"]
        if isinstance(spc, list) and len(spc) != dataset["n_clients"]:
            raise CrossFieldError(
                ("dataset.samples_per_client", "dataset.n_clients"), "need one size per client"
            )
    elif "path" not in dataset:
        raise SchemaError("/dataset/path", "'path' is required for csv data")
    dataset["test_fraction"] = float(dataset["test_fraction"])

    algorithm = {**_ALGORITHM_DEFAULTS, **doc["algorithm"]}
    algorithm["lr"] = float(algorithm["lr"])
    algorithm["init_scale"] = float(algorithm["init_scale"])
    kind = algorithm["kind"]

    model = {"activation": "tanh", "l2": 0.0, **doc["model"]}
    model["l2"] = float(model["l2"])
    if model["kind"] == "mlp" and "hidden_dim" not in model:
        raise SchemaError("/model/hidden_dim", "'hidden_dim' is required for an mlp")
    if dataset["kind"] == "synthetic":
        for key in ("n_features", "n_classes"):
            if key in model and model[key] != dataset[key]:
                raise CrossFieldError((f"model.{key}", f"dataset.{key}"), "model and data disagree")

    partition = None
    if "partition" in doc:
        partition = {**doc["partition"]}
        for key, default in _PARTITION_DEFAULTS.items():
            if key in ("alpha",) and partition["method"] != "lda":
                continue
            if key in ("exponent", "min_samples") and partition["method"] != "power_law":
                continue
            partition.setdefault(key, default)
    elif kind in ("fedavg", "decentralized"):
        if dataset["kind"] != "synthetic":
            raise SchemaError("/partition", "a partition section is required for csv data")
        partition = {"method": "natural"}
    if partition is not None:
        if partition["method"] == "natural":
            if dataset["kind"] != "synthetic":
                raise CrossFieldError(("partition.method", "dataset.kind"), "natural partition needs synthetic data")
            n = partition.setdefault("n_clients", dataset["n_clients"])
            if n != dataset["n_clients"]:
                raise CrossFieldError(
                    ("partition.n_clients", "dataset.n_clients"), "natural partition keeps the generator's clients"
                )
        elif "n_clients" not in partition:
            raise SchemaError("/partition/n_clients", "'n_clients' is required")
        if "alpha" in partition:
            partition["alpha"] = float(partition["alpha"])
        if "exponent" in partition:
            partition["exponent"] = float(partition["exponent"])
        if (
            partition["method"] == "one_class"
            and dataset["kind"] == "synthetic"
            and partition["n_clients"] > dataset["n_classes"]
        ):
            raise CrossFieldError(
                ("partition.n_clients", "dataset.n_classes"), "one_class needs at least one class per client"
            )

    aggregator = AggregatorSpec(**doc.get("aggregator", {"kind": "mean"}))
    attack = None
    if "attack" in doc:
        a = doc["attack"]
        attack = AttackSpec(
            attacker_ids=tuple(a["attacker_ids"]),
            gamma=float(a["gamma"]),
            source=a.get("source", "fixed"),
            value=float(a.get("value", 0.0)),
            target=tuple(float(v) for v in a["target"]) if "target" in a else None,
        )

    topology = TopologySpec.from_dict(doc["topology"]) if "topology" in doc else None
    cfg = RunConfig(
        dataset=dataset,
        partition=partition,
        model=model,
        algorithm=algorithm,
        topology=topology,
        aggregator=aggregator,
        attack=attack,
        seed=int(doc.get("seed", 0)),
        mode=doc.get("mode", "simulate"),
        output=doc.get("output"),
        raw=doc,
    )
    if kind in ("fedavg", "decentralized") and cfg.partition is None:
        raise SchemaError("/partition", f"'{kind}' needs a partition")
    if kind == "decentralized" and topology is None:
        cfg = dataclasses.replace(cfg, topology=TopologySpec("ring", cfg.n_clients))
    _cross_checks(cfg)
    return cfg


def _cross_checks(cfg: RunConfig) -> None:
    alg = cfg.algorithm
    kind = alg["kind"]
    agg = cfg.aggregator
    if kind == "fedavg":
        n = cfg.n_clients
        cpr = cfg.clients_per_round
        if cpr > n:
            raise CrossFieldError(("algorithm.clients_per_round", "partition.n_clients"), f"{cpr} > {n}")
        if agg.kind in ("krum", "multi_krum") and cpr < 2 * agg.f + 3:
            raise CrossFieldError(
                ("aggregator.f", "algorithm.clients_per_round"),
                f"{agg.kind} needs n >= 2f + 3 = {2 * agg.f + 3} updates per round, got n = {cpr}",
            )
        if agg.kind == "multi_krum" and agg.m > cpr - agg.f - 2:
            raise CrossFieldError(("aggregator.m", "aggregator.f"), f"m must be <= n - f - 2 = {cpr - agg.f - 2}")
        if cfg.topology is not None:
            t = cfg.topology
            if t.kind != "star" or t.hub_id != 0 or t.n_workers != n + 1:
                raise CrossFieldError(
                    ("topology", "algorithm.kind"), f"fedavg needs a star with hub 0 over {n + 1} workers"
                )
        if cfg.attack is not None and any(i >= n for i in cfg.attack.attacker_ids):
            raise CrossFieldError(("attack.attacker_ids", "partition.n_clients"), "attacker ID out of range")
    else:
        if agg.kind != "mean":
            raise CrossFieldError(("aggregator.kind", "algorithm.kind"), "robust aggregators apply to fedavg only")
        if cfg.attack is not None:
            raise CrossFieldError(("attack", "algorithm.kind"), "attacks are simulated for fedavg only")
        if "clients_per_round" in alg:
            raise CrossFieldError(("algorithm.clients_per_round", "algorithm.kind"), "only fedavg samples clients")
    if kind == "decentralized":
        t = cfg.topology
        if t.n_workers != cfg.n_clients:
            raise CrossFieldError(("topology.n_workers", "partition.n_clients"), "one worker per client")
        try:
            tm = build_topology(t)
        except ValueError as exc:
            raise CrossFieldError(("topology",), str(exc)) from exc
        if not tm.is_connected():
            raise CrossFieldError(("topology", "algorithm.kind"), "decentralized training needs a connected topology")
    elif kind in ("split", "vfl") and cfg.topology is not None:
        raise CrossFieldError(("topology", "algorithm.kind"), f"{kind} uses a fixed two-party flow")
    if kind == "split" and cfg.model["kind"] != "mlp":
        raise CrossFieldError(("model.kind", "algorithm.kind"), "split learning cuts an mlp after its hidden layer")
    if kind == "vfl":
        if cfg.model["kind"] != "logistic_regression":
            raise CrossFieldError(("model.kind", "algorithm.kind"), "vertical training supports logistic regression")
        if cfg.dataset["kind"] == "synthetic":
            d = cfg.dataset["n_features"]
            check_feature_split(alg.get("vfl_columns") or default_vfl_columns(d), d)


def default_vfl_columns(n_features: int) -> list[list[int]]:
    k = max(1, n_features // 2)
    return [list(range(k)), list(range(k, n_features))]


def parse_config(path, seed: int | None = None) -> RunConfig:
    """Read and validate a JSON config file. ``seed`` overrides the file's seed."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("", "config must be a JSON object")
    if seed is not None:
        doc["seed"] = seed
    return config_from_dict(doc)
