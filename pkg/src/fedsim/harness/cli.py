"""``fedsim`` command line: run, inspect-partition, gradcheck.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from fedsim.comm.transport import parse_address
from fedsim.errors import ConfigError, DataIOError, InvalidSpecError
from fedsim.harness import runner
from fedsim.harness.config import parse_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("fedsim")


class ConfigFailure(Exception):
    """Anything wrong with user-provided inputs, mapped to exit code 2."""


def load_peers(path) -> dict[int, tuple[str, int]]:
    """Peer table: a JSON object mapping worker IDs to ``"host:port"``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("peer table must be a JSON object")
        return {int(k): parse_address(v) for k, v in doc.items()}
    except (OSError, ValueError, TypeError, AttributeError) as exc:
        raise ConfigFailure(f"bad peer table {path}: {exc}") from exc


def _config(args):
    try:
        return parse_config(args.config, seed=args.seed)
    except (ConfigError, DataIOError) as exc:
        raise ConfigFailure(str(exc)) from exc


def cmd_run(args) -> int:
    config = _config(args)
    mode = args.mode or config.mode
    if mode == "distributed":
        if args.worker_id is None or args.peers is None:
            raise ConfigFailure("distributed mode needs --worker-id and --peers")
        runner.run(config, out=args.output, worker_id=args.worker_id, peers=load_peers(args.peers))
    else:
        if args.worker_id is not None or args.peers is not None:
            raise ConfigFailure("--worker-id/--peers only apply to --mode distributed")
        runner.run(config, out=args.output)
    return EXIT_OK


def cmd_inspect(args) -> int:
    config = _config(args)
    try:
        report = runner.inspect_partition(config)
    except ConfigError as exc:
        raise ConfigFailure(str(exc)) from exc
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    text = args.model
    if not text.lstrip().startswith("{"):
        try:
            text = Path(text).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigFailure(f"cannot read model spec {args.model}: {exc}") from exc
    try:
        model = json.loads(text)
        report = runner.gradcheck(model, instances=args.instances, seed=args.seed or 0, corrupt=args.corrupt)
    except (json.JSONDecodeError, InvalidSpecError, TypeError) as exc:
        raise ConfigFailure(f"invalid model spec: {exc}") from exc
    verdict = "PASS" if report["passed"] else "FAIL"
    print(json.dumps(report, indent=2))
    print(
        f"{verdict}: max relative error {report['max_rel_err']:.3e} (bound {report['bound']:.0e}) "
        f"at {report['worst_coordinate']} in instance {report['worst_instance']}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write per-round JSONL metrics")
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--mode", choices=["simulate", "distributed"], help="overrides the config's mode")
    p.add_argument("--worker-id", type=int, help="this process's worker (distributed mode)")
    p.add_argument("--peers", help="JSON file mapping worker IDs to host:port (distributed mode)")
    p.add_argument("--seed", type=int, help="overrides the config's seed")
    p.add_argument("--output", help="metrics file; defaults to the config's output, else stdout")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("inspect-partition", help="print partition statistics as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", help="finite-difference check of a model's gradient")
    p.add_argument("--model", required=True, help="model spec as inline JSON or a path to a JSON file")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FEDSIM_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigFailure as exc:
        print(f"fedsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # any failure after validation is a runtime error
        log.debug("run failed", exc_info=True)
        print(f"fedsim: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
