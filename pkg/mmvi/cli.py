"""Command line entry point: ``mmvi run|converge|energy``."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .base import ConfigError, MmviError
from .config import ExperimentConfig, load_config
from .modules.harness import convergence_study, energy_study, run_experiment

logger = logging.getLogger("mmvi")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# flag name -> type; flag names equal ExperimentConfig field names
FIELD_FLAGS = {
    "problem": str,
    "strategy": str,
    "scheme": str,
    "N": int,
    "dt": float,
    "t_max": float,
    "alpha": float,
    "v": float,
    "X0": float,
    "Xmax": float,
    "homotopy_d": int,
    "output_dir": Path,
    "delta_min_factor": float,
    "record_every": int,
    "kkt_monitor_every": int,
}


def _parse_Ns(text: str) -> List[int]:
    try:
        Ns = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--Ns expects comma separated integers, got {text!r}") from exc
    if not Ns:
        raise argparse.ArgumentTypeError("--Ns needs at least one value")
    return Ns


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmvi", description="Moving-mesh variational integrators for (1+1)D field theories")
    parser.add_argument("--log-level", default=None, help="root logging level (default: MMVI_LOG_LEVEL or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("config", nargs="?", type=Path, default=None, help="flat JSON experiment config")
        for name, kind in FIELD_FLAGS.items():
            sub.add_argument(f"--{name}", dest=name, type=kind, default=None)

    add_common(commands.add_parser("run", help="integrate one configuration"))
    converge = commands.add_parser("converge", help="L-infinity convergence study over several N")
    add_common(converge)
    converge.add_argument("--Ns", type=_parse_Ns, required=True, help="e.g. 15,31,63,127")
    converge.add_argument("--workers", type=int, default=None)
    add_common(commands.add_parser("energy", help="energy behaviour of a TwoSoliton run"))
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {name: getattr(args, name) for name in FIELD_FLAGS}
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if args.log_level is not None:
        overrides["log_level"] = args.log_level
    return overrides


def _dispatch(args: argparse.Namespace, cfg: ExperimentConfig) -> Dict[str, Any]:
    if args.command == "run":
        trajectory = run_experiment(cfg)
        return {
            "termination_reason": trajectory.termination_reason,
            "records": len(trajectory),
            "output_dir": str(cfg.output_dir),
        }
    if args.command == "converge":
        return convergence_study(cfg, args.Ns, workers=cfg.workers).to_dict()
    return energy_study(cfg).to_dict()


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        logging.basicConfig(level=logging.INFO)
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG

    logging.basicConfig(level=getattr(logging, str(cfg.log_level).upper(), logging.INFO))
    try:
        result = _dispatch(args, cfg)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except MmviError as exc:
        logger.error("numerical failure (%s): %s", exc.termination_reason, exc)
        return EXIT_NUMERICAL
    print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
