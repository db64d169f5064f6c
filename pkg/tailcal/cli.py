#!/usr/bin/env python
"""
tailcal command line.

Every command resolves the layered configuration, runs a short stage
pipeline and writes one run directory (config.json, metrics.csv, curves/,
models/, manifest.json).

Usage:
    tailcal simulate --n 100000 --seed 7 --out runs/sim
    tailcal gen-data --out data/synth
    tailcal cluster --data data/synth --out runs/clusters
    tailcal train --model drn --data data/synth --replicates 10 --out runs/drn
    tailcal finetune --model drn --data data/synth --baseline runs/drn --penalty tmcb --gamma 5 --out runs/drn_tmcb
    tailcal evaluate --data data/synth --model runs/drn_tmcb --baseline runs/drn/models/drn_baseline_r00.json
    tailcal diagnose --data data/synth --model truth --model runs/drn --out runs/diag
    tailcal sweep --model emos --data data/synth --penalty tmcb --gamma-grid 0,1,5 --out runs/sweep

Exit codes: 0 success, 2 configuration or usage error, 1 any other failure.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from tailcal.infrastructure.config.loader import ConfigLoader, deep_merge, validate_config
from tailcal.infrastructure.logging import RunMetrics, get_logger, setup_logging
from tailcal.orchestration.pipeline import PipelineStage, RunContext, execute_pipeline
from tailcal.services.errors import ConfigError, TailCalError
from tailcal.stages import (
    ClusterStage,
    DiagnoseStage,
    EvaluateStage,
    GenerateDataStage,
    LoadDataStage,
    ReplicateStage,
    SimulateStage,
    WriteOutputsStage,
)


logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

FAMILY_COMMANDS = ("train", "finetune", "sweep")
FAMILIES = ("emos", "drn", "cgm")


# ============================================================================
# Arguments
# ============================================================================

def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _str_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON document merged over the YAML configuration")
    common.add_argument("--env", help="environment overlay (desk, full)")
    common.add_argument("--seed", type=int, help="global seed (replicate r uses seed + r)")
    common.add_argument("--out", type=Path, help="run directory (default runs/<command>)")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="gen-data directory or weather CSV; synthetic data when omitted")
    data.add_argument("--threshold", type=float, help="tail threshold t")

    family = argparse.ArgumentParser(add_help=False)
    family.add_argument("--model", choices=FAMILIES, default="drn", help="model family")
    family.add_argument("--loss", help="base score (crps, crps_sample, fair_crps, log_score)")
    family.add_argument("--replicates", type=int, help="replicate count")

    penalty = argparse.ArgumentParser(add_help=False)
    penalty.add_argument("--penalty", type=_str_list, help="comma-separated penalties")

    parser = argparse.ArgumentParser(prog="tailcal", description="Tail-calibrated forecast training and evaluation")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", parents=[common, penalty], help="mixture-forecaster simulation study")
    simulate.add_argument("--n", type=int, help="simulated records")
    simulate.add_argument("--threshold", type=float, help="tail threshold t")
    simulate.add_argument("--gamma-grid", type=_float_list, dest="gamma_grid", help="comma-separated penalty weights")

    commands.add_parser("gen-data", parents=[common, data], help="write a synthetic train/test dataset")
    commands.add_parser("cluster", parents=[common, data], help="EMOS station clustering and elbow report")
    commands.add_parser("train", parents=[common, data, family], help="train CRPS baselines")

    finetune = commands.add_parser("finetune", parents=[common, data, family, penalty],
                                   help="finetune baselines with penalized losses")
    finetune.add_argument("--gamma", type=_float_list, help="comma-separated penalty weights")
    finetune.add_argument("--baseline", help="run directory whose baseline models are finetuned")

    sweep = commands.add_parser("sweep", parents=[common, data, family, penalty], help="gamma trajectory over a grid")
    sweep.add_argument("--gamma-grid", type=_float_list, dest="gamma_grid", help="comma-separated penalty weights")
    sweep.add_argument("--baseline", help="run directory whose baseline models are finetuned")

    for name, text in (("evaluate", "metric table and skill against a baseline"),
                       ("diagnose", "PIT, CPIT and R-hat curves")):
        sub = commands.add_parser(name, parents=[common, data], help=text)
        sub.add_argument("--model", action="append", dest="models", required=True,
                         help="model file, run directory or 'truth' (repeatable)")
        if name == "evaluate":
            sub.add_argument("--baseline", help="baseline model file or run directory")

    return parser


# ============================================================================
# Configuration
# ============================================================================

def flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Configuration overrides from explicit flags (applied last)."""
    overrides: Dict[str, Any] = {}

    def put(section: str, key: str, value: Any) -> None:
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put("system", "seed", args.seed)
    if args.command == "simulate":
        put("simulation", "n", args.n)
        put("simulation", "threshold", args.threshold)
        put("simulation", "penalties", args.penalty)
        put("simulation", "gamma_grid", args.gamma_grid)
    else:
        put("data", "threshold", args.threshold)
        put("loss", "threshold", args.threshold)
    if args.command in FAMILY_COMMANDS:
        put("loss", "base", args.loss)
        put(args.model, "replicates", args.replicates)
    if args.verbose:
        put("logging", "level", "DEBUG")
    return overrides


def resolve_config(args: argparse.Namespace, loader: Optional[ConfigLoader] = None) -> Dict[str, Any]:
    """
    Raises:
        ConfigError: Invalid layer, override or flag
    """
    loader = loader or ConfigLoader()
    family = args.model if args.command in FAMILY_COMMANDS else None
    config = loader.load_config(family=family, env=args.env, json_path=args.config)
    config = deep_merge(config, flag_overrides(args))
    validate_config(config)
    return config


def check_flags(args: argparse.Namespace) -> None:
    """
    Raises:
        ConfigError: Out-of-range flag values
    """
    if getattr(args, "n", None) is not None and args.n < 1:
        raise ConfigError("--n must be >= 1", context={"n": args.n})
    if getattr(args, "replicates", None) is not None and args.replicates < 1:
        raise ConfigError("--replicates must be >= 1", context={"replicates": args.replicates})
    for flag in ("gamma", "gamma_grid"):
        values = getattr(args, flag, None) or []
        if any(g < 0 for g in values):
            raise ConfigError(f"--{flag.replace('_', '-')} must be nonnegative", context={"values": values})
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be nonnegative", context={"seed": args.seed})


# ============================================================================
# Pipelines
# ============================================================================

def build_stages(args: argparse.Namespace) -> List[Tuple[str, PipelineStage]]:
    command = args.command
    if command == "simulate":
        stages = [("simulate", SimulateStage())]
    elif command == "gen-data":
        stages = [("generate_data", GenerateDataStage())]
    else:
        stages = [("load_data", LoadDataStage())]
        if command == "cluster":
            stages.append(("cluster", ClusterStage()))
        elif command == "train":
            stages.append(("train", ReplicateStage()))
        elif command == "finetune":
            stages.append(("finetune", ReplicateStage(finetune=True, penalties=args.penalty, gammas=args.gamma)))
        elif command == "sweep":
            stages.append(("sweep", ReplicateStage(finetune=True, penalties=args.penalty, gammas=args.gamma_grid,
                                                   trajectory=True)))
        elif command == "evaluate":
            stages.append(("evaluate", EvaluateStage()))
        elif command == "diagnose":
            stages.append(("diagnose", DiagnoseStage()))
    stages.append(("write_outputs", WriteOutputsStage()))
    return stages


def build_context(args: argparse.Namespace, config: Dict[str, Any]) -> RunContext:
    options = {
        key: getattr(args, key)
        for key in ("data", "baseline", "models", "replicates")
        if getattr(args, key, None) is not None
    }
    if args.command in FAMILY_COMMANDS:
        options["model"] = args.model
    out_dir = args.out if args.out is not None else Path("runs") / args.command
    return RunContext(command=args.command, config=config, seed=int(config["system"]["seed"]),
                      out_dir=out_dir, options=options, metrics=RunMetrics())


def run(args: argparse.Namespace) -> int:
    try:
        check_flags(args)
        config = resolve_config(args)
    except ConfigError as e:
        print(f"tailcal {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging_cfg = config.get("logging", {})
    setup_logging(level=logging_cfg.get("level", "INFO"), format_type=logging_cfg.get("format", "simple"))

    context = build_context(args, config)
    context.metrics.command_started(args.command)
    bound_logger = logger.bind(command=args.command)
    bound_logger.info("command_started", seed=context.seed, out_dir=str(context.out_dir))

    error: Optional[Exception]
    try:
        result = execute_pipeline(build_stages(args), context)
    except TailCalError as e:
        error = e
    except Exception as e:
        bound_logger.exception("command_crashed", error=str(e))
        context.metrics.command_failed()
        print(f"tailcal {args.command}: unexpected error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    else:
        error = result.unwrap_err() if result.is_err() else None

    if error is not None:
        context.metrics.command_failed()
        bound_logger.error("command_failed", error=str(error), metrics=context.metrics.to_dict())
        print(f"tailcal {args.command}: {error}", file=sys.stderr)
        return EXIT_USAGE if isinstance(error, ConfigError) else EXIT_FAILURE

    context.metrics.command_completed()
    bound_logger.info("command_completed", failures=len(context.failures), metrics=context.metrics.to_dict())
    if args.verbose:
        print(context.metrics.get_summary(), file=sys.stderr)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Console entry point; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
