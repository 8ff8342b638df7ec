#!/usr/bin/env python3
"""
Lattice Clock Toolkit - CLI Entry Point
格子時計の開放系ダイナミクス実験ランナー

    python main.py run --config configs/decay_waveguide.yaml
    python main.py validate --config configs/decay_waveguide.yaml

Exit codes: 0 ok, 2 schema violation, 3 numerical failure, 4 I/O failure.
"""

import argparse
import json
import sys
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

from src.application.experiment_runner import create_experiment_runner
from src.config.experiment import ExperimentConfig
from src.config.settings import get_compute_settings
from src.core.errors import ConfigReadError, ConfigValidationError, LatticeClockError, OutputWriteError
from src.utils.logger import get_logger, log_system_shutdown, log_system_startup, setup_logging

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lattice-clock",
        description="Open-system dynamics of 1D atomic lattice clocks: spectra, decay and clock signals.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("run", "run one experiment scenario"),
                            ("validate", "check a config against the scenario schema")):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="YAML experiment config")
        sub.add_argument("--log-level", choices=LOG_LEVELS, type=str.upper, default=None)
        if name == "run":
            sub.add_argument("--output-dir", default=None, help="override output.directory")
            sub.add_argument("--threads", type=int, default=None, help="override WORKER_THREADS")
    return parser


def exit_code_for(error: BaseException) -> int:
    """例外から終了コードへの対応"""
    if isinstance(error, ConfigValidationError):
        return EXIT_SCHEMA
    if isinstance(error, (ConfigReadError, OutputWriteError)):
        return EXIT_IO
    if isinstance(error, (LatticeClockError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_UNEXPECTED


def cmd_validate(args: argparse.Namespace) -> int:
    logger = get_logger(__name__)
    report = ExperimentConfig.inspect(args.config)
    print(json.dumps({"config": args.config, "valid": report.is_valid, **report.to_dict()},
                     indent=2, ensure_ascii=False))
    for message in report.messages():
        logger.warning(f"⚠️ {message}")
    if report.is_valid:
        logger.info(f"✅ {args.config} is valid")
        return EXIT_OK
    return EXIT_SCHEMA


def cmd_run(args: argparse.Namespace) -> int:
    logger = get_logger(__name__)
    if args.threads is not None and args.threads < 1:
        logger.error(f"❌ --threads must be >= 1, got {args.threads}")
        return EXIT_SCHEMA
    config = ExperimentConfig.load(args.config)
    threads = args.threads or get_compute_settings().worker_threads
    logger.info(f"🎯 Scenario {config.scenario} from {args.config} ({threads} thread(s))")
    manifest = create_experiment_runner(config, output_dir=args.output_dir, max_workers=threads).run()
    logger.info(f"✅ Run finished: {len(manifest.outputs)} output file(s)")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """CLI main entry point"""
    load_dotenv(override=False)
    args = build_parser().parse_args(argv)

    setup_logging(args.log_level)
    logger = get_logger(__name__)
    log_system_startup(args.command)

    handlers = {"run": cmd_run, "validate": cmd_validate}
    try:
        code = handlers[args.command](args)
    except KeyboardInterrupt:
        logger.warning("⏹️ Interrupted")
        code = 130
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_UNEXPECTED:
            logger.exception(f"💥 Unexpected failure: {e}")
        else:
            logger.error(f"❌ {type(e).__name__}: {e}")
    log_system_shutdown(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
