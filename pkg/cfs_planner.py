#!/usr/bin/env python
"""
CFS Planner
===========
Trajectory planning around 2D obstacles with the Convex Feasible Set algorithm,
plus a benchmark harness that sweeps planning horizons and writes Table-style
summaries and per-iteration traces.

Usage:
    python cfs_planner.py --scenario config/scenarios/scenario1.json --horizons 30,50,100 \
        --format csv --out outputs/scenario1
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

# Import logging first
from utils.logger import setup_logging, get_logger

# Import configuration
from config.config_loader import load_benchmark_settings, load_config, load_solver_settings

# Import core modules
from core.benchmark import run_benchmark
from core.cfs import CfsConfig
from core.output_generator import FORMATS, create_output_dir, emit
from core.scenario_loader import load_scenario
from core.subsolver import BarrierSettings
from utils.errors import ParseError, ValidationError

EXIT_OK = 0
EXIT_LOAD_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_SOLVER_FAILURE = 3


def _horizons(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"horizons must be comma-separated integers, got '{text}'") from e
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"horizons must be positive integers, got '{text}'")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='cfs_planner',
        description='Run the Convex Feasible Set planner over a sweep of horizons.',
    )
    parser.add_argument('--scenario', required=True, type=Path, help='scenario JSON file')
    parser.add_argument('--horizons', type=_horizons, help='comma-separated horizons, e.g. 30,40,50,100')
    parser.add_argument('--eps1', type=float, help='step tolerance on |x_{k+1} - x_k|')
    parser.add_argument('--eps2', type=float, help='cost-descent tolerance (default 1e-4 * (1 + J0))')
    parser.add_argument('--max-iter', type=int, dest='max_iter', help='iteration cap per solve')
    parser.add_argument('--out', type=Path, help='report file (json) or directory (csv/xlsx)')
    parser.add_argument('--format', choices=FORMATS, dest='fmt', help='report format')
    parser.add_argument('--emit-trajectories', action='store_true', help='include waypoints of every iterate')
    parser.add_argument('--config', type=Path, help='solver configuration JSON')
    parser.add_argument('--workers', type=int, help='horizons solved concurrently')
    parser.add_argument('--log-dir', type=Path, dest='log_dir', help='directory for the log file')
    parser.add_argument('--quiet', action='store_true', help='only warnings and errors on the console')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main execution workflow for CFS Planner.

    Workflow Steps:
    1. Setup logging to console and file
    2. Load configuration and apply command-line overrides
    3. Load and validate the scenario
    4. Run the horizon sweep
    5. Write the report

    Parameters:
    -----------
    argv : Optional[List[str]]
        Command-line arguments (defaults to sys.argv[1:])

    Returns:
    --------
    int
        0 when every row converged, 2 if any row was infeasible, 1 if the
        scenario or configuration could not be loaded
    """
    args = build_parser().parse_args(argv)

    # Start overall execution timer
    workflow_start_time = time.time()

    log_file = setup_logging(args.log_dir, logging.WARNING if args.quiet else logging.INFO)
    logger = get_logger(__name__)

    logger.info("=" * 80)
    logger.info("CFS PLANNER - Convex Feasible Set Trajectory Benchmark")
    logger.info("=" * 80)
    logger.info(f"Log file: {log_file}")
    logger.info("")

    try:
        config = load_config(args.config)
        solver_settings = load_solver_settings(config)
        bench_settings = load_benchmark_settings(config)
        for key in ('eps1', 'eps2', 'max_iter'):
            if getattr(args, key) is not None:
                solver_settings[key] = getattr(args, key)
        cfs_config = CfsConfig.from_settings(solver_settings)
        barrier = BarrierSettings.from_settings(solver_settings)

        scenario = load_scenario(
            args.scenario,
            validation_samples=int(bench_settings['validation_samples']),
            seed=int(bench_settings['seed']),
        )
    except (ParseError, ValidationError, FileNotFoundError, KeyError, ValueError) as e:
        logger.error("")
        logger.error("=" * 80)
        logger.error("✗ LOAD FAILED")
        logger.error("=" * 80)
        logger.error(f"Error: {e}", exc_info=True)
        return EXIT_LOAD_ERROR

    horizons = args.horizons or list(scenario.horizons) or list(bench_settings['horizons'])
    workers = args.workers if args.workers is not None else int(bench_settings['workers'])
    fmt = args.fmt or bench_settings['format']
    emit_trajectories = args.emit_trajectories or bool(bench_settings['emit_trajectories'])

    try:
        report = run_benchmark(
            scenario, horizons, cfs_config, barrier,
            workers=workers, emit_trajectories=emit_trajectories,
        )
        out = args.out
        if out is None:
            out = create_output_dir(scenario.name)
        emit(report, fmt, out)
    except Exception as e:
        elapsed_time = time.time() - workflow_start_time
        logger.error("")
        logger.error("=" * 80)
        logger.error("✗ WORKFLOW FAILED")
        logger.error("=" * 80)
        logger.error(f"Error: {str(e)}", exc_info=True)
        logger.error(f"Workflow failed after {elapsed_time:.2f} seconds")
        logger.error(f"See log file for details: {log_file}")
        return EXIT_LOAD_ERROR

    total_execution_time = time.time() - workflow_start_time
    logger.info("")
    if report.any_failed:
        logger.warning("⚠ WORKFLOW COMPLETE WITH FAILED ROWS")
    elif report.any_infeasible:
        logger.warning("⚠ WORKFLOW COMPLETE WITH INFEASIBLE ROWS")
    else:
        logger.info("✓ WORKFLOW COMPLETE")
    logger.info(f"✓ Total execution time: {total_execution_time:.2f} seconds")
    logger.info(f"✓ Log file: {log_file}")
    if report.any_failed:
        return EXIT_SOLVER_FAILURE
    return EXIT_INFEASIBLE if report.any_infeasible else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
