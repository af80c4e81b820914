"""
Output generation module for CFS Planner.

This module writes benchmark reports to disk as JSON (the full report), CSV (a
Table-1-style summary plus one trace file per horizon) or XLSX (the same
tables as worksheets), and reads JSON reports back.

Functions:
    create_output_dir: Timestamped directory under OUTPUT_DIR
    emit: Write a BenchReport in the requested format
    load_report: Read a JSON report written by emit
"""

import csv
import json
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Union

from config.config_loader import OUTPUT_DIR
from core.benchmark import BenchReport, BenchRow
from utils.errors import IoError
from utils.logger import get_logger
from utils.xlsx_generator import generate_xlsx_report

logger = get_logger(__name__)

FORMATS = ('json', 'csv', 'xlsx')
SUMMARY_HEADER = ['h', 'Cost', 'Iter', 'Time', 'dT', 'build', 'solve', 'termination']
TRACE_HEADER = ['iter', 'cost', 'feas_err']


def create_output_dir(scenario: str, output_name: Optional[str] = None) -> Path:
    """Create outputs/<scenario>_<YYYYMMDD_HHMMSS> (or outputs/<output_name>)."""
    if output_name is None:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        output_name = f"{scenario}_{timestamp}"
    output_path = OUTPUT_DIR / output_name
    output_path.mkdir(parents=True, exist_ok=True)
    return output_path


def summary_row(row: BenchRow) -> List:
    """Summary table entries for one row; empty cells for an infeasible row."""
    cost = '' if row.final_cost is None else row.final_cost
    return [row.h, cost, row.iterations, row.total_time_ms, row.per_iter_time_ms,
            row.build_time_ms, row.solve_time_ms, row.termination]


def _write_json(report: BenchReport, path: Path) -> List[Path]:
    if path.suffix.lower() != '.json':
        path = path / f"{report.scenario}_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, indent=2)
    return [path]


def _write_csv(report: BenchReport, directory: Path) -> List[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    summary_path = directory / 'summary.csv'
    with open(summary_path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_HEADER)
        for row in report.rows:
            writer.writerow(summary_row(row))
    written.append(summary_path)

    for row in report.rows:
        trace_path = directory / f"trace_h{row.h}.csv"
        with open(trace_path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(TRACE_HEADER)
            for point in row.trace:
                writer.writerow([point.iter, point.cost, point.feas_err])
        written.append(trace_path)

        if any(point.waypoints is not None for point in row.trace):
            traj_path = directory / f"trajectory_h{row.h}.csv"
            with open(traj_path, 'w', newline='', encoding='utf-8') as f:
                writer = csv.writer(f)
                writer.writerow(['iter', 'q', 'p1', 'p2'])
                for point in row.trace:
                    for q, (p1, p2) in enumerate(point.waypoints or (), start=1):
                        writer.writerow([point.iter, q, p1, p2])
            written.append(traj_path)
    return written


def emit(report: BenchReport, fmt: str, path: Union[str, Path]) -> List[Path]:
    """
    Write a benchmark report.

    Parameters:
    -----------
    report : BenchReport
        Completed sweep
    fmt : str
        'json' (PATH is a .json file, or a directory to put one in), 'csv' or
        'xlsx' (PATH is a directory)
    path : str or Path
        Destination

    Returns:
    --------
    List[Path]
        Files written

    Raises:
    -------
    ValueError
        On an unknown format
    IoError
        If a file cannot be written
    """
    fmt = fmt.lower()
    if fmt not in FORMATS:
        raise ValueError(f"Unknown output format '{fmt}' (expected one of {', '.join(FORMATS)})")
    path = Path(path)

    logger.info("=" * 80)
    logger.info("Generating Output Files")
    logger.info("=" * 80)

    try:
        if fmt == 'json':
            written = _write_json(report, path)
        elif fmt == 'csv':
            written = _write_csv(report, path)
        else:
            path.mkdir(parents=True, exist_ok=True)
            xlsx_path = generate_xlsx_report(report, path)
            if xlsx_path is None:
                raise IoError(f"XLSX report could not be written to {path}")
            written = [xlsx_path]
    except OSError as e:
        raise IoError(f"Failed to write {fmt} report to {path}: {e}") from e

    for file_path in written:
        logger.info(f"  - {file_path.name}")
    logger.info(f"✓ Files saved to: {path}")
    return written


def load_report(path: Union[str, Path]) -> BenchReport:
    """
    Read a JSON report written by emit.

    Raises:
    -------
    IoError
        If the file cannot be read or does not hold a report
    """
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        return BenchReport.from_dict(data)
    except OSError as e:
        raise IoError(f"Cannot read report {path}: {e}") from e
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise IoError(f"{path} is not a benchmark report: {e}") from e
