"""
XLSX report generator for CFS Planner.

This module generates an Excel (.xlsx) workbook summarizing a benchmark sweep.

The generated workbook includes:
    - Summary: one row per horizon with the Table-1-style columns
      (h, Cost, Iter, Time, dT) plus build/solve time per iteration,
      termination reason and KKT certificate
    - Trace h<N>: one sheet per horizon with iteration, cost and feasibility error
"""

from pathlib import Path
from typing import TYPE_CHECKING, List, Optional

from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

from utils.logger import get_logger

if TYPE_CHECKING:
    from core.benchmark import BenchReport

logger = get_logger(__name__)

SUMMARY_HEADERS = ['h', 'Cost', 'Iter', 'Time (ms)', 'dT (ms)', 'Build/iter (ms)',
                   'Solve/iter (ms)', 'Termination', 'KKT certificate']
TRACE_HEADERS = ['Iteration', 'Cost', 'Feasibility error', 'Step norm']


def _style_header(ws, headers: List[str], widths: List[int]) -> None:
    ws.append(headers)
    header_fill = PatternFill(start_color='366092', end_color='366092', fill_type='solid')
    header_font = Font(bold=True, color='FFFFFF', size=11)
    for col_num, width in enumerate(widths, 1):
        cell = ws.cell(row=1, column=col_num)
        cell.fill = header_fill
        cell.font = header_font
        cell.alignment = Alignment(horizontal='center', vertical='center')
        ws.column_dimensions[get_column_letter(col_num)].width = width
    # Freeze header row
    ws.freeze_panes = 'A2'


def generate_xlsx_report(report: 'BenchReport', output_path: Path,
                         filename: Optional[str] = None) -> Optional[Path]:
    """
    Generate an Excel workbook for a benchmark report.

    Args:
        report: Completed BenchReport
        output_path: Directory where the workbook should be saved
        filename: Workbook name (defaults to <scenario>_benchmark.xlsx)

    Returns:
        Path to generated XLSX file, or None if generation fails
    """
    logger.info("Generating XLSX report...")

    try:
        wb = Workbook()
        ws = wb.active
        ws.title = "Summary"
        _style_header(ws, SUMMARY_HEADERS, [8, 14, 8, 12, 12, 16, 16, 14, 18])

        for row in report.rows:
            ws.append([
                row.h,
                row.final_cost if row.final_cost is not None else 'N/A',
                row.iterations,
                round(row.total_time_ms, 3),
                round(row.per_iter_time_ms, 3),
                round(row.build_time_ms, 3),
                round(row.solve_time_ms, 3),
                row.termination,
                row.kkt_certificate if row.kkt_certificate is not None else 'N/A',
            ])
            if row.infeasible or row.failed:
                ws.cell(row=ws.max_row, column=8).font = Font(bold=True, color='C00000')

        for row in report.rows:
            trace_ws = wb.create_sheet(title=f"Trace h{row.h}")
            _style_header(trace_ws, TRACE_HEADERS, [12, 16, 18, 14])
            for point in row.trace:
                trace_ws.append([point.iter, point.cost, point.feas_err, point.step_norm])

        filename = filename or f"{report.scenario}_benchmark.xlsx"
        xlsx_path = Path(output_path) / filename

        # Save workbook
        wb.save(xlsx_path)
        logger.info(f"✓ XLSX report saved: {filename} ({len(report.rows)} horizons)")

        return xlsx_path

    except Exception as e:
        logger.error(f"Failed to generate XLSX report: {e}", exc_info=True)
        return None
