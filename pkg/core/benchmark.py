"""
Benchmark sweep over planning horizons.

For each horizon h the scenario is planned from the straight-line reference
with ts = 1/(h+1); the final cost, iteration count, timings and per-iteration
trace are collected into a BenchReport.

Functions:
    run_benchmark: Run the CFS solver for every requested horizon
"""

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

from core.cfs import CfsConfig, SolveReport, Termination, cfs_solve, kkt_certificate
from core.planning import cost_eval, feasibility_error
from core.scenario_loader import DEFAULT_HORIZONS, Scenario, build_problem
from core.subsolver import BarrierSettings
from utils.errors import CfsError, Infeasible
from utils.logger import get_logger

logger = get_logger(__name__)

# termination label of a row whose solve raised a numerical error
FAILED = 'Failed'


@dataclass(frozen=True)
class TracePoint:
    """Cost and feasibility error of one iterate (k = 0 is the reference)."""
    iter: int
    cost: float
    feas_err: float
    step_norm: float = 0.0
    build_time_ms: float = 0.0
    solve_time_ms: float = 0.0
    waypoints: Optional[Tuple[Tuple[float, float], ...]] = None


@dataclass(frozen=True)
class BenchRow:
    """
    One horizon of the sweep.

    Times are milliseconds; build and solve times are per-iteration averages
    and per_iter_time_ms = total_time_ms / iterations. Cost fields are None for
    a row whose first convex feasible set was empty or whose solve failed;
    ``error`` holds the exception of a failed row.
    """
    h: int
    final_cost: Optional[float]
    iterations: int
    total_time_ms: float
    per_iter_time_ms: float
    build_time_ms: float
    solve_time_ms: float
    termination: str
    kkt_certificate: Optional[float] = None
    trace: Tuple[TracePoint, ...] = ()
    error: Optional[str] = None

    @property
    def infeasible(self) -> bool:
        return self.termination == Termination.INFEASIBLE.value

    @property
    def failed(self) -> bool:
        return self.termination == FAILED


@dataclass(frozen=True)
class BenchReport:
    """All rows of one sweep plus the settings that produced them."""
    scenario: str
    rows: Tuple[BenchRow, ...]
    settings: Dict[str, Any] = field(default_factory=dict)
    created_at: str = ''

    @property
    def any_infeasible(self) -> bool:
        return any(row.infeasible for row in self.rows)

    @property
    def any_failed(self) -> bool:
        return any(row.failed for row in self.rows)

    def row(self, h: int) -> BenchRow:
        for row in self.rows:
            if row.h == h:
                return row
        raise KeyError(f"No row for horizon {h}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BenchReport':
        rows = []
        for raw in data.get('rows', []):
            trace = tuple(
                TracePoint(**{
                    **point,
                    'waypoints': None if point.get('waypoints') is None
                    else tuple(tuple(float(v) for v in wp) for wp in point['waypoints']),
                })
                for point in raw.get('trace', [])
            )
            rows.append(BenchRow(**{**raw, 'trace': trace}))
        return cls(data['scenario'], tuple(rows), dict(data.get('settings', {})), data.get('created_at', ''))


def _trace(report: SolveReport, emit_trajectories: bool) -> Tuple[TracePoint, ...]:
    points = []
    for record in report.iterates:
        waypoints = None
        if emit_trajectories:
            waypoints = tuple((float(p[0]), float(p[1])) for p in record.x.reshape(-1, 2))
        points.append(TracePoint(
            record.k, float(record.cost), float(record.feasibility_error), float(record.step_norm),
            float(record.build_time_ms), float(record.solve_time_ms), waypoints,
        ))
    return tuple(points)


def _run_horizon(scenario: Scenario, h: int, config: CfsConfig, barrier: BarrierSettings,
                 emit_trajectories: bool) -> BenchRow:
    problem, reference = build_problem(scenario, h)
    try:
        report = cfs_solve(problem, reference, config, barrier)
    except CfsError as e:
        x0 = reference.free_vector()
        waypoints = tuple((float(p[0]), float(p[1])) for p in reference.waypoints) if emit_trajectories else None
        start = TracePoint(0, cost_eval(problem.cost, x0), feasibility_error(problem, x0), waypoints=waypoints)
        if isinstance(e, Infeasible):
            logger.warning(f"  ✗ h={h}: infeasible convex feasible set ({e})")
            return BenchRow(h, None, 0, 0.0, 0.0, 0.0, 0.0, Termination.INFEASIBLE.value, None, (start,))
        logger.error(f"  ✗ h={h}: solve failed with {type(e).__name__} ({e})")
        return BenchRow(h, None, 0, 0.0, 0.0, 0.0, 0.0, FAILED, None, (start,), f"{type(e).__name__}: {e}")

    iterations = max(report.iterations, 1)
    certificate = None
    if report.termination in (Termination.STEP_TOL, Termination.COST_TOL, Termination.MAX_ITER):
        try:
            certificate = kkt_certificate(problem, report.final, barrier)
        except CfsError as e:
            logger.warning(f"  ⚠ h={h}: certificate unavailable ({e})")

    total = report.total_time_ms
    row = BenchRow(
        h=h,
        final_cost=float(report.final_cost),
        iterations=report.iterations,
        total_time_ms=total,
        per_iter_time_ms=total / iterations,
        build_time_ms=report.build_time_ms / iterations,
        solve_time_ms=report.solve_time_ms / iterations,
        termination=report.termination.value,
        kkt_certificate=certificate,
        trace=_trace(report, emit_trajectories),
    )
    mark = '⚠' if report.termination is Termination.INFEASIBLE else '✓'
    logger.info(
        f"  {mark} h={h}: cost {row.final_cost:.4f}, {row.iterations} iteration(s), "
        f"{row.total_time_ms:.1f} ms ({row.per_iter_time_ms:.2f} ms/iter), {row.termination}"
    )
    return row


def run_benchmark(
    scenario: Scenario,
    horizons: Optional[Sequence[int]] = None,
    config: Optional[CfsConfig] = None,
    barrier: Optional[BarrierSettings] = None,
    workers: int = 1,
    progress_callback: Optional[Callable[[int, int, int], None]] = None,
    emit_trajectories: bool = False,
) -> BenchReport:
    """
    Solve the scenario for every horizon and collect a BenchReport.

    Parameters:
    -----------
    scenario : Scenario
        Loaded scenario
    horizons : Optional[Sequence[int]]
        Horizons to run; defaults to the scenario's own list
    config : Optional[CfsConfig]
        CFS tolerances
    barrier : Optional[BarrierSettings]
        Sub-solver parameters
    workers : int
        Rows run concurrently in a thread pool when > 1
    progress_callback : Optional[Callable[[int, int, int], None]]
        Called after each row completes with (h, completed_rows, total_rows)
    emit_trajectories : bool
        Keep the waypoints of every iterate in the trace

    Returns:
    --------
    BenchReport
        Rows in the order of ``horizons``; an infeasible or failed row is
        recorded and the sweep continues

    Example:
        >>> report = run_benchmark(load_scenario('config/scenarios/scenario1.json'), [30])
        >>> report.rows[0].termination
        'StepTol'
    """
    horizons = list((scenario.horizons or DEFAULT_HORIZONS) if horizons is None else horizons)
    if not horizons:
        raise ValueError("run_benchmark needs at least one horizon")
    if min(horizons) < 1:
        raise ValueError(f"Horizons must be positive, got {horizons}")
    config = config or CfsConfig()
    barrier = barrier or BarrierSettings()

    logger.info("=" * 80)
    logger.info(f"Running CFS Benchmark: {scenario.name}")
    logger.info("=" * 80)
    logger.info(f"Horizons: {', '.join(str(h) for h in horizons)} ({workers} worker(s))")

    sweep_start = time.perf_counter()
    total = len(horizons)
    rows: Dict[int, BenchRow] = {}

    def notify(h: int) -> None:
        if progress_callback:
            try:
                progress_callback(h, len(rows), total)
            except Exception as e:
                # Don't fail the sweep if the callback fails
                logger.warning(f"Progress callback failed: {e}")

    if workers <= 1:
        for index, h in enumerate(horizons):
            rows[index] = _run_horizon(scenario, h, config, barrier, emit_trajectories)
            notify(h)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_horizon, scenario, h, config, barrier, emit_trajectories): index
                for index, h in enumerate(horizons)
            }
            for future in as_completed(futures):
                index = futures[future]
                rows[index] = future.result()
                notify(horizons[index])

    ordered = tuple(rows[i] for i in range(total))
    infeasible = sum(1 for row in ordered if row.infeasible)
    failed = sum(1 for row in ordered if row.failed)

    logger.info("")
    logger.info("=" * 80)
    if infeasible or failed:
        logger.info(f"⚠ Benchmark Complete ({infeasible} infeasible row(s), {failed} failed row(s))")
    else:
        logger.info("✓ Benchmark Complete")
    logger.info("=" * 80)
    logger.info(f"Sweep wall time: {time.perf_counter() - sweep_start:.2f}s")

    settings = {
        'eps1': config.eps1,
        'eps2': config.eps2,
        'max_iter': config.max_iter,
        'time_budget_ms': config.time_budget_ms,
        'mu0': barrier.mu0,
        'mu_reduction': barrier.mu_reduction,
        'gap_tol': barrier.gap_tol,
        'margin': scenario.margin,
        'horizons': horizons,
    }
    return BenchReport(scenario.name, ordered, settings, datetime.now().isoformat(timespec='seconds'))
