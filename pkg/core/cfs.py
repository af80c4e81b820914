"""
Convex feasible set construction and the CFS iteration.

For every obstacle j and waypoint q the constraint phi_j(T_{j,q}(x_q)) >= 0 is
replaced by a convex slice around the reference waypoint x_q^r:

    Self              affine phi; the slice is the half-plane itself
    Linearized        convex phi; phi(x^r) + d.(x - x^r) >= 0
    QuadraticBounded  semi-convex phi; the linearization minus 1/2 |x - x^r|_{H*}^2

The intersection of all slices is a direct sum over waypoints. Each CFS
iteration minimizes the cost over that set and re-centres it at the result.

Functions:
    classify_case: Slice case of an obstacle
    lift_constraint: One slice for obstacle j at waypoint q
    build_cfs: All slices at a reference trajectory
    sample_inclusion_violations: Sampled check that the set lies in the free space
    check_termination: Step and cost tolerance tests
    cfs_solve: The CFS iteration
    kkt_certificate: Fixed-point residual of a trajectory
    strong_optimality_margin: Smallest feasible directional derivative of the cost
"""

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import eigvalsh

from core.nonsmooth import (
    DirectionQuery, Subdifferential, optimal_subgradient, safety_sign, steepest_feasible_direction,
)
from core.planning import (
    DIM, Trajectory, TrajectoryProblem, cost_eval, cost_grad, feasibility_error,
)
from core.subsolver import BarrierSettings, ConstraintSlice, Subproblem, kkt_residual, phase_one, solve
from safety_index.evaluation import hessian_bound
from safety_index.obstacles import BoundaryProfile, Obstacle
from safety_index.primitives import SafetyEval
from utils.errors import EmptyCone, Infeasible
from utils.logger import get_logger

logger = get_logger(__name__)

FEASIBLE_TOL = 1e-9
INCLUSION_TOL = 1e-8


class CaseTag(Enum):
    SELF = 'Self'
    LINEARIZED = 'Linearized'
    QUADRATIC_BOUNDED = 'QuadraticBounded'


class Termination(Enum):
    STEP_TOL = 'StepTol'
    COST_TOL = 'CostTol'
    MAX_ITER = 'MaxIter'
    INFEASIBLE = 'Infeasible'
    TIME_BUDGET = 'TimeBudget'


def classify_case(obstacle: Obstacle) -> CaseTag:
    """
    Slice case from the obstacle kind.

    Affine boundary profiles give a half-plane (Self). Convex profiles and
    indices with zero H* are Linearized; anything else is QuadraticBounded.
    """
    shape = obstacle.shape
    if isinstance(shape, BoundaryProfile):
        if shape.is_affine:
            return CaseTag.SELF
        return CaseTag.LINEARIZED if shape.is_convex else CaseTag.QUADRATIC_BOUNDED
    if not np.any(hessian_bound(obstacle)):
        return CaseTag.LINEARIZED
    return CaseTag.QUADRATIC_BOUNDED


def _choose_subgradient(evaluation: SafetyEval, point: np.ndarray, cost_gradient: Optional[np.ndarray],
                        v_star: Optional[np.ndarray]) -> np.ndarray:
    if evaluation.smooth or cost_gradient is None:
        return evaluation.generators[0]
    sign = safety_sign(evaluation.value)
    if v_star is None:
        sign = 1
        v_star = np.zeros(DIM)
    sub = Subdifferential.of(evaluation, point)
    return optimal_subgradient(sub, v_star, cost_gradient, sign)


def lift_constraint(problem: TrajectoryProblem, j: int, q: int, xr: Union[Trajectory, np.ndarray],
                    cost_gradient: Optional[np.ndarray] = None,
                    v_star: Optional[np.ndarray] = None) -> Tuple[ConstraintSlice, CaseTag]:
    """
    Convex slice of obstacle j's constraint at waypoint q.

    Parameters:
    -----------
    problem : TrajectoryProblem
        Problem holding the obstacle (poses already resampled)
    j : int
        Obstacle index (0-based)
    q : int
        Waypoint index (1-based)
    xr : Trajectory or np.ndarray
        Reference trajectory (free vector)
    cost_gradient : Optional[np.ndarray]
        Waypoint block of grad J at the reference; with v_star, selects the
        sub-gradient at nonsmooth points. Without it the first generator is used.
    v_star : Optional[np.ndarray]
        Steepest feasible direction at waypoint q

    Returns:
    --------
    Tuple[ConstraintSlice, CaseTag]

    Raises:
    -------
    EmptyFeasibleSubgradients
        If no sub-gradient passes the direction filter
    """
    x = problem.cost._check(xr).reshape(-1, DIM)
    ref = x[q - 1]
    obstacle = problem.obstacles[j]
    evaluation = problem.evaluate(j, q, ref)
    d = _choose_subgradient(evaluation, ref, cost_gradient, v_star)
    tag = classify_case(obstacle)
    return _slice(q, evaluation, d, ref, tag), tag


def _slice(q: int, evaluation: SafetyEval, d: np.ndarray, ref: np.ndarray, tag: CaseTag) -> ConstraintSlice:
    a = np.asarray(d, dtype=float)
    hq = evaluation.hessian_bound if tag is CaseTag.QUADRATIC_BOUNDED else None
    return ConstraintSlice(q, a, evaluation.value - float(a @ ref), hq, ref)


@dataclass(frozen=True, eq=False)
class ConvexFeasibleSet:
    """Slices of F(x^r), their case tags and the reference trajectory."""
    slices: Tuple[ConstraintSlice, ...]
    reference: np.ndarray
    case_tags: Tuple[CaseTag, ...]
    directions: np.ndarray = field(repr=False, default=None)

    def slacks(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, DIM)
        return np.array([s.slack(x[s.q - 1]) for s in self.slices])

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        if not self.slices:
            return True
        return bool(np.min(self.slacks(x)) >= -tol)

    def waypoint_slices(self, q: int) -> List[ConstraintSlice]:
        return [s for s in self.slices if s.q == q]


def _waypoint_direction(q: int, evaluations: Sequence[SafetyEval], ref: np.ndarray,
                        grad_q: np.ndarray) -> Optional[np.ndarray]:
    if all(ev.smooth for ev in evaluations):
        return None
    active = [(safety_sign(ev.value), Subdifferential.of(ev, ref)) for ev in evaluations]
    try:
        return steepest_feasible_direction(DirectionQuery(grad_q, active))
    except EmptyCone:
        logger.debug(f"No feasible direction at waypoint {q}; using unfiltered sub-gradients")
        return None


def build_cfs(problem: TrajectoryProblem, xr: Union[Trajectory, np.ndarray]) -> ConvexFeasibleSet:
    """
    Assemble F(x^r) with one slice per (obstacle, waypoint) pair.

    The steepest feasible direction is computed only at waypoints where some
    index is nonsmooth, since only there is a sub-gradient choice needed.
    """
    x = problem.cost._check(xr)
    blocks = x.reshape(-1, DIM)
    grad = cost_grad(problem.cost, x).reshape(-1, DIM)
    slices: List[ConstraintSlice] = []
    tags: List[CaseTag] = []
    directions = np.full((problem.h, DIM), np.nan)

    if not problem.obstacles:
        return ConvexFeasibleSet((), x.copy(), (), directions)

    case_of = [classify_case(ob) for ob in problem.obstacles]
    for q in range(1, problem.h + 1):
        ref = blocks[q - 1]
        evaluations = [problem.evaluate(j, q, ref) for j in range(len(problem.obstacles))]
        v_star = _waypoint_direction(q, evaluations, ref, grad[q - 1])
        if v_star is not None:
            directions[q - 1] = v_star
        for j, ev in enumerate(evaluations):
            d = _choose_subgradient(ev, ref, grad[q - 1], v_star)
            slices.append(_slice(q, ev, d, ref, case_of[j]))
            tags.append(case_of[j])
    return ConvexFeasibleSet(tuple(slices), x.copy(), tuple(tags), directions)


def sample_inclusion_violations(problem: TrajectoryProblem, cfs: ConvexFeasibleSet,
                                samples: int = 10_000, radius: float = 3.0, seed: int = 0,
                                tol: float = INCLUSION_TOL) -> List[Tuple[int, Tuple[float, float]]]:
    """
    Sample each waypoint's slice set and report points outside the free space.

    Points are drawn uniformly from a box of half-width ``radius`` around the
    reference waypoint; those satisfying every slice of that waypoint must
    satisfy every phi_{j,q} >= -tol.

    Returns:
    --------
    List[Tuple[int, Tuple[float, float]]]
        (waypoint, point) pairs that violate the inclusion
    """
    rng = np.random.default_rng(seed)
    refs = cfs.reference.reshape(-1, DIM)
    bad = []
    for q in range(1, problem.h + 1):
        own = cfs.waypoint_slices(q)
        if not own:
            continue
        points = refs[q - 1] + rng.uniform(-radius, radius, size=(samples, DIM))
        for p in points:
            if min(s.slack(p) for s in own) < 0.0:
                continue
            for j in range(len(problem.obstacles)):
                if problem.evaluate(j, q, p).value < -tol:
                    bad.append((q, (float(p[0]), float(p[1]))))
                    break
    return bad


@dataclass(frozen=True)
class CfsConfig:
    """
    CFS stopping rules.

    ``eps2=None`` uses the relative tolerance 1e-4 * (1 + |J(x0)|).
    """
    eps1: float = 1e-4
    eps2: Optional[float] = None
    max_iter: int = 100
    sample_checks: bool = False
    time_budget_ms: Optional[float] = None

    def __post_init__(self):
        if not self.eps1 > 0.0:
            raise ValueError(f"eps1 must be positive, got {self.eps1}")
        if self.eps2 is not None and not self.eps2 > 0.0:
            raise ValueError(f"eps2 must be positive, got {self.eps2}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.time_budget_ms is not None and not self.time_budget_ms > 0.0:
            raise ValueError(f"time_budget_ms must be positive, got {self.time_budget_ms}")

    @classmethod
    def from_settings(cls, settings: Dict) -> 'CfsConfig':
        known = {k: settings[k] for k in cls.__dataclass_fields__ if k in settings}
        return cls(**known)

    def cost_tolerance(self, initial_cost: float) -> float:
        if self.eps2 is not None:
            return self.eps2
        return 1e-4 * (1.0 + abs(initial_cost))


@dataclass(frozen=True, eq=False)
class IterateRecord:
    """One CFS iterate; k = 0 is the initial trajectory."""
    k: int
    x: np.ndarray
    cost: float
    feasibility_error: float
    step_norm: float
    build_time_ms: float
    solve_time_ms: float
    kkt_residual: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.feasibility_error <= FEASIBLE_TOL


@dataclass(frozen=True)
class TerminationCheck:
    step_tol: bool
    cost_tol: bool
    step_norm: float
    cost_drop: float

    @property
    def fired(self) -> Optional[Termination]:
        if self.step_tol:
            return Termination.STEP_TOL
        if self.cost_tol:
            return Termination.COST_TOL
        return None


def check_termination(prev: IterateRecord, nxt: IterateRecord, config: CfsConfig,
                      initial_cost: Optional[float] = None) -> TerminationCheck:
    """
    Evaluate both stopping rules between consecutive iterates.

    StepTol fires when |x_{k+1} - x_k| <= eps1. CostTol fires when
    J(x_k) - J(x_{k+1}) <= eps2, only once x_k is feasible, since the cost may
    rise on the way from an infeasible start.
    """
    step = float(np.linalg.norm(nxt.x - prev.x))
    drop = prev.cost - nxt.cost
    eps2 = config.cost_tolerance(prev.cost if initial_cost is None else initial_cost)
    return TerminationCheck(
        step_tol=step <= config.eps1,
        cost_tol=prev.feasible and drop <= eps2,
        step_norm=step,
        cost_drop=drop,
    )


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Iterates, termination reason and final trajectory of one CFS run."""
    iterates: Tuple[IterateRecord, ...]
    termination: Termination
    final: Trajectory
    kkt_residual: float
    cost_tolerance: float

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    @property
    def final_record(self) -> IterateRecord:
        if self.termination in (Termination.TIME_BUDGET, Termination.INFEASIBLE):
            return _last_feasible(self.iterates)
        return self.iterates[-1]

    @property
    def final_cost(self) -> float:
        return self.final_record.cost

    @property
    def build_time_ms(self) -> float:
        return float(sum(r.build_time_ms for r in self.iterates))

    @property
    def solve_time_ms(self) -> float:
        return float(sum(r.solve_time_ms for r in self.iterates))

    @property
    def total_time_ms(self) -> float:
        return self.build_time_ms + self.solve_time_ms


def _last_feasible(records: Sequence[IterateRecord]) -> IterateRecord:
    for record in reversed(records):
        if record.feasible:
            return record
    return records[-1]


def _as_trajectory(problem: TrajectoryProblem, x0: Union[Trajectory, np.ndarray]) -> Trajectory:
    if isinstance(x0, Trajectory):
        return x0
    ref = problem.cost.reference.reshape(-1, DIM)
    return Trajectory(np.asarray(x0, dtype=float).reshape(-1, DIM), ref[0], ref[-1], problem.cost.ts)


def _iterate(problem: TrajectoryProblem, x: np.ndarray,
             barrier: BarrierSettings) -> Tuple[ConvexFeasibleSet, np.ndarray, float, float, float]:
    t0 = time.perf_counter()
    cfs = build_cfs(problem, x)
    sub = Subproblem.from_cost(problem.cost, cfs.slices)
    t1 = time.perf_counter()
    start = phase_one(sub, x, barrier)
    sol = solve(sub, start, barrier)
    t2 = time.perf_counter()
    return cfs, sol.x, sol.kkt_residual, (t1 - t0) * 1000.0, (t2 - t1) * 1000.0


def cfs_solve(problem: TrajectoryProblem, x0: Union[Trajectory, np.ndarray],
              config: Optional[CfsConfig] = None, barrier: Optional[BarrierSettings] = None,
              on_iterate: Optional[Callable[[IterateRecord], None]] = None) -> SolveReport:
    """
    Run the CFS iteration from an initial trajectory.

    Each iteration builds F(x_k), finds a strictly feasible start with phase
    one, solves the convex sub-problem and tests the stopping rules.

    Parameters:
    -----------
    problem : TrajectoryProblem
        Cost, obstacles and margin
    x0 : Trajectory or np.ndarray
        Initial trajectory; may be infeasible
    config : Optional[CfsConfig]
        Tolerances, iteration cap and optional time budget
    barrier : Optional[BarrierSettings]
        Sub-solver parameters
    on_iterate : Optional[Callable[[IterateRecord], None]]
        Called with every new iterate record

    Returns:
    --------
    SolveReport

    Raises:
    -------
    Infeasible
        If the first convex feasible set has empty interior
    """
    config = config or CfsConfig()
    barrier = barrier or BarrierSettings()
    trajectory = _as_trajectory(problem, x0)
    x = trajectory.free_vector()
    model = problem.cost

    j0 = cost_eval(model, x)
    eps2 = config.cost_tolerance(j0)
    first = IterateRecord(0, x.copy(), j0, feasibility_error(problem, x), 0.0, 0.0, 0.0)
    records: List[IterateRecord] = [first]
    if on_iterate is not None:
        on_iterate(first)

    logger.debug(f"CFS start: h={problem.h}, J0={j0:.6g}, feas_err={first.feasibility_error:.3e}")
    termination = Termination.MAX_ITER
    last_residual = float('nan')
    started = time.perf_counter()

    for k in range(1, config.max_iter + 1):
        try:
            cfs, x_new, residual, build_ms, solve_ms = _iterate(problem, x, barrier)
        except Infeasible:
            if k == 1:
                raise
            logger.warning(f"⚠ Convex feasible set empty at iteration {k}; stopping")
            termination = Termination.INFEASIBLE
            break

        if config.sample_checks:
            bad = sample_inclusion_violations(problem, cfs, samples=1000, seed=k)
            if bad:
                logger.warning(f"⚠ Iteration {k}: {len(bad)} sampled CFS points violate a safety index")

        record = IterateRecord(
            k, x_new.copy(), cost_eval(model, x_new), feasibility_error(problem, x_new),
            float(np.linalg.norm(x_new - x)), build_ms, solve_ms, residual,
        )
        records.append(record)
        last_residual = residual
        if on_iterate is not None:
            on_iterate(record)
        logger.debug(
            f"  iter {k}: J={record.cost:.6g} feas_err={record.feasibility_error:.3e} "
            f"step={record.step_norm:.3e} build={build_ms:.2f}ms solve={solve_ms:.2f}ms"
        )

        check = check_termination(records[-2], record, config, initial_cost=j0)
        x = x_new
        if check.fired is not None:
            termination = check.fired
            break
        if config.time_budget_ms is not None and (time.perf_counter() - started) * 1000.0 >= config.time_budget_ms:
            termination = Termination.TIME_BUDGET
            break

    final_x = records[-1].x
    if termination in (Termination.TIME_BUDGET, Termination.INFEASIBLE):
        final_x = _last_feasible(records).x
    final = trajectory.with_free(final_x)
    logger.debug(f"CFS finished: {termination.value} after {len(records) - 1} iteration(s)")
    return SolveReport(tuple(records), termination, final, last_residual, eps2)


def kkt_certificate(problem: TrajectoryProblem, x: Union[Trajectory, np.ndarray],
                    barrier: Optional[BarrierSettings] = None) -> float:
    """
    Fixed-point residual |x_sub - x| + KKT residual of the sub-problem at F(x).

    Near zero means one more CFS iteration would not move x.
    """
    x = problem.cost._check(x)
    barrier = barrier or BarrierSettings()
    cfs = build_cfs(problem, x)
    sub = Subproblem.from_cost(problem.cost, cfs.slices)
    sol = solve(sub, phase_one(sub, x, barrier), barrier)
    return float(np.linalg.norm(sol.x - x) + kkt_residual(sub, sol))


def strong_optimality_margin(problem: TrajectoryProblem, x: Union[Trajectory, np.ndarray]) -> float:
    """
    min over waypoints of grad_q J . v*_q.

    A value >= 0 up to tolerance means no feasible descent direction exists.
    """
    x = problem.cost._check(x)
    blocks = x.reshape(-1, DIM)
    grad = cost_grad(problem.cost, x).reshape(-1, DIM)
    worst = np.inf
    for q in range(1, problem.h + 1):
        ref = blocks[q - 1]
        active = [
            (safety_sign(ev.value), Subdifferential.of(ev, ref))
            for ev in (problem.evaluate(j, q, ref) for j in range(len(problem.obstacles)))
        ]
        v_star = steepest_feasible_direction(DirectionQuery(grad[q - 1], active))
        worst = min(worst, float(grad[q - 1] @ v_star))
    return float(worst)


def strong_convexity(problem: TrajectoryProblem) -> float:
    """Smallest eigenvalue of the reduced cost Hessian."""
    return float(eigvalsh(problem.cost.reduced.hessian, subset_by_index=[0, 0])[0])
