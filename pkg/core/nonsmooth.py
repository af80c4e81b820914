"""
Non-smooth calculus for semi-convex safety indices.

Sub-differentials are represented by finitely many generators; the set itself
is their convex hull. Direction and sub-gradient selection work per waypoint in
the plane.

Functions:
    directional_derivative: One-sided derivative of phi at x along v
    subdifferential: Generator set of phi at x
    feasible_direction_cone_contains: Membership test for the feasible cone
    steepest_feasible_direction: Steepest feasible descent direction v*
    optimal_subgradient: Sub-gradient minimizing grad J . d / |d|
    zero_in_hull: Whether 0 lies in the hull of a generator set
    validate_decomposition: Sampling check of the regularity conditions
"""

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from safety_index.evaluation import apply_pose
from safety_index.obstacles import Obstacle
from safety_index.primitives import SafetyEval
from utils.errors import (
    CfsError, EmptyCone, EmptyFeasibleSubgradients, EmptySubdifferential,
)
from utils.geometry_converters import intersection_sample_points, origin_distance_to_hull
from utils.logger import get_logger

logger = get_logger(__name__)

SafetyFunction = Callable[[np.ndarray], SafetyEval]

RICHARDSON_STEP = 1e-4
CLOSED_TOL = 1e-12
STRICT_TOL = 1e-10
TIE_TOL = 1e-12
ZERO_GENERATOR_TOL = 1e-12


def directional_derivative(phi: SafetyFunction, x, v) -> float:
    """
    One-sided directional derivative of phi at x along v.

    Uses the exact value g.v when phi is smooth at x; otherwise Richardson
    extrapolation of forward differences with steps 1e-4 and 5e-5.

    Example:
        >>> directional_derivative(phi, np.zeros(2), np.array([1.0, 0.0]))
        1.0
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    here = phi(x)
    if here.smooth:
        return float(here.gradient @ v)
    h = RICHARDSON_STEP
    coarse = (phi(x + h * v).value - here.value) / h
    fine = (phi(x + 0.5 * h * v).value - here.value) / (0.5 * h)
    return float(2.0 * fine - coarse)


@dataclass(frozen=True, eq=False)
class Subdifferential:
    """Generators of D phi(point); the sub-differential is their convex hull."""
    generators: np.ndarray
    point: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        gens = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if gens.size == 0:
            raise EmptySubdifferential("Sub-differential needs at least one generator")
        object.__setattr__(self, 'generators', gens)
        object.__setattr__(self, 'point', np.asarray(self.point, dtype=float))

    @classmethod
    def of(cls, evaluation: SafetyEval, point) -> 'Subdifferential':
        return cls(evaluation.generators, point)

    def support(self, v: np.ndarray) -> float:
        """max over the hull of d.v."""
        return float(np.max(self.generators @ v))


def subdifferential(phi: SafetyFunction, x) -> Subdifferential:
    """
    Sub-differential of phi at x by nearest-feature enumeration.

    Raises:
    -------
    EmptySubdifferential
        If no nonzero generator exists at x
    """
    x = np.asarray(x, dtype=float)
    evaluation = phi(x)
    gens = evaluation.generators
    if gens.size == 0 or np.all(np.linalg.norm(gens, axis=1) <= ZERO_GENERATOR_TOL):
        raise EmptySubdifferential(f"No nonzero sub-gradient at x={x.tolist()}")
    return Subdifferential(gens, x)


def zero_in_hull(generators: np.ndarray, tol: float = 1e-12) -> bool:
    """Whether the origin lies in the convex hull of the generators."""
    return origin_distance_to_hull(generators) <= tol


def safety_sign(value: float, tol: float = 1e-9) -> int:
    """Sign of a safety value with a zero band of width tol."""
    if abs(value) <= tol:
        return 0
    return 1 if value > 0 else -1


@dataclass(frozen=True, eq=False)
class DirectionQuery:
    """
    Input of the steepest-direction search at one waypoint.

    Attributes:
        cost_gradient: Waypoint block of grad J, shape (2,)
        active_constraints: (sign of phi, sub-differential) per constraint
    """
    cost_gradient: np.ndarray
    active_constraints: Tuple[Tuple[int, Subdifferential], ...] = ()

    def __post_init__(self):
        grad = np.asarray(self.cost_gradient, dtype=float).reshape(-1)
        if grad.shape != (2,):
            raise ValueError(f"Waypoint block of the cost gradient must be 2-dimensional, got {grad.shape}")
        object.__setattr__(self, 'cost_gradient', grad)
        object.__setattr__(self, 'active_constraints', tuple(self.active_constraints))


def feasible_direction_cone_contains(query: DirectionQuery, v: np.ndarray) -> bool:
    """
    Membership of a unit direction in the feasible cone C.

    A constraint with phi > 0 admits every direction. With phi = 0 some
    sub-gradient must satisfy d.v >= 0, and with phi < 0 some must satisfy
    d.v > 0 (implemented as d.v >= 1e-10).
    """
    for sign, sub in query.active_constraints:
        if sign > 0:
            continue
        reach = sub.support(v)
        if sign == 0 and reach < -CLOSED_TOL:
            return False
        if sign < 0 and reach < STRICT_TOL:
            return False
    return True


def _arc_endpoints(g: np.ndarray, level: float) -> List[np.ndarray]:
    """Unit vectors v with g.v = level."""
    norm = float(np.linalg.norm(g))
    if norm <= ZERO_GENERATOR_TOL:
        return []
    ratio = level / norm
    if abs(ratio) > 1.0:
        return []
    unit = g / norm
    perp = np.array([-unit[1], unit[0]])
    along = math.sqrt(max(0.0, 1.0 - ratio * ratio))
    return [ratio * unit + along * perp, ratio * unit - along * perp]


def _tie_break(candidates: List[np.ndarray]) -> np.ndarray:
    """Smallest first entry, then smallest second entry."""
    first = min(c[0] for c in candidates)
    pool = [c for c in candidates if c[0] <= first + TIE_TOL]
    return min(pool, key=lambda c: c[1])


def steepest_feasible_direction(query: DirectionQuery) -> np.ndarray:
    """
    Steepest feasible descent direction v* = argmin_{v in C} grad J . v.

    The minimizer on the unit circle is either -grad J / |grad J| or an
    endpoint of one constraint's admissible arc, so the candidates are
    enumerated exactly. Ties go to the smallest first entry, then the
    smallest second entry.

    Raises:
    -------
    EmptyCone
        If no unit direction satisfies every constraint
    """
    c = query.cost_gradient
    candidates: List[np.ndarray] = [np.array([-1.0, 0.0]), np.array([1.0, 0.0]),
                                    np.array([0.0, -1.0]), np.array([0.0, 1.0])]
    c_norm = float(np.linalg.norm(c))
    if c_norm > 0.0:
        candidates.insert(0, -c / c_norm)
    for sign, sub in query.active_constraints:
        if sign > 0:
            continue
        level = 0.0 if sign == 0 else 2.0 * STRICT_TOL
        for g in sub.generators:
            candidates.extend(_arc_endpoints(g, level))

    feasible = [v for v in candidates if feasible_direction_cone_contains(query, v)]
    if not feasible:
        raise EmptyCone(
            f"No feasible search direction for {len(query.active_constraints)} constraints "
            f"(cost gradient {c.tolist()})"
        )

    scores = [float(c @ v) for v in feasible]
    best = min(scores)
    return _tie_break([v for v, s in zip(feasible, scores) if s <= best + TIE_TOL]).copy()


def _direction_score(c: np.ndarray, d: np.ndarray) -> float:
    norm = float(np.linalg.norm(d))
    if norm <= ZERO_GENERATOR_TOL:
        return 0.0
    return float(c @ d) / norm


def _filter_interval(a: float, b: float, level: Optional[float]) -> Optional[Tuple[float, float]]:
    """Sub-interval of [0, 1] where a + t b >= level."""
    if level is None:
        return 0.0, 1.0
    lo, hi = 0.0, 1.0
    if abs(b) <= 1e-15:
        return (lo, hi) if a >= level else None
    root = (level - a) / b
    if b > 0:
        lo = max(lo, root)
    else:
        hi = min(hi, root)
    return (lo, hi) if lo <= hi else None


def optimal_subgradient(sub: Subdifferential, v_star: np.ndarray, cost_gradient: np.ndarray,
                        sign: int) -> np.ndarray:
    """
    Feasible sub-gradient minimizing grad J . d / |d|.

    The feasible set is D phi when phi > 0, {d : d.v* >= 0} when phi = 0 and
    {d : d.v* > 0} when phi < 0. Candidates are the generators plus, for each
    generator pair, the bounded 1D minimizer along the connecting segment.
    d / |d| is taken as 0 when d = 0.

    Raises:
    -------
    EmptyFeasibleSubgradients
        If the filter removes every candidate
    """
    c = np.asarray(cost_gradient, dtype=float)
    v = np.asarray(v_star, dtype=float)
    level = None if sign > 0 else (-CLOSED_TOL if sign == 0 else STRICT_TOL)
    gens = sub.generators

    candidates: List[np.ndarray] = []
    for g in gens:
        if level is None or g @ v >= level:
            candidates.append(g)

    for i, j in combinations(range(len(gens)), 2):
        g0, g1 = gens[i], gens[j]
        delta = g1 - g0
        interval = _filter_interval(float(g0 @ v), float(delta @ v), level)
        if interval is None:
            continue
        lo, hi = interval
        candidates.append(g0 + lo * delta)
        candidates.append(g0 + hi * delta)
        if hi - lo > 1e-12:
            result = minimize_scalar(
                lambda t: _direction_score(c, g0 + t * delta),
                bounds=(lo, hi), method='bounded', options={'xatol': 1e-12},
            )
            candidates.append(g0 + float(result.x) * delta)

    if not candidates:
        raise EmptyFeasibleSubgradients(
            f"No sub-gradient satisfies the feasibility filter (sign {sign}, v* {v.tolist()})"
        )

    best = candidates[0]
    best_score = _direction_score(c, best)
    for d in candidates[1:]:
        score = _direction_score(c, d)
        if score < best_score - TIE_TOL:
            best, best_score = d, score
    return np.array(best, dtype=float)


@dataclass(frozen=True)
class Violation:
    """One failed regularity check."""
    condition: int
    obstacles: Tuple[int, ...]
    point: Tuple[float, float]
    step: int
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """Result of validate_decomposition."""
    valid: bool
    violations: Tuple[Violation, ...] = ()
    checked_points: int = 0

    def by_condition(self, condition: int) -> List[Violation]:
        return [v for v in self.violations if v.condition == condition]


DIRECTION_SAMPLES = 720
VANISH_TOL = 1e-6


def _common_descent_exists(evals: Sequence[SafetyEval]) -> bool:
    angles = np.linspace(0.0, 2.0 * np.pi, DIRECTION_SAMPLES, endpoint=False)
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    ok = np.ones(len(dirs), dtype=bool)
    for ev in evals:
        ok &= np.max(dirs @ ev.generators.T, axis=1) < -1e-9
    return bool(np.any(ok))


def _sample_box(obstacles: Sequence[Obstacle], step: int) -> Tuple[np.ndarray, np.ndarray]:
    bounds = np.array([ob.outline(step, 64).bounds for ob in obstacles])
    lo = bounds[:, :2].min(axis=0) - 1.0
    hi = bounds[:, 2:].max(axis=0) + 1.0
    return lo, hi


def validate_decomposition(obstacles: Sequence[Obstacle], steps: Optional[Sequence[int]] = None,
                           samples: int = 200, seed: int = 0) -> ValidationReport:
    """
    Check a semi-convex decomposition against the regularity conditions.

    Conditions, checked by sampling at each requested step:
        1. every sampled point has a nonzero sub-gradient;
        2. 0 is not a sub-gradient at sampled obstacle boundary points;
        3. where several indices vanish together (boundary intersections),
           some direction strictly decreases all of them.

    Parameters:
    -----------
    obstacles : Sequence[Obstacle]
        The decomposition, margins ignored
    steps : Optional[Sequence[int]]
        1-based steps to check; defaults to every distinct pose step
    samples : int
        Random points for condition 1 and boundary points per obstacle for 2
    seed : int
        Seed for numpy's default_rng

    Returns:
    --------
    ValidationReport
        Validity flag and the list of violations (never raises)
    """
    obstacles = list(obstacles)
    if not obstacles:
        return ValidationReport(True)
    if steps is None:
        steps = range(1, max(len(ob.poses) for ob in obstacles) + 1)
    rng = np.random.default_rng(seed)
    violations: List[Violation] = []
    checked = 0

    def evaluate(j: int, step: int, p: np.ndarray) -> SafetyEval:
        ob = obstacles[j]
        return apply_pose(ob, min(step, len(ob.poses)), p, margin=0.0)

    for step in steps:
        lo, hi = _sample_box(obstacles, step)
        for p in rng.uniform(lo, hi, size=(samples, 2)):
            for j in range(len(obstacles)):
                checked += 1
                try:
                    ev = evaluate(j, step, p)
                except CfsError as e:
                    violations.append(Violation(1, (j,), tuple(p), step, str(e)))
                    continue
                if np.all(np.linalg.norm(ev.generators, axis=1) <= ZERO_GENERATOR_TOL):
                    violations.append(Violation(1, (j,), tuple(p), step, "sub-differential is {0}"))

        outlines = []
        for j, ob in enumerate(obstacles):
            q = min(step, len(ob.poses))
            outline = ob.outline(q, max(samples, 16))
            outlines.append(outline)
            for p in np.asarray(outline.coords)[:samples]:
                checked += 1
                try:
                    ev = evaluate(j, step, p)
                except CfsError as e:
                    violations.append(Violation(2, (j,), tuple(p), step, str(e)))
                    continue
                if zero_in_hull(ev.generators):
                    violations.append(Violation(2, (j,), tuple(p), step, "0 is a sub-gradient on the boundary"))

        for i, j in combinations(range(len(obstacles)), 2):
            for p in intersection_sample_points(outlines[i], outlines[j]):
                checked += 1
                evals = {}
                for k in range(len(obstacles)):
                    try:
                        ev = evaluate(k, step, p)
                    except CfsError:
                        continue
                    if abs(ev.value) <= VANISH_TOL:
                        evals[k] = ev
                if len(evals) >= 2 and not _common_descent_exists(list(evals.values())):
                    violations.append(Violation(
                        3, tuple(sorted(evals)), (float(p[0]), float(p[1])), step,
                        f"no common strict descent direction for obstacles {sorted(evals)}",
                    ))

    unique: List[Violation] = []
    seen = set()
    for v in violations:
        key = (v.condition, v.obstacles, round(v.point[0], 9), round(v.point[1], 9), v.step)
        if key not in seen:
            seen.add(key)
            unique.append(v)

    if unique:
        logger.debug(f"Decomposition check found {len(unique)} violation(s) over {checked} samples")
    return ValidationReport(not unique, tuple(unique), checked)
