"""
Scenario file reader.

Reads a scenario JSON file, builds its obstacles and validates the
semi-convex decomposition. Problems are reported with the file path and, when
they can be tied to an obstacle, the line of that obstacle's "kind" key.

Functions:
    load_scenario: Read and validate a scenario file
    parse_scenario: Build a Scenario from an already parsed dictionary
    build_problem: Planning problem and initial trajectory for one horizon
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.nonsmooth import validate_decomposition
from core.planning import CostModel, CostWeights, Trajectory, TrajectoryProblem, initial_reference
from safety_index.obstacles import BoundaryProfile, NonConvex, Obstacle
from safety_index.primitives import ConvexPolygon, Isometry2, Point2
from utils.errors import CfsError, ParseError, ValidationError
from utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_HORIZONS = (30, 40, 50, 100)
OBSTACLE_KINDS = ('convex_polygon', 'boundary', 'nonconvex')


@dataclass(frozen=True, eq=False)
class Scenario:
    """A planning scenario: endpoints, obstacles, margin, cost weights and default horizons."""
    name: str
    start: Point2
    goal: Point2
    obstacles: Tuple[Obstacle, ...] = ()
    margin: float = 0.0
    weights: CostWeights = field(default_factory=CostWeights)
    horizons: Tuple[int, ...] = ()
    source: Optional[Path] = None


def _kind_lines(text: str) -> List[int]:
    """1-based line of every '"kind"' key, in file order."""
    return [text.count('\n', 0, m.start()) + 1 for m in re.finditer(r'"kind"\s*:', text)]


def _pose(raw: Dict[str, Any], where: str) -> Isometry2:
    if not isinstance(raw, dict):
        raise ValueError(f"{where} must be an object with 'theta' and 't'")
    return Isometry2(float(raw.get('theta', 0.0)), Point2.of(raw.get('t', (0.0, 0.0))))


def _poses(raw: Dict[str, Any]) -> Tuple[Isometry2, ...]:
    if 'poses' in raw:
        poses = raw['poses']
        if not isinstance(poses, list) or not poses:
            raise ValueError("'poses' must be a nonempty list")
        return tuple(_pose(p, f"poses[{i}]") for i, p in enumerate(poses))
    if 'pose' in raw:
        return (_pose(raw['pose'], 'pose'),)
    return (Isometry2(),)


def _matrix(raw: Any, shape: Tuple[int, int], what: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"'{what}' must have shape {shape}, got {arr.shape}")
    return arr


def _boundary(raw: Dict[str, Any]) -> BoundaryProfile:
    profile = raw.get('profile')
    if not isinstance(profile, dict) or 'type' not in profile or 'data' not in profile:
        raise ValueError("boundary obstacle needs 'profile' with 'type' and 'data'")
    kind = profile['type']
    if kind == 'pwl':
        return BoundaryProfile.piecewise_linear(profile['data'])
    if kind == 'poly':
        domain = tuple(profile['domain']) if 'domain' in profile else None
        kwargs = {'domain': domain} if domain is not None else {}
        return BoundaryProfile.polynomial(profile['data'], profile.get('curvature_bound'), **kwargs)
    raise ValueError(f"Unknown boundary profile type '{kind}' (expected 'pwl' or 'poly')")


def _nonconvex(raw: Dict[str, Any]) -> NonConvex:
    hull = ConvexPolygon(_matrix_rows(raw.get('hull'), 'hull'))
    notch_specs: Dict[int, Tuple[str, Sequence]] = {}
    for i, edge in enumerate((raw.get('notch') or {}).get('edges', [])):
        index = hull.edge_index(edge['from'], edge['to'])
        if index is None:
            raise ValueError(f"notch edge {i} ({edge['from']} -> {edge['to']}) is not a hull edge")
        notch_specs[index] = (edge.get('type', 'poly'), edge['data'])
    hstar = _matrix(raw['hstar'], (2, 2), 'hstar') if raw.get('hstar') is not None else None
    return NonConvex.build(hull, notch_specs, hstar)


def _matrix_rows(raw: Any, what: str) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"'{what}' must be a list of [x, y] pairs")
    return arr


def _obstacle(raw: Dict[str, Any], index: int, margin: float) -> Obstacle:
    kind = raw.get('kind')
    if kind not in OBSTACLE_KINDS:
        raise ValueError(f"unknown obstacle kind '{kind}' (expected one of {', '.join(OBSTACLE_KINDS)})")
    if kind == 'convex_polygon':
        shape = ConvexPolygon(_matrix_rows(raw.get('vertices'), 'vertices'))
    elif kind == 'boundary':
        shape = _boundary(raw)
    else:
        shape = _nonconvex(raw)
    return Obstacle(shape, _poses(raw), margin, str(raw.get('name', f"{kind}_{index}")))


def _weights(raw: Optional[Dict[str, Any]]) -> CostWeights:
    if raw is None:
        return CostWeights()
    if not isinstance(raw, dict):
        raise ValueError("'weights' must be an object")
    defaults = CostWeights()
    return CostWeights(
        w1=float(raw.get('w1', defaults.w1)),
        w2=float(raw.get('w2', defaults.w2)),
        cq=tuple(raw.get('cq', defaults.cq)),
        cs=tuple(raw.get('cs', defaults.cs)),
        horizon_scaled=bool(raw.get('horizon_scaled', defaults.horizon_scaled)),
    )


def parse_scenario(data: Dict[str, Any], path: Union[str, Path, None] = None,
                   kind_lines: Optional[List[int]] = None) -> Scenario:
    """
    Build a Scenario from a parsed JSON object.

    Raises:
    -------
    ValidationError
        On a missing field, a malformed value or a rejected obstacle
        (for example a boundary profile with a concave kink)
    """
    kind_lines = kind_lines or []

    def line_of(index: int) -> Optional[int]:
        return kind_lines[index] if index < len(kind_lines) else None

    if not isinstance(data, dict):
        raise ValidationError("top level must be a JSON object", path)
    for key in ('start', 'goal'):
        if key not in data:
            raise ValidationError(f"missing required field '{key}'", path)

    try:
        start = Point2.of(data['start'])
        goal = Point2.of(data['goal'])
        margin = float(data.get('margin', 0.0))
        if margin < 0.0:
            raise ValueError(f"margin must be nonnegative, got {margin}")
        weights = _weights(data.get('weights'))
        horizons = tuple(int(h) for h in data.get('horizons', ()))
        if horizons and min(horizons) < 1:
            raise ValueError(f"horizons must be positive integers, got {list(horizons)}")
    except (TypeError, ValueError) as e:
        raise ValidationError(str(e), path) from e

    raw_obstacles = data.get('obstacles', [])
    if not isinstance(raw_obstacles, list):
        raise ValidationError("'obstacles' must be a list", path)

    obstacles = []
    for i, raw in enumerate(raw_obstacles):
        if not isinstance(raw, dict):
            raise ValidationError(f"obstacle {i} must be an object", path, line_of(i))
        try:
            obstacles.append(_obstacle(raw, i, margin))
        except (KeyError, TypeError) as e:
            raise ValidationError(f"obstacle {i}: malformed field {e}", path, line_of(i)) from e
        except (ValueError, CfsError) as e:
            raise ValidationError(f"obstacle {i}: {e}", path, line_of(i)) from e

    name = str(data.get('name') or (Path(path).stem if path else 'scenario'))
    return Scenario(name, start, goal, tuple(obstacles), margin, weights, horizons,
                    Path(path) if path else None)


def load_scenario(path: Union[str, Path], validation_samples: int = 200, seed: int = 0) -> Scenario:
    """
    Read, build and validate a scenario file.

    Parameters:
    -----------
    path : str or Path
        Scenario JSON file
    validation_samples : int
        Samples per check passed to validate_decomposition (0 skips the check)
    seed : int
        Seed for the decomposition check

    Returns:
    --------
    Scenario

    Raises:
    -------
    ParseError
        If the file is missing or is not valid JSON
    ValidationError
        If a field is invalid or the decomposition fails a regularity check

    Example:
        >>> scenario = load_scenario('config/scenarios/scenario1.json')
        >>> len(scenario.obstacles)
        3
    """
    path = Path(path)
    logger.info(f"Reading scenario from: {path}")
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ParseError(f"cannot read scenario file ({e.strerror or e})", path) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno) from e

    kind_lines = _kind_lines(text)
    scenario = parse_scenario(data, path, kind_lines)

    if validation_samples > 0 and scenario.obstacles:
        report = validate_decomposition(scenario.obstacles, samples=validation_samples, seed=seed)
        if not report.valid:
            first = report.violations[0]
            index = first.obstacles[0]
            line = kind_lines[index] if index < len(kind_lines) else None
            raise ValidationError(
                f"decomposition fails regularity condition {first.condition} at "
                f"({first.point[0]:.4g}, {first.point[1]:.4g}), step {first.step}: {first.message} "
                f"({len(report.violations)} violation(s))",
                path, line,
            )
        logger.debug(f"  Decomposition check passed ({report.checked_points} points)")

    logger.info(f"  - Scenario '{scenario.name}': {len(scenario.obstacles)} obstacle(s), margin {scenario.margin}")
    logger.info(f"  - Start ({scenario.start.p1:g}, {scenario.start.p2:g}) -> goal ({scenario.goal.p1:g}, {scenario.goal.p2:g})")
    logger.info("  ✓ Scenario loaded successfully")
    return scenario


def build_problem(scenario: Scenario, h: int) -> Tuple[TrajectoryProblem, Trajectory]:
    """Straight-line reference, cost model and resampled obstacles for horizon h."""
    reference = initial_reference(scenario.start, scenario.goal, h)
    cost = CostModel.build(h, reference.ts, scenario.weights, reference)
    problem = TrajectoryProblem.from_obstacles(cost, scenario.obstacles, scenario.margin)
    return problem, reference
