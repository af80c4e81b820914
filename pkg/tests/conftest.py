"""Shared fixtures: the worked-example obstacles and small planning problems."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from config.config_loader import SCENARIO_DIR
from core.planning import CostModel, CostWeights, TrajectoryProblem, initial_reference
from safety_index import BoundaryProfile, ConvexPolygon, Isometry2, NonConvex, Obstacle


@pytest.fixture
def square() -> ConvexPolygon:
    """Square with corners (+-1, +-1), listed counter-clockwise."""
    return ConvexPolygon([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


@pytest.fixture
def notched_square() -> NonConvex:
    """The square with its bottom edge replaced by the curve p2 = -p1^2."""
    hull = ConvexPolygon([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    # depth below edge 0 at arc length s: 1 - (s - 1)^2
    return NonConvex.build(hull, {0: ('poly', [0.0, 2.0, -1.0])})


@pytest.fixture
def abs_profile() -> BoundaryProfile:
    return BoundaryProfile.piecewise_linear([[-10.0, 10.0], [0.0, 0.0], [10.0, 10.0]])


@pytest.fixture
def parabola_profile() -> BoundaryProfile:
    return BoundaryProfile.polynomial([0.0, 0.0, 1.0])


def make_problem(obstacles, h=10, start=(0.0, 0.0), goal=(9.0, 0.0), margin=None, weights=None):
    """Straight-line reference and problem for the given obstacles."""
    reference = initial_reference(start, goal, h)
    cost = CostModel.build(h, reference.ts, weights or CostWeights(), reference)
    return TrajectoryProblem.from_obstacles(cost, obstacles, margin), reference


def box(x0, x1, y0, y1) -> ConvexPolygon:
    return ConvexPolygon([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


@pytest.fixture
def scenario1_obstacles():
    return [
        Obstacle(box(1.5, 2.5, -0.2, 1.2), name='O1'),
        Obstacle(box(4.0, 5.0, -0.8, 0.5), name='O2'),
        Obstacle(ConvexPolygon([[6.4, -0.3], [7.6, -0.3], [7.0, 0.9]]), name='O3'),
    ]


@pytest.fixture
def single_square_problem():
    """One square astride the straight line (0,0) -> (9,0), h = 30."""
    return make_problem([Obstacle(box(4.0, 5.0, -0.3, 0.7), name='S')], h=30)


@pytest.fixture
def conflicting_walls():
    """Half-planes p2 <= 0 and p2 >= 1 as two affine boundary obstacles."""
    ceiling = Obstacle(BoundaryProfile.piecewise_linear([[-20.0, 0.0], [20.0, 0.0]]), name='ceiling')
    floor = Obstacle(BoundaryProfile.piecewise_linear([[-20.0, -1.0], [20.0, -1.0]]),
                     (Isometry2(math.pi),), name='floor')
    return [ceiling, floor]


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario dictionary to a JSON file and return its path."""
    def _write(data, name='scenario.json'):
        path = tmp_path / name
        path.write_text(json.dumps(data, indent=2), encoding='utf-8')
        return path
    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(7)
