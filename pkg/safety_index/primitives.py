"""
Planar geometry primitives for safety indices.

Defines the value types shared by every safety-index construction: points,
rigid placements, convex polygons and the evaluation record returned by each
index.

Classes:
    Point2: Immutable planar point
    Isometry2: Rigid motion (rotation then translation)
    ConvexPolygon: Strictly convex CCW polygon with precomputed edge data
    SafetyEval: Value, sub-differential generators and Hessian lower bound

Functions:
    convex_hull: Minimal CCW convex polygon containing a point set
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from utils.geometry_converters import ccw_hull_vertices

ArrayLike2 = Union['Point2', np.ndarray, tuple, list]

FEATURE_TOL = 1e-9


@dataclass(frozen=True)
class Point2:
    """A point x = (p1, p2) in the plane, in meters."""
    p1: float
    p2: float

    def __post_init__(self):
        if not (math.isfinite(self.p1) and math.isfinite(self.p2)):
            raise ValueError(f"Point2 components must be finite, got ({self.p1}, {self.p2})")

    def __array__(self, dtype=None, copy=None):
        return np.array([self.p1, self.p2], dtype=dtype or float)

    @classmethod
    def of(cls, value: ArrayLike2) -> 'Point2':
        if isinstance(value, Point2):
            return value
        arr = np.asarray(value, dtype=float).reshape(-1)
        if arr.shape != (2,):
            raise ValueError(f"Expected a 2-vector, got shape {arr.shape}")
        return cls(float(arr[0]), float(arr[1]))


def as_vec(value: ArrayLike2) -> np.ndarray:
    """Convert a point-like value to a float (2,) array."""
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"Expected a 2-vector, got shape {arr.shape}")
    return arr


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Isometry2:
    """
    Rigid placement of an obstacle: body point b maps to R(theta) b + t.

    ``inverse_apply`` is the world-to-body map used to evaluate a safety index
    at a world point.
    """
    theta: float = 0.0
    translation: Point2 = field(default_factory=lambda: Point2(0.0, 0.0))

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError(f"Isometry2 angle must be finite, got {self.theta}")
        if not isinstance(self.translation, Point2):
            object.__setattr__(self, 'translation', Point2.of(self.translation))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return rotation(self.theta)

    @property
    def is_identity(self) -> bool:
        return self.theta == 0.0 and self.translation.p1 == 0.0 and self.translation.p2 == 0.0

    def apply(self, x: ArrayLike2) -> np.ndarray:
        return self.rotation_matrix @ as_vec(x) + np.asarray(self.translation)

    def inverse_apply(self, x: ArrayLike2) -> np.ndarray:
        return self.rotation_matrix.T @ (as_vec(x) - np.asarray(self.translation))

    def compose(self, inner: 'Isometry2') -> 'Isometry2':
        """Return self after inner: x -> self.apply(inner.apply(x))."""
        t = self.apply(np.asarray(inner.translation))
        return Isometry2(self.theta + inner.theta, Point2.of(t))


@dataclass(frozen=True, eq=False)
class SafetyEval:
    """
    Result of evaluating a safety index at one point.

    Attributes:
        value: Signed safety value in meters (negative inside the obstacle)
        generators: (m, 2) array of sub-differential generators, m >= 1
        smooth: True when exactly one smooth piece is active
        hessian_bound: Symmetric PSD 2x2 matrix H* (semi-convexity bound)
    """
    value: float
    generators: np.ndarray
    smooth: bool
    hessian_bound: np.ndarray

    def __post_init__(self):
        gens = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if gens.shape[0] == 0 or gens.shape[1] != 2:
            raise ValueError(f"SafetyEval needs a nonempty (m, 2) generator array, got {gens.shape}")
        if not np.all(np.isfinite(gens)):
            raise ValueError(f"SafetyEval generators must be finite, got {gens.tolist()}")
        object.__setattr__(self, 'generators', gens)
        object.__setattr__(self, 'hessian_bound', np.asarray(self.hessian_bound, dtype=float))
        object.__setattr__(self, 'value', float(self.value))
        if self.smooth and gens.shape[0] != 1:
            object.__setattr__(self, 'smooth', False)

    @property
    def gradient(self) -> np.ndarray:
        """The gradient at a smooth point (first generator otherwise)."""
        return self.generators[0]

    def placed(self, rot: np.ndarray, margin: float = 0.0) -> 'SafetyEval':
        """Map a body-frame evaluation to the world frame and subtract a margin."""
        return SafetyEval(
            value=self.value - margin,
            generators=self.generators @ rot.T,
            smooth=self.smooth,
            hessian_bound=rot @ self.hessian_bound @ rot.T,
        )


def unique_directions(vectors: Iterable[np.ndarray], tol: float = FEATURE_TOL) -> np.ndarray:
    """Drop near-duplicate vectors, keeping first occurrences in order."""
    kept = []
    for vec in vectors:
        if not any(np.max(np.abs(vec - k)) <= tol for k in kept):
            kept.append(np.asarray(vec, dtype=float))
    return np.asarray(kept, dtype=float).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """
    Strictly convex polygon with vertices in counter-clockwise order.

    Edge i runs from vertex i to vertex i+1 (cyclically). Outward unit normals,
    unit tangents and edge lengths are precomputed.
    """
    vertices: np.ndarray
    normals: np.ndarray = field(init=False, repr=False)
    tangents: np.ndarray = field(init=False, repr=False)
    lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError(f"ConvexPolygon needs at least 3 planar vertices, got shape {verts.shape}")
        if not np.all(np.isfinite(verts)):
            raise ValueError("ConvexPolygon vertices must be finite")

        edges = np.roll(verts, -1, axis=0) - verts
        lengths = np.linalg.norm(edges, axis=1)
        if np.any(lengths <= 0.0):
            raise ValueError("ConvexPolygon has repeated vertices")

        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if np.any(cross <= 1e-12 * lengths * np.roll(lengths, -1)):
            raise ValueError(
                "ConvexPolygon vertices must be counter-clockwise and strictly convex "
                f"(turn cross products: {np.round(cross, 6).tolist()})"
            )

        tangents = edges / lengths[:, None]
        normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
        verts.flags.writeable = False
        object.__setattr__(self, 'vertices', verts)
        object.__setattr__(self, 'normals', normals)
        object.__setattr__(self, 'tangents', tangents)
        object.__setattr__(self, 'lengths', lengths)

    @property
    def edge_count(self) -> int:
        return len(self.vertices)

    def edge_index(self, start: ArrayLike2, end: ArrayLike2, tol: float = 1e-9) -> Optional[int]:
        """Index of the edge running from ``start`` to ``end``, or None."""
        a, b = as_vec(start), as_vec(end)
        for i in range(self.edge_count):
            if np.allclose(self.vertices[i], a, atol=tol) and \
                    np.allclose(self.vertices[(i + 1) % self.edge_count], b, atol=tol):
                return i
        return None

    def boundary_points(self, count: int) -> np.ndarray:
        """``count`` points spread along the perimeter by arc length."""
        perimeter = float(self.lengths.sum())
        arcs = np.linspace(0.0, perimeter, count, endpoint=False)
        offsets = np.concatenate([[0.0], np.cumsum(self.lengths)])
        points = []
        for arc in arcs:
            i = min(int(np.searchsorted(offsets, arc, side='right') - 1), self.edge_count - 1)
            points.append(self.vertices[i] + (arc - offsets[i]) * self.tangents[i])
        return np.asarray(points)


def convex_hull(points: Iterable[ArrayLike2]) -> ConvexPolygon:
    """
    Minimal counter-clockwise convex polygon containing all points.

    Parameters:
    -----------
    points : Iterable[ArrayLike2]
        At least 3 non-collinear points

    Returns:
    --------
    ConvexPolygon
        Hull with interior and collinear points dropped

    Raises:
    -------
    DegenerateInput
        If all points are collinear or fewer than 3 are given
    """
    return ConvexPolygon(ccw_hull_vertices(np.asarray(p, dtype=float) for p in points))


__all__ = [
    'Point2', 'Isometry2', 'SafetyEval', 'ConvexPolygon', 'convex_hull',
    'as_vec', 'rotation', 'unique_directions', 'FEATURE_TOL',
]
