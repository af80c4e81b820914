"""
Geometry conversion utilities for CFS Planner.

This module converts between the numpy vertex arrays used by the safety indices
and shapely geometries, which handle the planar predicates: convex hulls,
orientation, boundary intersections and point-in-hull tests.

Functions:
    ccw_hull_vertices: Convex hull of a point set as a CCW vertex array
    ring_from_points: Closed shapely ring from a vertex array
    polyline_from_points: Open shapely line from a point array
    origin_distance_to_hull: Distance from the origin to the hull of a vector set
    intersection_sample_points: Sample points from a boundary intersection
"""

from typing import Iterable, List

import numpy as np
from shapely.geometry import LinearRing, LineString, MultiPoint, Point
from shapely.geometry.base import BaseGeometry
from shapely.geometry.polygon import orient

from utils.errors import DegenerateInput
from utils.logger import get_logger

logger = get_logger(__name__)

COLLINEAR_TOL = 1e-12


def _drop_collinear(vertices: np.ndarray) -> np.ndarray:
    keep = []
    count = len(vertices)
    for i in range(count):
        prev_v = vertices[i - 1]
        cur_v = vertices[i]
        next_v = vertices[(i + 1) % count]
        e1 = cur_v - prev_v
        e2 = next_v - cur_v
        cross = e1[0] * e2[1] - e1[1] * e2[0]
        if abs(cross) > COLLINEAR_TOL * max(1.0, np.linalg.norm(e1) * np.linalg.norm(e2)):
            keep.append(cur_v)
    return np.asarray(keep, dtype=float)


def ccw_hull_vertices(points: Iterable) -> np.ndarray:
    """
    Compute the convex hull of a 2D point set.

    The hull comes from shapely, is oriented counter-clockwise, has collinear
    vertices removed and starts at the lexicographically smallest vertex.

    Parameters:
    -----------
    points : Iterable
        Points convertible to an (n, 2) array

    Returns:
    --------
    np.ndarray
        (k, 2) array of hull vertices, k >= 3

    Raises:
    -------
    DegenerateInput
        If fewer than 3 points are given or the points are collinear

    Example:
        >>> ccw_hull_vertices([(0, 0), (1, 0), (0, 1), (0.1, 0.1)])
        array([[0., 0.], [1., 0.], [0., 1.]])
    """
    pts = np.asarray([np.asarray(p, dtype=float) for p in points], dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise DegenerateInput(f"Convex hull needs at least 3 planar points, got shape {pts.shape}")

    hull = MultiPoint([tuple(p) for p in pts]).convex_hull
    if hull.geom_type != 'Polygon' or hull.area <= 0.0:
        raise DegenerateInput(f"Points are collinear; hull is a {hull.geom_type}")

    hull = orient(hull, sign=1.0)
    vertices = np.asarray(hull.exterior.coords, dtype=float)[:-1]
    vertices = _drop_collinear(vertices)
    if len(vertices) < 3:
        raise DegenerateInput("Hull has fewer than 3 non-collinear vertices")

    start = min(range(len(vertices)), key=lambda i: (vertices[i][0], vertices[i][1]))
    return np.roll(vertices, -start, axis=0)


def ring_from_points(points: np.ndarray) -> LinearRing:
    """Build a closed shapely ring from an (n, 2) array."""
    return LinearRing([tuple(p) for p in np.asarray(points, dtype=float)])


def polyline_from_points(points: np.ndarray) -> LineString:
    """Build an open shapely line from an (n, 2) array."""
    return LineString([tuple(p) for p in np.asarray(points, dtype=float)])


def origin_distance_to_hull(vectors: np.ndarray) -> float:
    """
    Distance from the origin to the convex hull of a set of 2D vectors.

    Parameters:
    -----------
    vectors : np.ndarray
        (m, 2) array of vectors, m >= 1

    Returns:
    --------
    float
        Euclidean distance; 0.0 when the origin lies in the hull
    """
    vecs = np.atleast_2d(np.asarray(vectors, dtype=float))
    hull = MultiPoint([tuple(v) for v in vecs]).convex_hull
    return float(hull.distance(Point(0.0, 0.0)))


def intersection_sample_points(geom_a: BaseGeometry, geom_b: BaseGeometry) -> np.ndarray:
    """
    Sample points from the intersection of two boundary geometries.

    Point pieces contribute their coordinates. Line pieces contribute their
    vertices and segment midpoints, since overlapping edges intersect along
    whole segments.

    Parameters:
    -----------
    geom_a, geom_b : BaseGeometry
        Boundary geometries (rings or lines)

    Returns:
    --------
    np.ndarray
        (k, 2) array of sample points, possibly empty
    """
    inter = geom_a.intersection(geom_b)
    if inter.is_empty:
        return np.zeros((0, 2))

    pieces = list(getattr(inter, 'geoms', [inter]))
    samples: List[np.ndarray] = []
    for piece in pieces:
        if piece.is_empty:
            continue
        coords = np.asarray(piece.coords, dtype=float) if piece.geom_type != 'Polygon' \
            else np.asarray(piece.exterior.coords, dtype=float)
        samples.extend(coords)
        if piece.geom_type in ('LineString', 'LinearRing') and len(coords) > 1:
            samples.extend(0.5 * (coords[:-1] + coords[1:]))

    if not samples:
        return np.zeros((0, 2))

    points = np.unique(np.round(np.asarray(samples), 12), axis=0)
    logger.debug(f"Boundary intersection yielded {len(points)} sample points")
    return points
