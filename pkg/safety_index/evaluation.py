"""
Safety-index evaluation for convex, boundary and non-convex obstacles.

Each evaluator returns a SafetyEval in the obstacle's body frame; apply_pose
places the obstacle at a time step, subtracts the margin and maps generators
and Hessian bounds back to the world frame.

Functions:
    eval_convex: Signed distance to a convex polygon
    eval_boundary: Directional distance to a boundary profile
    eval_nonconvex: Signed directional distance to a notched obstacle
    evaluate_shape: Dispatch on the shape type
    hessian_bound: Semi-convexity bound H* of an obstacle
    estimate_hessian_bound: Sampled second-difference estimate of H*
    apply_pose: Evaluate an obstacle at step q and world point x
"""

from typing import Callable, Optional, Union

import numpy as np

from safety_index.obstacles import BoundaryProfile, NonConvex, Obstacle, Shape
from safety_index.primitives import (
    ArrayLike2, ConvexPolygon, FEATURE_TOL, SafetyEval, as_vec, unique_directions,
)

ZERO_H = np.zeros((2, 2))
HESSIAN_SAFETY_FACTOR = 1.5


def eval_convex(poly: ConvexPolygon, x: ArrayLike2) -> SafetyEval:
    """
    Signed distance from x to the boundary of a convex polygon.

    Parameters:
    -----------
    poly : ConvexPolygon
        Obstacle polygon
    x : ArrayLike2
        Query point in the polygon frame

    Returns:
    --------
    SafetyEval
        Positive outside, negative inside; generators are the unit gradients of
        every nearest boundary feature; zero Hessian bound

    Example:
        >>> square = ConvexPolygon([[1, 1], [-1, 1], [-1, -1], [1, -1]])
        >>> eval_convex(square, (2.0, 0.0)).value
        1.0
    """
    x = as_vec(x)
    offsets = np.einsum('ij,ij->i', poly.normals, x - poly.vertices)
    top = float(np.max(offsets))

    if top > 0.0:
        starts = poly.vertices
        ends = np.roll(poly.vertices, -1, axis=0)
        edges = ends - starts
        t = np.clip(np.einsum('ij,ij->i', x - starts, edges) / poly.lengths ** 2, 0.0, 1.0)
        closest = starts + t[:, None] * edges
        dists = np.linalg.norm(x - closest, axis=1)
        dmin = float(np.min(dists))
        if dmin > FEATURE_TOL:
            active = np.where(dists <= dmin + FEATURE_TOL)[0]
            gens = unique_directions((x - closest[i]) / dists[i] for i in active)
            return SafetyEval(dmin, gens, len(gens) == 1, ZERO_H)

    # inside or on the boundary: distance to the nearest supporting line
    active = np.where(offsets >= top - FEATURE_TOL)[0]
    gens = unique_directions(poly.normals[active])
    return SafetyEval(top, gens, len(gens) == 1, ZERO_H)


def eval_boundary(profile: BoundaryProfile, x: ArrayLike2) -> SafetyEval:
    """
    Directional distance phi = f(p1) - p2 along the profile's aligned axis.

    Generators are (s, -1) for every active slope s of f at p1. The Hessian
    bound is diag(c, 0) with c the profile curvature bound.
    """
    p1, p2 = as_vec(x)
    slopes = profile.active_slopes(p1)
    gens = np.array([[s, -1.0] for s in slopes])
    hess = np.array([[profile.curvature, 0.0], [0.0, 0.0]])
    return SafetyEval(profile.value(p1) - p2, gens, len(slopes) == 1, hess)


def eval_nonconvex(notched: NonConvex, x: ArrayLike2) -> SafetyEval:
    """
    Signed directional distance to a notched obstacle.

    Inside the hull the value is the largest edge term n_e.(x - v_e) + g_e(s),
    where s is the arc-length coordinate of x along edge e. Outside the hull it
    is the distance to the hull plus the notch depth at the nearest hull point.

    Raises:
    -------
    CorrespondenceError
        If a notch table does not cover the nearest hull point
    """
    x = as_vec(x)
    hull = notched.hull
    rel = x - hull.vertices
    normal_offsets = np.einsum('ij,ij->i', hull.normals, rel)
    arc = np.einsum('ij,ij->i', hull.tangents, rel)
    hess = hessian_bound_nonconvex(notched)

    if float(np.max(normal_offsets)) > 0.0:
        clipped = np.clip(arc, 0.0, hull.lengths)
        closest = hull.vertices + clipped[:, None] * hull.tangents
        dists = np.linalg.norm(x - closest, axis=1)
        dmin = float(np.min(dists))
        if dmin > FEATURE_TOL:
            active = np.where(dists <= dmin + FEATURE_TOL)[0]
            value = dmin + notched.depth(int(active[0]), float(clipped[active[0]]))
            gens = []
            for e in active:
                unit = (x - closest[e]) / dists[e]
                if FEATURE_TOL < arc[e] < hull.lengths[e] - FEATURE_TOL:
                    for slope in notched.slopes(e, float(clipped[e])):
                        gens.append(unit + slope * hull.tangents[e])
                else:
                    gens.append(unit)
            gens = unique_directions(gens)
            return SafetyEval(value, gens, len(gens) == 1, hess)

    # inside the hull or on its boundary
    terms = np.array([normal_offsets[e] + notched.depth(e, arc[e]) for e in range(hull.edge_count)])
    top = float(np.max(terms))
    gens = []
    for e in np.where(terms >= top - FEATURE_TOL)[0]:
        for slope in notched.slopes(e, arc[e]):
            gens.append(hull.normals[e] + slope * hull.tangents[e])
    gens = unique_directions(gens)
    return SafetyEval(top, gens, len(gens) == 1, hess)


def evaluate_shape(shape: Shape, x: ArrayLike2) -> SafetyEval:
    """Evaluate any obstacle shape in its body frame."""
    if isinstance(shape, ConvexPolygon):
        return eval_convex(shape, x)
    if isinstance(shape, BoundaryProfile):
        return eval_boundary(shape, x)
    if isinstance(shape, NonConvex):
        return eval_nonconvex(shape, x)
    raise ValueError(f"Unsupported obstacle shape {type(shape).__name__}")


def estimate_hessian_bound(
    phi: Callable[[np.ndarray], Union[float, SafetyEval]],
    center: ArrayLike2 = (0.0, 0.0),
    radius: float = 1.0,
    samples: int = 2000,
    step: float = 1e-2,
    seed: int = 0,
) -> np.ndarray:
    """
    Estimate H* from sampled second differences.

    Takes the largest -(phi(x+av) - 2 phi(x) + phi(x-av)) / a^2 over random
    points in a disk and random unit directions, scales it by 1.5 and returns
    it as an isotropic PSD matrix.

    Parameters:
    -----------
    phi : Callable
        Safety function returning a float or a SafetyEval
    center, radius : sampling disk
    samples : int
        Number of (x, v) pairs
    step : float
        Second-difference step a
    seed : int
        Seed for numpy's default_rng

    Returns:
    --------
    np.ndarray
        2x2 matrix c * I with c >= 0
    """
    def value(p: np.ndarray) -> float:
        out = phi(p)
        return out.value if isinstance(out, SafetyEval) else float(out)

    rng = np.random.default_rng(seed)
    c = as_vec(center)
    angles = rng.uniform(0.0, 2.0 * np.pi, size=samples)
    radii = radius * np.sqrt(rng.uniform(0.0, 1.0, size=samples))
    dirs = rng.uniform(0.0, 2.0 * np.pi, size=samples)

    worst = 0.0
    for ang, r, d in zip(angles, radii, dirs):
        x = c + r * np.array([np.cos(ang), np.sin(ang)])
        v = np.array([np.cos(d), np.sin(d)])
        second = value(x + step * v) - 2.0 * value(x) + value(x - step * v)
        worst = max(worst, -second / step ** 2)
    return HESSIAN_SAFETY_FACTOR * worst * np.eye(2)


def hessian_bound_nonconvex(notched: NonConvex) -> np.ndarray:
    cached = notched.__dict__.get('_hessian_bound')
    if cached is not None:
        return cached
    if notched.hstar is not None:
        bound = notched.hstar
    elif all(n is None or n.min_curvature is not None for n in notched.notches):
        bound = np.zeros((2, 2))
        for e, notch in enumerate(notched.notches):
            if notch is None:
                continue
            deficit = max(0.0, -notch.min_curvature)
            t = notched.hull.tangents[e]
            bound = bound + deficit * np.outer(t, t)
    else:
        hull = notched.hull
        center = hull.vertices.mean(axis=0)
        radius = float(np.max(np.linalg.norm(hull.vertices - center, axis=1))) * 1.25
        bound = estimate_hessian_bound(
            lambda p: _nonconvex_value(notched, p), center=center, radius=radius
        )
    object.__setattr__(notched, '_hessian_bound', bound)
    return bound


def _nonconvex_value(notched: NonConvex, x: np.ndarray) -> float:
    """Value-only branch of eval_nonconvex, used by the sampled bound."""
    hull = notched.hull
    rel = x - hull.vertices
    normal_offsets = np.einsum('ij,ij->i', hull.normals, rel)
    arc = np.einsum('ij,ij->i', hull.tangents, rel)
    if float(np.max(normal_offsets)) <= 0.0:
        return max(normal_offsets[e] + notched.depth(e, arc[e]) for e in range(hull.edge_count))
    clipped = np.clip(arc, 0.0, hull.lengths)
    closest = hull.vertices + clipped[:, None] * hull.tangents
    dists = np.linalg.norm(x - closest, axis=1)
    e = int(np.argmin(dists))
    return float(dists[e] + notched.depth(e, float(clipped[e])))


def hessian_bound(item: Union[Obstacle, Shape]) -> np.ndarray:
    """
    Semi-convexity bound H* in the obstacle body frame.

    Zero for convex polygons and piecewise-linear profiles, diag(c, 0) for
    polynomial profiles, and the declared or notch-derived bound for
    non-convex obstacles.
    """
    shape = item.shape if isinstance(item, Obstacle) else item
    if isinstance(shape, ConvexPolygon):
        return np.zeros((2, 2))
    if isinstance(shape, BoundaryProfile):
        return np.array([[shape.curvature, 0.0], [0.0, 0.0]])
    if isinstance(shape, NonConvex):
        return np.array(hessian_bound_nonconvex(shape))
    raise ValueError(f"Unsupported obstacle shape {type(shape).__name__}")


def apply_pose(obstacle: Obstacle, q: int, x: ArrayLike2, margin: Optional[float] = None) -> SafetyEval:
    """
    Evaluate phi_j(T_{j,q}(x)) minus the margin, in world coordinates.

    Parameters:
    -----------
    obstacle : Obstacle
        Obstacle with per-step poses
    q : int
        Time step, 1 <= q <= len(obstacle.poses)
    x : ArrayLike2
        World point
    margin : Optional[float]
        Overrides obstacle.margin when given

    Returns:
    --------
    SafetyEval
        World-frame evaluation (generators rotated back through the pose)
    """
    place = obstacle.placement(q)
    body = place.inverse_apply(x)
    local = evaluate_shape(obstacle.shape, body)
    return local.placed(place.rotation_matrix, obstacle.margin if margin is None else margin)
