"""
Safety indices for 2D obstacle avoidance.

A safety index phi is a continuous, piecewise-smooth, semi-convex function whose
zero super-level set is the region free of one obstacle.
"""

from safety_index.primitives import ConvexPolygon, Isometry2, Point2, SafetyEval, convex_hull
from safety_index.obstacles import BoundaryProfile, NonConvex, NotchProfile, Obstacle
from safety_index.evaluation import (
    apply_pose,
    estimate_hessian_bound,
    eval_boundary,
    eval_convex,
    eval_nonconvex,
    evaluate_shape,
    hessian_bound,
)

__all__ = [
    'Point2', 'Isometry2', 'ConvexPolygon', 'SafetyEval', 'convex_hull',
    'BoundaryProfile', 'NotchProfile', 'NonConvex', 'Obstacle',
    'eval_convex', 'eval_boundary', 'eval_nonconvex', 'evaluate_shape',
    'hessian_bound', 'estimate_hessian_bound', 'apply_pose',
]
