"""
Obstacle descriptions for the three safety-index families.

Classes:
    BoundaryProfile: Non-compact obstacle above the graph of a profile f
    NotchProfile: Depth of a notch cut into one hull edge
    NonConvex: Convex envelope plus per-edge notch depths
    Obstacle: Shape, per-step placement and safety margin

All classes are immutable after construction.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from shapely.geometry.base import BaseGeometry

from safety_index.primitives import ConvexPolygon, Isometry2, FEATURE_TOL
from utils.errors import CorrespondenceError
from utils.geometry_converters import polyline_from_points, ring_from_points

DEFAULT_PROFILE_DOMAIN = (-10.0, 10.0)


def _polynomial_extremes(poly: Polynomial, lo: float, hi: float) -> Tuple[float, float]:
    """Exact min and max of a polynomial over [lo, hi]."""
    candidates = [lo, hi]
    if poly.degree() >= 2:
        for root in poly.deriv().roots():
            if abs(root.imag) <= 1e-12 and lo <= root.real <= hi:
                candidates.append(float(root.real))
    values = poly(np.asarray(candidates))
    return float(np.min(values)), float(np.max(values))


def _nonnegative_everywhere(poly: Polynomial) -> bool:
    """True when poly(t) >= 0 for every real t."""
    coef = np.trim_zeros(np.asarray(poly.coef, dtype=float), 'b')
    if coef.size <= 1:
        return coef.size == 0 or coef[0] >= 0.0
    if (coef.size - 1) % 2 or coef[-1] < 0.0:
        return False
    trimmed = Polynomial(coef)
    critical = [r.real for r in trimmed.deriv().roots() if abs(r.imag) <= 1e-12]
    return all(trimmed(t) >= -1e-12 for t in critical)


def _dedupe_slopes(slopes: List[float]) -> List[float]:
    out: List[float] = []
    for s in slopes:
        if not any(abs(s - k) <= FEATURE_TOL for k in out):
            out.append(float(s))
    return out


@dataclass(frozen=True, eq=False)
class BoundaryProfile:
    """
    Boundary obstacle {p2 > f(p1)} in its aligned frame.

    ``kind`` is 'pwl' (convex piecewise-linear, breakpoints (k, 2)) or 'poly'
    (ascending polynomial coefficients). ``orientation`` places the aligned
    frame in the world.
    """
    kind: str
    data: np.ndarray
    orientation: Isometry2 = field(default_factory=Isometry2)
    curvature_bound: Optional[float] = None
    domain: Tuple[float, float] = DEFAULT_PROFILE_DOMAIN

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if self.kind == 'pwl':
            if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
                raise ValueError(f"pwl profile needs (k, 2) breakpoints with k >= 2, got shape {data.shape}")
            if np.any(np.diff(data[:, 0]) <= 0):
                raise ValueError("pwl breakpoints must have strictly increasing abscissae")
            slopes = np.diff(data[:, 1]) / np.diff(data[:, 0])
            drops = np.where(np.diff(slopes) < -1e-12)[0]
            if len(drops):
                kink = data[drops[0] + 1, 0]
                raise ValueError(f"pwl profile has a concave kink at t={kink:g} (slope decreases)")
            object.__setattr__(self, '_slopes', slopes)
            object.__setattr__(self, 'domain', (float(data[0, 0]), float(data[-1, 0])))
        elif self.kind == 'poly':
            if data.ndim != 1 or data.size == 0:
                raise ValueError("poly profile needs a nonempty coefficient list")
            lo, hi = self.domain
            if not lo < hi:
                raise ValueError(f"poly profile domain must satisfy lo < hi, got {self.domain}")
            if self.curvature_bound is not None and not (self.curvature_bound >= 0.0):
                raise ValueError(f"curvature_bound must be nonnegative, got {self.curvature_bound}")
            object.__setattr__(self, '_poly', Polynomial(data))
        else:
            raise ValueError(f"Unknown boundary profile kind '{self.kind}' (expected 'pwl' or 'poly')")
        if not isinstance(self.orientation, Isometry2):
            raise ValueError("orientation must be an Isometry2")
        data.flags.writeable = False
        object.__setattr__(self, 'data', data)

    @classmethod
    def piecewise_linear(cls, breakpoints, orientation: Optional[Isometry2] = None) -> 'BoundaryProfile':
        return cls('pwl', breakpoints, orientation or Isometry2())

    @classmethod
    def polynomial(cls, coefficients, curvature_bound: Optional[float] = None,
                   domain: Tuple[float, float] = DEFAULT_PROFILE_DOMAIN,
                   orientation: Optional[Isometry2] = None) -> 'BoundaryProfile':
        return cls('poly', coefficients, orientation or Isometry2(), curvature_bound, tuple(domain))

    def _segment(self, t: float) -> int:
        k = len(self.data) - 1
        return int(min(max(np.searchsorted(self.data[:, 0], t, side='right') - 1, 0), k - 1))

    def value(self, t: float) -> float:
        if self.kind == 'poly':
            return float(self._poly(t))
        i = self._segment(t)
        return float(self.data[i, 1] + self._slopes[i] * (t - self.data[i, 0]))

    def active_slopes(self, t: float) -> List[float]:
        """Slopes of every smooth piece of f active at t."""
        if self.kind == 'poly':
            return [float(self._poly.deriv()(t))]
        interior = self.data[1:-1, 0]
        near = np.where(np.abs(interior - t) <= FEATURE_TOL)[0]
        if len(near):
            i = int(near[0]) + 1
            return _dedupe_slopes([self._slopes[i - 1], self._slopes[i]])
        return [float(self._slopes[self._segment(t)])]

    @property
    def curvature(self) -> float:
        """Bound on |f''| used as the (1,1) entry of H*."""
        if self.kind == 'pwl':
            return 0.0
        if self.curvature_bound is not None:
            return float(self.curvature_bound)
        second = self._poly.deriv(2) if self._poly.degree() >= 2 else Polynomial([0.0])
        lo_val, hi_val = _polynomial_extremes(second, *self.domain)
        return max(abs(lo_val), abs(hi_val))

    @property
    def is_affine(self) -> bool:
        if self.kind == 'pwl':
            return bool(np.all(np.abs(self._slopes - self._slopes[0]) <= 1e-12))
        return self._poly.degree() <= 1 or bool(np.all(np.abs(self.data[2:]) == 0.0))

    @property
    def is_convex(self) -> bool:
        """True when f is convex on the whole line, so phi = f(p1) - p2 is convex."""
        if self.kind == 'pwl':
            return True
        return _nonnegative_everywhere(self._poly.deriv(2) if self._poly.degree() >= 2 else Polynomial([0.0]))

    def boundary_points(self, count: int) -> np.ndarray:
        ts = np.linspace(self.domain[0], self.domain[1], count)
        return np.column_stack([ts, [self.value(t) for t in ts]])


@dataclass(frozen=True, eq=False)
class NotchProfile:
    """
    Depth g(s) >= 0 of the obstacle boundary below one hull edge.

    ``s`` is the arc length from the edge start, in [0, length]; g is zero
    outside that interval. ``kind`` is 'poly' (ascending coefficients in s) or
    'polyline' (an (k, 2) table of (s, g) rows interpolated linearly).
    """
    kind: str
    data: np.ndarray
    length: float

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if not (self.length > 0.0 and math.isfinite(self.length)):
            raise ValueError(f"Notch edge length must be positive, got {self.length}")
        if self.kind == 'poly':
            if data.ndim != 1 or data.size == 0:
                raise ValueError("poly notch needs a nonempty coefficient list")
            poly = Polynomial(data)
            ends = poly(np.array([0.0, self.length]))
            if np.any(np.abs(ends) > 1e-9):
                raise ValueError(f"Notch depth must vanish at the edge endpoints, got {ends.tolist()}")
            object.__setattr__(self, '_poly', poly)
        elif self.kind == 'polyline':
            if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
                raise ValueError(f"polyline notch needs (k, 2) rows with k >= 2, got shape {data.shape}")
            if np.any(np.diff(data[:, 0]) <= 0):
                raise ValueError("polyline notch arc lengths must be strictly increasing")
            for s, g in data:
                if (abs(s) <= FEATURE_TOL or abs(s - self.length) <= FEATURE_TOL) and abs(g) > 1e-9:
                    raise ValueError(f"Notch depth must vanish at the edge endpoints, got g({s:g})={g:g}")
        else:
            raise ValueError(f"Unknown notch kind '{self.kind}' (expected 'poly' or 'polyline')")
        data.flags.writeable = False
        object.__setattr__(self, 'data', data)

    def _lookup_check(self, s: float):
        if self.kind == 'polyline' and not (self.data[0, 0] - FEATURE_TOL <= s <= self.data[-1, 0] + FEATURE_TOL):
            raise CorrespondenceError(
                f"Notch table covers s in [{self.data[0, 0]:g}, {self.data[-1, 0]:g}], "
                f"lookup at s={s:g} on an edge of length {self.length:g}"
            )

    def depth(self, s: float) -> float:
        if s <= 0.0 or s >= self.length:
            return 0.0
        self._lookup_check(s)
        if self.kind == 'poly':
            g = float(self._poly(s))
        else:
            g = float(np.interp(s, self.data[:, 0], self.data[:, 1]))
        if g < -1e-12:
            raise CorrespondenceError(f"Notch depth is negative ({g:g}) at s={s:g}")
        return max(g, 0.0)

    def slopes(self, s: float) -> List[float]:
        """One-sided slopes of g active at s (two at a kink)."""
        if s < -FEATURE_TOL or s > self.length + FEATURE_TOL:
            return [0.0]
        if self.kind == 'poly':
            d = self._poly.deriv()
            if abs(s) <= FEATURE_TOL:
                return _dedupe_slopes([0.0, float(d(0.0))])
            if abs(s - self.length) <= FEATURE_TOL:
                return _dedupe_slopes([float(d(self.length)), 0.0])
            return [float(d(s))]

        table_s = self.data[:, 0]
        seg_slopes = np.diff(self.data[:, 1]) / np.diff(table_s)
        knots = np.concatenate([[0.0], table_s, [self.length]])
        near = np.where(np.abs(knots - s) <= FEATURE_TOL)[0]

        def slope_at(u: float) -> float:
            if u <= 0.0 or u >= self.length:
                return 0.0
            self._lookup_check(u)
            i = int(min(max(np.searchsorted(table_s, u, side='right') - 1, 0), len(seg_slopes) - 1))
            return float(seg_slopes[i])

        if len(near):
            return _dedupe_slopes([slope_at(s - 2 * FEATURE_TOL), slope_at(s + 2 * FEATURE_TOL)])
        return [slope_at(s)]

    @property
    def min_curvature(self) -> Optional[float]:
        """min g'' over [0, length] for analytic notches; None for tables."""
        if self.kind != 'poly':
            return None
        if self._poly.degree() < 2:
            return 0.0
        lo, _ = _polynomial_extremes(self._poly.deriv(2), 0.0, self.length)
        return lo


@dataclass(frozen=True, eq=False)
class NonConvex:
    """
    Non-convex obstacle described by its convex envelope and notch depths.

    ``notches[e]`` is the notch of hull edge e or None. The obstacle boundary
    below edge e is y - g_e(s) n_e for y on the edge, which is the
    correspondence between hull boundary and obstacle boundary.
    """
    hull: ConvexPolygon
    notches: Tuple[Optional[NotchProfile], ...]
    hstar: Optional[np.ndarray] = None

    def __post_init__(self):
        notches = tuple(self.notches)
        if len(notches) != self.hull.edge_count:
            raise ValueError(
                f"NonConvex needs one notch entry per hull edge ({self.hull.edge_count}), got {len(notches)}"
            )
        for e, notch in enumerate(notches):
            if notch is not None and abs(notch.length - self.hull.lengths[e]) > 1e-9:
                raise ValueError(f"Notch on edge {e} has length {notch.length:g}, edge is {self.hull.lengths[e]:g}")
        object.__setattr__(self, 'notches', notches)
        if self.hstar is not None:
            hstar = np.asarray(self.hstar, dtype=float)
            if hstar.shape != (2, 2) or not np.allclose(hstar, hstar.T, atol=1e-12):
                raise ValueError(f"hstar must be a symmetric 2x2 matrix, got {hstar.tolist()}")
            if np.min(np.linalg.eigvalsh(hstar)) < -1e-12:
                raise ValueError("hstar must be positive semidefinite")
            object.__setattr__(self, 'hstar', hstar)

    @classmethod
    def build(cls, hull: ConvexPolygon, notch_specs: Dict[int, Tuple[str, Sequence]],
              hstar=None) -> 'NonConvex':
        """Create from {edge index: (kind, data)} notch specifications."""
        notches: List[Optional[NotchProfile]] = [None] * hull.edge_count
        for edge, (kind, data) in notch_specs.items():
            if not 0 <= edge < hull.edge_count:
                raise ValueError(f"Notch edge index {edge} out of range for a {hull.edge_count}-gon")
            notches[edge] = NotchProfile(kind, data, float(hull.lengths[edge]))
        return cls(hull, tuple(notches), hstar)

    def depth(self, edge: int, s: float) -> float:
        notch = self.notches[edge]
        return 0.0 if notch is None else notch.depth(s)

    def slopes(self, edge: int, s: float) -> List[float]:
        notch = self.notches[edge]
        return [0.0] if notch is None else notch.slopes(s)

    def boundary_points(self, count: int) -> np.ndarray:
        hull = self.hull
        perimeter = float(hull.lengths.sum())
        offsets = np.concatenate([[0.0], np.cumsum(hull.lengths)])
        points = []
        for arc in np.linspace(0.0, perimeter, count, endpoint=False):
            e = min(int(np.searchsorted(offsets, arc, side='right') - 1), hull.edge_count - 1)
            s = float(arc - offsets[e])
            y = hull.vertices[e] + s * hull.tangents[e]
            points.append(y - self.depth(e, s) * hull.normals[e])
        return np.asarray(points)


Shape = Union[ConvexPolygon, BoundaryProfile, NonConvex]


def _shape_kind(shape: Shape) -> str:
    if isinstance(shape, ConvexPolygon):
        return 'convex_polygon'
    if isinstance(shape, BoundaryProfile):
        return 'boundary'
    if isinstance(shape, NonConvex):
        return 'nonconvex'
    raise ValueError(f"Unsupported obstacle shape {type(shape).__name__}")


@dataclass(frozen=True, eq=False)
class Obstacle:
    """
    One obstacle of the planning problem.

    ``poses[q-1]`` places the obstacle at step q; a single pose means static.
    The margin is subtracted from the safety value.
    """
    shape: Shape
    poses: Tuple[Isometry2, ...] = (Isometry2(),)
    margin: float = 0.0
    name: str = ''

    def __post_init__(self):
        _shape_kind(self.shape)
        poses = tuple(self.poses)
        if not poses:
            raise ValueError("Obstacle needs at least one pose")
        if not all(isinstance(p, Isometry2) for p in poses):
            raise ValueError("Obstacle poses must be Isometry2 values")
        if not (self.margin >= 0.0 and math.isfinite(self.margin)):
            raise ValueError(f"Obstacle margin must be a nonnegative real, got {self.margin}")
        object.__setattr__(self, 'poses', poses)

    @property
    def kind(self) -> str:
        return _shape_kind(self.shape)

    @property
    def is_static(self) -> bool:
        return all(p == self.poses[0] for p in self.poses)

    def for_horizon(self, h: int) -> 'Obstacle':
        """Resample the pose list to length h by nearest normalized time."""
        if h < 1:
            raise ValueError(f"Horizon must be >= 1, got {h}")
        count = len(self.poses)
        if count == h:
            return self
        if self.is_static:
            return replace(self, poses=(self.poses[0],) * h)
        if h == 1:
            indices = [0]
        else:
            indices = [int(round(k * (count - 1) / (h - 1))) for k in range(h)]
        return replace(self, poses=tuple(self.poses[i] for i in indices))

    def with_margin(self, margin: float) -> 'Obstacle':
        return replace(self, margin=float(margin))

    def placement(self, q: int) -> Isometry2:
        """Body-to-world placement at step q (1-based)."""
        if not 1 <= q <= len(self.poses):
            raise ValueError(f"Step q={q} outside 1..{len(self.poses)} for obstacle '{self.name}'")
        pose = self.poses[q - 1]
        if isinstance(self.shape, BoundaryProfile) and not self.shape.orientation.is_identity:
            return pose.compose(self.shape.orientation)
        return pose

    def outline(self, q: int = 1, count: int = 256) -> BaseGeometry:
        """World-frame obstacle boundary at step q as a shapely ring or line."""
        place = self.placement(q)
        body = self.shape.boundary_points(count)
        world = body @ place.rotation_matrix.T + np.asarray(place.translation)
        if isinstance(self.shape, BoundaryProfile):
            return polyline_from_points(world)
        return ring_from_points(world)
