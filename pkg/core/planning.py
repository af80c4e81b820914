"""
Trajectory planning model.

Defines the trajectory decision variable, the finite-difference operators, the
quadratic cost J(x) = w1 |x - x^r|_Q^2 + w2 |x|_S^2 and the planning problem
tying the cost to the obstacle list.

Functions:
    build_difference_matrices: Velocity and acceleration operators V and A
    initial_reference: Straight-line trajectory between start and goal
    cost_eval / cost_grad / cost_hess: Cost on the free waypoints
    feasibility_error: Largest constraint violation of a trajectory
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from safety_index.evaluation import apply_pose
from safety_index.obstacles import Obstacle
from safety_index.primitives import ArrayLike2, SafetyEval, as_vec
from utils.errors import DimensionMismatch

DIM = 2


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Free waypoints x_1..x_h between a fixed start x_0 and goal G.

    The full vector is ordered [x_0, x_1, ..., x_h, G] and has 2(h+2) entries.
    """
    waypoints: np.ndarray
    start: np.ndarray
    goal: np.ndarray
    ts: float

    def __post_init__(self):
        wps = np.array(self.waypoints, dtype=float).reshape(-1, DIM)
        if wps.shape[0] < 1:
            raise ValueError("Trajectory needs at least one free waypoint (h >= 1)")
        if not self.ts > 0.0:
            raise ValueError(f"Sampling time must be positive, got {self.ts}")
        object.__setattr__(self, 'waypoints', wps)
        object.__setattr__(self, 'start', as_vec(self.start))
        object.__setattr__(self, 'goal', as_vec(self.goal))

    @property
    def h(self) -> int:
        return self.waypoints.shape[0]

    def free_vector(self) -> np.ndarray:
        return self.waypoints.reshape(-1).copy()

    def full_vector(self) -> np.ndarray:
        return np.concatenate([self.start, self.waypoints.reshape(-1), self.goal])

    def with_free(self, x: np.ndarray) -> 'Trajectory':
        x = np.asarray(x, dtype=float)
        if x.size != DIM * self.h:
            raise DimensionMismatch(f"Expected {DIM * self.h} free entries, got {x.size}")
        return replace(self, waypoints=x.reshape(-1, DIM))


def build_difference_matrices(h: int, ts: float) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """
    First- and second-difference operators on the full trajectory vector.

    Parameters:
    -----------
    h : int
        Number of free waypoints (>= 1)
    ts : float
        Sampling time (> 0)

    Returns:
    --------
    Tuple[sp.csr_matrix, sp.csr_matrix]
        V of shape 2(h+1) x 2(h+2) with blocks (I, -I) / ts, and A of shape
        2h x 2(h+2) with blocks (I, -2I, I) / ts^2

    Example:
        >>> V, A = build_difference_matrices(1, 1.0)
        >>> A @ np.array([0, 0, 1, 0, 2, 0])
        array([0., 0.])
    """
    if h < 1:
        raise ValueError(f"Horizon must be >= 1, got {h}")
    if not ts > 0.0:
        raise ValueError(f"Sampling time must be positive, got {ts}")
    eye = sp.identity(DIM, format='csr')
    first = sp.diags([1.0, -1.0], [0, 1], shape=(h + 1, h + 2))
    second = sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(h, h + 2))
    V = sp.kron(first, eye, format='csr') / ts
    A = sp.kron(second, eye, format='csr') / ts ** 2
    return V, A


@dataclass(frozen=True)
class CostWeights:
    """Weights of J: w1, w2 and the Q_i / S_i mixing coefficients."""
    w1: float = 1.0
    w2: float = 1.0
    cq: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    cs: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    horizon_scaled: bool = True

    def __post_init__(self):
        object.__setattr__(self, 'cq', tuple(float(c) for c in self.cq))
        object.__setattr__(self, 'cs', tuple(float(c) for c in self.cs))
        if len(self.cq) != 3 or len(self.cs) != 3:
            raise ValueError(f"cq and cs need 3 entries each, got {len(self.cq)} and {len(self.cs)}")
        if min(self.cq + self.cs) < 0.0:
            raise ValueError(f"Cost coefficients must be nonnegative, got cq={self.cq}, cs={self.cs}")
        if self.w1 < 0.0 or self.w2 < 0.0:
            raise ValueError(f"Cost weights must be nonnegative, got w1={self.w1}, w2={self.w2}")


def _upper_banded(matrix: sp.spmatrix, bandwidth: int) -> np.ndarray:
    """Upper LAPACK band storage ab[u + i - j, j] = M[i, j] for i <= j."""
    coo = sp.triu(matrix, format='coo')
    n = matrix.shape[0]
    ab = np.zeros((bandwidth + 1, n))
    np.add.at(ab, (bandwidth + coo.row - coo.col, coo.col), coo.data)
    return ab


@dataclass(frozen=True, eq=False)
class ReducedCost:
    """J restricted to the free variables: 1/2 x'Hx + f'x + c."""
    hessian: np.ndarray
    banded: np.ndarray
    bandwidth: int
    linear: np.ndarray
    constant: float


@dataclass(frozen=True, eq=False)
class CostModel:
    """
    Quadratic cost J(x) = w1 |x - x^r|_Q^2 + w2 |x|_S^2 on the full vector.

    Q = sum cq_i Q_i and S = sum cs_i Q_i with Q_1 = I, Q_2 = V'V and
    Q_3 = A'A; S is scaled by 1/h when ``weights.horizon_scaled``.
    """
    h: int
    ts: float
    weights: CostWeights
    reference: np.ndarray
    Q: sp.csr_matrix = field(repr=False)
    S: sp.csr_matrix = field(repr=False)
    reduced: ReducedCost = field(repr=False)

    @classmethod
    def build(cls, h: int, ts: float, weights: CostWeights, reference: Union[np.ndarray, Trajectory]) -> 'CostModel':
        """Assemble Q, S and the reduced quadratic for horizon h."""
        ref = reference.full_vector() if isinstance(reference, Trajectory) else np.asarray(reference, dtype=float)
        size = DIM * (h + 2)
        if ref.size != size:
            raise DimensionMismatch(f"Reference needs {size} entries for h={h}, got {ref.size}")

        V, A = build_difference_matrices(h, ts)
        basis = (sp.identity(size, format='csr'), (V.T @ V).tocsr(), (A.T @ A).tocsr())
        Q = sum(c * m for c, m in zip(weights.cq, basis))
        S = sum(c * m for c, m in zip(weights.cs, basis))
        if weights.horizon_scaled:
            S = S / h
        Q = sp.csr_matrix(Q, shape=(size, size))
        S = sp.csr_matrix(S, shape=(size, size))

        P = (2.0 * (weights.w1 * Q + weights.w2 * S)).tocsr()
        free = slice(DIM, DIM * (h + 1))
        ends = np.r_[0:DIM, DIM * (h + 1):size]
        x_ends = ref[ends]
        Qr = Q @ ref

        H = P[free, free]
        f = P[free][:, ends] @ x_ends - 2.0 * weights.w1 * Qr[free]
        c = 0.5 * x_ends @ (P[ends][:, ends] @ x_ends) - 2.0 * weights.w1 * Qr[ends] @ x_ends \
            + weights.w1 * ref @ Qr

        bandwidth = max(1, 2 * DIM)
        reduced = ReducedCost(
            hessian=H.toarray(),
            banded=_upper_banded(H, bandwidth),
            bandwidth=bandwidth,
            linear=np.asarray(f, dtype=float).reshape(-1),
            constant=float(c),
        )
        return cls(h, ts, weights, ref, Q, S, reduced)

    @property
    def n(self) -> int:
        return DIM * self.h

    def full(self, x: np.ndarray) -> np.ndarray:
        """Insert free values into the reference endpoints."""
        x = self._check(x)
        out = self.reference.copy()
        out[DIM:DIM * (self.h + 1)] = x
        return out

    def _check(self, x) -> np.ndarray:
        if isinstance(x, Trajectory):
            x = x.free_vector()
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n:
            raise DimensionMismatch(f"Cost model has {self.n} free entries, got {x.size}")
        return x


def cost_eval(model: CostModel, x: Union[Trajectory, np.ndarray]) -> float:
    """J at a trajectory (or free vector), evaluated on the full vector."""
    full = model.full(model._check(x))
    diff = full - model.reference
    w = model.weights
    return float(w.w1 * diff @ (model.Q @ diff) + w.w2 * full @ (model.S @ full))


def cost_grad(model: CostModel, x: Union[Trajectory, np.ndarray]) -> np.ndarray:
    """Gradient of J with respect to the free waypoints."""
    x = model._check(x)
    return model.reduced.hessian @ x + model.reduced.linear


def cost_hess(model: CostModel) -> np.ndarray:
    """Hessian of J with respect to the free waypoints (dense)."""
    return model.reduced.hessian


def initial_reference(x0: ArrayLike2, goal: ArrayLike2, h: int) -> Trajectory:
    """
    Straight line from x0 to G with equally spaced waypoints.

    Waypoint q sits at x0 + q (G - x0) / (h + 1) and ts = 1 / (h + 1).
    """
    if h < 1:
        raise ValueError(f"Horizon must be >= 1, got {h}")
    start, end = as_vec(x0), as_vec(goal)
    fractions = np.arange(1, h + 1) / (h + 1)
    waypoints = start + fractions[:, None] * (end - start)
    return Trajectory(waypoints, start, end, 1.0 / (h + 1))


@dataclass(frozen=True, eq=False)
class TrajectoryProblem:
    """Cost, obstacles (poses resampled to h) and safety margin."""
    cost: CostModel
    obstacles: Tuple[Obstacle, ...]
    margin: float = 0.0

    def __post_init__(self):
        obstacles = tuple(self.obstacles)
        for ob in obstacles:
            if len(ob.poses) != self.h:
                raise ValueError(
                    f"Obstacle '{ob.name}' has {len(ob.poses)} poses, horizon is {self.h}; "
                    "use TrajectoryProblem.from_obstacles to resample"
                )
        object.__setattr__(self, 'obstacles', obstacles)

    @classmethod
    def from_obstacles(cls, cost: CostModel, obstacles: Sequence[Obstacle],
                       margin: Optional[float] = None) -> 'TrajectoryProblem':
        """Resample poses to the cost horizon and apply a common margin."""
        placed = []
        for ob in obstacles:
            ob = ob.for_horizon(cost.h)
            if margin is not None:
                ob = ob.with_margin(margin)
            placed.append(ob)
        return cls(cost, tuple(placed), 0.0 if margin is None else float(margin))

    @property
    def h(self) -> int:
        return self.cost.h

    def evaluate(self, j: int, q: int, x_q: np.ndarray) -> SafetyEval:
        return apply_pose(self.obstacles[j], q, x_q)


def feasibility_error(problem: TrajectoryProblem, x: Union[Trajectory, np.ndarray]) -> float:
    """
    max over (j, q) of max(0, -phi_{j,q}(x)), margins included.

    Returns 0.0 for an obstacle-free problem.
    """
    x = problem.cost._check(x).reshape(-1, DIM)
    worst = 0.0
    for q in range(1, problem.h + 1):
        for j in range(len(problem.obstacles)):
            worst = max(worst, -problem.evaluate(j, q, x[q - 1]).value)
    return float(worst)
