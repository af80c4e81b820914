"""
Log-barrier interior-point solver for the convex sub-problem.

The sub-problem minimizes a strictly convex quadratic 1/2 x'Hx + f'x + c over
the intersection of per-waypoint constraint slices

    a.x_q + b >= 1/2 (x_q - r)' Hq (x_q - r)

with Hq omitted for linear slices. The only coupling across waypoints is the
band of H, so every Newton system is solved with a banded Cholesky factor.

Functions:
    phase_one: Strictly feasible start point
    solve: Barrier path following to the constrained minimizer
    kkt_residual: Stationarity + complementarity + primal violation
"""

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

from core.planning import CostModel
from utils.errors import DimensionMismatch, Infeasible, NumericalFailure
from utils.logger import get_logger

logger = get_logger(__name__)

DIM = 2
CENTERING_TOL = 1e-18
QUADRATIC_REGION = 0.25
STEP_FLOOR = 1e-14
PHASE_ONE_PROX = 1e-6
PHASE_ONE_GAP = 1e-10
PHASE_ONE_INFEASIBLE = -1e-8
FEASIBLE_SLACK = 1e-8


@dataclass(frozen=True, eq=False)
class ConstraintSlice:
    """
    Constraint a.x_q + b >= 1/2 (x_q - r)' Hq (x_q - r) on waypoint q (1-based).

    ``hq`` is None for a linear slice; ``reference`` is r.
    """
    q: int
    a: np.ndarray
    b: float
    hq: Optional[np.ndarray] = None
    reference: np.ndarray = field(default_factory=lambda: np.zeros(DIM))

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"Slice waypoint index must be >= 1, got {self.q}")
        a = np.asarray(self.a, dtype=float).reshape(-1)
        if a.shape != (DIM,):
            raise DimensionMismatch(f"Slice coefficient must be a 2-vector, got shape {a.shape}")
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'b', float(self.b))
        object.__setattr__(self, 'reference', np.asarray(self.reference, dtype=float).reshape(DIM))
        if self.hq is not None:
            hq = np.asarray(self.hq, dtype=float)
            if hq.shape != (DIM, DIM) or not np.allclose(hq, hq.T, atol=1e-12):
                raise ValueError(f"Slice matrix must be symmetric 2x2, got {hq.tolist()}")
            if np.min(np.linalg.eigvalsh(hq)) < -1e-12:
                raise ValueError("Slice matrix must be positive semidefinite")
            object.__setattr__(self, 'hq', None if not np.any(hq) else hq)

    @property
    def is_linear(self) -> bool:
        return self.hq is None

    def slack(self, x_q: np.ndarray) -> float:
        value = float(self.a @ x_q + self.b)
        if self.hq is not None:
            d = x_q - self.reference
            value -= 0.5 * float(d @ self.hq @ d)
        return value


class _SliceArrays:
    """Slices stacked into arrays for vectorized slack and derivative evaluation."""

    def __init__(self, slices: Sequence[ConstraintSlice], n: int):
        self.m = len(slices)
        self.block = np.array([s.q - 1 for s in slices], dtype=int)
        if self.m and (self.block.max() + 1) * DIM > n:
            raise DimensionMismatch(f"Slice on waypoint {self.block.max() + 1} exceeds {n // DIM} waypoints")
        self.A = np.array([s.a for s in slices]).reshape(-1, DIM)
        self.b = np.array([s.b for s in slices], dtype=float)
        self.H = np.array([s.hq if s.hq is not None else np.zeros((DIM, DIM)) for s in slices]).reshape(-1, DIM, DIM)
        self.R = np.array([s.reference for s in slices]).reshape(-1, DIM)

    def blocks(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(-1, DIM)[self.block]

    def slacks(self, x: np.ndarray) -> np.ndarray:
        xb = self.blocks(x)
        d = xb - self.R
        return np.einsum('ij,ij->i', self.A, xb) + self.b - 0.5 * np.einsum('ij,ijk,ik->i', d, self.H, d)

    def gradients(self, x: np.ndarray) -> np.ndarray:
        d = self.blocks(x) - self.R
        return self.A - np.einsum('ijk,ik->ij', self.H, d)

    def scatter(self, per_slice: np.ndarray, n: int) -> np.ndarray:
        """Sum per-slice 2-vectors into an n-vector."""
        out = np.zeros((n // DIM, DIM))
        np.add.at(out, self.block, per_slice)
        return out.reshape(-1)


@dataclass(frozen=True, eq=False)
class Subproblem:
    """Convex QP/QCQP: minimize 1/2 x'Hx + f'x + c subject to the slices."""
    hessian: np.ndarray
    linear: np.ndarray
    constant: float = 0.0
    slices: Tuple[ConstraintSlice, ...] = ()
    banded: Optional[np.ndarray] = field(default=None, repr=False)
    bandwidth: int = 1

    def __post_init__(self):
        H = np.asarray(self.hessian, dtype=float)
        f = np.asarray(self.linear, dtype=float).reshape(-1)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] != f.size or f.size % DIM:
            raise DimensionMismatch(f"Hessian {H.shape} and linear term {f.shape} do not form a 2h-dimensional QP")
        object.__setattr__(self, 'hessian', H)
        object.__setattr__(self, 'linear', f)
        object.__setattr__(self, 'slices', tuple(self.slices))
        if self.banded is None:
            rows, cols = np.nonzero(H)
            width = max(1, int(np.max(np.abs(rows - cols))) if rows.size else 1)
            ab = np.zeros((width + 1, f.size))
            for k in range(width + 1):
                ab[width - k, k:] = np.diagonal(H, offset=k)
            object.__setattr__(self, 'banded', ab)
            object.__setattr__(self, 'bandwidth', width)
        object.__setattr__(self, '_arrays', _SliceArrays(self.slices, f.size))

    @classmethod
    def from_cost(cls, model: CostModel, slices: Sequence[ConstraintSlice] = ()) -> 'Subproblem':
        red = model.reduced
        return cls(red.hessian, red.linear, red.constant, tuple(slices), red.banded, red.bandwidth)

    @property
    def n(self) -> int:
        return self.linear.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.hessian @ x) + self.linear @ x + self.constant)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.hessian @ x + self.linear

    def slacks(self, x: np.ndarray) -> np.ndarray:
        return self._arrays.slacks(np.asarray(x, dtype=float))

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n:
            raise DimensionMismatch(f"Sub-problem has {self.n} variables, got {x.size}")
        return x


@dataclass(frozen=True)
class BarrierSettings:
    """Parameters of the barrier method and its phase one."""
    mu0: float = 1.0
    mu_reduction: float = 0.2
    alpha: float = 0.25
    beta: float = 0.5
    gap_tol: float = 1e-9
    max_newton_steps: int = 50
    phase_one_slack: float = 1e-6

    def __post_init__(self):
        if not self.mu0 > 0.0:
            raise ValueError(f"mu0 must be positive, got {self.mu0}")
        if not 0.0 < self.mu_reduction < 1.0:
            raise ValueError(f"mu_reduction must lie in (0, 1), got {self.mu_reduction}")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.gap_tol > 0.0:
            raise ValueError(f"gap_tol must be positive, got {self.gap_tol}")

    @classmethod
    def from_settings(cls, settings: dict) -> 'BarrierSettings':
        known = {k: settings[k] for k in cls.__dataclass_fields__ if k in settings and settings[k] is not None}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class SubSolution:
    """Primal solution, multipliers and solver statistics."""
    x: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    newton_steps: int
    duality_gap: float
    objective: float


def _newton_centering(x: np.ndarray, change: Callable[[np.ndarray, np.ndarray, float], float],
                      newton: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
                      feasible: Callable[[np.ndarray], bool], settings: BarrierSettings,
                      stop: Optional[Callable[[np.ndarray], bool]] = None) -> Tuple[np.ndarray, int]:
    """
    Damped Newton on a self-concordant barrier function.

    ``change(x, dx, step)`` returns the barrier increase along the step,
    computed incrementally so large barrier weights keep their precision.
    Inside the quadratic region (decrement below 1/4) full steps are taken,
    limited only by strict feasibility; outside it Armijo backtracking applies.
    Centering also ends when a quadratic-region step stops shrinking the
    decrement, which is the rounding floor at large barrier weights.
    """
    steps = 0
    previous = np.inf
    for _ in range(settings.max_newton_steps):
        if stop is not None and stop(x):
            break
        grad, dx = newton(x)
        decrement = float(-grad @ dx)
        if decrement / 2.0 <= CENTERING_TOL:
            break
        if decrement < QUADRATIC_REGION ** 2 and decrement >= previous:
            break
        previous = decrement
        step = 1.0
        while not feasible(x + step * dx):
            step *= settings.beta
            if step < STEP_FLOOR:
                raise NumericalFailure("Backtracking could not keep the iterate strictly feasible")
        if np.sqrt(decrement) >= QUADRATIC_REGION:
            while change(x, dx, step) > -settings.alpha * step * decrement:
                step *= settings.beta
                if step < STEP_FLOOR:
                    raise NumericalFailure(
                        f"Newton step failed to reduce the barrier objective (decrement {decrement:.3e})"
                    )
        x = x + step * dx
        steps += 1
    return x, steps


def _log_ratio_sum(before: np.ndarray, after: np.ndarray) -> float:
    """sum(log(after / before)) for positive arrays, or -inf if any entry left the domain."""
    if np.min(after) <= 0.0:
        return -np.inf
    return float(np.sum(np.log1p((after - before) / before)))


def solve(sub: Subproblem, start: np.ndarray, settings: Optional[BarrierSettings] = None) -> SubSolution:
    """
    Minimize the sub-problem by log-barrier path following.

    Parameters:
    -----------
    sub : Subproblem
        QP/QCQP with banded Hessian
    start : np.ndarray
        Strictly feasible point (all slacks > 0)
    settings : Optional[BarrierSettings]
        Barrier parameters (defaults: mu0 1, reduction 0.2, alpha 0.25, beta 0.5)

    Returns:
    --------
    SubSolution
        Stops once m * mu <= gap_tol * (1 + |J|)

    Raises:
    -------
    NumericalFailure
        If a Newton step cannot make progress
    """
    settings = settings or BarrierSettings()
    x = sub.check_point(start).copy()
    arrays: _SliceArrays = sub._arrays
    m, n, u = arrays.m, sub.n, sub.bandwidth

    if m == 0:
        x = _banded_solve(sub.banded.copy(), -sub.linear, u)
        sol = SubSolution(x, np.zeros(0), 0.0, 1, 1, 0.0, sub.objective(x))
        return _with_residual(sub, sol)

    if np.min(arrays.slacks(x)) <= 0.0:
        raise ValueError("solve() needs a strictly feasible start; run phase_one first")

    mu = settings.mu0
    total_steps = 0
    outer = 0

    while True:
        t = 1.0 / mu

        def change(z: np.ndarray, dz: np.ndarray, step: float) -> float:
            logs = _log_ratio_sum(arrays.slacks(z), arrays.slacks(z + step * dz))
            if not np.isfinite(logs):
                return np.inf
            dj = step * float(sub.gradient(z) @ dz) + 0.5 * step ** 2 * float(dz @ (sub.hessian @ dz))
            return t * dj - logs

        def newton(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            s = arrays.slacks(z)
            gs = arrays.gradients(z)
            grad = t * sub.gradient(z) - arrays.scatter(gs / s[:, None], n)
            ab = t * sub.banded
            blocks = np.einsum('ij,ik->ijk', gs, gs) / (s ** 2)[:, None, None] + arrays.H / s[:, None, None]
            _add_blocks(ab, arrays.block, blocks, u)
            return grad, _banded_solve(ab, -grad, u)

        x, steps = _newton_centering(
            x, change, newton, lambda z: np.min(arrays.slacks(z)) > 0.0, settings
        )
        total_steps += steps
        outer += 1
        gap = m * mu
        objective = sub.objective(x)
        if gap <= settings.gap_tol * (1.0 + abs(objective)):
            break
        mu *= settings.mu_reduction

    multipliers = _refine_multipliers(sub, x, mu / arrays.slacks(x))
    sol = SubSolution(x, multipliers, 0.0, outer, total_steps, m * mu, sub.objective(x))
    return _with_residual(sub, sol)


def _refine_multipliers(sub: Subproblem, x: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """
    Least-squares multipliers on the active slices of each waypoint.

    Near the end of the path an active slack is a few ulps of x_q, so mu / s
    only carries about seven digits. Per waypoint the stationarity equation
    is re-solved for the slices with lambda > s, and the result is kept when
    it is nonnegative and leaves a smaller block residual.
    """
    arrays: _SliceArrays = sub._arrays
    s = arrays.slacks(x)
    gs = arrays.gradients(x)
    grad = sub.gradient(x).reshape(-1, DIM)
    lam = estimate.copy()
    for q in np.unique(arrays.block):
        members = np.flatnonzero(arrays.block == q)
        active = members[estimate[members] > s[members]]
        if active.size == 0:
            continue
        inactive = np.setdiff1d(members, active)
        target = grad[q] - estimate[inactive] @ gs[inactive]
        solved, *_ = np.linalg.lstsq(gs[active].T, target, rcond=None)
        if np.min(solved) < 0.0:
            continue
        before = np.max(np.abs(target - estimate[active] @ gs[active]))
        after = np.max(np.abs(target - solved @ gs[active]))
        if after < before:
            lam[active] = solved
    return lam


def _add_blocks(ab: np.ndarray, block: np.ndarray, blocks: np.ndarray, u: int) -> None:
    """Add per-waypoint 2x2 blocks onto upper band storage in place."""
    first = DIM * block
    np.add.at(ab[u], first, blocks[:, 0, 0])
    np.add.at(ab[u], first + 1, blocks[:, 1, 1])
    np.add.at(ab[u - 1], first + 1, blocks[:, 0, 1])


def _banded_solve(ab: np.ndarray, rhs: np.ndarray, u: int) -> np.ndarray:
    try:
        factor = cholesky_banded(ab, lower=False)
    except LinAlgError as e:
        raise NumericalFailure(f"Newton system is not positive definite: {e}") from e
    return cho_solve_banded((factor, False), rhs)


def _with_residual(sub: Subproblem, sol: SubSolution) -> SubSolution:
    return SubSolution(sol.x, sol.multipliers, kkt_residual(sub, sol), sol.iterations,
                       sol.newton_steps, sol.duality_gap, sol.objective)


def kkt_residual(sub: Subproblem, sol: SubSolution) -> float:
    """
    ||grad J - sum lambda_i grad s_i||_inf + ||lambda_i s_i||_inf + ||max(0, -s)||_inf.

    Slices are written s_i(x) >= 0, so stationarity reads
    grad J(x) = sum lambda_i grad s_i(x) with lambda_i >= 0.
    """
    x = sub.check_point(sol.x)
    arrays: _SliceArrays = sub._arrays
    grad = sub.gradient(x)
    if arrays.m == 0:
        return float(np.max(np.abs(grad))) if grad.size else 0.0
    lam = np.asarray(sol.multipliers, dtype=float)
    s = arrays.slacks(x)
    stationarity = grad - arrays.scatter(lam[:, None] * arrays.gradients(x), sub.n)
    return float(
        np.max(np.abs(stationarity))
        + np.max(np.abs(lam * s))
        + np.max(np.maximum(0.0, -s))
    )


def _phase_one_block(slices: List[ConstraintSlice], hint: np.ndarray,
                     settings: BarrierSettings) -> np.ndarray:
    """
    Maximize the smallest slack of one waypoint's slices.

    Variables z = (x_q, sigma); minimize sigma + prox |x_q - hint|^2 / 2
    subject to s_i(x_q) + sigma > 0 and sigma > -1, stopping as soon as every
    slack reaches phase_one_slack.
    """
    arrays = _SliceArrays([replace(s, q=1) for s in slices], DIM)

    def slacks_at(xq: np.ndarray) -> np.ndarray:
        return arrays.slacks(xq)

    target = settings.phase_one_slack
    sigma0 = max(1.0 - float(np.min(slacks_at(hint))), 0.0)
    z = np.concatenate([hint, [sigma0]])
    mu = settings.mu0
    m = arrays.m + 1

    def constraint_values(w: np.ndarray) -> np.ndarray:
        return np.concatenate([slacks_at(w[:DIM]) + w[DIM], [w[DIM] + 1.0]])

    def feasible(w: np.ndarray) -> bool:
        return bool(np.min(constraint_values(w)) > 0.0)

    def done(w: np.ndarray) -> bool:
        return bool(np.min(slacks_at(w[:DIM])) >= target)

    while True:
        t = 1.0 / mu

        def change(w: np.ndarray, dw: np.ndarray, step: float) -> float:
            logs = _log_ratio_sum(constraint_values(w), constraint_values(w + step * dw))
            if not np.isfinite(logs):
                return np.inf
            dx = step * dw[:DIM]
            dobj = step * dw[DIM] + PHASE_ONE_PROX * float(dx @ (w[:DIM] - hint) + 0.5 * dx @ dx)
            return t * dobj - logs

        def newton(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            xq = w[:DIM]
            vals = constraint_values(w)
            gs = arrays.gradients(xq)
            jac = np.zeros((m, DIM + 1))
            jac[:-1, :DIM] = gs
            jac[:-1, DIM] = 1.0
            jac[-1, DIM] = 1.0
            grad = t * np.concatenate([PHASE_ONE_PROX * (xq - hint), [1.0]]) - jac.T @ (1.0 / vals)
            hess = jac.T @ (jac / (vals ** 2)[:, None])
            hess[:DIM, :DIM] += t * PHASE_ONE_PROX * np.eye(DIM)
            hess[:DIM, :DIM] += np.einsum('ijk,i->jk', arrays.H, 1.0 / vals[:-1])
            try:
                dz = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError as e:
                raise NumericalFailure(f"Phase-one Newton system is singular: {e}") from e
            return grad, dz

        z, _ = _newton_centering(z, change, newton, feasible, settings, stop=done)
        if done(z):
            return z[:DIM]
        if m * mu <= PHASE_ONE_GAP:
            break
        mu *= settings.mu_reduction

    sigma = float(z[DIM])
    if sigma > PHASE_ONE_INFEASIBLE:
        raise Infeasible(
            f"Convex feasible set at waypoint {slices[0].q} has empty interior "
            f"(best max violation {sigma:.3e})",
            max_violation=sigma,
        )
    return z[:DIM]


def phase_one(sub: Subproblem, hint: np.ndarray, settings: Optional[BarrierSettings] = None) -> np.ndarray:
    """
    Find a strictly feasible point of the sub-problem, starting from hint.

    Slices only touch their own waypoint, so each waypoint is handled
    separately; waypoints whose slacks are already >= 1e-8 keep the hint.

    Raises:
    -------
    Infeasible
        If some waypoint's slices have empty interior
    """
    settings = settings or BarrierSettings()
    x = sub.check_point(hint).copy()
    arrays: _SliceArrays = sub._arrays
    if arrays.m == 0:
        return x
    slacks = arrays.slacks(x)
    if np.min(slacks) >= FEASIBLE_SLACK:
        return x

    by_block: dict = {}
    for i, s in enumerate(sub.slices):
        by_block.setdefault(s.q, []).append((i, s))

    pushed = 0
    for q, members in by_block.items():
        idx = [i for i, _ in members]
        if np.min(slacks[idx]) >= FEASIBLE_SLACK:
            continue
        block = slice(DIM * (q - 1), DIM * q)
        x[block] = _phase_one_block([s for _, s in members], x[block], settings)
        pushed += 1
    logger.debug(f"Phase one moved {pushed} waypoint(s) into the interior")
    return x
