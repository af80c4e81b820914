"""Tests for convex feasible set construction and the CFS iteration."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.cfs import (
    CaseTag, CfsConfig, IterateRecord, Termination, build_cfs, cfs_solve, check_termination,
    classify_case, kkt_certificate, lift_constraint, sample_inclusion_violations,
    strong_convexity, strong_optimality_margin,
)
from core.planning import cost_eval, cost_grad, feasibility_error
from core.subsolver import Subproblem, phase_one
from safety_index import BoundaryProfile, Obstacle
from utils.errors import Infeasible

from conftest import box, make_problem

SQRT_HALF = math.sqrt(0.5)


def single_waypoint(obstacle, point):
    problem, _ = make_problem([obstacle], h=1)
    return problem, np.asarray(point, dtype=float)


class TestLiftConstraint:
    def test_square_corner_region(self, square):
        problem, xr = single_waypoint(Obstacle(square), (-1.5, -1.5))
        piece, tag = lift_constraint(problem, 0, 1, xr)
        assert tag is CaseTag.LINEARIZED
        assert piece.is_linear
        assert_allclose(piece.a, [-SQRT_HALF, -SQRT_HALF], atol=1e-12)
        assert piece.b == pytest.approx(-math.sqrt(2.0))
        for p in ([0.0, 0.0], [-3.0, 1.0], [2.0, -5.0]):
            expected = SQRT_HALF * (-p[0] - p[1] - 2.0)
            assert piece.slack(np.array(p)) == pytest.approx(expected, abs=1e-12)

    def test_notched_square_on_removed_edge(self, notched_square, rng):
        problem, xr = single_waypoint(Obstacle(notched_square), (0.0, -1.0))
        piece, tag = lift_constraint(problem, 0, 1, xr)
        assert tag is CaseTag.QUADRATIC_BOUNDED
        assert_allclose(piece.hq, [[2.0, 0.0], [0.0, 0.0]])
        for p in rng.uniform(-3.0, 3.0, size=(20, 2)):
            assert piece.slack(p) == pytest.approx(-p[1] - p[0] ** 2, abs=1e-10)

    def test_affine_boundary_is_its_own_slice(self, rng):
        ceiling = Obstacle(BoundaryProfile.piecewise_linear([[-20.0, 0.5], [20.0, 0.5]]))
        problem, xr = single_waypoint(ceiling, (3.0, -2.0))
        piece, tag = lift_constraint(problem, 0, 1, xr)
        assert tag is CaseTag.SELF
        for p in rng.uniform(-5.0, 5.0, size=(20, 2)):
            assert piece.slack(p) == pytest.approx(problem.evaluate(0, 1, p).value, abs=1e-12)

    def test_classify_case(self, square, notched_square, abs_profile, parabola_profile):
        assert classify_case(Obstacle(square)) is CaseTag.LINEARIZED
        assert classify_case(Obstacle(notched_square)) is CaseTag.QUADRATIC_BOUNDED
        assert classify_case(Obstacle(abs_profile)) is CaseTag.LINEARIZED
        assert classify_case(Obstacle(parabola_profile)) is CaseTag.LINEARIZED

    @pytest.mark.parametrize('coefficients, expected', [
        ([0.0, 0.0, 0.0, 0.0, 1.0], CaseTag.LINEARIZED),
        ([1.0, 0.0, 3.0, 0.0, 1.0], CaseTag.LINEARIZED),
        ([0.0, 0.0, -1.0], CaseTag.QUADRATIC_BOUNDED),
        ([0.0, 0.0, 1.0, 1.0], CaseTag.QUADRATIC_BOUNDED),
        ([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0], CaseTag.QUADRATIC_BOUNDED),
    ])
    def test_polynomial_profile_case(self, coefficients, expected):
        assert classify_case(Obstacle(BoundaryProfile.polynomial(coefficients))) is expected

    def test_convex_parabola_gets_a_linear_slice(self, parabola_profile, rng):
        problem, xr = single_waypoint(Obstacle(parabola_profile), (1.0, 0.0))
        piece, tag = lift_constraint(problem, 0, 1, xr)
        assert tag is CaseTag.LINEARIZED
        assert piece.hq is None
        for p in rng.uniform(-3.0, 3.0, size=(20, 2)):
            assert piece.slack(p) == pytest.approx(2.0 * p[0] - p[1] - 1.0, abs=1e-12)
            assert piece.slack(p) <= p[0] ** 2 - p[1] + 1e-12


class TestBuildCfs:
    def test_obstacle_free_has_no_slices(self):
        problem, ref = make_problem([], h=4)
        cfs = build_cfs(problem, ref)
        assert cfs.slices == ()
        assert cfs.contains(np.zeros(8))

    def test_one_slice_per_waypoint(self):
        problem, ref = make_problem([Obstacle(box(4.0, 5.0, -0.3, 0.7))], h=3)
        cfs = build_cfs(problem, ref)
        assert len(cfs.slices) == 3
        assert [s.q for s in cfs.slices] == [1, 2, 3]
        assert all(s.is_linear for s in cfs.slices)
        assert cfs.case_tags == (CaseTag.LINEARIZED,) * 3

    def test_feasible_reference_lies_in_its_set(self, scenario1_obstacles):
        problem, ref = make_problem(scenario1_obstacles, h=20, start=(0.0, 2.0), goal=(9.0, 2.0))
        assert feasibility_error(problem, ref) == 0.0
        cfs = build_cfs(problem, ref)
        assert np.min(cfs.slacks(ref.free_vector())) >= -1e-10
        sub = Subproblem.from_cost(problem.cost, cfs.slices)
        assert np.min(sub.slacks(phase_one(sub, ref.free_vector()))) >= 1e-8

    @pytest.mark.parametrize('kind', ['square', 'notched', 'abs', 'parabola'])
    def test_sampled_inclusion(self, kind, square, notched_square, abs_profile, parabola_profile, rng):
        shape = {'square': square, 'notched': notched_square,
                 'abs': abs_profile, 'parabola': parabola_profile}[kind]
        problem, _ = make_problem([Obstacle(shape)], h=4, start=(-3.0, -3.0), goal=(3.0, 3.0))
        x = rng.uniform(-2.5, 2.5, size=8)
        cfs = build_cfs(problem, x)
        assert sample_inclusion_violations(problem, cfs, samples=2000, seed=3) == []


class TestTermination:
    @staticmethod
    def record(k, x, cost, feas=0.0):
        return IterateRecord(k, np.asarray(x, dtype=float), cost, feas, 0.0, 0.0, 0.0)

    def test_identical_iterates_fire_step_tolerance(self):
        a = self.record(1, [1.0, 2.0], 5.0)
        check = check_termination(a, self.record(2, [1.0, 2.0], 5.0), CfsConfig())
        assert check.fired is Termination.STEP_TOL

    def test_large_drop_and_step_continue(self):
        config = CfsConfig(eps2=1e-3)
        check = check_termination(self.record(1, [0.0, 0.0], 1.0),
                                  self.record(2, [1.0, 0.0], 1.0 - 1e-2), config)
        assert check.fired is None
        assert check.cost_drop == pytest.approx(1e-2)

    def test_cost_tolerance_needs_feasible_previous_iterate(self):
        config = CfsConfig(eps2=1e-3)
        prev = self.record(0, [0.0, 0.0], 1.0, feas=0.5)
        nxt = self.record(1, [1.0, 0.0], 1.0)
        assert check_termination(prev, nxt, config).fired is None
        prev = self.record(1, [0.0, 0.0], 1.0)
        assert check_termination(prev, nxt, config).fired is Termination.COST_TOL

    def test_relative_default_cost_tolerance(self):
        assert CfsConfig().cost_tolerance(99.0) == pytest.approx(1e-2)
        assert CfsConfig(eps2=1e-6).cost_tolerance(99.0) == 1e-6

    @pytest.mark.parametrize('kwargs', [{'eps1': 0.0}, {'eps2': -1.0}, {'max_iter': 0},
                                        {'time_budget_ms': 0.0}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            CfsConfig(**kwargs)


class TestCfsSolve:
    def test_obstacle_free_single_iteration(self):
        problem, ref = make_problem([], h=10)
        report = cfs_solve(problem, ref)
        assert report.iterations == 1
        assert report.termination is Termination.STEP_TOL
        assert report.final_cost == pytest.approx(0.0, abs=1e-9)

    def test_single_square_invariants(self, single_square_problem):
        problem, ref = single_square_problem
        report = cfs_solve(problem, ref, CfsConfig(max_iter=50))
        assert report.termination in (Termination.STEP_TOL, Termination.COST_TOL)
        assert report.iterations < 50
        records = report.iterates
        assert records[0].feasibility_error > 0.0
        for record in records[1:]:
            assert record.feasibility_error <= 1e-12
        for prev, nxt in zip(records[1:], records[2:]):
            assert nxt.cost <= prev.cost + 1e-8 * (1.0 + abs(prev.cost))
            descent = cost_grad(problem.cost, nxt.x) @ (prev.x - nxt.x)
            assert descent >= -1e-8 * (1.0 + abs(prev.cost))
        assert report.final.h == 30

    def test_cost_tolerance_bounds_the_step(self, single_square_problem):
        problem, ref = single_square_problem
        report = cfs_solve(problem, ref, CfsConfig(eps1=1e-12, eps2=1e-3, max_iter=100))
        assert report.termination is Termination.COST_TOL
        prev, last = report.iterates[-2], report.iterates[-1]
        drop = max(prev.cost - last.cost, 0.0) + 1e-8 * (1.0 + abs(prev.cost))
        assert last.step_norm ** 2 <= 2.0 * drop / strong_convexity(problem) + 1e-12

    def test_callback_sees_every_iterate(self, single_square_problem):
        problem, ref = single_square_problem
        seen = []
        report = cfs_solve(problem, ref, on_iterate=seen.append)
        assert [r.k for r in seen] == list(range(report.iterations + 1))

    def test_time_budget(self, single_square_problem):
        problem, ref = single_square_problem
        report = cfs_solve(problem, ref, CfsConfig(time_budget_ms=1e-6))
        assert report.termination is Termination.TIME_BUDGET
        assert report.iterations == 1
        assert report.final_record.feasible

    def test_empty_first_set_raises(self, conflicting_walls):
        problem, ref = make_problem(conflicting_walls, h=5, start=(0.0, 0.5), goal=(9.0, 0.5))
        with pytest.raises(Infeasible):
            cfs_solve(problem, ref)

    def test_accepts_free_vector(self, single_square_problem):
        problem, ref = single_square_problem
        a = cfs_solve(problem, ref, CfsConfig(max_iter=3))
        b = cfs_solve(problem, ref.free_vector(), CfsConfig(max_iter=3))
        assert_allclose(a.final.waypoints, b.final.waypoints)


def test_disjoint_obstacles_give_nonempty_sets(scenario1_obstacles):
    rng = np.random.default_rng(5)
    problem, _ = make_problem(scenario1_obstacles, h=10)
    tried = 0
    while tried < 100:
        x = np.column_stack([rng.uniform(0.0, 9.0, 10), rng.uniform(-1.0, 1.5, 10)]).reshape(-1)
        if feasibility_error(problem, x) == 0.0:
            continue
        tried += 1
        sub = Subproblem.from_cost(problem.cost, build_cfs(problem, x).slices)
        assert np.min(sub.slacks(phase_one(sub, x))) >= 1e-8


class TestCertificate:
    def test_unconstrained_optimum(self):
        problem, ref = make_problem([], h=3)
        assert kkt_certificate(problem, ref.free_vector()) <= 1e-9

    def test_converged_and_perturbed(self):
        problem, ref = make_problem([Obstacle(box(2.5, 6.5, -0.3, 0.7))], h=8)
        report = cfs_solve(problem, ref, CfsConfig(eps1=1e-8, eps2=1e-14, max_iter=200))
        x = report.final.free_vector()
        assert kkt_certificate(problem, x) <= 1e-5
        moved = x.copy()
        moved[7] += 0.1
        assert kkt_certificate(problem, moved) > 1e-3


class TestStrongOptimalityMargin:
    def test_obstacle_free_optimum(self):
        problem, ref = make_problem([], h=4)
        assert strong_optimality_margin(problem, ref.free_vector()) == pytest.approx(0.0, abs=1e-9)

    def test_descent_available_away_from_optimum(self):
        problem, ref = make_problem([], h=4)
        x = ref.free_vector()
        x[3] += 0.5
        assert strong_optimality_margin(problem, x) < -1e-3

    def test_active_constraint_blocks_descent(self):
        wall = Obstacle(BoundaryProfile.piecewise_linear([[-20.0, -0.5], [20.0, -0.5]]))
        problem, _ = make_problem([wall], h=1, start=(0.0, 0.0), goal=(2.0, 0.0))
        x = np.array([1.0, -0.5])
        assert problem.evaluate(0, 1, x).value == 0.0
        assert strong_optimality_margin(problem, x) >= -1e-9
        assert strong_optimality_margin(problem, np.array([1.0, -0.8])) < -1e-3


def test_initial_cost_recorded(single_square_problem):
    problem, ref = single_square_problem
    report = cfs_solve(problem, ref, CfsConfig(max_iter=1))
    assert report.iterates[0].cost == pytest.approx(cost_eval(problem.cost, ref))
    assert report.termination in (Termination.MAX_ITER, Termination.STEP_TOL, Termination.COST_TOL)


@pytest.mark.bench
def test_three_obstacle_scenario_at_h100(scenario1_obstacles):
    problem, ref = make_problem(scenario1_obstacles, h=100, margin=0.25)
    report = cfs_solve(problem, ref)
    assert report.iterations <= 30
    for prev, nxt in zip(report.iterates[1:], report.iterates[2:]):
        assert nxt.cost <= prev.cost + 1e-8 * (1.0 + abs(prev.cost))


def _inclusion_case(kind, request):
    """Obstacles and the box the random references are drawn from."""
    if kind == 'convex':
        return request.getfixturevalue('scenario1_obstacles'), (0.0, -1.0), (9.0, 1.5)
    shapes = {
        'notched': lambda: request.getfixturevalue('notched_square'),
        'pwl': lambda: request.getfixturevalue('abs_profile'),
        'poly': lambda: request.getfixturevalue('parabola_profile'),
        'cubic': lambda: BoundaryProfile.polynomial([0.0, 0.0, 0.5, 0.1]),
    }
    return [Obstacle(shapes[kind]())], (-2.0, -2.0), (2.0, 2.0)


@pytest.mark.bench
@pytest.mark.parametrize('kind', ['convex', 'notched', 'pwl', 'poly', 'cubic'])
def test_inclusion_over_many_sets(kind, request):
    obstacles, low, high = _inclusion_case(kind, request)
    rng = np.random.default_rng(9)
    problem, _ = make_problem(obstacles, h=3, margin=0.25)
    for seed in range(50):
        x = rng.uniform(low, high, size=(3, 2)).reshape(-1)
        cfs = build_cfs(problem, x)
        assert sample_inclusion_violations(problem, cfs, samples=10_000, seed=seed) == []
