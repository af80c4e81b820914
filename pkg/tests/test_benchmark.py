"""Tests for scenario loading, the horizon sweep, report output and the command line."""

import csv
import json
import math

import pytest
from openpyxl import load_workbook

from cfs_planner import EXIT_INFEASIBLE, EXIT_LOAD_ERROR, EXIT_OK, EXIT_SOLVER_FAILURE, main
from config.config_loader import CONFIG_DIR, load_benchmark_settings, load_config, load_solver_settings
from core import benchmark
from core.benchmark import BenchReport, run_benchmark
from core.cfs import CfsConfig
from core.output_generator import SUMMARY_HEADER, TRACE_HEADER, emit, load_report
from core.scenario_loader import build_problem, load_scenario, parse_scenario
from safety_index import ConvexPolygon, NonConvex
from utils.errors import EmptyFeasibleSubgradients, IoError, NumericalFailure, ParseError, ValidationError

FREE = {'name': 'free', 'start': [0.0, 0.0], 'goal': [9.0, 0.0], 'obstacles': [], 'horizons': [5]}

ONE_BOX = {
    'name': 'one_box',
    'start': [0.0, 0.0],
    'goal': [9.0, 0.0],
    'obstacles': [
        {'kind': 'convex_polygon', 'name': 'B', 'vertices': [[4.0, -0.3], [5.0, -0.3], [5.0, 0.7], [4.0, 0.7]]},
    ],
}

WALLS = {
    'name': 'walls',
    'start': [0.0, 0.5],
    'goal': [9.0, 0.5],
    'horizons': [5],
    'obstacles': [
        {'kind': 'boundary', 'name': 'ceiling', 'profile': {'type': 'pwl', 'data': [[-20.0, 0.0], [20.0, 0.0]]}},
        {'kind': 'boundary', 'name': 'floor', 'profile': {'type': 'pwl', 'data': [[-20.0, -1.0], [20.0, -1.0]]},
         'pose': {'theta': math.pi, 't': [0.0, 0.0]}},
    ],
}


class TestScenarioLoading:
    def test_bundled_scenario1(self, scenario_dir):
        scenario = load_scenario(scenario_dir / 'scenario1.json')
        assert scenario.name == 'scenario1'
        assert [ob.name for ob in scenario.obstacles] == ['O1', 'O2', 'O3']
        assert scenario.margin == 0.25
        assert scenario.horizons == (30, 50, 100)
        assert all(ob.margin == 0.25 for ob in scenario.obstacles)

    def test_bundled_scenario2(self, scenario_dir):
        scenario = load_scenario(scenario_dir / 'scenario2.json')
        assert len(scenario.obstacles) == 5

    def test_bundled_mixed_scenario(self, scenario_dir):
        scenario = load_scenario(scenario_dir / 'scenario3_mixed.json')
        kinds = [type(ob.shape) for ob in scenario.obstacles]
        assert kinds.count(ConvexPolygon) == 1
        assert kinds.count(NonConvex) == 1
        assert scenario.obstacles[1].poses[0].theta == pytest.approx(math.pi)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="cannot read"):
            load_scenario(tmp_path / 'absent.json')

    def test_invalid_json_reports_line(self, tmp_path):
        path = tmp_path / 'broken.json'
        path.write_text('{\n  "start": [0, 0],\n  "goal": [9, 0]\n  "obstacles": []\n}\n', encoding='utf-8')
        with pytest.raises(ParseError) as info:
            load_scenario(path)
        assert info.value.line == 4
        assert str(info.value).startswith(f"{path}:4:")

    def test_concave_kink_reports_obstacle_line(self, write_scenario):
        data = dict(ONE_BOX, obstacles=ONE_BOX['obstacles'] + [
            {'kind': 'boundary', 'name': 'ridge', 'profile': {'type': 'pwl', 'data': [[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]}},
        ])
        path = write_scenario(data)
        kind_lines = [i for i, line in enumerate(path.read_text().splitlines(), 1) if '"kind"' in line]
        with pytest.raises(ValidationError, match="concave kink") as info:
            load_scenario(path)
        assert info.value.line == kind_lines[1]

    def test_missing_goal(self):
        with pytest.raises(ValidationError, match="goal"):
            parse_scenario({'start': [0, 0]})

    def test_unknown_kind(self):
        with pytest.raises(ValidationError, match="unknown obstacle kind"):
            parse_scenario(dict(FREE, obstacles=[{'kind': 'circle'}]))

    def test_build_problem(self):
        scenario = parse_scenario(dict(ONE_BOX, margin=0.2))
        problem, reference = build_problem(scenario, 12)
        assert problem.h == 12
        assert reference.ts == pytest.approx(1.0 / 13.0)
        assert problem.obstacles[0].margin == 0.2


class TestRunBenchmark:
    def test_obstacle_free_row(self):
        report = run_benchmark(parse_scenario(FREE))
        row = report.row(5)
        assert row.final_cost == pytest.approx(0.0, abs=1e-9)
        assert row.iterations == 1
        assert row.termination == 'StepTol'
        assert row.kkt_certificate <= 1e-9
        assert len(row.trace) == 2
        assert not report.any_infeasible

    def test_deterministic(self):
        scenario = parse_scenario(ONE_BOX)
        a = run_benchmark(scenario, [10]).row(10)
        b = run_benchmark(scenario, [10]).row(10)
        assert a.final_cost == b.final_cost
        assert a.iterations == b.iterations
        assert [p.cost for p in a.trace] == [p.cost for p in b.trace]

    def test_workers_keep_row_order(self):
        scenario = parse_scenario(ONE_BOX)
        report = run_benchmark(scenario, [12, 6, 9], workers=2)
        assert [row.h for row in report.rows] == [12, 6, 9]
        serial = run_benchmark(scenario, [12, 6, 9])
        assert [r.final_cost for r in report.rows] == [r.final_cost for r in serial.rows]

    def test_progress_callback(self):
        calls = []
        run_benchmark(parse_scenario(FREE), [3, 4], progress_callback=lambda *args: calls.append(args))
        assert calls == [(3, 1, 2), (4, 2, 2)]

    def test_failing_callback_does_not_stop_sweep(self):
        def explode(*_):
            raise RuntimeError("callback failure")
        report = run_benchmark(parse_scenario(FREE), [3, 4], progress_callback=explode)
        assert len(report.rows) == 2

    def test_infeasible_row_recorded(self):
        report = run_benchmark(parse_scenario(WALLS), [5, 6])
        assert report.any_infeasible
        for row in report.rows:
            assert row.infeasible
            assert row.final_cost is None
            assert row.iterations == 0
            assert [p.iter for p in row.trace] == [0]
            assert row.trace[0].feas_err == pytest.approx(0.5)

    def test_solver_failure_recorded(self, monkeypatch):
        solve = benchmark.cfs_solve
        calls = []

        def stall_first(*args):
            calls.append(args)
            if len(calls) == 1:
                raise NumericalFailure("Newton step stalled")
            return solve(*args)

        monkeypatch.setattr(benchmark, 'cfs_solve', stall_first)
        report = run_benchmark(parse_scenario(FREE), [3, 4])
        failed, converged = report.rows
        assert failed.failed
        assert failed.termination == 'Failed'
        assert failed.final_cost is None
        assert failed.error == 'NumericalFailure: Newton step stalled'
        assert [p.iter for p in failed.trace] == [0]
        assert converged.termination == 'StepTol'
        assert report.any_failed
        assert not report.any_infeasible
        restored = BenchReport.from_dict(report.to_dict())
        assert restored.row(3).error == failed.error

    def test_per_iteration_time(self):
        row = run_benchmark(parse_scenario(ONE_BOX), [10]).row(10)
        assert row.per_iter_time_ms == pytest.approx(row.total_time_ms / row.iterations)
        assert row.build_time_ms + row.solve_time_ms == pytest.approx(row.per_iter_time_ms)

    def test_emit_trajectories(self):
        row = run_benchmark(parse_scenario(FREE), [5], emit_trajectories=True).row(5)
        assert all(len(p.waypoints) == 5 for p in row.trace)
        assert row.trace[0].waypoints[0] == pytest.approx((1.5, 0.0))

    def test_rejects_empty_horizons(self):
        with pytest.raises(ValueError):
            run_benchmark(parse_scenario(FREE), [])

    def test_settings_recorded(self):
        report = run_benchmark(parse_scenario(FREE), [3], CfsConfig(eps1=1e-6))
        assert report.settings['eps1'] == 1e-6
        assert report.settings['horizons'] == [3]


class TestOutput:
    @pytest.fixture
    def report(self) -> BenchReport:
        return run_benchmark(parse_scenario(ONE_BOX), [6, 8], emit_trajectories=True)

    def test_json_round_trip(self, report, tmp_path):
        [path] = emit(report, 'json', tmp_path)
        assert path.name == 'one_box_report.json'
        assert load_report(path).to_dict() == report.to_dict()

    def test_json_to_named_file(self, report, tmp_path):
        [path] = emit(report, 'json', tmp_path / 'nested' / 'run.json')
        assert path.exists()
        assert json.loads(path.read_text())['scenario'] == 'one_box'

    def test_csv_tables(self, report, tmp_path):
        written = emit(report, 'csv', tmp_path)
        names = sorted(p.name for p in written)
        assert names == ['summary.csv', 'trace_h6.csv', 'trace_h8.csv', 'trajectory_h6.csv', 'trajectory_h8.csv']
        with open(tmp_path / 'summary.csv', newline='') as f:
            rows = list(csv.reader(f))
        assert rows[0] == SUMMARY_HEADER
        assert [r[0] for r in rows[1:]] == ['6', '8']
        with open(tmp_path / 'trace_h8.csv', newline='') as f:
            trace = list(csv.reader(f))
        assert trace[0] == TRACE_HEADER
        assert len(trace) == len(report.row(8).trace) + 1
        with open(tmp_path / 'trajectory_h6.csv', newline='') as f:
            assert len(list(csv.reader(f))) == 6 * len(report.row(6).trace) + 1

    def test_xlsx_workbook(self, report, tmp_path):
        [path] = emit(report, 'xlsx', tmp_path)
        wb = load_workbook(path)
        assert wb.sheetnames == ['Summary', 'Trace h6', 'Trace h8']
        summary = wb['Summary']
        assert summary['A1'].value == 'h'
        assert summary['A2'].value == 6
        assert summary.freeze_panes == 'A2'

    def test_unknown_format(self, report, tmp_path):
        with pytest.raises(ValueError, match="Unknown output format"):
            emit(report, 'yaml', tmp_path)

    def test_load_report_errors(self, tmp_path):
        with pytest.raises(IoError):
            load_report(tmp_path / 'absent.json')
        bad = tmp_path / 'bad.json'
        bad.write_text('{"rows": []}', encoding='utf-8')
        with pytest.raises(IoError):
            load_report(bad)


class TestConfig:
    def test_bundled_config_merges_defaults(self):
        solver = load_solver_settings(load_config())
        assert solver['eps1'] == 1e-4
        assert solver['mu_reduction'] == 0.2
        bench = load_benchmark_settings(load_config())
        assert bench['horizons'] == [30, 40, 50, 100]
        assert bench['validation_samples'] == 200

    def test_missing_section(self, tmp_path):
        path = tmp_path / 'config.json'
        path.write_text(json.dumps({'cfs': {}}), encoding='utf-8')
        with pytest.raises(KeyError, match="subsolver"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / 'absent.json')


class TestCommandLine:
    @staticmethod
    def run(tmp_path, scenario, *extra):
        return main(['--scenario', str(scenario), '--out', str(tmp_path / 'out'),
                     '--log-dir', str(tmp_path / 'logs'), '--quiet', *extra])

    def test_success(self, tmp_path, write_scenario):
        code = self.run(tmp_path, write_scenario(FREE), '--format', 'csv')
        assert code == EXIT_OK
        assert (tmp_path / 'out' / 'summary.csv').exists()
        assert list((tmp_path / 'logs').glob('cfs_*.log'))

    def test_horizon_override(self, tmp_path, write_scenario):
        code = self.run(tmp_path, write_scenario(FREE), '--horizons', '3,4', '--format', 'json')
        assert code == EXIT_OK
        report = load_report(tmp_path / 'out' / 'free_report.json')
        assert [row.h for row in report.rows] == [3, 4]

    def test_missing_scenario(self, tmp_path):
        assert self.run(tmp_path, tmp_path / 'absent.json') == EXIT_LOAD_ERROR

    def test_invalid_scenario(self, tmp_path, write_scenario):
        assert self.run(tmp_path, write_scenario({'start': [0, 0]})) == EXIT_LOAD_ERROR

    def test_infeasible_row(self, tmp_path, write_scenario):
        config = json.loads((CONFIG_DIR / 'solver_config.json').read_text(encoding='utf-8'))
        config['validation']['validation_samples'] = 0
        config_path = tmp_path / 'config.json'
        config_path.write_text(json.dumps(config), encoding='utf-8')
        code = self.run(tmp_path, write_scenario(WALLS), '--config', str(config_path))
        assert code == EXIT_INFEASIBLE

    def test_solver_failure_row(self, tmp_path, write_scenario, monkeypatch):
        def fail(*_):
            raise EmptyFeasibleSubgradients("no sub-gradient survived the filter")

        monkeypatch.setattr(benchmark, 'cfs_solve', fail)
        code = self.run(tmp_path, write_scenario(FREE), '--format', 'json')
        assert code == EXIT_SOLVER_FAILURE
        report = load_report(tmp_path / 'out' / 'free_report.json')
        assert report.row(5).failed


@pytest.mark.bench
def test_full_sweep_on_scenario1(scenario_dir):
    report = run_benchmark(load_scenario(scenario_dir / 'scenario1.json'), [30, 50, 100])
    assert not report.any_infeasible
    for row in report.rows:
        assert row.iterations <= 30
        assert row.trace[1].feas_err <= 1e-12
    assert report.row(100).per_iter_time_ms <= 6.0 * report.row(30).per_iter_time_ms
