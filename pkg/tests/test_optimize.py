import datetime as dt

import numpy as np
import pytest

import swinghedge as sh
import _tree_case as tc
from _oracle import TreeOracle
from swinghedge.contract import IndexSeries
from swinghedge.errors import ConfigError, DomainError
from swinghedge.optimize import (BackwardSolver, LevelSystem, VolumeGrid,
                                 candidate_controls, decide_forward,
                                 interpolate_values)
from swinghedge.regress import RegressorSpec


def small_market(grid, gas_level=10.0, oil_level=8.0):
    n = grid.n_dates
    gas = sh.CommodityModel("gas", [sh.CommodityFactor(1.0, 80.0),
                                    sh.CommodityFactor(0.1, 0.0)],
                            np.full(n, gas_level))
    oil = sh.CommodityModel("oil", [sh.CommodityFactor(0.4, 2.0)],
                            np.full(n, oil_level))
    rho = np.eye(3)
    rho[0, 2] = rho[2, 0] = 0.3
    return sh.MarketModel([gas, oil], [None], rho)


GRID = sh.TimeGrid(dt.date(2007, 1, 1), dt.date(2007, 3, 31))
MODEL = small_market(GRID)
INDEX = sh.IndexSpec(2.0, [sh.IndexComponent(1, 1.0, 0.0, 0, 1, name="oil")],
                     [dt.date(2007, 3, 1)], GRID)
RSPEC = RegressorSpec("spot_index", (4, 2), (1, 1))


def contract(q_max=1.0, q_min=10.0, q_top=20.0):
    return sh.ContractSpec(GRID, dt.date(2007, 3, 1), dt.date(2007, 3, 31),
                           q_max, q_min, q_top)


class TestInterpolateValues:
    def test_endpoints(self):
        assert interpolate_values(10.0, 20.0, 0.0, 2.0, 0.0) == 10.0
        assert interpolate_values(10.0, 20.0, 0.0, 2.0, 2.0) == 20.0

    def test_midpoint_and_interior(self):
        assert interpolate_values(10.0, 20.0, 0.0, 2.0, 1.0) == 15.0
        assert interpolate_values(10.0, 20.0, 0.0, 1.0, 0.3) == pytest.approx(13.0)

    def test_outside_cell_rejected(self):
        with pytest.raises(DomainError):
            interpolate_values(1.0, 2.0, 0.0, 1.0, 1.5)


class TestLevelSystem:
    def test_reachability_window(self):
        c = contract()
        lv = LevelSystem(c, VolumeGrid(1.0, 0.5))
        assert (lv.lo[:c.i_start] == 0).all() and (lv.hi[:c.i_start] == 0).all()
        # after d exercise days at most d volume (q_max = 1)
        d3 = c.i_start + 3
        assert lv.hi[d3] == 3
        # last day must hold at least Q_min - q_max
        assert lv.volumes[lv.lo[c.i_end]] <= 10.0 - 1.0 + 1e-9

    def test_step_must_divide_total(self):
        with pytest.raises(ConfigError):
            LevelSystem(contract(q_top=20.0), VolumeGrid(3.0, 0.5))

    def test_control_step_must_divide_q_max(self):
        with pytest.raises(ConfigError):
            LevelSystem(contract(q_max=1.0), VolumeGrid(1.0, 0.3))

    def test_bracket_clamps_into_range(self):
        lv = LevelSystem(contract(), VolumeGrid(1.0, 0.5))
        t = GRID.index(dt.date(2007, 3, 10))
        col, w = lv.bracket(t, np.array([0.0, 5.25, 100.0]))
        assert col[0] == 0 and w[0] == 0.0
        assert (col >= 0).all() and (col <= lv.hi[t] - lv.lo[t] - 1).all()


class TestCandidateControls:
    def test_lattice_with_endpoint(self):
        c = candidate_controls(np.array([0.2]), np.array([0.9]), 0.25, 4)
        assert c[0, 0] == pytest.approx(0.2)
        assert c[0, -1] == pytest.approx(0.9)
        assert (np.diff(c[0]) >= -1e-12).all()
        assert (c[0] <= 0.9 + 1e-12).all()


class TestBackwardSolver:
    def solve(self, c, ps=None, rspec=RSPEC, vg=None, **kw):
        ps = ps if ps is not None else sh.simulate(MODEL, GRID, 1500, seed=3)
        solver = BackwardSolver(MODEL, c, INDEX, vg or VolumeGrid(1.0, 0.5),
                                rspec, **kw)
        return solver.solve(ps), ps

    def test_no_flexibility_means_zero_value(self):
        res, _ = self.solve(contract(q_max=0.0, q_min=0.0, q_top=0.0),
                            vg=VolumeGrid(1.0, 1.0))
        assert res.value == 0.0

    def test_forced_take_equals_swap(self):
        c = contract(q_max=1.0, q_min=31.0, q_top=31.0)
        res, ps = self.solve(c)
        series = IndexSeries(INDEX, ps)
        swap = sum(float((ps.spot[t, 0] - series.on_day(t)).mean())
                   for t in range(c.i_start, c.i_end + 1))
        assert res.value == pytest.approx(swap, rel=1e-10)

    def test_value_monotone_in_flexibility(self):
        ps = sh.simulate(MODEL, GRID, 3000, seed=8)
        narrow, _ = self.solve(contract(q_min=15.0, q_top=18.0), ps=ps)
        wide, _ = self.solve(contract(q_min=10.0, q_top=25.0), ps=ps)
        se = np.hypot(narrow.stderr, wide.stderr)
        assert wide.value >= narrow.value - 2 * se

    def test_bang_bang_controls_on_aligned_grid(self):
        c = contract(q_max=1.0, q_min=10.0, q_top=20.0)
        ps = sh.simulate(MODEL, GRID, 800, seed=5)
        solver = BackwardSolver(MODEL, c, INDEX, VolumeGrid(1.0, 1.0), RSPEC,
                                store_policy=True)
        res = solver.solve(ps)
        from swinghedge.contract import feasible_range_clamped
        for t, q in res.q_star.items():
            vols = res.levels.level_volumes(t)
            lo, hi = feasible_range_clamped(c, t, vols)
            at_bound = (np.abs(q - lo[:, None]) < 1e-12) | \
                       (np.abs(q - hi[:, None]) < 1e-12)
            assert at_bound.all()

    def test_controls_always_feasible(self):
        c = contract()
        ps = sh.simulate(MODEL, GRID, 600, seed=6)
        solver = BackwardSolver(MODEL, c, INDEX, VolumeGrid(1.0, 0.5), RSPEC,
                                store_policy=True)
        res = solver.solve(ps)
        from swinghedge.contract import feasible_range_clamped
        for t, q in res.q_star.items():
            vols = res.levels.level_volumes(t)
            lo, hi = feasible_range_clamped(c, t, vols)
            assert (q >= lo[:, None] - 1e-12).all()
            assert (q <= hi[:, None] + 1e-12).all()

    def test_thread_count_does_not_change_results(self):
        ps = sh.simulate(MODEL, GRID, 1200, seed=12)
        res1, _ = self.solve(contract(), ps=ps)
        solver8 = BackwardSolver(MODEL, contract(), INDEX, VolumeGrid(1.0, 0.5),
                                 RSPEC, n_threads=8)
        res8 = solver8.solve(ps)
        assert res1.value == res8.value
        for t in res1.dates:
            a, b = res1.dates[t].cont_coef, res8.dates[t].cont_coef
            if a is not None:
                assert np.array_equal(a, b)

    def test_exercise_stats_emitted(self):
        res, _ = self.solve(contract())
        days = [row[0] for row in res.exercise_stats]
        assert days == sorted(days)
        assert len(days) == 31


class TestTreeOracleEquality:
    """Exhaustive enumeration on the four-scenario tree."""

    def setup_method(self):
        self.spots, self.fx = tc.build_arrays()
        self.oracle = TreeOracle(self.spots, self.fx, [28, 29, 30], tc.Q_MAX,
                                 tc.Q_MIN_TOT, tc.Q_MAX_TOT, 1.0, tc.index_by_hand)

    def test_value_matches_enumeration_exactly(self):
        model, contract_, ispec, ps, vgrid, rspec = tc.package_objects(
            self.spots, self.fx)
        res = BackwardSolver(model, contract_, ispec, vgrid, rspec).solve(ps)
        assert res.value == pytest.approx(self.oracle.value(), abs=1e-10)

    def test_forward_walk_matches_enumeration(self):
        model, contract_, ispec, ps, vgrid, rspec = tc.package_objects(
            self.spots, self.fx)
        res = BackwardSolver(model, contract_, ispec, vgrid, rspec).solve(ps)
        from swinghedge.optimize import regressor_matrix
        series = IndexSeries(ispec, ps)
        q_taken = np.zeros(8)
        cash = np.zeros(8)
        for t in range(contract_.i_start, contract_.i_end + 1):
            x, _ = regressor_matrix(rspec, t, ps, series)
            chat = res.dates[t].continuation().evaluate(x).T \
                if t < contract_.i_end else np.zeros((1, 8))
            payoff = ps.spot[t, 0] - series.on_day(t)
            q, _ = decide_forward(contract_, res.levels, t, payoff, q_taken, chat)
            cash += q * payoff
            q_taken = q_taken + q
        assert cash.mean() == pytest.approx(self.oracle.value(), abs=1e-10)
