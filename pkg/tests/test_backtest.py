import datetime as dt

import numpy as np
import pytest

import swinghedge as sh
from swinghedge.backtest import (Backtester, HedgePlan, bootstrap_std,
                                 component_study, rebalance_schedule)
from swinghedge.contract import IndexSeries
from swinghedge.errors import ConfigError
from swinghedge.hedge import ProductCalendar, ProductLedgerEngine
from swinghedge.optimize import BackwardSolver, VolumeGrid
from swinghedge.regress import RegressorSpec


def setup_case(fx_sigma=0.1, q_min=10.0, q_top=20.0, a0=2.0, weight=0.8,
               n_paths=3000, gas_sigma=(1.0, 0.1), com_sigma=0.4, corr=0.3):
    grid = sh.TimeGrid(dt.date(2007, 1, 1), dt.date(2007, 3, 31))
    n = grid.n_dates
    gas = sh.CommodityModel("gas", [sh.CommodityFactor(s, a) for s, a in
                                    zip(gas_sigma, (80.0, 0.0))], np.full(n, 10.0))
    oil = sh.CommodityModel("oil", [sh.CommodityFactor(com_sigma, 2.0)],
                            np.full(n, 8.0))
    fxm = sh.FxModel("usd", fx_sigma, 0.0, 1.2)
    rho = np.eye(4)
    rho[0, 2] = rho[2, 0] = corr
    model = sh.MarketModel([gas, oil], [fxm], rho)
    contract = sh.ContractSpec(grid, dt.date(2007, 3, 1), dt.date(2007, 3, 31),
                               1.0, q_min, q_top)
    ispec = sh.IndexSpec(a0, [sh.IndexComponent(1, weight, 0.0, 0, 1,
                                                fx_column=0)],
                         [dt.date(2007, 3, 1)], grid)
    vgrid = VolumeGrid(1.0, 0.5)
    rspec = RegressorSpec("spot_index", (4, 2), (1, 1))
    horizons = {0: contract.i_end, 1: grid.index(dt.date(2007, 2, 28))}
    calendar = ProductCalendar(grid, horizons)
    ps = sh.simulate(model, grid, n_paths, seed=101)
    engine = ProductLedgerEngine(calendar)
    solver = BackwardSolver(model, contract, ispec, vgrid, rspec,
                            readout_dates=range(0, contract.i_end),
                            ledger_engine=engine)
    result = solver.solve(ps)
    bt = Backtester(model, contract, ispec, rspec, calendar, result)
    return bt, result


class TestSchedules:
    GRID = sh.TimeGrid(dt.date(2006, 4, 1), dt.date(2007, 12, 31))
    C = sh.ContractSpec(GRID, dt.date(2007, 1, 1), dt.date(2007, 12, 31),
                        0.4, 91.0, 146.0)

    def test_daily_covers_everything(self):
        days = rebalance_schedule(self.GRID, self.C, "daily")
        assert days[0] == 0 and days[-1] == self.C.i_end - 1
        assert len(days) == self.C.i_end

    def test_weekly_is_mondays_plus_day_zero(self):
        days = rebalance_schedule(self.GRID, self.C, "weekly")
        dates = [self.GRID.date(t) for t in days]
        assert days[0] == 0
        assert all(d.weekday() == 0 for d in dates[1:])

    def test_split_before_after_start(self):
        days = rebalance_schedule(self.GRID, self.C, "daily", "monthly")
        before = [t for t in days if t < self.C.i_start]
        dates = [self.GRID.date(t) for t in before]
        assert all(d.day == 1 or t == 0 for d, t in zip(dates, before))
        after = [t for t in days if t >= self.C.i_start]
        assert len(after) == self.C.i_end - self.C.i_start

    def test_unknown_frequency(self):
        with pytest.raises(ConfigError):
            rebalance_schedule(self.GRID, self.C, "hourly")


class TestBacktester:
    @pytest.fixture(scope="class")
    def case(self):
        return setup_case()

    def test_no_hedge_plan_reports_cash_statistics(self, case):
        bt, result = case
        rep = bt.run([HedgePlan("none", {})], 2000, seed=77)[0]
        assert rep.std_hedged == rep.std_unhedged
        assert rep.mean_hedged == rep.mean_unhedged

    def test_total_hedge_cuts_variance_and_preserves_mean(self, case):
        bt, result = case
        rep = bt.run([HedgePlan.total([1], True)], 3000, seed=77)[0]
        assert rep.std_hedged < 0.5 * rep.std_unhedged
        pooled = np.hypot(rep.pnl_unhedged.std() / np.sqrt(rep.n_paths),
                          rep.pnl_hedged.std() / np.sqrt(rep.n_paths))
        assert abs(rep.mean_hedged - rep.mean_unhedged) <= 3 * pooled

    def test_simulation_value_matches_optimization(self, case):
        bt, result = case
        rep = bt.run([HedgePlan("none", {})], 4000, seed=77)[0]
        se = np.hypot(result.stderr,
                      rep.pnl_unhedged.std() / np.sqrt(rep.n_paths))
        assert abs(rep.mean_unhedged - result.value) <= 3 * se

    def test_same_seed_rejected(self, case):
        bt, result = case
        with pytest.raises(ConfigError):
            bt.run([HedgePlan("none", {})], 100, seed=result.seed)

    def test_chunking_invariant(self, case):
        bt, _ = case
        plans = [HedgePlan.total([1], True)]
        a = bt.run(plans, 700, seed=55, chunk_size=512)[0]
        b = bt.run(plans, 700, seed=55, chunk_size=4096)[0]
        assert np.array_equal(a.pnl_hedged, b.pnl_hedged)

    def test_position_tracking(self, case):
        bt, _ = case
        bt.run([HedgePlan.total([1], True)], 300, seed=55, track_paths=2)
        assert bt.tracked
        plan, path, t, comp, s, e, h = bt.tracked[0]
        assert path in (0, 1) and comp in ("gas", "com1") or comp.startswith("fx")


def linear_payoff_case(n_paths):
    """Forced full take of a single-factor gas at a fixed strike: the payoff
    is linear and the conditional deltas are exact up to cell resolution."""
    grid = sh.TimeGrid(dt.date(2007, 1, 1), dt.date(2007, 3, 31))
    n = grid.n_dates
    gas = sh.CommodityModel("gas", [sh.CommodityFactor(0.4, 0.8)],
                            np.full(n, 10.0))
    oil = sh.CommodityModel("oil", [sh.CommodityFactor(0.4, 2.0)],
                            np.full(n, 8.0))
    fxm = sh.FxModel("usd", 0.0, 0.0, 1.2)
    model = sh.MarketModel([gas, oil], [fxm], np.eye(3))
    contract = sh.ContractSpec(grid, dt.date(2007, 3, 1), dt.date(2007, 3, 31),
                               1.0, 31.0, 31.0)
    ispec = sh.IndexSpec(8.0, [sh.IndexComponent(1, 0.0, 0.0, 0, 1,
                                                 fx_column=0)],
                         [dt.date(2007, 3, 1)], grid)
    cal = ProductCalendar(grid, {0: contract.i_end,
                                 1: grid.index(dt.date(2007, 2, 28))})
    rspec = RegressorSpec("spot_index", (8, 4), (1, 1))
    ps = sh.simulate(model, grid, n_paths, seed=101)
    eng = ProductLedgerEngine(cal)
    solver = BackwardSolver(model, contract, ispec, VolumeGrid(1.0, 0.5), rspec,
                            readout_dates=range(0, contract.i_end),
                            ledger_engine=eng)
    result = solver.solve(ps)
    return Backtester(model, contract, ispec, rspec, cal, result)


class TestLinearPayoffReplication:
    def test_forced_take_constant_strike_hedges_to_noise(self):
        bt = linear_payoff_case(4000)
        rep = bt.run([HedgePlan.total([1], True)], 4000, seed=9)[0]
        assert rep.std_hedged < 0.02 * rep.std_unhedged

    def test_static_hedge_suffices_for_linear_payoff(self):
        # one rebalance at date 0 only
        bt = linear_payoff_case(3000)
        plan = HedgePlan("static", {"gas": ("quarterly", "quarterly")})
        rep = bt.run([plan], 3000, seed=9)[0]
        assert rep.std_hedged < 0.02 * rep.std_unhedged


class TestComponentStudy:
    def test_five_plans_and_ordering(self):
        bt, result = setup_case(n_paths=4000, corr=0.2)
        reports = component_study(bt, 4000, seed=31)
        names = [r.name for r in reports]
        assert names == ["spot_gas", "index_components", "index_and_fx",
                         "fx_only", "total"]
        by = {r.name: r for r in reports}
        assert by["total"].std_hedged < by["index_components"].std_hedged
        assert by["total"].std_hedged < by["spot_gas"].std_hedged
        assert by["total"].std_hedged < 0.6 * by["total"].std_unhedged


class TestBootstrap:
    def test_bootstrap_concentrates_around_sample_std(self):
        rng = np.random.default_rng(0)
        pnl = rng.normal(0, 2.0, 4000)
        boot = bootstrap_std(pnl, n_boot=500, seed=3)
        assert abs(np.median(boot) - pnl.std(ddof=1)) < 0.1
        assert boot.std() < 0.2
