"""Delta ledgers for gas, index commodities and FX, and their aggregation
onto tradable forward products.

Pathwise accumulators ride the backward dynamic program: the gas ledger adds
today's exercised volume times the spot tangent; an index-commodity ledger
adds, for every delivery day inside an averaging window, that window's weight
times the FX rate at its reset, the spot tangent and the optimal volume taken
over the reset period; the FX ledger books a full period's exposure whenever
the recursion crosses a reset date.  Conditional expectations of the ledgers,
normalized by tangents, are hedge ratios; they are fitted only at the dates
where positions will be read out.

Per-delivery-day ledgers are exact but memory-hungry; the default engine
recurses directly on the products quoted by the market (day-ahead to the end
of the current week, week pieces to the month boundary, months after that),
which refine consistently as time passes.
"""

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .dates import TimeGrid, end_of_month, end_of_week
from .errors import ConfigError
from .model import ModelTables, PathSet

__all__ = ["Product", "ProductCalendar", "ProductLedgerEngine",
           "MaturityLedgerEngine", "time0_deltas", "tangent_strip"]


@dataclass(frozen=True)
class Product:
    """A quoted forward strip: unit daily delivery on [start, end] (grid days)."""

    commodity: int
    start: int
    end: int

    @property
    def n_days(self) -> int:
        return self.end - self.start + 1


class ProductCalendar:
    """Products quoted per (date, commodity), refining as dates advance.

    At date t the market quotes single days out to the end of t's week, then
    week pieces (ISO week intersected with the month) until a month boundary,
    then whole months, all truncated at the commodity's delivery horizon.
    """

    def __init__(self, grid: TimeGrid, horizons: dict[int, int]):
        self.grid = grid
        self.horizons = dict(horizons)
        self._cache: dict[tuple[int, int], list[Product]] = {}

    def quoted(self, t: int, commodity: int) -> list[Product]:
        key = (t, commodity)
        got = self._cache.get(key)
        if got is None:
            got = self._build(t, commodity)
            self._cache[key] = got
        return got

    def _build(self, t: int, commodity: int) -> list[Product]:
        grid = self.grid
        horizon = self.horizons.get(commodity, -1)
        out = []
        c = t + 1
        if c > horizon:
            return out
        eow_t = grid.index(min(end_of_week(grid.date(t)), grid.end))
        while c <= horizon:
            day = grid.date(c)
            if c <= eow_t:
                end = c
            elif day.day == 1:
                end = min(grid.index(min(end_of_month(day), grid.end)), horizon)
            else:
                chunk = min(end_of_week(day), end_of_month(day), grid.end)
                end = min(grid.index(chunk), horizon)
            out.append(Product(commodity, c, end))
            c = end + 1
        return out

    def children_runs(self, t: int, commodity: int) -> tuple[list[Product], list[Product], np.ndarray]:
        """Products at t, products at t+1, and for each parent the slice
        [runs[i], runs[i+1]) of consecutive children in the t+1 list."""
        parents = self.quoted(t, commodity)
        kids = self.quoted(t + 1, commodity)
        runs = np.zeros(len(parents) + 1, dtype=int)
        k = 0
        for i, p in enumerate(parents):
            runs[i] = k
            while k < len(kids) and kids[k].end <= p.end:
                if kids[k].start < p.start:
                    raise ConfigError(f"product calendar violates refinement at day {t}: "
                                      f"{kids[k]} straddles {p}")
                k += 1
        runs[len(parents)] = k
        if k != len(kids):
            raise ConfigError(f"product calendar violates refinement at day {t}: "
                              f"{kids[k]} not contained in any parent")
        return parents, kids, runs

    def validate_refinement(self, commodity: int, first: int = 0) -> None:
        """Check the one-step refinement property over the whole horizon.

        Each parent quoted at t must be exactly covered by day t+1 plus the
        children quoted at t+1; raises ConfigError naming the violating pair.
        """
        horizon = self.horizons.get(commodity, -1)
        for t in range(first, horizon):
            parents, kids, runs = self.children_runs(t, commodity)
            for i, p in enumerate(parents):
                cover = max(p.start, t + 2)
                for child in kids[runs[i]:runs[i + 1]]:
                    if child.start != cover:
                        raise ConfigError(
                            f"refinement gap at day {t}: {p} vs child {child}")
                    cover = child.end + 1
                if cover != p.end + 1:
                    raise ConfigError(
                        f"refinement hole at day {t}: {p} not covered past day {cover - 1}")


def _segment_sums(rolled: np.ndarray, runs: np.ndarray, n_levels: int,
                  n_paths: int) -> np.ndarray:
    """Sum consecutive child rows per parent; empty runs give zero rows.

    On most dates every parent has exactly one child (the same product quoted
    again), which is served as a view of the rolled array; genuine merges only
    happen around week and month boundaries.
    """
    n_parents = len(runs) - 1
    if rolled.shape[0] == 0 or n_parents == 0:
        return np.zeros((n_parents, n_levels, n_paths), dtype=rolled.dtype)
    sizes = runs[1:] - runs[:-1]
    if (sizes == 1).all():
        return rolled[runs[0]:runs[-1]]
    out = np.empty((n_parents, n_levels, n_paths), dtype=rolled.dtype)
    for i in range(n_parents):
        a, b = runs[i], runs[i + 1]
        if b - a == 1:
            out[i] = rolled[a]
        elif b > a:
            np.sum(rolled[a:b], axis=0, out=out[i])
        else:
            out[i] = 0.0
    return out


def tangent_strip(ps: PathSet, tables: ModelTables, j: int, t: int,
                  deliveries: np.ndarray) -> np.ndarray:
    """Forward tangents F(t, m)/F(0, m) for many delivery days at once: (m, paths)."""
    if ps.w is None:
        raise ConfigError("path set must be simulated with stored factor states")
    deliveries = np.asarray(deliveries, dtype=int)
    decay = tables.decay[j][:, deliveries - t]            # (factors, m)
    expo = np.einsum("fm,fp->mp", decay, ps.w[j][t])
    expo -= 0.5 * tables.v[j][t, deliveries][:, None]
    return np.exp(expo)


class _EngineBase:
    def bind(self, solver) -> None:
        self.solver = solver
        self.ps: PathSet = solver.ps
        self.series = solver.series
        self.tables: ModelTables = solver.tables
        self.levels = solver.levels
        self.contract = solver.contract
        self.ispec = solver.index_spec
        spec = self.ispec
        self.n_resets = spec.n_resets
        self.index_commodities = sorted({c.commodity for c in spec.components})
        self.fx_columns = sorted({c.fx_column for c in spec.components
                                  if c.fx_column is not None})
        # windows_by_day[m] per commodity: list of (reset k, weight a/m_days, fx_col)
        self.windows_by_day = {j: [[] for _ in range(self.ps.n_dates)]
                               for j in self.index_commodities}
        for k in range(spec.n_resets):
            for c, comp in enumerate(spec.components):
                wgt = comp.weight / spec.window_days[k, c]
                for m in range(spec.win_start[k, c], spec.win_end[k, c]):
                    self.windows_by_day[comp.commodity][m].append(
                        (k, wgt, comp.fx_column))
        self.reset_at = {int(spec.reset_idx[k]): k for k in range(spec.n_resets)}
        ridx = spec.reset_idx
        self.period_of = lambda t: int(np.searchsorted(ridx, t, side="right") - 1)

    def _pv_step(self, ctx, rolled_pv):
        """Roll the per-period exercised-volume accumulators and add today."""
        if ctx.exercising:
            k = self.period_of(ctx.t)
            if k >= 0:
                rolled_pv[k] += ctx.qstar
        return rolled_pv

    def _fx_step(self, ctx, rolled_fx, rolled_pv):
        """Add each crossed reset's full-period FX exposure: weight times
        (window average - offset) times the FX tangent at the reset."""
        k = self.reset_at.get(ctx.t + 1)
        if k is None:
            return rolled_fx
        spec = self.ispec
        tk = ctx.t + 1
        for c, comp in enumerate(spec.components):
            if comp.fx_column is None:
                continue
            col = self.fx_columns.index(comp.fx_column)
            x0 = self.solver.model.active_fx[comp.fx_column].x0
            y = self.ps.fx[tk, comp.fx_column] / x0
            avg = self.series.reset_avg[k, c]
            rolled_fx[col] += comp.weight * (avg - comp.offset) * y * rolled_pv[k]
        return rolled_fx


class ProductLedgerEngine(_EngineBase):
    """Backward recursion of pathwise deltas directly per quoted product.

    ``dtype`` controls the ledger precision; single precision halves the
    memory traffic of the volume rolls at production scale, while the exact
    small-instance cross-checks keep the double-precision default.
    """

    def __init__(self, calendar: ProductCalendar, dtype=np.float64):
        self.calendar = calendar
        self.dtype = np.dtype(dtype)

    def bind(self, solver) -> None:
        super().bind(solver)
        self.state: dict[str, np.ndarray] = {}
        self.products: dict[str, list[Product]] = {}

    def init_terminal(self) -> None:
        n_paths = self.ps.n_paths
        after_end = self.contract.i_end + 1
        self.pv = np.zeros((self.n_resets, 1, n_paths), dtype=self.dtype)
        self.fx_state = np.zeros((len(self.fx_columns), 1, n_paths), dtype=self.dtype)
        for j in [0] + self.index_commodities:
            quoted = self.calendar.quoted(after_end, j)
            self.state[self._key(j)] = np.zeros((len(quoted), 1, n_paths),
                                                dtype=self.dtype)
            self.products[self._key(j)] = quoted
        self._diag = {}

    @staticmethod
    def _key(j: int) -> str:
        return "gas" if j == 0 else f"com{j}"

    def step(self, ctx) -> None:
        t = ctx.t
        rolled_pv = ctx.roll(self.pv)
        rolled_fx = ctx.roll(self.fx_state)
        self.fx_state = self._fx_step(ctx, rolled_fx, rolled_pv)
        self.pv = self._pv_step(ctx, rolled_pv)

        for j in [0] + self.index_commodities:
            key = self._key(j)
            parents, kids, runs = self.calendar.children_runs(t, j)
            old = self.state[key]
            diag = self._diag.get(key)
            rolled = ctx.roll(old) if old.shape[0] else \
                np.zeros((0, ctx.n_levels, ctx.n_paths), dtype=self.dtype)
            rolled_diag = ctx.roll(diag[None])[0] if diag is not None else None
            new = _segment_sums(rolled, runs, ctx.n_levels, ctx.n_paths)
            if rolled_diag is not None:
                for i, p in enumerate(parents):
                    if p.start <= t + 1 <= p.end:
                        new[i] += rolled_diag
                        break
            self.state[key] = new
            self.products[key] = parents
            diag = self._make_diag(ctx, j)
            if diag is not None and diag.dtype != self.dtype:
                diag = diag.astype(self.dtype)
            self._diag[key] = diag

    def _make_diag(self, ctx, j: int) -> np.ndarray | None:
        """Today's delivery contribution, already scaled by F(0, t):
        gas takes q* times today's spot; an index commodity takes its window
        weights times reset FX times today's spot times the period volumes."""
        t = ctx.t
        if j == 0:
            if not ctx.exercising:
                return None
            return ctx.qstar * self.ps.spot[t, 0]
        hits = self.windows_by_day[j][t]
        if not hits:
            return None
        out = None
        spot = self.ps.spot[t, j]
        for k, wgt, fx_col in hits:
            x = self.ps.fx_at(int(self.ispec.reset_idx[k]), fx_col)
            term = wgt * x * spot * self.pv[k]
            out = term if out is None else out + term
        return out

    def readout_blocks(self, t: int) -> list:
        blocks = []
        for j in [0] + self.index_commodities:
            key = self._key(j)
            if self.state[key].shape[0]:
                blocks.append((key, self.state[key]))
        if self.fx_state.shape[0]:
            blocks.append(("fx", self.fx_state))
        return blocks


class MaturityLedgerEngine(_EngineBase):
    """Per-delivery-day ledgers (exact, memory-heavy; small instances and
    cross-checks of the product recursion)."""

    def bind(self, solver) -> None:
        super().bind(solver)
        n = self.ps.n_dates
        self.horizons = {0: self.contract.i_end}
        for j in self.index_commodities:
            ends = [int(self.ispec.win_end[k, c]) - 1
                    for k in range(self.n_resets)
                    for c, comp in enumerate(self.ispec.components)
                    if comp.commodity == j]
            self.horizons[j] = max(ends)
        self.state = {}
        self.first_maturity = {}

    def init_terminal(self) -> None:
        n_paths = self.ps.n_paths
        for j in [0] + self.index_commodities:
            self.state[self._key(j)] = np.zeros((0, 1, n_paths))
            self.first_maturity[self._key(j)] = self.horizons[j] + 1
        self.pv = np.zeros((self.n_resets, 1, n_paths))
        self.fx_state = np.zeros((len(self.fx_columns), 1, n_paths))

    @staticmethod
    def _key(j: int) -> str:
        return "gas" if j == 0 else f"com{j}"

    def maturities(self, key: str) -> np.ndarray:
        return np.arange(self.first_maturity[key],
                         self.first_maturity[key] + self.state[key].shape[0])

    def step(self, ctx) -> None:
        t = ctx.t
        rolled_pv = ctx.roll(self.pv)
        rolled_fx = ctx.roll(self.fx_state)
        self.fx_state = self._fx_step(ctx, rolled_fx, rolled_pv)
        self.pv = self._pv_step(ctx, rolled_pv)

        for j in [0] + self.index_commodities:
            key = self._key(j)
            old = self.state[key]
            rolled = ctx.roll(old) if old.shape[0] else \
                np.zeros((0, ctx.n_levels, ctx.n_paths))
            diag = self._diag_row(ctx, j)
            if diag is not None and self.first_maturity[key] == t + 1:
                self.state[key] = np.concatenate([diag[None], rolled], axis=0)
                self.first_maturity[key] = t
            elif diag is not None:
                # first live maturity; open the ledger at m = t
                assert old.shape[0] == 0
                self.state[key] = diag[None]
                self.first_maturity[key] = t
            else:
                self.state[key] = rolled

    def _diag_row(self, ctx, j: int) -> np.ndarray | None:
        """Tangent-valued delivery at m = t (not scaled by the initial curve)."""
        t = ctx.t
        if t > self.horizons[j]:
            return None
        if j == 0:
            if not ctx.exercising:
                return None
            y = self.ps.spot[t, 0] / self.tables.curve[0][t]
            return ctx.qstar * y
        hits = self.windows_by_day[j][t]
        if not hits:
            return None if self.state[self._key(j)].shape[0] == 0 else \
                np.zeros((ctx.n_levels, ctx.n_paths))
        y = self.ps.spot[t, j] / self.tables.curve[j][t]
        out = np.zeros((ctx.n_levels, ctx.n_paths))
        for k, wgt, fx_col in hits:
            x = self.ps.fx_at(int(self.ispec.reset_idx[k]), fx_col)
            out += wgt * x * y * self.pv[k]
        return out

    def readout_blocks(self, t: int) -> list:
        blocks = []
        for j in [0] + self.index_commodities:
            key = self._key(j)
            if self.state[key].shape[0]:
                blocks.append((key, self.state[key]))
        if self.fx_state.shape[0]:
            blocks.append(("fx", self.fx_state))
        return blocks


def time0_deltas(engine: MaturityLedgerEngine) -> dict:
    """Unconditional deltas at the valuation date (volume 0) per delivery day.

    Gas deltas are with respect to F(0, m); index commodity and FX deltas
    carry the short-position sign.
    """
    out = {}
    for key in list(engine.state):
        arr = engine.state[key]
        if not arr.shape[0]:
            continue
        sign = 1.0 if key == "gas" else -1.0
        out[key] = {int(m): sign * float(arr[i, 0].mean())
                    for i, m in enumerate(engine.maturities(key))}
    if engine.fx_state.shape[0]:
        out["fx"] = {col: -float(engine.fx_state[i, 0].mean())
                     for i, col in enumerate(engine.fx_columns)}
    return out
