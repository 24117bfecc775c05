"""Forward simulation of the stored strategy with dynamic-hedge accounting.

Fresh paths (a seed disjoint from the optimization) are walked forward: the
exercise decision re-runs the stored continuation estimators at the fresh
regressor values, cash flows accrue as volume times the spot-index spread,
and at each rebalance date hedge positions are set to minus the conditional
deltas read from the stored ledgers.  A position in a product is held flat
until that component's next rebalance date; its P&L marks delivered days at
spot and remaining days on the current forward curve, so the hedge is
self-financing at the zero domestic rate.
"""

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .contract import ContractSpec, IndexSeries, IndexSpec
from .dates import TimeGrid
from .errors import ConfigError
from .hedge import ProductCalendar, tangent_strip
from .model import MarketModel, ModelTables, simulate
from .optimize import SolveResult, decide_forward, regressor_matrix
from .regress import RegressorSpec

__all__ = ["HedgePlan", "HedgeReport", "Backtester", "bootstrap_std",
           "component_study", "frequency_study", "rebalance_schedule"]

FREQUENCIES = ("daily", "twice_weekly", "weekly", "twice_monthly",
               "monthly", "quarterly")


def _matches(day: dt.date, freq: str) -> bool:
    if freq == "daily":
        return True
    if freq == "twice_weekly":
        return day.weekday() in (0, 3)
    if freq == "weekly":
        return day.weekday() == 0
    if freq == "twice_monthly":
        return day.day in (1, 15)
    if freq == "monthly":
        return day.day == 1
    if freq == "quarterly":
        return day.day == 1 and day.month in (1, 4, 7, 10)
    raise ConfigError(f"unknown rebalance frequency {freq!r}; expected one of "
                      f"{FREQUENCIES}")


def rebalance_schedule(grid: TimeGrid, contract: ContractSpec, freq: str,
                       freq_before: str | None = None) -> np.ndarray:
    """Rebalance dates (grid indices): ``freq_before`` up to the first
    exercise day, ``freq`` from there on; day 0 is always included."""
    before = freq_before if freq_before is not None else freq
    days = []
    for t in range(0, contract.i_end):
        f = before if t < contract.i_start else freq
        if t == 0 or _matches(grid.date(t), f):
            days.append(t)
    return np.asarray(days, dtype=int)


@dataclass
class HedgePlan:
    """Which components to hedge and on what schedule.

    ``schedules`` maps a ledger key ("gas", "com<j>", "fx") to a rebalance
    frequency pair (before t_start, after).  Components absent from the map
    are not hedged.
    """

    name: str
    schedules: dict = field(default_factory=dict)

    @classmethod
    def total(cls, index_commodities, have_fx: bool, freq: str = "daily",
              freq_before: str | None = None, name: str = "total") -> "HedgePlan":
        keys = ["gas"] + [f"com{j}" for j in index_commodities] + \
            (["fx"] if have_fx else [])
        fb = freq_before if freq_before is not None else freq
        return cls(name, {k: (fb, freq) for k in keys})

    @classmethod
    def index_paced(cls, index_commodities, have_fx: bool, freq: str,
                    freq_before: str | None = None,
                    name: str | None = None) -> "HedgePlan":
        """Gas hedged daily; index commodities (and FX) on the given pace."""
        fb = freq_before if freq_before is not None else freq
        sched = {"gas": ("daily", "daily")}
        for j in index_commodities:
            sched[f"com{j}"] = (fb, freq)
        if have_fx:
            sched["fx"] = (fb, freq)
        return cls(name or f"index_{freq}", sched)


@dataclass
class HedgeReport:
    name: str
    n_paths: int
    mean_unhedged: float
    std_unhedged: float
    mean_hedged: float
    std_hedged: float
    pnl_unhedged: np.ndarray
    pnl_hedged: np.ndarray

    @property
    def std_ratio(self) -> float:
        return self.std_unhedged / self.std_hedged if self.std_hedged > 0 else np.inf


def bootstrap_std(pnl: np.ndarray, n_boot: int = 1000, seed: int = 7) -> np.ndarray:
    """Bootstrap distribution of the standard deviation of per-path P&L."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    n = pnl.shape[0]
    idx = rng.integers(0, n, size=(n_boot, n))
    return pnl[idx].std(axis=1, ddof=1)


class _Position:
    __slots__ = ("products", "quantity", "entry_value", "entry_t", "entry_fx")

    def __init__(self, products, quantity, entry_value, entry_t, entry_fx=None):
        self.products = products
        self.quantity = quantity          # (rows, paths), minus the delta
        self.entry_value = entry_value    # (rows, paths) strip value at entry
        self.entry_t = entry_t
        self.entry_fx = entry_fx


class Backtester:
    """Runs one or many hedge plans over the same set of fresh paths."""

    def __init__(self, model: MarketModel, contract: ContractSpec,
                 index_spec: IndexSpec, rspec: RegressorSpec,
                 calendar: ProductCalendar, result: SolveResult):
        self.model = model
        self.contract = contract
        self.ispec = index_spec
        self.rspec = rspec
        self.calendar = calendar
        self.result = result
        self.grid = contract.grid
        self.tables = ModelTables(model, self.grid)
        self.levels = result.levels
        self.index_commodities = sorted({c.commodity for c in index_spec.components})
        self.fx_columns = sorted({c.fx_column for c in index_spec.components
                                  if c.fx_column is not None})
        self._strip_sum_f0 = {}

    # ------------------------------------------------------------------ API

    def run(self, plans: list[HedgePlan], n_paths: int, seed: int, *,
            chunk_size: int = 4096, track_paths: int = 0) -> list[HedgeReport]:
        if seed == self.result.seed:
            raise ConfigError("simulation seed must differ from the optimization seed")
        schedules = self._resolve_schedules(plans)
        cash = np.empty(n_paths)
        hedge = np.zeros((len(plans), n_paths))
        self.tracked = []
        done = 0
        while done < n_paths:
            take = min(chunk_size, n_paths - done)
            c_cash, c_hedge = self._run_chunk(plans, schedules, take, seed, done,
                                              track_paths if done == 0 else 0)
            cash[done:done + take] = c_cash
            hedge[:, done:done + take] = c_hedge
            done += take
        reports = []
        for i, plan in enumerate(plans):
            total = cash + hedge[i]
            reports.append(HedgeReport(
                name=plan.name, n_paths=n_paths,
                mean_unhedged=float(cash.mean()),
                std_unhedged=float(cash.std(ddof=1)),
                mean_hedged=float(total.mean()),
                std_hedged=float(total.std(ddof=1)),
                pnl_unhedged=cash, pnl_hedged=total))
        return reports

    # ------------------------------------------------------------- internals

    def _resolve_schedules(self, plans):
        """Per plan: key -> sorted rebalance dates; plus the union per key."""
        per_plan = []
        union = {}
        for plan in plans:
            m = {}
            for key, (fb, fa) in plan.schedules.items():
                days = rebalance_schedule(self.grid, self.contract, fa, fb)
                m[key] = set(int(d) for d in days)
                union.setdefault(key, set()).update(m[key])
            per_plan.append(m)
        missing = sorted({t for days in union.values() for t in days
                          if t not in self.result.dates})
        if missing:
            raise ConfigError(f"stored strategy lacks delta estimators at days "
                              f"{missing[:5]} (readout dates too sparse)")
        return per_plan, union

    def _key_active(self, key: str, t: int) -> bool:
        store = self.result.dates[t]
        if key == "fx":
            return "fx" in store.delta_coef
        j = 0 if key == "gas" else int(key[3:])
        if not self.calendar.quoted(t, j):
            return False
        if key not in store.delta_coef:
            raise ConfigError(f"no stored {key!r} deltas at day {t}")
        return True

    def _horizon(self, j: int) -> int:
        return self.calendar.horizons.get(j, -1)

    def _sum_f0(self, product) -> float:
        got = self._strip_sum_f0.get(product)
        if got is None:
            curve = self.tables.curve[product.commodity]
            got = float(curve[product.start:product.end + 1].sum())
            self._strip_sum_f0[product] = got
        return got

    def _run_chunk(self, plans, schedules, n_paths, seed, offset, track_paths):
        per_plan, union = schedules
        ps = simulate(self.model, self.grid, n_paths, seed, path_offset=offset,
                      tables=self.tables)
        series = IndexSeries(self.ispec, ps)
        spot_prefix = {}
        for j in [0] + self.index_commodities:
            pref = np.zeros((ps.n_dates + 1, n_paths))
            np.cumsum(ps.spot[:, j, :], axis=0, out=pref[1:])
            spot_prefix[j] = pref

        q_taken = np.zeros(n_paths)
        cash = np.zeros(n_paths)
        hedge = np.zeros((len(plans), n_paths))
        books = {}                       # (plan_idx, key) -> _Position

        for t in range(0, self.contract.i_end + 1):
            reb_keys = [k for k, days in union.items() if t in days]
            strips = {}
            if reb_keys or t == self.contract.i_end:
                strips = self._forward_strips(ps, t)
            # settle positions for components rebalancing today (or expiring)
            for (pi, key), pos in list(books.items()):
                due = t in per_plan[pi].get(key, ()) or t == self.contract.i_end
                if not due:
                    continue
                hedge[pi] += self._settle(pos, t, strips, spot_prefix, ps)
                del books[pi, key]
            # read conditional deltas once per component, reuse across plans
            if reb_keys and t < self.contract.i_end:
                active = [k for k in reb_keys if self._key_active(k, t)]
                deltas = self._read_deltas(t, ps, series, q_taken, strips, active)
                for pi, plan in enumerate(plans):
                    for key in active:
                        if t not in per_plan[pi].get(key, ()):
                            continue
                        books[pi, key] = self._open_position(
                            key, t, deltas[key], strips, ps)
                        if track_paths:
                            self._track(pi, plans[pi], key, t, books[pi, key],
                                        track_paths)
            # exercise
            if self.contract.is_exercise_day(t):
                x, active = regressor_matrix(self.rspec, t, ps, series)
                if t < self.contract.i_end:
                    store = self.result.dates[t]
                    if store.active_vars != active:
                        raise ConfigError(f"regressor mismatch at day {t}: stored "
                                          f"{store.active_vars}, rebuilt {active}")
                    chat = store.continuation().evaluate(x).T
                else:
                    chat = np.zeros((1, n_paths))
                payoff = ps.spot[t, 0] - series.on_day(t)
                q_star, _ = decide_forward(self.contract, self.levels, t,
                                           payoff, q_taken, chat)
                cash += q_star * payoff
                q_taken = q_taken + q_star
        return cash, hedge

    def _forward_strips(self, ps, t):
        """Per commodity: cumulative strip values sum_m F(t, m) for m in
        (t, horizon], as cs arrays with cs[k] = sum over the first k days."""
        out = {}
        for j in [0] + self.index_commodities:
            h = self._horizon(j)
            if h <= t:
                out[j] = (np.zeros((1, ps.n_paths)), None)
                continue
            deliveries = np.arange(t + 1, h + 1)
            tang = tangent_strip(ps, self.tables, j, t, deliveries)
            fwd = tang * self.tables.curve[j][deliveries][:, None]
            cs = np.zeros((deliveries.size + 1, ps.n_paths))
            np.cumsum(fwd, axis=0, out=cs[1:])
            out[j] = (cs, tang)
        return out

    def _strip_value(self, strips, j, t, m0, m1):
        """sum_{m=m0..m1} F(t, m) per path, for m0 >= t + 1."""
        cs, _ = strips[j]
        a = max(m0 - t, 1)
        b = min(m1 - t + 1, cs.shape[0])
        if b <= a - 1 or a >= cs.shape[0]:
            return 0.0
        return cs[b - 1] - cs[a - 1]

    def _settle(self, pos: _Position, t, strips, spot_prefix, ps):
        """P&L of a held position: delivered days at spot, live days marked
        on today's curve, FX marked at today's rate."""
        if pos.entry_fx is not None:
            pnl = np.zeros(ps.n_paths)
            for r, col in enumerate(self.fx_columns):
                pnl += pos.quantity[r] * (ps.fx[t, col] - pos.entry_fx[r])
            return pnl
        pnl = np.zeros(ps.n_paths)
        for r, p in enumerate(pos.products):
            delivered_to = min(p.end, t)
            value = np.zeros(ps.n_paths)
            if delivered_to >= p.start:
                pref = spot_prefix[p.commodity]
                value += pref[delivered_to + 1] - pref[p.start]
            if p.end > t:
                value = value + self._strip_value(strips, p.commodity, t,
                                                  max(p.start, t + 1), p.end)
            pnl += pos.quantity[r] * (value - pos.entry_value[r])
        return pnl

    def _read_deltas(self, t, ps, series, q_taken, strips, keys):
        """Conditional deltas per ledger key at the fresh paths' states."""
        store = self.result.dates[t]
        x, active = regressor_matrix(self.rspec, t, ps, series)
        if store.active_vars != active:
            raise ConfigError(f"regressor mismatch at day {t}")
        cells = store.partition().locate(x)
        col, w = self.levels.bracket(t, q_taken)
        n_lv = self.levels.n_levels(t)
        out = {}
        for key in keys:
            if key not in store.delta_coef:
                raise ConfigError(f"no stored {key!r} deltas at day {t}")
            est = store.deltas(key)
            rows = store.delta_rows[key]
            base = np.arange(rows)[None, :] * n_lv
            c0 = base + col[:, None]
            c1 = base + np.minimum(col[:, None] + 1, n_lv - 1)
            v0 = est.evaluate_columns(x, c0, cells=cells)
            v1 = est.evaluate_columns(x, c1, cells=cells)
            raw = ((1.0 - w[:, None]) * v0 + w[:, None] * v1).T   # (rows, paths)
            out[key] = self._normalize_delta(key, t, raw, strips, ps)
        return out

    def _normalize_delta(self, key, t, raw, strips, ps):
        if key == "fx":
            deltas = np.empty_like(raw)
            for r, col in enumerate(self.fx_columns):
                y = ps.fx[t, col] / self.model.active_fx[col].x0
                deltas[r] = -raw[r] / y
            return deltas
        j = 0 if key == "gas" else int(key[3:])
        sign = 1.0 if key == "gas" else -1.0
        products = self.calendar.quoted(t, j)
        if len(products) != raw.shape[0]:
            raise ConfigError(f"product count mismatch for {key!r} at day {t}")
        _, tang = strips[j]
        deltas = np.empty_like(raw)
        for r, p in enumerate(products):
            y_eta = tang[p.start - (t + 1)]
            deltas[r] = sign * raw[r] / (y_eta * self._sum_f0(p))
        return deltas

    def _open_position(self, key, t, deltas, strips, ps):
        if key == "fx":
            entry = np.stack([ps.fx[t, col] for col in self.fx_columns])
            return _Position(None, -deltas, None, t, entry_fx=entry)
        j = 0 if key == "gas" else int(key[3:])
        products = self.calendar.quoted(t, j)
        entry = np.stack([self._strip_value(strips, j, t, p.start, p.end)
                          for p in products]) if products else np.zeros((0, ps.n_paths))
        return _Position(products, -deltas, entry, t)

    def _track(self, pi, plan, key, t, pos, n):
        if key == "fx":
            for r, col in enumerate(self.fx_columns):
                for p_ix in range(min(n, pos.quantity.shape[1])):
                    self.tracked.append((plan.name, p_ix, t, f"fx{col}", "", "",
                                         float(pos.quantity[r, p_ix])))
        else:
            for r, prod in enumerate(pos.products):
                for p_ix in range(min(n, pos.quantity.shape[1])):
                    self.tracked.append((plan.name, p_ix, t, key,
                                         str(self.grid.date(prod.start)),
                                         str(self.grid.date(prod.end)),
                                         float(pos.quantity[r, p_ix])))


def component_study(bt: Backtester, n_paths: int, seed: int, *,
                    chunk_size: int = 4096) -> list[HedgeReport]:
    """The five component plans: gas spot only, index commodities without FX,
    index commodities with FX, FX only, and the total hedge."""
    coms = bt.index_commodities
    have_fx = bool(bt.fx_columns)
    daily = ("daily", "daily")
    plans = [
        HedgePlan("spot_gas", {"gas": daily}),
        HedgePlan("index_components", {f"com{j}": daily for j in coms}),
    ]
    with_fx = {f"com{j}": daily for j in coms}
    if have_fx:
        with_fx["fx"] = daily
        plans.append(HedgePlan("index_and_fx", with_fx))
        plans.append(HedgePlan("fx_only", {"fx": daily}))
    plans.append(HedgePlan.total(coms, have_fx))
    return bt.run(plans, n_paths, seed, chunk_size=chunk_size)


def frequency_study(bt: Backtester, n_paths: int, seed: int, *,
                    frequencies=("daily", "twice_weekly", "weekly", "twice_monthly"),
                    before_start: bool = False,
                    chunk_size: int = 4096) -> list[HedgeReport]:
    """Total hedges with the index legs rebalanced at decreasing paces;
    with ``before_start`` the pace only thins before the first exercise day."""
    coms = bt.index_commodities
    have_fx = bool(bt.fx_columns)
    plans = []
    for f in frequencies:
        if before_start:
            plans.append(HedgePlan.index_paced(coms, have_fx, "daily", f,
                                               name=f"before_{f}"))
        else:
            plans.append(HedgePlan.index_paced(coms, have_fx, f))
    return bt.run(plans, n_paths, seed, chunk_size=chunk_size)
