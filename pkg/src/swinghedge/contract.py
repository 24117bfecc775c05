"""Swing contract terms, the moving-average index, and feasible exercise volumes.

The index resets on given dates T_0 < T_1 < ... and is constant in between:

    I(t) = a_0 + sum_j a_j * (avg_j - b_j) * X_j(T_k),   k = k(t),

where avg_j is the arithmetic mean of commodity j's daily spots over the
window of ``window`` days ending ``lag`` days before T_k, and X_j is the
exchange rate observed at T_k (1 for domestic components).  Month-based lag
and window lengths are resolved to days against the real calendar per reset.
"""

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .dates import TimeGrid, add_months
from .errors import ConfigError, DomainError, InfeasibilityError
from .model import PathSet

__all__ = [
    "ContractSpec", "IndexComponent", "IndexSpec", "IndexSeries",
    "reset_index_of", "moving_average", "index_value", "partial_index",
    "feasible_range", "feasible_range_clamped",
]


@dataclass
class ContractSpec:
    """Daily exercise window with per-day and total volume bounds."""

    grid: TimeGrid
    t_start: dt.date
    t_end: dt.date
    q_max: float
    q_min_total: float
    q_max_total: float

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ConfigError("contract start after contract end")
        self.i_start = self.grid.index(self.t_start)
        self.i_end = self.grid.index(self.t_end)
        if self.q_max < 0:
            raise ConfigError("q_max must be nonnegative")
        cap = self.q_max * self.n_exercise_days
        if not 0 <= self.q_min_total <= self.q_max_total:
            raise ConfigError("need 0 <= Q_min <= Q_max")
        if self.q_min_total > cap + 1e-9:
            raise ConfigError(f"Q_min={self.q_min_total} exceeds maximum take {cap}")

    @property
    def n_exercise_days(self) -> int:
        return self.i_end - self.i_start + 1

    def exercise_days_before(self, t: int) -> int:
        return int(np.clip(t - self.i_start, 0, self.n_exercise_days))

    def exercise_days_from(self, t: int) -> int:
        """Exercise days in [t, t_end]."""
        return int(np.clip(self.i_end - max(t, self.i_start) + 1, 0,
                           self.n_exercise_days))

    def is_exercise_day(self, t: int) -> bool:
        return self.i_start <= t <= self.i_end


@dataclass
class IndexComponent:
    commodity: int            # index into MarketModel.commodities, >= 1
    weight: float             # a_j
    offset: float = 0.0       # b_j
    lag_months: int = 0
    window_months: int = 1
    fx_column: int | None = None   # column in PathSet.fx, None = domestic
    name: str = ""

    def __post_init__(self):
        if self.commodity < 1:
            raise ConfigError("index components reference commodities 1..N")
        if self.lag_months < 0 or self.window_months < 1:
            raise ConfigError(f"component {self.name!r}: need lag >= 0 and window >= 1 months")


class IndexSpec:
    """Index composition with reset dates resolved onto the simulation grid.

    For each reset and component the averaging window is the half-open day
    range [T_k - lag - window, T_k - lag); both bounds come from calendar
    month arithmetic and are stored as grid indices.
    """

    def __init__(self, a0: float, components: list[IndexComponent],
                 resets: list[dt.date], grid: TimeGrid):
        if not resets:
            raise ConfigError("at least one index reset date is required")
        if any(b >= a for a, b in zip(resets[1:], resets)):
            raise ConfigError("reset dates must be strictly increasing")
        self.a0 = float(a0)
        self.components = components
        self.grid = grid
        self.reset_dates = list(resets)
        self.reset_idx = np.array([grid.index(d) for d in resets], dtype=int)
        n_k, n_c = len(resets), len(components)
        self.win_start = np.zeros((n_k, n_c), dtype=int)
        self.win_end = np.zeros((n_k, n_c), dtype=int)   # exclusive
        for k, day in enumerate(resets):
            for c, comp in enumerate(components):
                end = add_months(day, -comp.lag_months)
                start = add_months(day, -comp.lag_months - comp.window_months)
                if start < grid.start:
                    raise ConfigError(
                        f"averaging window of component {comp.name!r} for reset {day} "
                        f"starts {start}, before the simulation grid ({grid.start})")
                self.win_start[k, c] = grid.index(start)
                self.win_end[k, c] = grid.index(end) if end <= grid.end \
                    else grid.n_dates  # end == T_k <= grid end in practice
        self.window_days = self.win_end - self.win_start
        self.lag_days = self.reset_idx[:, None] - self.win_end

    @property
    def n_resets(self) -> int:
        return len(self.reset_idx)

    @property
    def last_reset(self) -> int:
        return int(self.reset_idx[-1])


def reset_index_of(spec: IndexSpec, i: int) -> int:
    """Largest k with T_k <= i."""
    if i < spec.reset_idx[0]:
        raise DomainError(f"day {i} is before the first reset {spec.reset_idx[0]}")
    return int(np.searchsorted(spec.reset_idx, i, side="right") - 1)


def moving_average(ps: PathSet, path: int, j: int, reset_day: int,
                   lag_days: int, window_days: int) -> float:
    """Mean of commodity j's spots over the ``window_days`` days strictly
    before ``reset_day - lag_days``."""
    if window_days < 1:
        raise DomainError("window must cover at least one day")
    end = reset_day - lag_days
    start = end - window_days
    if start < 0 or end > ps.n_dates:
        raise DomainError(f"averaging window [{start}, {end}) exits the grid")
    return float(ps.spot[start:end, j, path].mean())


def index_value(spec: IndexSpec, ps: PathSet, path: int, i: int) -> float:
    """Index level on day i (constant on each reset period)."""
    k = reset_index_of(spec, i)
    tk = int(spec.reset_idx[k])
    total = spec.a0
    for c, comp in enumerate(spec.components):
        avg = moving_average(ps, path, comp.commodity, tk,
                             int(spec.lag_days[k, c]), int(spec.window_days[k, c]))
        x = float(ps.fx_at(tk, comp.fx_column)[path])
        total += comp.weight * (avg - comp.offset) * x
    return total


def partial_index(spec: IndexSpec, ps: PathSet, path: int, i: int) -> float:
    """Next period's index built from the fixings observed up to day i.

    Component averages run over the already-observed part of the next reset's
    window; a component with no observed fixing yet contributes through the
    current spot instead.  FX is observed at day i.
    """
    series = IndexSeries(spec, ps)
    return float(series.partial_on_day(i)[path])


class IndexSeries:
    """Vectorized index and partial-index values across all paths."""

    def __init__(self, spec: IndexSpec, ps: PathSet):
        self.spec = spec
        self.ps = ps
        n_dates = ps.n_dates
        coms = sorted({c.commodity for c in spec.components})
        self._prefix = {}
        for j in coms:
            pref = np.zeros((n_dates + 1, ps.n_paths))
            np.cumsum(ps.spot[:, j, :], axis=0, out=pref[1:])
            self._prefix[j] = pref
        # window averages and index value at each reset
        self.reset_avg = np.zeros((spec.n_resets, len(spec.components), ps.n_paths))
        self.at_reset = np.full((spec.n_resets, ps.n_paths), spec.a0)
        for k in range(spec.n_resets):
            tk = int(spec.reset_idx[k])
            for c, comp in enumerate(spec.components):
                avg = self.window_average(comp.commodity, int(spec.win_start[k, c]),
                                          int(spec.win_end[k, c]))
                self.reset_avg[k, c] = avg
                x = ps.fx_at(tk, comp.fx_column)
                self.at_reset[k] += comp.weight * (avg - comp.offset) * x

    def window_average(self, j: int, start: int, end: int) -> np.ndarray:
        if end <= start:
            raise DomainError("empty averaging window")
        pref = self._prefix[j]
        return (pref[end] - pref[start]) / (end - start)

    def on_day(self, i: int) -> np.ndarray:
        k = reset_index_of(self.spec, i)
        return self.at_reset[k]

    def partial_on_day(self, i: int) -> np.ndarray:
        spec, ps = self.spec, self.ps
        if i < spec.reset_idx[0]:
            nxt = 0
        else:
            nxt = reset_index_of(spec, i) + 1
        if nxt >= spec.n_resets:
            raise DomainError(f"day {i} is at or past the last reset; "
                              "no next index is under construction")
        out = np.full(ps.n_paths, spec.a0)
        for c, comp in enumerate(spec.components):
            ws, we = int(spec.win_start[nxt, c]), int(spec.win_end[nxt, c])
            obs_end = min(i + 1, we)
            n_obs = obs_end - ws
            if n_obs >= 1:
                avg = self.window_average(comp.commodity, ws, obs_end)
            else:
                avg = ps.spot[i, comp.commodity, :]
            x = ps.fx_at(i, comp.fx_column)
            out += comp.weight * (avg - comp.offset) * x
        return out


def feasible_range(c: ContractSpec, t: int, q_taken: float) -> tuple[float, float]:
    """Bounds (q_lo, q_hi) on today's exercise given volume already taken.

    Raises InfeasibilityError when the state cannot satisfy the contract
    (signals a volume-grid or interpolation bug upstream).
    """
    if not c.is_exercise_day(t):
        raise DomainError(f"day {t} is outside the exercise window")
    rest = c.exercise_days_from(t) - 1     # days strictly after t
    q_lo = max(0.0, c.q_min_total - q_taken - c.q_max * rest)
    q_hi = min(c.q_max, c.q_max_total - q_taken)
    if q_lo > q_hi + 1e-9:
        raise InfeasibilityError(
            f"volume {q_taken} on day {t} cannot satisfy the contract bounds")
    return min(q_lo, q_hi), q_hi


def feasible_range_clamped(c: ContractSpec, t: int, q_taken):
    """Vectorized bounds with the lower bound clamped into [0, q_hi].

    Volume states slightly outside the feasible band (bracketing grid levels)
    get the best-effort control range instead of an error, which extends the
    value function linearly past the boundary.
    """
    if not c.is_exercise_day(t):
        raise DomainError(f"day {t} is outside the exercise window")
    rest = c.exercise_days_from(t) - 1
    q_lo = np.maximum(0.0, c.q_min_total - q_taken - c.q_max * rest)
    q_hi = np.minimum(c.q_max, np.maximum(0.0, c.q_max_total - q_taken))
    return np.minimum(q_lo, q_hi), q_hi
