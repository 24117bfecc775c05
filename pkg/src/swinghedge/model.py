"""Correlated multi-factor forward-curve, spot and FX simulation.

Each commodity follows a lognormal forward-curve model driven by
mean-reverting factors,

    dF(t,T)/F(t,T) = sum_i sigma_i(t) exp(-a_i (T-t)) dz_i,

whose integrated form is F(t,T) = F(0,T) exp(-V(t,T)/2 + sum_i
exp(-a_i (T-t)) W_i(t)) with W_i the Ornstein-Uhlenbeck factor states.  Spots
are the T->t limit of the forwards.  FX rates follow a lognormal process with
deterministic foreign short rate and zero domestic rate.  Factor states are
stepped with the exact Gaussian transition (no Euler bias), with increments
correlated across all drivers through one correlation matrix.

The tangent processes (ratios to the initial curve / initial FX) are exposed
for pathwise delta accumulation.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dates import DT, TimeGrid
from .errors import ConfigError, DomainError
from .rng import BLOCK, block_normals

__all__ = [
    "CommodityFactor", "CommodityModel", "FxModel", "MarketModel", "PathSet",
    "ModelTables", "simulate", "forward_log_variance", "forward_price",
    "forward_tangent", "fx_tangent", "psd_factor",
]


@dataclass
class CommodityFactor:
    """One driving factor: piecewise-constant volatility and mean reversion.

    ``sigma`` is either a scalar or a per-grid-day array (units 1/sqrt(year));
    ``mean_reversion`` is per year, zero for a long-term factor.
    """

    sigma: float | np.ndarray
    mean_reversion: float = 0.0

    def __post_init__(self):
        sig = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if np.any(sig < 0):
            raise ConfigError("factor volatility must be nonnegative")
        if self.mean_reversion < 0:
            raise ConfigError("mean reversion must be nonnegative")

    def sigma_per_step(self, n_steps: int) -> np.ndarray:
        sig = np.asarray(self.sigma, dtype=float)
        if sig.ndim == 0:
            return np.full(n_steps, float(sig))
        if sig.size < n_steps:
            raise ConfigError(f"piecewise volatility has {sig.size} days, grid needs {n_steps}")
        return sig[:n_steps].astype(float)


@dataclass
class CommodityModel:
    """Forward-curve model for one commodity (quoted in its own currency)."""

    name: str
    factors: list[CommodityFactor]
    initial_curve: np.ndarray  # F(0, T) per grid day T

    def __post_init__(self):
        self.initial_curve = np.asarray(self.initial_curve, dtype=float)
        if not self.factors:
            raise ConfigError(f"commodity {self.name!r} needs at least one factor")
        if np.any(self.initial_curve <= 0):
            raise ConfigError(f"initial curve of {self.name!r} must be strictly positive")

    @property
    def n_factors(self) -> int:
        return len(self.factors)


@dataclass
class FxModel:
    """Lognormal exchange rate (domestic per foreign unit), domestic rate 0."""

    name: str
    sigma: float
    r_foreign: float | np.ndarray = 0.0
    x0: float = 1.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError(f"fx {self.name!r}: volatility must be nonnegative")
        if self.x0 <= 0:
            raise ConfigError(f"fx {self.name!r}: initial rate must be positive")

    def r_per_step(self, n_steps: int) -> np.ndarray:
        r = np.asarray(self.r_foreign, dtype=float)
        if r.ndim == 0:
            return np.full(n_steps, float(r))
        if r.size < n_steps:
            raise ConfigError(f"fx {self.name!r}: rate curve has {r.size} days, grid needs {n_steps}")
        return r[:n_steps].astype(float)


def psd_factor(matrix: np.ndarray, what: str = "correlation") -> np.ndarray:
    """Symmetric PSD factorization C with C @ C.T == matrix.

    Eigenvalues of the correlation-normalized matrix below -1e-8 raise a
    ConfigError naming ``what``; negatives above that are clipped to zero,
    with a warning when they exceed 1e-10 in magnitude.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{what} matrix must be square, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ConfigError(f"{what} matrix is not symmetric")
    diag = np.diag(m)
    if np.any(diag < -1e-12):
        raise ConfigError(f"{what} matrix has a negative diagonal entry")
    d = np.sqrt(diag.clip(min=0.0))
    safe = np.where(d > 0, d, 1.0)
    r = m / np.outer(safe, safe)
    # zero-variance drivers keep a unit diagonal and no coupling
    dead = d == 0
    r[dead, :] = 0.0
    r[:, dead] = 0.0
    np.fill_diagonal(r, np.where(dead, 1.0, np.diag(r)))
    lam, vec = np.linalg.eigh(r)
    if lam.min() < -1e-8:
        raise ConfigError(f"{what} matrix is not positive semi-definite "
                          f"(eigenvalue {lam.min():.3e})")
    if lam.min() < -1e-10:
        warnings.warn(f"{what} matrix has small negative eigenvalue "
                      f"{lam.min():.3e}; clipped to 0", stacklevel=2)
    lam = lam.clip(min=0.0)
    c = vec * np.sqrt(lam)
    return c * d[:, None]


@dataclass
class MarketModel:
    """Commodities (index 0 is the arbitrage gas market), FX rates, and the
    correlation matrix over all Brownian drivers.

    ``fx`` has one entry per index commodity (commodities[1:]); ``None`` marks
    a domestic quotation (rate identically 1).  Driver order is commodity 0
    factors, commodity 1 factors, ..., then the non-domestic FX rates in
    listing order.
    """

    commodities: list[CommodityModel]
    fx: list[FxModel | None] = field(default_factory=list)
    correlation: np.ndarray | None = None

    def __post_init__(self):
        if not self.commodities:
            raise ConfigError("at least one commodity (the arbitrage market) is required")
        if len(self.fx) not in (0, len(self.commodities) - 1):
            raise ConfigError("fx list must have one entry per index commodity")
        if len(self.fx) < len(self.commodities) - 1:
            self.fx = self.fx + [None] * (len(self.commodities) - 1 - len(self.fx))
        n = self.n_drivers
        if self.correlation is None:
            self.correlation = np.eye(n)
        self.correlation = np.asarray(self.correlation, dtype=float)
        if self.correlation.shape != (n, n):
            raise ConfigError(f"correlation must be {n}x{n} for {n} drivers, "
                              f"got {self.correlation.shape}")
        if not np.allclose(np.diag(self.correlation), 1.0, atol=1e-12):
            raise ConfigError("correlation matrix must have unit diagonal")
        if np.any(np.abs(self.correlation) > 1 + 1e-12):
            raise ConfigError("correlation entries must lie in [-1, 1]")
        psd_factor(self.correlation)  # fail fast on a bad matrix

    @property
    def n_commodities(self) -> int:
        return len(self.commodities)

    @property
    def active_fx(self) -> list[FxModel]:
        return [f for f in self.fx if f is not None]

    def fx_column(self, component_commodity: int) -> int | None:
        """Column in the simulated FX array for index commodity j (1-based), or None."""
        if not 1 <= component_commodity < len(self.commodities):
            raise DomainError(f"commodity {component_commodity} is not an index commodity")
        entry = self.fx[component_commodity - 1]
        if entry is None:
            return None
        col = 0
        for f in self.fx[:component_commodity - 1]:
            if f is not None:
                col += 1
        return col

    @property
    def n_drivers(self) -> int:
        return sum(c.n_factors for c in self.commodities) + len(self.active_fx)

    def factor_offset(self, j: int) -> int:
        return sum(c.n_factors for c in self.commodities[:j])


class ModelTables:
    """Per-grid precomputations: vols per step, log-variance tables, decays,
    and the factorized per-step increment covariance."""

    def __init__(self, model: MarketModel, grid: TimeGrid):
        self.model = model
        self.grid = grid
        n_steps = grid.n_steps
        self.n_factors_total = sum(c.n_factors for c in model.commodities)
        self.fx_models = model.active_fx
        self.n_fx = len(self.fx_models)

        self.sig = []        # per commodity: (n_factors, n_steps)
        self.mr = []         # per commodity: (n_factors,)
        self.curve = []
        for c in model.commodities:
            if c.initial_curve.size < grid.n_dates:
                raise ConfigError(f"initial curve of {c.name!r} covers {c.initial_curve.size} "
                                  f"days, grid needs {grid.n_dates}")
            self.sig.append(np.stack([f.sigma_per_step(n_steps) for f in c.factors]))
            self.mr.append(np.array([f.mean_reversion for f in c.factors]))
            self.curve.append(c.initial_curve[:grid.n_dates])
        self.fx_sig = np.array([f.sigma for f in self.fx_models])
        self.fx_rate = np.stack([f.r_per_step(n_steps) for f in self.fx_models]) \
            if self.n_fx else np.zeros((0, n_steps))
        self.fx_x0 = np.array([f.x0 for f in self.fx_models])

        # decay[j][i, k] = exp(-a_i * k * DT) for day offsets k
        k = np.arange(grid.n_dates) * DT
        self.decay = [np.exp(-self.mr[j][:, None] * k[None, :])
                      for j in range(model.n_commodities)]
        self.v = [self._v_table(j) for j in range(model.n_commodities)]
        self._step_factors: dict[bytes, np.ndarray] = {}

    def _v_table(self, j: int) -> np.ndarray:
        """V(t, T) of the log forward for all grid pairs t <= T."""
        n = self.grid.n_dates
        sig, mr = self.sig[j], self.mr[j]
        off = self.model.factor_offset(j)
        rho = self.model.correlation
        out = np.zeros((n, n))
        for i in range(len(mr)):
            for k in range(i, len(mr)):
                w = (1.0 if i == k else 2.0) * rho[off + i, off + k]
                if w == 0.0:
                    continue
                ss = sig[i] * sig[k]                       # per step u
                s = mr[i] + mr[k]
                if s == 0.0:
                    col = np.concatenate(([0.0], np.cumsum(ss) * DT))
                    out += w * col[:, None]                # T-independent
                else:
                    # g[m] = integral over one day at lag m from T
                    g = (np.exp(-s * np.arange(n) * DT) -
                         np.exp(-s * np.arange(1, n + 1) * DT)) / s
                    for T in range(1, n):
                        col = np.cumsum(ss[:T] * g[T - 1::-1][:T])
                        out[1:T + 1, T] += w * col
        return out

    def step_covariance(self, day: int) -> np.ndarray:
        """Exact covariance of the stacked driver increments over one day."""
        d = self.n_factors_total + self.n_fx
        sig_col = np.empty(d)
        a_col = np.empty(d)
        pos = 0
        for j in range(self.model.n_commodities):
            nf = len(self.mr[j])
            sig_col[pos:pos + nf] = self.sig[j][:, day]
            a_col[pos:pos + nf] = self.mr[j]
            pos += nf
        sig_col[pos:] = self.fx_sig
        a_col[pos:] = 0.0
        s = a_col[:, None] + a_col[None, :]
        with np.errstate(invalid="ignore"):
            psi = np.where(s > 0, -np.expm1(-s * DT) / np.where(s > 0, s, 1.0), DT)
        cov = self.model.correlation * np.outer(sig_col, sig_col) * psi
        return cov

    def step_factor(self, day: int) -> np.ndarray:
        key = self._signature(day)
        c = self._step_factors.get(key)
        if c is None:
            c = psd_factor(self.step_covariance(day), what="step covariance")
            self._step_factors[key] = c
        return c

    def _signature(self, day: int) -> bytes:
        cols = [self.sig[j][:, day] for j in range(self.model.n_commodities)]
        return np.concatenate(cols + [self.fx_sig]).tobytes()

    def constant_step(self) -> bool:
        return len({self._signature(d) for d in range(max(self.grid.n_steps, 1))}) <= 1


@dataclass
class PathSet:
    """Simulated factor states, spots and FX rates on the daily grid.

    Arrays are date-major: ``spot[t, j, p]``, ``fx[t, col, p]`` and
    ``w[j][t, i, p]``.  Contents are a pure function of (seed, global path
    index, grid), so chunked generation is bit-identical to monolithic.
    """

    grid: TimeGrid
    spot: np.ndarray                 # (n_dates, n_commodities, n_paths)
    fx: np.ndarray                   # (n_dates, n_fx, n_paths)
    w: list[np.ndarray] | None       # per commodity (n_dates, n_factors, n_paths)
    seed: int
    path_offset: int = 0

    @property
    def n_paths(self) -> int:
        return self.spot.shape[2]

    @property
    def n_dates(self) -> int:
        return self.spot.shape[0]

    def fx_at(self, t: int, column: int | None) -> np.ndarray:
        """FX level per path; a domestic component (column None) is rate 1."""
        if column is None:
            return np.ones(self.n_paths)
        return self.fx[t, column]

    def write_csv(self, fh) -> None:
        """Debug dump: one row per (path, date, commodity)."""
        fh.write("path,date,commodity,spot,fx\n")
        for p in range(self.n_paths):
            for t in range(self.n_dates):
                day = self.grid.date(t)
                for j in range(self.spot.shape[1]):
                    x = self.fx[t, 0, p] if self.fx.shape[1] else ""
                    fh.write(f"{p + self.path_offset},{day},{j},"
                             f"{self.spot[t, j, p]!r},{x!r}\n")


def simulate(model: MarketModel, grid: TimeGrid, n_paths: int, seed: int, *,
             path_offset: int = 0, store_factors: bool = True,
             tables: ModelTables | None = None) -> PathSet:
    """Simulate ``n_paths`` daily paths of all spots and FX rates.

    Factor states use the exact Gaussian transition per day with increments
    drawn through the factorized step covariance; FX uses the exact lognormal
    step with zero domestic rate.  ``path_offset`` selects which global paths
    are generated (for chunked runs).
    """
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    t = tables if tables is not None else ModelTables(model, grid)
    n_dates, n_steps = grid.n_dates, grid.n_steps
    n_com = model.n_commodities
    totf, nfx = t.n_factors_total, t.n_fx
    d = totf + nfx

    spot = np.empty((n_dates, n_com, n_paths))
    fx = np.empty((n_dates, nfx, n_paths))
    w_store = [np.empty((n_dates, len(t.mr[j]), n_paths)) for j in range(n_com)] \
        if store_factors else None

    decay_step = np.concatenate([np.exp(-t.mr[j] * DT) for j in range(n_com)])
    fx_drift = -(t.fx_rate + 0.5 * t.fx_sig[:, None] ** 2) * DT if nfx else None
    const_step = t.constant_step() and n_steps > 0
    c0 = t.step_factor(0).T if const_step else None

    offsets = [model.factor_offset(j) for j in range(n_com)]

    def emit(day, w_cur, lnx, p0, p1):
        for j in range(n_com):
            o, nf = offsets[j], len(t.mr[j])
            wj = w_cur[o:o + nf]
            if store_factors:
                w_store[j][day, :, p0:p1] = wj
            spot[day, j, p0:p1] = t.curve[j][day] * np.exp(
                -0.5 * t.v[j][day, day] + wj.sum(axis=0))
        if nfx:
            fx[day, :, p0:p1] = np.exp(lnx)

    done = 0
    while done < n_paths:
        first = path_offset + done
        nblk = min(BLOCK - first % BLOCK, n_paths - done)
        z = block_normals(seed, first, nblk, (n_steps, d))
        if const_step:
            eps_all = (z.reshape(-1, d) @ c0).reshape(nblk, n_steps, d)
        w_cur = np.zeros((totf, nblk))
        lnx = np.repeat(np.log(t.fx_x0)[:, None], nblk, axis=1) if nfx \
            else np.zeros((0, nblk))
        emit(0, w_cur, lnx, done, done + nblk)
        for day in range(n_steps):
            if const_step:
                eps = eps_all[:, day, :].T
            else:
                eps = (z[:, day, :] @ t.step_factor(day).T).T
            w_cur = decay_step[:, None] * w_cur + eps[:totf]
            if nfx:
                lnx = lnx + fx_drift[:, day][:, None] + eps[totf:]
            emit(day + 1, w_cur, lnx, done, done + nblk)
        done += nblk

    return PathSet(grid=grid, spot=spot, fx=fx, w=w_store, seed=seed,
                   path_offset=path_offset)


def forward_log_variance(model: MarketModel, grid: TimeGrid, j: int,
                         t1: int, t2: int, tables: ModelTables | None = None) -> float:
    """Integrated log-forward variance V(t1, t2) for commodity j, in closed form."""
    if t1 > t2:
        raise DomainError(f"t1={t1} must not exceed t2={t2}")
    if t1 < 0 or t2 >= grid.n_dates:
        raise DomainError(f"({t1}, {t2}) outside grid of {grid.n_dates} days")
    t = tables if tables is not None else ModelTables(model, grid)
    return float(t.v[j][t1, t2])


def forward_tangent(ps: PathSet, model: MarketModel, path: int, j: int,
                    t: int, T: int, tables: ModelTables | None = None) -> float:
    """Forward tangent Y(t; j, T) = F(t,T) / F(0,T); unit mean, 1 at t = 0."""
    if ps.w is None:
        raise DomainError("path set was simulated without stored factor states")
    if t > T:
        raise DomainError(f"observation day {t} after delivery day {T}")
    if T >= ps.grid.n_dates:
        raise DomainError(f"delivery day {T} beyond the initial-curve horizon")
    tab = tables if tables is not None else ModelTables(model, ps.grid)
    decay = tab.decay[j][:, T - t]
    expo = -0.5 * tab.v[j][t, T] + decay @ ps.w[j][t, :, path]
    return float(np.exp(expo))


def forward_price(ps: PathSet, model: MarketModel, path: int, j: int,
                  t: int, T: int, tables: ModelTables | None = None) -> float:
    """F(t, T) for one path: initial curve times the forward tangent."""
    tab = tables if tables is not None else ModelTables(model, ps.grid)
    return float(tab.curve[j][T]) * forward_tangent(ps, model, path, j, t, T, tables=tab)


def fx_tangent(ps: PathSet, model: MarketModel, path: int, j: int, t: int) -> float:
    """FX tangent Y(t; j) = X_t / X_0 for index commodity j (1-based)."""
    col = model.fx_column(j)
    if col is None:
        raise DomainError(f"commodity {j} is quoted domestically; no FX tangent")
    x0 = model.active_fx[col].x0
    return float(ps.fx[t, col, path] / x0)
