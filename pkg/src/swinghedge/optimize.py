"""Backward dynamic programming for the swing contract on a volume grid.

For each date (last exercise day back to the valuation date) and each
reachable volume level, the solver fits conditional expectations of the next
date's pathwise values per next volume level, picks the control maximizing
immediate payoff plus interpolated continuation over the control lattice, and
propagates the realized pathwise value (not the regression estimate) at the
post-decision volume.  Tangent-process delta ledgers ride along through an
injected engine that is rolled with the same post-decision interpolation.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contract import ContractSpec, IndexSeries, IndexSpec, feasible_range_clamped
from .dates import TimeGrid
from .errors import ConfigError, DomainError
from .model import MarketModel, ModelTables, PathSet
from .regress import CellFitter, CellPartition, ConditionalEstimator, RegressorSpec

__all__ = ["VolumeGrid", "LevelSystem", "interpolate_values", "candidate_controls",
           "decide_forward", "regressor_matrix", "DateStore", "SolveResult",
           "BackwardSolver"]


@dataclass(frozen=True)
class VolumeGrid:
    """Volume discretization: grid step for total volume, lattice step for
    the daily control."""

    step: float
    control_step: float

    def __post_init__(self):
        if self.step <= 0 or self.control_step <= 0:
            raise ConfigError("volume grid steps must be positive")


def interpolate_values(value_left, value_right, q_left: float, q_right: float, q: float):
    """Linear interpolation in volume between two adjacent grid levels."""
    if not q_left <= q <= q_right:
        raise DomainError(f"volume {q} outside grid cell [{q_left}, {q_right}]")
    if q_right == q_left:
        return value_left
    w = (q - q_left) / (q_right - q_left)
    return (1.0 - w) * value_left + w * value_right


class LevelSystem:
    """Reachable volume levels per date, including the bracketing level just
    outside the feasible band so interpolation stays defined."""

    def __init__(self, contract: ContractSpec, vgrid: VolumeGrid):
        self.contract = contract
        self.vgrid = vgrid
        delta = vgrid.step
        n_levels = round(contract.q_max_total / delta)
        if abs(n_levels * delta - contract.q_max_total) > 1e-9:
            raise ConfigError(f"volume step {delta} does not divide Q_max "
                              f"{contract.q_max_total}")
        self.top_level = int(n_levels)
        self.volumes = np.arange(self.top_level + 1) * delta
        self.n_controls = round(contract.q_max / vgrid.control_step)
        if abs(self.n_controls * vgrid.control_step - contract.q_max) > 1e-9:
            raise ConfigError(f"control step {vgrid.control_step} does not divide "
                              f"q_max {contract.q_max}")
        n = contract.grid.n_dates
        self.lo = np.zeros(n + 1, dtype=int)
        self.hi = np.zeros(n + 1, dtype=int)
        for t in range(min(n, contract.i_end + 1)):
            taken = contract.exercise_days_before(t)
            left = contract.exercise_days_from(t)
            q_low = max(0.0, contract.q_min_total - contract.q_max * left)
            q_up = min(contract.q_max_total, contract.q_max * taken)
            self.lo[t] = int(np.floor(q_low / delta + 1e-9))
            self.hi[t] = min(self.top_level, int(np.ceil(q_up / delta - 1e-9)))
            if self.hi[t] < self.lo[t]:
                self.hi[t] = self.lo[t]
        # past the last exercise day (and the virtual post-terminal state)
        # a single level suffices; values there are never read back

    def n_levels(self, t: int) -> int:
        return int(self.hi[t] - self.lo[t] + 1)

    def level_volumes(self, t: int) -> np.ndarray:
        return self.volumes[self.lo[t]:self.hi[t] + 1]

    def bracket(self, t: int, volume) -> tuple[np.ndarray, np.ndarray]:
        """(local column, weight) of ``volume`` between the levels stored at t."""
        volume = np.asarray(volume, dtype=float)
        lo, hi = int(self.lo[t]), int(self.hi[t])
        if hi == lo:
            return (np.zeros(volume.shape, dtype=int),
                    np.zeros(volume.shape))
        pos = volume / self.vgrid.step - lo
        col = np.clip(np.floor(pos), 0, hi - lo - 1).astype(int)
        w = np.clip(pos - col, 0.0, 1.0)
        return col, w


def candidate_controls(q_lo, q_hi, control_step: float, n_controls: int) -> np.ndarray:
    """Control lattice per state: q_lo, q_lo + dq, ..., clipped at q_hi, then
    q_hi itself.  Columns are nondecreasing, so the first argmax is the
    smallest maximizing control."""
    q_lo = np.atleast_1d(np.asarray(q_lo, dtype=float))
    q_hi = np.atleast_1d(np.asarray(q_hi, dtype=float))
    ladder = q_lo[:, None] + np.arange(n_controls + 1) * control_step
    cands = np.minimum(ladder, q_hi[:, None])
    return np.concatenate([cands, q_hi[:, None]], axis=1)


def decide_forward(contract: ContractSpec, levels: "LevelSystem", t: int,
                   payoff: np.ndarray, q_taken: np.ndarray,
                   chat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal control per state on the forward pass.

    ``payoff`` and ``q_taken`` are per state (n,); ``chat`` holds fitted
    continuation values per next volume level, (L_{t+1}, n) (zeros on the
    final exercise date).  Returns (q_star, total value); ties resolve to the
    smallest maximizing control, exactly as in the backward pass.
    """
    q_lo, q_hi = feasible_range_clamped(contract, t, q_taken)
    cands = candidate_controls(q_lo, q_hi, levels.vgrid.control_step,
                               levels.n_controls)
    after = q_taken[:, None] + cands
    col, w = levels.bracket(t + 1, after)
    rows = np.arange(cands.shape[0])[:, None]
    ct = chat.T
    left = ct[rows, col]
    right = ct[rows, np.minimum(col + 1, chat.shape[0] - 1)]
    total = cands * payoff[:, None] + (1.0 - w) * left + w * right
    best = np.argmax(total, axis=1)
    flat = np.arange(cands.shape[0])
    return cands[flat, best], total[flat, best]


def regressor_matrix(rspec: RegressorSpec, t: int, ps: PathSet,
                     series: IndexSeries) -> tuple[np.ndarray, tuple]:
    """Regressor columns at date t and the variable names actually present.

    The index column exists from the first reset on; the partial-index column
    only while a next index is under construction.
    """
    spec = series.spec
    have_index = t >= spec.reset_idx[0]
    have_partial = t < spec.last_reset
    active = rspec.active_variables(have_index, have_partial)
    cols = []
    for var in active:
        if var == "spot":
            cols.append(ps.spot[t, 0])
        elif var == "index":
            cols.append(series.on_day(t))
        else:
            cols.append(series.partial_on_day(t))
    return np.column_stack(cols), active


@dataclass
class DateStore:
    """Per-date fitted objects kept for the forward (simulation) pass."""

    t: int
    active_vars: tuple
    cells: tuple
    edges: list
    centers: np.ndarray
    cont_coef: np.ndarray | None = None        # (cells, 1+d, n_levels(t+1))
    delta_coef: dict = field(default_factory=dict)   # key -> (cells, 1+d, rows*levels)
    delta_rows: dict = field(default_factory=dict)   # key -> n_rows (products)

    def partition(self) -> CellPartition:
        return CellPartition(self.cells, self.edges, self.centers,
                             np.zeros(int(np.prod(self.cells)), dtype=int))

    def continuation(self) -> ConditionalEstimator:
        return ConditionalEstimator(self.partition(), self.cont_coef)

    def deltas(self, key: str) -> ConditionalEstimator:
        return ConditionalEstimator(self.partition(), self.delta_coef[key])


@dataclass
class SolveResult:
    value: float
    stderr: float
    levels: LevelSystem
    regressor: RegressorSpec
    dates: dict                       # t -> DateStore
    n_paths: int
    seed: int
    exercise_stats: list              # rows (t, mean_q, frac_lo, frac_hi)
    q_star: dict | None = None        # t -> (n_levels(t), n_paths), small runs only
    j_values: dict | None = None


class _StepContext:
    """What a ledger engine gets to see each backward step."""

    def __init__(self, t, solver, roll, qstar, exercising):
        self.t = t
        self.solver = solver
        self.ps = solver.ps
        self.series = solver.series
        self.tables = solver.tables
        self.levels = solver.levels
        self.roll = roll              # (rows, L_{t+1}, P) -> (rows, L_t, P)
        self.qstar = qstar            # (L_t, P) or None before the window
        self.exercising = exercising

    @property
    def n_levels(self) -> int:
        return self.levels.n_levels(self.t)

    @property
    def n_paths(self) -> int:
        return self.ps.n_paths


class BackwardSolver:
    """Least-squares Monte Carlo solver for the swing control problem."""

    def __init__(self, model: MarketModel, contract: ContractSpec,
                 index_spec: IndexSpec, vgrid: VolumeGrid,
                 rspec: RegressorSpec, *, readout_dates=(), ledger_engine=None,
                 store_policy: bool = False, n_threads: int = 1):
        self.model = model
        self.contract = contract
        self.index_spec = index_spec
        self.levels = LevelSystem(contract, vgrid)
        self.rspec = rspec
        self.readout_dates = frozenset(int(t) for t in readout_dates)
        self.engine = ledger_engine
        self.store_policy = store_policy
        self.n_threads = max(1, int(n_threads))
        self.ps = None
        self.series = None
        self.tables = None

    # -- backward pass ------------------------------------------------------

    def solve(self, ps: PathSet) -> SolveResult:
        self.ps = ps
        self.tables = ModelTables(self.model, self.contract.grid)
        self.series = IndexSeries(self.index_spec, ps)
        c, lv = self.contract, self.levels
        n_paths = ps.n_paths
        pool = ThreadPoolExecutor(self.n_threads) if self.n_threads > 1 else None

        if self.engine is not None:
            self.engine.bind(self)
            self.engine.init_terminal()

        j_values = np.zeros((1, n_paths))      # virtual post-terminal state
        dates: dict[int, DateStore] = {}
        stats = []
        q_store = {} if self.store_policy else None
        j_store = {} if self.store_policy else None

        for t in range(c.i_end, -1, -1):
            exercising = c.is_exercise_day(t)
            want_readout = t in self.readout_dates and self.engine is not None
            terminal = t == c.i_end

            fitter = None
            store = None
            if (exercising and not terminal) or want_readout:
                x, active = regressor_matrix(self.rspec, t, ps, self.series)
                cells, degrees = self.rspec.basis_for(x.shape[1])
                fitter = CellFitter(x, cells, degrees)
                store = DateStore(t=t, active_vars=active, cells=cells,
                                  edges=fitter.partition.edges,
                                  centers=fitter.partition.centers)
                dates[t] = store

            if exercising:
                if terminal:
                    chat = np.zeros((1, n_paths))
                else:
                    cont_coef = self._solve_rows(fitter, j_values, pool)
                    store.cont_coef = cont_coef
                    est = fitter.estimator(cont_coef)
                    chat = est.evaluate(x, cells=fitter.cell_ids).T
                payoff = ps.spot[t, 0] - self.series.on_day(t)
                vols = lv.level_volumes(t)
                qstar, roll_plan = self._decide_levels(t, payoff, vols, chat)
                j_new = self._roll_with(roll_plan, j_values[None, :, :])[0]
                j_new += qstar * payoff[None, :]
                roll = lambda arr, plan=roll_plan: self._roll_with(plan, arr)
                stats.append(self._exercise_row(t, qstar, vols))
                if q_store is not None:
                    q_store[t] = qstar.copy()
                    j_store[t] = j_new.copy()
            else:
                qstar = None
                j_new = j_values
                roll = _identity_roll

            if self.engine is not None:
                self.engine.step(_StepContext(t, self, roll, qstar, exercising))
                if want_readout:
                    self._fit_deltas(t, fitter, store, pool)

            j_values = j_new

        if pool is not None:
            pool.shutdown()
        top = j_values[0]
        result = SolveResult(
            value=float(top.mean()),
            stderr=float(top.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0,
            levels=lv, regressor=self.rspec, dates=dates, n_paths=n_paths,
            seed=ps.seed, exercise_stats=stats[::-1],
            q_star=q_store, j_values=j_store)
        return result

    # -- internals -----------------------------------------------------------

    def _decide_levels(self, t, payoff, vols, chat):
        """Per-level decisions; returns q_star (L_t, P) and the roll plan.

        The plan holds, per level, each path's post-decision read position as
        a flat index into the next date's (level, path) plane, plus the
        interpolation weight, so ledger rolls are single gathers.
        """
        lv = self.levels
        dq, n_ctl = lv.vgrid.control_step, lv.n_controls
        q_lo, q_hi = feasible_range_clamped(self.contract, t, vols)
        cands = candidate_controls(q_lo, q_hi, dq, n_ctl)
        n_levels, n_c = cands.shape
        n_paths = payoff.size
        qstar = np.empty((n_levels, n_paths))
        plan = []
        for li in range(n_levels):
            after = vols[li] + cands[li]
            col, w = lv.bracket(t + 1, after)
            vals = np.empty((n_c, n_paths))
            for ci in range(n_c):
                cont = chat[col[ci]]
                if w[ci] > 0.0:
                    cont = (1.0 - w[ci]) * cont + w[ci] * chat[col[ci] + 1]
                vals[ci] = cands[li, ci] * payoff + cont
            best = np.argmax(vals, axis=0)
            qstar[li] = cands[li, best]
            plan.append((best, col, w, np.bincount(best, minlength=n_c)))
        return qstar, plan

    @staticmethod
    def _roll_with(plan, arr):
        """Read (rows, L_{t+1}, P) arrays at each level's post-decision volume.

        Chosen controls cluster on few candidates (bang-bang), so each level
        is filled by one full-width copy for the most common candidate and
        masked writes for the rest.
        """
        rows, _, n_paths = arr.shape
        if rows == 0 or n_paths == 0:
            return np.zeros((rows, len(plan), n_paths), dtype=arr.dtype)
        out = np.empty((rows, len(plan), n_paths), dtype=arr.dtype)
        for li, (best, col, w, counts) in enumerate(plan):
            target = out[:, li, :]
            first = True
            for ci in np.argsort(counts, kind="stable")[::-1]:
                if counts[ci] == 0:
                    break
                c, wv = int(col[ci]), float(w[ci])
                if first:
                    if wv > 0.0:
                        np.multiply(arr[:, c, :], 1.0 - wv, out=target)
                        target += wv * arr[:, c + 1, :]
                    else:
                        target[...] = arr[:, c, :]
                    first = False
                else:
                    sel = best == ci
                    a = arr[:, c, sel]
                    if wv > 0.0:
                        a *= 1.0 - wv
                        a += wv * arr[:, c + 1, sel]
                    target[:, sel] = a
        return out

    def _solve_rows(self, fitter, y_rows, pool):
        if pool is None or y_rows.shape[0] < 64:
            return fitter.solve_rows(y_rows)
        chunks = np.array_split(np.arange(y_rows.shape[0]), self.n_threads)
        parts = list(pool.map(lambda ix: fitter.solve_rows(y_rows[ix]), chunks))
        return np.concatenate(parts, axis=2)

    def _fit_deltas(self, t, fitter, store, pool):
        blocks = self.engine.readout_blocks(t)
        for key, arr in blocks:
            rows = arr.shape[0]
            flat = arr.reshape(rows * arr.shape[1], arr.shape[2])
            store.delta_coef[key] = self._solve_rows(fitter, flat, pool)
            store.delta_rows[key] = rows

    def _exercise_row(self, t, qstar, vols):
        q_lo, q_hi = feasible_range_clamped(self.contract, t, vols)
        at_lo = float((np.abs(qstar - q_lo[:, None]) < 1e-12).mean())
        at_hi = float((np.abs(qstar - q_hi[:, None]) < 1e-12).mean())
        return (t, float(qstar.mean()), at_lo, at_hi)


def _identity_roll(arr):
    return arr
