"""Conditional expectations by least squares on locally supported bases.

Samples are stratified into equal-count cells, dimension by dimension
(quantiles of the first coordinate, then per-stratum quantiles of the next,
and so on), and an affine function is fitted in each cell.  Evaluation
locates the cell of a query point, clamping to the outermost cell outside
the fitted range, and applies the cell's affine form.

Cells whose design is rank deficient (all regressor values equal, or fewer
samples than coefficients) degrade to a constant fit; cells that received no
samples inherit the nearest fitted cell.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ConfigError

__all__ = ["RegressorSpec", "CellPartition", "ConditionalEstimator",
           "CellFitter", "LocalBasisRegression", "fit_conditional"]

RANK_TOL = 1e-10

REGRESSOR_KINDS = {
    "spot": ("spot",),
    "spot_index": ("spot", "index"),
    "spot_index_partial": ("spot", "index", "partial"),
}


@dataclass(frozen=True)
class RegressorSpec:
    """Which state variables to regress on, and the basis per dimension.

    ``cells`` and ``degrees`` are positional by regression dimension: when a
    variable is unavailable at some date (no index before the first reset, no
    partial index after the last), the remaining variables keep the leading
    cell counts.
    """

    kind: str = "spot_index"
    cells: tuple = (6, 4, 1)
    degrees: tuple = (1, 1, 1)

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS:
            raise ConfigError(f"unknown regressor kind {self.kind!r}; "
                              f"expected one of {sorted(REGRESSOR_KINDS)}")
        n = len(REGRESSOR_KINDS[self.kind])
        if len(self.cells) < n or len(self.degrees) < n:
            raise ConfigError(f"regressor {self.kind!r} needs {n} cell counts and degrees")
        if any(c < 1 for c in self.cells):
            raise ConfigError("cell counts must be >= 1")
        if any(d not in (0, 1) for d in self.degrees):
            raise ConfigError("per-dimension degrees must be 0 or 1")

    @property
    def variables(self) -> tuple:
        return REGRESSOR_KINDS[self.kind]

    def active_variables(self, have_index: bool, have_partial: bool) -> tuple:
        keep = []
        for v in self.variables:
            if v == "index" and not have_index:
                continue
            if v == "partial" and not have_partial:
                continue
            keep.append(v)
        if not keep:
            keep = ["spot"]
        return tuple(keep)

    def basis_for(self, n_dims: int) -> tuple:
        return tuple(self.cells[:n_dims]), tuple(self.degrees[:n_dims])


class CellPartition:
    """Stratification of sample points into cells, with located-by-value routing."""

    def __init__(self, cells: tuple, edges: list, centers: np.ndarray,
                 counts: np.ndarray):
        self.cells = tuple(int(c) for c in cells)
        self.edges = edges            # per dim: (n_groups, k_i - 1)
        self.centers = centers        # (n_cells, d) cell means of the fit sample
        self.counts = counts

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def n_dims(self) -> int:
        return len(self.cells)

    @classmethod
    def build(cls, x: np.ndarray, cells: tuple) -> "CellPartition":
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        if len(cells) != d:
            raise ConfigError(f"{d}-dimensional regressor needs {d} cell counts")
        ids = np.zeros(n, dtype=np.int64)
        edges = []
        for i, k in enumerate(cells):
            n_groups = int(np.prod(cells[:i]))
            e = np.full((n_groups, k - 1), np.inf)
            for g in range(n_groups):
                members = np.flatnonzero(ids == g)
                if members.size == 0:
                    continue
                xs = np.sort(x[members, i])
                cuts = (members.size * np.arange(1, k)) // k
                e[g] = xs[cuts]
            stratum = (x[:, i][:, None] >= e[ids]).sum(axis=1)
            ids = ids * k + stratum
            edges.append(e)
        n_cells = int(np.prod(cells))
        counts = np.bincount(ids, minlength=n_cells)
        centers = np.zeros((n_cells, d))
        np.add.at(centers, ids, x)
        nz = counts > 0
        centers[nz] /= counts[nz, None]
        return cls(cells, edges, centers, counts)

    def locate(self, x: np.ndarray) -> np.ndarray:
        """Cell index per query row (outside points clamp into edge cells)."""
        x = np.asarray(x, dtype=float)
        ids = np.zeros(x.shape[0], dtype=np.int64)
        for i, k in enumerate(self.cells):
            stratum = (x[:, i][:, None] >= self.edges[i][ids]).sum(axis=1)
            ids = ids * k + stratum
        return ids


class CellFitter:
    """Reusable per-cell least-squares machinery for one partition.

    Building the fitter factorizes each cell's (tiny) normal equations once;
    ``solve`` then fits any number of stacked regressands against the same
    partition with plain matrix products.
    """

    def __init__(self, x: np.ndarray, cells: tuple, degrees: tuple):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ConfigError("regressor matrix must be 2-D (samples, dims)")
        n, d = x.shape
        if len(degrees) != d:
            raise ConfigError(f"{d}-dimensional regressor needs {d} degrees")
        self.degrees = tuple(degrees)
        self.partition = CellPartition.build(x, cells)
        self.n_dims = d
        self.slope_dims = [i for i in range(d) if degrees[i] == 1]
        n_coef = 1 + len(self.slope_dims)
        if n < self.partition.n_cells * (d + 1):
            raise ConfigError(f"{n} samples cannot support {self.partition.n_cells} "
                              f"cells in dimension {d}")
        ids = self.partition.locate(x)
        self.order = np.argsort(ids, kind="stable")
        self.cell_ids = ids
        bounds = np.searchsorted(ids[self.order], np.arange(self.partition.n_cells + 1))
        self.slices = [slice(bounds[c], bounds[c + 1])
                       for c in range(self.partition.n_cells)]
        # centered design in partition order
        a = np.empty((n, n_coef))
        a[:, 0] = 1.0
        xo = x[self.order]
        centers = self.partition.centers
        for col, dim in enumerate(self.slope_dims, start=1):
            a[:, col] = xo[:, dim] - centers[ids[self.order], dim]
        self.design = a
        self.constant_cell = np.zeros(self.partition.n_cells, dtype=bool)
        self._solvers = [None] * self.partition.n_cells
        for c in range(self.partition.n_cells):
            rows = a[self.slices[c]]
            if rows.shape[0] < d + 1:
                self.constant_cell[c] = True
                continue
            gram = rows.T @ rows
            lam, vec = np.linalg.eigh(gram)
            if lam[0] <= RANK_TOL * lam[-1]:
                self.constant_cell[c] = True
                continue
            self._solvers[c] = (vec / lam) @ vec.T

    def solve(self, y: np.ndarray) -> np.ndarray:
        """Fit every column of ``y`` (samples first); returns coefficients
        (n_cells, 1 + d, r).

        Row 0 is the value at the cell center; row 1 + i the slope along
        dimension i (zero for degree-0 dimensions and constant cells).
        """
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        return self.solve_rows(np.ascontiguousarray(y.T))

    def solve_rows(self, y_rows: np.ndarray) -> np.ndarray:
        """Fit stacked regressands given as rows: ``y_rows`` is (r, samples).

        Single-precision inputs are gathered as-is and upcast cell by cell,
        keeping the coefficient arithmetic in double precision.
        """
        y_rows = np.asarray(y_rows)
        if y_rows.dtype != np.float32:
            y_rows = y_rows.astype(float, copy=False)
        n_cells, d = self.partition.n_cells, self.n_dims
        coef = np.zeros((n_cells, 1 + d, y_rows.shape[0]))
        fitted = np.zeros(n_cells, dtype=bool)
        y_sorted = np.take(y_rows, self.order, axis=1)
        for c in range(n_cells):
            sl = self.slices[c]
            if sl.stop == sl.start:
                continue
            fitted[c] = True
            yc = y_sorted[:, sl]
            if yc.dtype == np.float32:
                yc = yc.astype(float)
            if self.constant_cell[c]:
                coef[c, 0] = yc.mean(axis=1)
            else:
                b = (yc @ self.design[sl]) @ self._solvers[c]
                coef[c, 0] = b[:, 0]
                for col, dim in enumerate(self.slope_dims, start=1):
                    coef[c, 1 + dim] = b[:, col]
        if not fitted.all():
            self._fill_empty(coef, fitted)
        return coef

    @staticmethod
    def _fill_empty(coef: np.ndarray, fitted: np.ndarray) -> None:
        # empty cells inherit the nearest fitted cell (left, then right)
        idx = np.where(fitted, np.arange(fitted.size), -1)
        np.maximum.accumulate(idx, out=idx)
        for c in range(fitted.size - 2, -1, -1):
            if idx[c] < 0:
                idx[c] = idx[c + 1]
        coef[:] = coef[idx]

    def estimator(self, coef: np.ndarray) -> "ConditionalEstimator":
        return ConditionalEstimator(self.partition, coef)


class ConditionalEstimator:
    """Fitted cellwise-affine map from regressor values to expectations."""

    def __init__(self, partition: CellPartition, coef: np.ndarray):
        self.partition = partition
        self.coef = coef              # (n_cells, 1 + d, r)

    def evaluate(self, x: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
        """All fitted columns at each query row: (n, r)."""
        x = np.asarray(x, dtype=float)
        if cells is None:
            cells = self.partition.locate(x)
        dx = x - self.partition.centers[cells]
        c = self.coef[cells]
        return c[:, 0, :] + np.einsum("nd,ndr->nr", dx, c[:, 1:, :])

    def evaluate_columns(self, x: np.ndarray, columns: np.ndarray,
                         cells: np.ndarray | None = None) -> np.ndarray:
        """Chosen columns per row; ``columns`` is (n, m) of column indices."""
        x = np.asarray(x, dtype=float)
        if cells is None:
            cells = self.partition.locate(x)
        dx = x - self.partition.centers[cells]
        c = self.coef[cells[:, None], :, columns]        # (n, m, 1 + d)
        return c[:, :, 0] + np.einsum("nd,nmd->nm", dx, c[:, :, 1:])


def fit_conditional(x: np.ndarray, y: np.ndarray, cells: tuple,
                    degrees: tuple | None = None) -> ConditionalEstimator:
    """One-shot fit of a conditional-expectation estimator."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if degrees is None:
        degrees = (1,) * x.shape[1]
    fitter = CellFitter(x, tuple(cells), tuple(degrees))
    return fitter.estimator(fitter.solve(y))


class LocalBasisRegression(BaseEstimator, RegressorMixin):
    """Scikit-learn front end for the local-basis estimator.

    Parameters
    ----------
    cells : tuple of int
        Number of strata per regressor dimension.
    degrees : tuple of int or None
        0 (constant) or 1 (affine) inside each cell, per dimension;
        defaults to affine everywhere.
    """

    def __init__(self, cells=(6,), degrees=None):
        self.cells = cells
        self.degrees = degrees

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(y, dtype=float)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on the number of samples")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ValueError("X and y must be finite")
        degrees = self.degrees if self.degrees is not None else (1,) * X.shape[1]
        self._fitter = CellFitter(X, tuple(self.cells), tuple(degrees))
        self._multi = y.ndim > 1
        coef = self._fitter.solve(y if self._multi else y[:, None])
        self.estimator_ = self._fitter.estimator(coef)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        if not hasattr(self, "estimator_"):
            raise ValueError("estimator is not fitted")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        out = self.estimator_.evaluate(X)
        return out if self._multi else out[:, 0]
