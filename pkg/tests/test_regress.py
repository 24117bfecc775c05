import numpy as np
import pytest

from swinghedge.errors import ConfigError
from swinghedge.regress import (CellFitter, LocalBasisRegression, RegressorSpec,
                                fit_conditional)


class TestPartitionAndFit:
    def test_constant_target_reproduced(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(600, 1))
        est = fit_conditional(x, np.full(600, 3.25), cells=(6,))
        assert np.allclose(est.evaluate(x)[:, 0], 3.25, atol=1e-12)

    def test_affine_target_exact(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(500, 1))
        y = 2.0 * x[:, 0] + 3.0
        est = fit_conditional(x, y, cells=(5,))
        assert np.allclose(est.evaluate(x)[:, 0], y, atol=1e-10)

    def test_cellwise_affine_in_two_dims(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, size=(2000, 2))
        y = 0.7 * x[:, 0] - 1.3 * x[:, 1] + 0.5
        est = fit_conditional(x, y, cells=(4, 3))
        assert np.allclose(est.evaluate(x)[:, 0], y, atol=1e-10)

    def test_lognormal_conditional_expectation(self):
        # E[S_T | S_t] = S_t for a driftless lognormal step
        rng = np.random.default_rng(3)
        n = 50000
        s_t = np.exp(rng.normal(0.0, 0.3, n))
        z = rng.normal(-0.02, 0.2, n)          # mean log step -sigma^2/2
        s_T = s_t * np.exp(z)
        est = fit_conditional(s_t[:, None], s_T, cells=(6,))
        got = est.evaluate(s_t[:, None])[:, 0]
        resid = got - s_t
        pooled_se = s_T.std() / np.sqrt(n / 6)
        assert abs(resid.mean()) < 3 * pooled_se

    def test_two_cell_fit_matches_hand_least_squares(self):
        x = np.array([0.0, 1.0, 2.0, 10.0, 11.0, 12.0])[:, None]
        y = np.array([1.0, 2.0, 2.5, 8.0, 9.5, 9.0])
        est = fit_conditional(x, y, cells=(2,))
        for cell in (slice(0, 3), slice(3, 6)):
            a = np.column_stack([np.ones(3), x[cell, 0]])
            coef, *_ = np.linalg.lstsq(a, y[cell], rcond=None)
            got = est.evaluate(x[cell])[:, 0]
            want = a @ coef
            assert np.allclose(got, want, atol=1e-10)

    def test_projection_property(self):
        # residuals sum to zero within each cell (normal equations)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(1200, 2))
        y = np.sin(x[:, 0]) + rng.normal(size=1200)
        fitter = CellFitter(x, (4, 3), (1, 1))
        est = fitter.estimator(fitter.solve(y))
        pred = est.evaluate(x, cells=fitter.cell_ids)[:, 0]
        for c in range(12):
            sel = fitter.cell_ids == c
            if sel.sum():
                scale = np.abs(y[sel]).sum()
                assert abs((y[sel] - pred[sel]).sum()) < 1e-8 * max(scale, 1.0)

    def test_clamps_outside_fitted_range(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 1, size=(400, 1))
        y = 5.0 * x[:, 0]
        est = fit_conditional(x, y, cells=(4,))
        lo = est.evaluate(np.array([[-10.0]]))[0, 0]
        hi = est.evaluate(np.array([[+10.0]]))[0, 0]
        # extrapolation uses the outermost cells' affine forms
        assert lo < 1.0 and hi > 4.0

    def test_duplicated_values_collapse_to_conditional_mean(self):
        # two distinct x values, duplicated: each cell must average its copies
        x = np.array([1.0, 1.0, 1.0, 1.0, 4.0, 4.0, 4.0, 4.0])[:, None]
        y = np.array([2.0, 4.0, 6.0, 8.0, 1.0, 3.0, 5.0, 7.0])
        est = fit_conditional(x, y, cells=(4,))
        assert est.evaluate(np.array([[1.0]]))[0, 0] == pytest.approx(5.0)
        assert est.evaluate(np.array([[4.0]]))[0, 0] == pytest.approx(4.0)

    def test_constant_regressor_gives_global_mean(self):
        x = np.full((40, 1), 2.5)
        y = np.arange(40.0)
        est = fit_conditional(x, y, cells=(4,))
        assert est.evaluate(np.array([[2.5]]))[0, 0] == pytest.approx(y.mean())
        assert est.evaluate(np.array([[99.0]]))[0, 0] == pytest.approx(y.mean())

    def test_insufficient_samples_rejected(self):
        x = np.random.default_rng(6).normal(size=(10, 2))
        with pytest.raises(ConfigError):
            CellFitter(x, (4, 3), (1, 1))

    def test_multi_target_solve(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(300, 1))
        ys = np.column_stack([x[:, 0] * k for k in range(1, 5)])
        fitter = CellFitter(x, (3,), (1,))
        est = fitter.estimator(fitter.solve(ys))
        got = est.evaluate(x)
        assert np.allclose(got, ys, atol=1e-9)

    def test_degree_zero_dimension(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0, 1, size=(900, 2))
        y = 3.0 * x[:, 0] + 10.0
        fitter = CellFitter(x, (3, 3), (1, 0))
        est = fitter.estimator(fitter.solve(y))
        assert (est.coef[:, 2, :] == 0).all()

    def test_deterministic_partition(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(800, 2))
        y = rng.normal(size=800)
        a = fit_conditional(x, y, cells=(5, 2))
        b = fit_conditional(x, y, cells=(5, 2))
        assert np.array_equal(a.coef, b.coef)
        for ea, eb in zip(a.partition.edges, b.partition.edges):
            assert np.array_equal(ea, eb)


class TestSklearnFrontEnd:
    def test_fit_predict_roundtrip(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(400, 2))
        y = x[:, 0] - 2 * x[:, 1]
        reg = LocalBasisRegression(cells=(3, 2)).fit(x, y)
        assert np.allclose(reg.predict(x), y, atol=1e-9)

    def test_get_params_clone_compatible(self):
        from sklearn.base import clone
        reg = LocalBasisRegression(cells=(4, 2), degrees=(1, 0))
        params = reg.get_params()
        assert params == {"cells": (4, 2), "degrees": (1, 0)}
        reg2 = clone(reg)
        assert reg2.get_params() == params

    def test_score_uses_r2(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(500, 1))
        y = 3 * x[:, 0]
        reg = LocalBasisRegression(cells=(4,)).fit(x, y)
        assert reg.score(x, y) > 0.999

    def test_rejects_non_finite(self):
        x = np.array([[1.0], [np.nan]])
        with pytest.raises(ValueError):
            LocalBasisRegression(cells=(1,)).fit(x, np.array([1.0, 2.0]))


class TestRegressorSpec:
    def test_variable_dropping(self):
        spec = RegressorSpec("spot_index_partial", (6, 4, 1), (1, 1, 1))
        assert spec.active_variables(True, True) == ("spot", "index", "partial")
        assert spec.active_variables(False, True) == ("spot", "partial")
        assert spec.active_variables(True, False) == ("spot", "index")
        assert spec.basis_for(2) == ((6, 4), (1, 1))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            RegressorSpec("everything", (1,), (1,))

    def test_bad_degree_rejected(self):
        with pytest.raises(ConfigError):
            RegressorSpec("spot", (4,), (2,))
