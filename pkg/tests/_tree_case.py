"""Hand-built four-scenario tree used by the oracle-equality tests.

Eight paths (four scenarios duplicated) share a common pre-period through
February, branch two ways on the first exercise day and four ways afterwards.
Spots are tied to the initial curves through fixed tangent matrices, so
bumping a curve point rebuilds a consistent scenario set.
"""

import datetime as dt

import numpy as np

import swinghedge as sh
from swinghedge.model import PathSet
from swinghedge.optimize import VolumeGrid
from swinghedge.regress import RegressorSpec

GRID = sh.TimeGrid(dt.date(2007, 2, 1), dt.date(2007, 3, 3))
N = GRID.n_dates                      # 31 days; exercise days 28, 29, 30
X0 = 1.25
A0, WEIGHT, OFFSET = 2.5, 0.5, 2.0
Q_MAX, Q_MIN_TOT, Q_MAX_TOT = 1.0, 1.0, 2.0

# tangents: pre-period common, then 2 scenario groups at day 28, 4 from day 29
_pre = np.arange(28)
_y0_pre = 1.0 + 0.015 * np.sin(0.7 * _pre)
_y1_pre = 1.0 + 0.030 * np.sin(0.4 * _pre + 1.0)
_yx_pre = 1.0 + 0.010 * np.cos(0.3 * _pre)

_day28 = {"y0": (1.10, 0.92), "y1": (1.05, 0.97), "yx": (1.04, 0.99)}
_day29 = {"y0": (1.18, 1.03, 0.99, 0.85), "y1": (1.08, 1.02, 0.99, 0.93),
          "yx": (1.05, 1.03, 1.00, 0.97)}
_day30 = {"y0": (1.22, 0.95, 1.04, 0.80), "y1": (1.09, 1.01, 1.00, 0.91),
          "yx": (1.06, 1.02, 1.01, 0.96)}


def tangent_matrices():
    """(y0, y1, yx), each (8 paths, 31 days)."""
    y0 = np.tile(np.concatenate([_y0_pre, [1, 1, 1]]), (8, 1))
    y1 = np.tile(np.concatenate([_y1_pre, [1, 1, 1]]), (8, 1))
    yx = np.tile(np.concatenate([_yx_pre, [1, 1, 1]]), (8, 1))
    for p in range(8):
        group2 = p // 4               # A/B at day 28
        group4 = p // 2               # A1/A2/B1/B2 afterwards
        y0[p, 28], y1[p, 28], yx[p, 28] = (_day28[k][group2] for k in ("y0", "y1", "yx"))
        y0[p, 29], y1[p, 29], yx[p, 29] = (_day29[k][group4] for k in ("y0", "y1", "yx"))
        y0[p, 30], y1[p, 30], yx[p, 30] = (_day30[k][group4] for k in ("y0", "y1", "yx"))
    return y0, y1, yx


def curves():
    curve0 = 2.6 + 0.004 * np.arange(N)
    curve1 = 2.0 + 0.005 * np.arange(N)
    return curve0, curve1


def build_arrays(bump=None, eps=0.0):
    """(spots (8, N, 2), fx (8, N)) with one optional multiplicative bump:
    bump = ("gas", m) | ("com1", m) | ("fx",)."""
    curve0, curve1 = curves()
    y0, y1, yx = tangent_matrices()
    spots = np.empty((8, N, 2))
    spots[:, :, 0] = curve0 * y0
    spots[:, :, 1] = curve1 * y1
    fx = X0 * yx
    if bump is not None:
        if bump[0] == "gas":
            spots[:, bump[1], 0] *= 1.0 + eps
        elif bump[0] == "com1":
            spots[:, bump[1], 1] *= 1.0 + eps
        elif bump[0] == "fx":
            fx = fx * (1.0 + eps)
        else:
            raise ValueError(bump)
    return spots, fx


def index_by_hand(spots, fx, p, t):
    """Reset index on the exercise days, written out directly."""
    assert t >= 28
    avg = spots[p, 0:28, 1].mean()
    return A0 + WEIGHT * (avg - OFFSET) * fx[p, 28]


def package_objects(spots, fx):
    """Model/contract/index/paths as the production engine wants them."""
    curve0, curve1 = curves()
    gas = sh.CommodityModel("gas", [sh.CommodityFactor(0.0, 0.0)], curve0)
    com = sh.CommodityModel("oil", [sh.CommodityFactor(0.0, 0.0)], curve1)
    fxm = sh.FxModel("usd", 0.0, 0.0, X0)
    model = sh.MarketModel([gas, com], [fxm], np.eye(3))
    contract = sh.ContractSpec(GRID, dt.date(2007, 3, 1), dt.date(2007, 3, 3),
                               Q_MAX, Q_MIN_TOT, Q_MAX_TOT)
    ispec = sh.IndexSpec(A0, [sh.IndexComponent(1, WEIGHT, OFFSET, 0, 1, fx_column=0)],
                         [dt.date(2007, 3, 1)], GRID)
    ps = PathSet(grid=GRID, spot=np.transpose(spots, (1, 2, 0)).copy(),
                 fx=fx.T[:, None, :].copy(), w=None, seed=0)
    vgrid = VolumeGrid(step=1.0, control_step=1.0)
    rspec = RegressorSpec("spot", (4,), (1,))
    return model, contract, ispec, ps, vgrid, rspec
