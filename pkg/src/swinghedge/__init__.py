"""Monte Carlo valuation and dynamic hedging of indexed gas swing contracts."""

from .contract import (ContractSpec, IndexComponent, IndexSpec, feasible_range,
                       index_value, moving_average, partial_index, reset_index_of)
from .dates import TimeGrid
from .model import (CommodityFactor, CommodityModel, FxModel, MarketModel,
                    PathSet, forward_log_variance, forward_price,
                    forward_tangent, fx_tangent, simulate)
from .optimize import BackwardSolver, SolveResult, VolumeGrid, interpolate_values
from .regress import LocalBasisRegression, RegressorSpec

__version__ = "0.1.0"

__all__ = [
    "BackwardSolver", "CommodityFactor", "CommodityModel", "ContractSpec",
    "FxModel", "IndexComponent", "IndexSpec", "LocalBasisRegression",
    "MarketModel", "PathSet", "RegressorSpec", "SolveResult", "TimeGrid",
    "VolumeGrid", "feasible_range", "forward_log_variance", "forward_price",
    "forward_tangent", "fx_tangent", "index_value", "interpolate_values",
    "moving_average", "partial_index", "reset_index_of", "simulate",
    "__version__",
]
