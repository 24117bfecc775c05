"""Configuration loading and eager validation.

A run is described by one TOML file (dates are ISO calendar dates); the loader
builds all engine objects up front so bad input fails immediately with the
offending key in the message.  The file's bytes are hashed and embedded in any
archive written from it, tying stored strategies to their configuration.
"""

import datetime as dt
import hashlib
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backtest import FREQUENCIES, HedgePlan
from .contract import ContractSpec, IndexComponent, IndexSpec
from .dates import TimeGrid, add_months
from .errors import ConfigError
from .hedge import ProductCalendar
from .model import CommodityFactor, CommodityModel, FxModel, MarketModel
from .optimize import VolumeGrid
from .regress import RegressorSpec

__all__ = ["RunConfig", "load_config", "load_config_bytes"]


@dataclass
class RunConfig:
    grid: TimeGrid
    model: MarketModel
    contract: ContractSpec
    index: IndexSpec
    vgrid: VolumeGrid
    rspec: RegressorSpec
    calendar: ProductCalendar
    plans: list
    readout: str
    out_dir: str
    opt_paths: int
    sim_paths: int
    opt_seed: int
    sim_seed: int
    threads: int
    chunk_size: int
    ledger_precision: str
    config_hash: bytes
    commodity_names: list = field(default_factory=list)

    @property
    def ledger_dtype(self):
        if self.ledger_precision == "single":
            return np.float32
        if self.ledger_precision == "double":
            return np.float64
        raise ConfigError(f"run.ledger_precision must be 'single' or 'double', "
                          f"got {self.ledger_precision!r}")

    def component_key(self, name: str) -> str:
        """Map a config-facing name (commodity name, 'gas', 'fx') to a ledger key."""
        if name in ("gas", self.commodity_names[0]):
            return "gas"
        if name == "fx":
            return "fx"
        if name in self.commodity_names:
            return f"com{self.commodity_names.index(name)}"
        raise ConfigError(f"unknown hedge component {name!r}")

    def readout_days(self) -> range:
        if self.readout == "daily":
            return range(0, self.contract.i_end + 1)
        raise ConfigError(f"unsupported hedge readout {self.readout!r}")


def _need(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigError(f"missing key {key!r} in [{where}]")
    return table[key]


def _date(value, where: str) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    raise ConfigError(f"{where} must be an ISO date, got {value!r}")


def _curve(table: dict, grid: TimeGrid, name: str) -> np.ndarray:
    spec = _need(table, "curve", f"market.commodities.{name}")
    if "flat" in spec:
        return np.full(grid.n_dates, float(spec["flat"]))
    if "points" in spec:
        pts = sorted((_date(d, "curve point"), float(v)) for d, v in spec["points"])
        if not pts or pts[0][0] > grid.start:
            raise ConfigError(f"curve of {name!r} must quote the grid start")
        out = np.empty(grid.n_dates)
        vals = np.array([v for _, v in pts])
        days = np.array([(d - grid.start).days for d, _ in pts])
        idx = np.searchsorted(days, np.arange(grid.n_dates), side="right") - 1
        out[:] = vals[idx]
        return out
    raise ConfigError(f"curve of {name!r} needs 'flat' or 'points'")


def load_config_bytes(raw: bytes) -> RunConfig:
    data = tomllib.loads(raw.decode("utf-8"))
    cfg_hash = hashlib.sha256(raw).digest()

    g = _need(data, "grid", "grid")
    grid = TimeGrid(_date(_need(g, "start", "grid"), "grid.start"),
                    _date(_need(g, "end", "grid"), "grid.end"))

    mk = _need(data, "market", "market")
    commodities = []
    names = []
    for entry in _need(mk, "commodities", "market"):
        name = _need(entry, "name", "market.commodities")
        factors = []
        for f in _need(entry, "factors", f"market.commodities.{name}"):
            factors.append(CommodityFactor(float(_need(f, "sigma", "factors")),
                                           float(f.get("mean_reversion", 0.0))))
        commodities.append(CommodityModel(name, factors, _curve(entry, grid, name)))
        names.append(name)
    if len(set(names)) != len(names):
        raise ConfigError("commodity names must be unique")
    fx_models = {}
    for entry in mk.get("fx", []):
        name = _need(entry, "name", "market.fx")
        fx_models[name] = FxModel(name, float(_need(entry, "sigma", f"market.fx.{name}")),
                                  float(entry.get("r_foreign", 0.0)),
                                  float(entry.get("x0", 1.0)))

    cn = _need(data, "contract", "contract")
    contract = ContractSpec(
        grid,
        _date(_need(cn, "start", "contract"), "contract.start"),
        _date(_need(cn, "end", "contract"), "contract.end"),
        float(_need(cn, "q_max", "contract")),
        float(_need(cn, "min_total", "contract")),
        float(_need(cn, "max_total", "contract")))

    ix = _need(data, "index", "index")
    resets_spec = ix.get("resets", "monthly")
    if resets_spec == "monthly":
        first = dt.date(contract.t_start.year, contract.t_start.month, 1)
        resets = []
        d = first
        while d <= contract.t_end:
            resets.append(d)
            d = add_months(d, 1)
    else:
        resets = [_date(d, "index.resets") for d in resets_spec]

    # fx list aligned with index commodities (commodities[1:])
    fx_by_commodity: dict[int, str | None] = {}
    components_cfg = _need(ix, "components", "index")
    for entry in components_cfg:
        cname = _need(entry, "commodity", "index.components")
        if cname not in names:
            raise ConfigError(f"index component references unknown commodity {cname!r}")
        j = names.index(cname)
        if j == 0:
            raise ConfigError("the arbitrage commodity cannot be an index component")
        fx_name = entry.get("fx")
        if fx_name is not None and fx_name not in fx_models:
            raise ConfigError(f"index component references unknown fx {fx_name!r}")
        prev = fx_by_commodity.get(j)
        if prev is not None and prev != fx_name:
            raise ConfigError(f"commodity {cname!r} is quoted in two currencies")
        fx_by_commodity[j] = fx_name

    fx_list: list[FxModel | None] = []
    used = set()
    for j in range(1, len(commodities)):
        fx_name = fx_by_commodity.get(j)
        if fx_name is None:
            fx_list.append(None)
            continue
        if fx_name in used:
            raise ConfigError(f"fx {fx_name!r} is used by two commodities; "
                              "give each commodity its own rate")
        used.add(fx_name)
        fx_list.append(fx_models[fx_name])
    model = MarketModel(commodities, fx_list,
                        np.asarray(mk["correlation"], dtype=float)
                        if "correlation" in mk else None)

    components = []
    for entry in components_cfg:
        cname = entry["commodity"]
        j = names.index(cname)
        fx_name = entry.get("fx")
        components.append(IndexComponent(
            commodity=j,
            weight=float(_need(entry, "weight", "index.components")),
            offset=float(entry.get("offset", 0.0)),
            lag_months=int(entry.get("lag_months", 0)),
            window_months=int(entry.get("window_months", 1)),
            fx_column=model.fx_column(j),
            name=cname))
    index = IndexSpec(float(_need(ix, "a0", "index")), components, resets, grid)

    vol = _need(data, "volume", "volume")
    vgrid = VolumeGrid(float(_need(vol, "step", "volume")),
                       float(_need(vol, "control_step", "volume")))

    rg = _need(data, "regression", "regression")
    rspec = RegressorSpec(rg.get("kind", "spot_index"),
                          tuple(rg.get("cells", (6, 4, 1))),
                          tuple(rg.get("degrees", (1, 1, 1))))

    horizons = {0: contract.i_end}
    for j in sorted({c.commodity for c in components}):
        ends = [int(index.win_end[k, c]) - 1
                for k in range(index.n_resets)
                for c, comp in enumerate(components) if comp.commodity == j]
        horizons[j] = max(ends)
    calendar = ProductCalendar(grid, horizons)

    hedge = data.get("hedge", {})
    index_coms = sorted({c.commodity for c in components})
    have_fx = bool(model.active_fx)
    plans = []
    for entry in hedge.get("plans", []):
        pname = _need(entry, "name", "hedge.plans")
        freq = entry.get("frequency", "daily")
        freq_before = entry.get("frequency_before_start", freq)
        for f in (freq, freq_before):
            if f not in FREQUENCIES:
                raise ConfigError(f"plan {pname!r}: unknown frequency {f!r}")
        comps = entry.get("components", "all")
        if comps == "all":
            keys = ["gas"] + [f"com{j}" for j in index_coms] + \
                (["fx"] if have_fx else [])
        else:
            keys = []
            for c in comps:
                key = "gas" if c in ("gas", names[0]) else (
                    "fx" if c == "fx" else f"com{names.index(c)}"
                    if c in names else None)
                if key is None:
                    raise ConfigError(f"plan {pname!r}: unknown component {c!r}")
                keys.append(key)
        ifreq = entry.get("index_frequency")
        ifreq_before = entry.get("index_frequency_before_start", ifreq)
        sched = {}
        for key in keys:
            if key != "gas" and ifreq is not None:
                sched[key] = (ifreq_before or ifreq, ifreq)
            else:
                sched[key] = (freq_before, freq)
        plans.append(HedgePlan(pname, sched))

    run = data.get("run", {})
    return RunConfig(
        grid=grid, model=model, contract=contract, index=index, vgrid=vgrid,
        rspec=rspec, calendar=calendar, plans=plans,
        readout=hedge.get("readout", "daily"),
        out_dir=str(run.get("out_dir", "out")),
        opt_paths=int(run.get("optimization_paths", 10000)),
        sim_paths=int(run.get("simulation_paths", 10000)),
        opt_seed=int(run.get("optimization_seed", 20060401)),
        sim_seed=int(run.get("simulation_seed", 20070101)),
        threads=int(run.get("threads", 1)),
        chunk_size=int(run.get("chunk_size", 4096)),
        ledger_precision=str(run.get("ledger_precision", "single")),
        config_hash=cfg_hash,
        commodity_names=names)


def load_config(path: str) -> RunConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return load_config_bytes(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
