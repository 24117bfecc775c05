"""Command-line entry points: validate, price, backtest, and the studies.

All outputs are CSV files under the output directory (``--out``, the
``SWINGHEDGE_OUT`` environment variable, or the config's ``run.out_dir``).
Runs are reproducible: identical configuration and seeds give byte-identical
files regardless of the worker count.
"""

import argparse
import os
import sys

import numpy as np

from . import archive
from .backtest import Backtester, HedgePlan, component_study, frequency_study
from .config import RunConfig, load_config
from .contract import IndexSeries
from .errors import SwingError
from .hedge import ProductLedgerEngine, tangent_strip
from .model import ModelTables, simulate
from .optimize import BackwardSolver, LevelSystem
from .regress import REGRESSOR_KINDS

ARCHIVE_NAME = "strategy.swha"


def _add_common(p):
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides config and env)")
    p.add_argument("--seed", type=int, help="override the optimization seed")
    p.add_argument("--sim-seed", type=int, help="override the simulation seed")
    p.add_argument("--paths", type=int, help="override the optimization path count")
    p.add_argument("--sim-paths", type=int, help="override the simulation path count")
    p.add_argument("--threads", type=int, help="worker threads for fits")


def build_parser():
    p = argparse.ArgumentParser(prog="swinghedge",
                                description="Swing contract valuation and dynamic hedging")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, extra in [
        ("validate", cmd_validate, ["--paths"]),
        ("price", cmd_price, ["--dump-paths", "--dump-fixings", "--dump-deltas"]),
        ("backtest", cmd_backtest, ["--archive", "--track-paths"]),
        ("study-regressors", cmd_study_regressors, []),
        ("study-components", cmd_study_components, []),
        ("study-frequency", cmd_study_frequency, []),
    ]:
        sp = sub.add_parser(name)
        _add_common(sp)
        if "--dump-paths" in extra:
            sp.add_argument("--dump-paths", action="store_true",
                            help="write simulated paths to CSV")
            sp.add_argument("--dump-fixings", action="store_true",
                            help="write per-reset index fixings to CSV")
            sp.add_argument("--dump-deltas", action="store_true",
                            help="write month-start conditional deltas to CSV")
        if "--archive" in extra:
            sp.add_argument("--archive", help="strategy archive from 'price' "
                            f"(default <out>/{ARCHIVE_NAME})")
            sp.add_argument("--track-paths", type=int, default=5,
                            help="paths whose positions are dumped")
        sp.set_defaults(fn=fn)
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.opt_seed = args.seed
    if getattr(args, "sim_seed", None) is not None:
        cfg.sim_seed = args.sim_seed
    if args.paths is not None:
        cfg.opt_paths = args.paths
    if getattr(args, "sim_paths", None) is not None:
        cfg.sim_paths = args.sim_paths
    if args.threads is not None:
        cfg.threads = args.threads
    out = args.out or os.environ.get("SWINGHEDGE_OUT") or cfg.out_dir
    cfg.out_dir = out
    return cfg


def _outfile(cfg, name):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x)
                              for x in row) + "\n")


def _solve(cfg: RunConfig, rspec=None, readout=True):
    ps = simulate(cfg.model, cfg.grid, cfg.opt_paths, cfg.opt_seed)
    engine = ProductLedgerEngine(cfg.calendar, dtype=cfg.ledger_dtype) \
        if readout else None
    solver = BackwardSolver(cfg.model, cfg.contract, cfg.index, cfg.vgrid,
                            rspec or cfg.rspec,
                            readout_dates=cfg.readout_days() if readout else (),
                            ledger_engine=engine, n_threads=cfg.threads)
    return solver.solve(ps), ps


def _backtester(cfg, result, rspec=None):
    return Backtester(cfg.model, cfg.contract, cfg.index, rspec or cfg.rspec,
                      cfg.calendar, result)


# --------------------------------------------------------------------- price

def cmd_price(cfg: RunConfig, args) -> int:
    result, ps = _solve(cfg)
    archive.save_result(_outfile(cfg, ARCHIVE_NAME), result, cfg.config_hash)
    _write_csv(_outfile(cfg, "value.csv"),
               "value,stderr,paths,seed",
               [(result.value, result.stderr, result.n_paths, result.seed)])
    _write_csv(_outfile(cfg, "exercise.csv"),
               "date,mean_q,frac_at_lower,frac_at_upper",
               [(cfg.grid.date(t), q, lo, hi)
                for t, q, lo, hi in result.exercise_stats])
    if args.dump_paths:
        with open(_outfile(cfg, "paths.csv"), "w") as fh:
            ps.write_csv(fh)
    if args.dump_fixings:
        series = IndexSeries(cfg.index, ps)
        rows = []
        for k in range(cfg.index.n_resets):
            day = cfg.grid.date(int(cfg.index.reset_idx[k]))
            for p in range(ps.n_paths):
                rows.append((p, day, float(series.at_reset[k, p])))
        _write_csv(_outfile(cfg, "fixings.csv"), "path,reset,index", rows)
    if args.dump_deltas:
        _dump_deltas(cfg, result, ps)
    print(f"value {result.value:.6f} +- {result.stderr:.6f} "
          f"({result.n_paths} paths, seed {result.seed})")
    return 0


def _dump_deltas(cfg, result, ps):
    """Cross-path mean conditional delta per (month-start date, product, level)."""
    series = IndexSeries(cfg.index, ps)
    tables = ModelTables(cfg.model, cfg.grid)
    bt = _backtester(cfg, result)
    rows = []
    for t in sorted(result.dates):
        if cfg.grid.date(t).day != 1:
            continue
        store = result.dates[t]
        if not store.delta_coef:
            continue
        from .optimize import regressor_matrix
        x, _ = regressor_matrix(cfg.rspec, t, ps, series)
        cells = store.partition().locate(x)
        n_lv = result.levels.n_levels(t)
        lo = int(result.levels.lo[t])
        strips = bt._forward_strips(ps, t)
        for key in sorted(store.delta_coef):
            est = store.deltas(key)
            vals = est.evaluate(x, cells=cells)      # (paths, rows*levels)
            n_rows = store.delta_rows[key]
            raw = vals.T.reshape(n_rows, n_lv, ps.n_paths)
            if key == "fx":
                for r, col in enumerate(bt.fx_columns):
                    y = ps.fx[t, col] / cfg.model.active_fx[col].x0
                    for li in range(n_lv):
                        rows.append((cfg.grid.date(t), f"fx{col}", "", "",
                                     result.levels.volumes[lo + li],
                                     float((-raw[r, li] / y).mean())))
                continue
            j = 0 if key == "gas" else int(key[3:])
            sign = 1.0 if key == "gas" else -1.0
            _, tang = strips[j]
            for r, prod in enumerate(cfg.calendar.quoted(t, j)):
                y_eta = tang[prod.start - (t + 1)]
                norm = y_eta * bt._sum_f0(prod)
                for li in range(n_lv):
                    rows.append((cfg.grid.date(t), cfg.commodity_names[j],
                                 cfg.grid.date(prod.start), cfg.grid.date(prod.end),
                                 result.levels.volumes[lo + li],
                                 float((sign * raw[r, li] / norm).mean())))
    _write_csv(_outfile(cfg, "deltas.csv"),
               "date,component,delivery_start,delivery_end,volume,mean_delta", rows)


# ------------------------------------------------------------------ backtest

def cmd_backtest(cfg: RunConfig, args) -> int:
    path = args.archive or _outfile(cfg, ARCHIVE_NAME)
    levels = LevelSystem(cfg.contract, cfg.vgrid)
    result = archive.load_result(path, cfg.config_hash, levels, cfg.rspec)
    plans = cfg.plans or [HedgePlan.total(
        sorted({c.commodity for c in cfg.index.components}),
        bool(cfg.model.active_fx))]
    bt = _backtester(cfg, result)
    reports = bt.run(plans, cfg.sim_paths, cfg.sim_seed,
                     chunk_size=cfg.chunk_size, track_paths=args.track_paths)
    _write_csv(_outfile(cfg, "backtest.csv"),
               "plan,paths,mean_unhedged,std_unhedged,mean_hedged,std_hedged",
               [(r.name, r.n_paths, r.mean_unhedged, r.std_unhedged,
                 r.mean_hedged, r.std_hedged) for r in reports])
    pnl_rows = []
    for r in reports:
        for p in range(r.n_paths):
            pnl_rows.append((r.name, p, r.pnl_unhedged[p], r.pnl_hedged[p]))
    _write_csv(_outfile(cfg, "pnl.csv"), "plan,path,unhedged,hedged", pnl_rows)
    _write_csv(_outfile(cfg, "positions.csv"),
               "plan,path,date,component,delivery_start,delivery_end,position",
               [(pl, p, cfg.grid.date(t), comp, s, e, h)
                for pl, p, t, comp, s, e, h in bt.tracked])
    for r in reports:
        print(f"{r.name}: unhedged std {r.std_unhedged:.4f}, "
              f"hedged std {r.std_hedged:.4f} (x{r.std_ratio:.1f})")
    return 0


# ------------------------------------------------------------------- studies

def cmd_study_regressors(cfg: RunConfig, args) -> int:
    rows = []
    coms = sorted({c.commodity for c in cfg.index.components})
    for kind in REGRESSOR_KINDS:
        rspec = cfg.rspec.__class__(kind, cfg.rspec.cells, cfg.rspec.degrees)
        result, _ = _solve(cfg, rspec=rspec)
        bt = _backtester(cfg, result, rspec=rspec)
        rep = bt.run([HedgePlan.total(coms, bool(cfg.model.active_fx))],
                     cfg.sim_paths, cfg.sim_seed, chunk_size=cfg.chunk_size)[0]
        rows.append((kind, result.value, result.stderr, rep.mean_unhedged,
                     rep.std_unhedged, rep.std_hedged))
        print(f"{kind}: value {result.value:.4f} sim {rep.mean_unhedged:.4f} "
              f"std {rep.std_unhedged:.4f} -> {rep.std_hedged:.4f}")
    _write_csv(_outfile(cfg, "study_regressors.csv"),
               "regressor,optimization_value,stderr,simulation_value,"
               "std_unhedged,std_hedged", rows)
    return 0


def cmd_study_components(cfg: RunConfig, args) -> int:
    result, _ = _solve(cfg)
    bt = _backtester(cfg, result)
    reports = component_study(bt, cfg.sim_paths, cfg.sim_seed,
                              chunk_size=cfg.chunk_size)
    _write_csv(_outfile(cfg, "study_components.csv"),
               "plan,std_unhedged,std_hedged,mean_unhedged,mean_hedged",
               [(r.name, r.std_unhedged, r.std_hedged, r.mean_unhedged,
                 r.mean_hedged) for r in reports])
    for r in reports:
        print(f"{r.name}: std {r.std_hedged:.4f}")
    return 0


def cmd_study_frequency(cfg: RunConfig, args) -> int:
    result, _ = _solve(cfg)
    bt = _backtester(cfg, result)
    rows = []
    reports = frequency_study(bt, cfg.sim_paths, cfg.sim_seed,
                              chunk_size=cfg.chunk_size)
    for r in reports:
        rows.append(("index_pace", r.name, r.std_unhedged, r.std_hedged))
    reports = frequency_study(bt, cfg.sim_paths, cfg.sim_seed, before_start=True,
                              frequencies=("weekly", "twice_monthly", "monthly",
                                           "quarterly"),
                              chunk_size=cfg.chunk_size)
    for r in reports:
        rows.append(("before_start", r.name, r.std_unhedged, r.std_hedged))
    _write_csv(_outfile(cfg, "study_frequency.csv"),
               "variant,plan,std_unhedged,std_hedged", rows)
    for v, name, su, sh in rows:
        print(f"{v}/{name}: hedged std {sh:.4f}")
    return 0


# ------------------------------------------------------------------ validate

def cmd_validate(cfg: RunConfig, args) -> int:
    ok = True

    def check(name, passed, detail=""):
        nonlocal ok
        ok &= bool(passed)
        print(f"[{'PASS' if passed else 'FAIL'}] {name}" +
              (f": {detail}" if detail else ""))

    check("configuration", True, f"{cfg.grid.n_dates} days, "
          f"{cfg.model.n_drivers} drivers, {len(cfg.plans)} plans")
    try:
        for j in cfg.calendar.horizons:
            cfg.calendar.validate_refinement(j)
        check("product calendar refinement", True)
    except SwingError as exc:
        check("product calendar refinement", False, str(exc))

    n = min(cfg.opt_paths, 20000)
    ps = simulate(cfg.model, cfg.grid, n, cfg.opt_seed)
    tables = ModelTables(cfg.model, cfg.grid)
    t_mid = cfg.grid.n_dates // 2
    t_last = cfg.grid.n_dates - 1
    for j, com in enumerate(cfg.model.commodities):
        tang = tangent_strip(ps, tables, j, t_mid, np.array([t_last]))[0]
        dev = abs(tang.mean() - 1.0)
        lim = 3.0 * tang.std() / np.sqrt(n)
        check(f"martingale/unit tangent {com.name}", dev <= lim,
              f"|E[Y]-1| = {dev:.2e} vs 3se = {lim:.2e}")
    for col, f in enumerate(cfg.model.active_fx):
        y = ps.fx[t_last, col] / f.x0
        growth = np.exp(f.r_per_step(cfg.grid.n_steps).sum() / 365.0)
        dev = abs(y.mean() * growth - 1.0)
        lim = 3.0 * y.std() * growth / np.sqrt(n)
        check(f"fx unit tangent {f.name}", dev <= lim,
              f"|E[Y]exp(int r_f)-1| = {dev:.2e} vs 3se = {lim:.2e}")
    series = IndexSeries(cfg.index, ps)
    swap = sum(float((ps.spot[t, 0] - series.on_day(t)).mean())
               for t in range(cfg.contract.i_start, cfg.contract.i_end + 1))
    check("swap level (informational)", True, f"forced-take swap = {swap:.4f}")
    return 0 if ok else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.fn(cfg, args)
    except SwingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
