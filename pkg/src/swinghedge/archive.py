"""Binary archive for a solved strategy (value, estimators, delta coefficients).

Layout (little-endian throughout):

    bytes 0..3    magic b"SWHA"
    bytes 4..7    format version (uint32)
    bytes 8..39   SHA-256 of the configuration file the run used
    bytes 40..47  manifest length L (uint64)
    bytes 48..48+L-1   manifest, UTF-8 JSON
    then           raw C-order array payloads at the offsets the manifest states

The manifest has two members: "meta" (scalars: value, stderr, path count,
seed, per-date layout) and "arrays" (name, dtype string, shape, offset,
nbytes per array).  Offsets are absolute file positions.
"""

import json

import numpy as np

from .errors import ArchiveError
from .optimize import DateStore, SolveResult

MAGIC = b"SWHA"
VERSION = 1

__all__ = ["save_result", "load_result", "read_hash"]


def _flatten(result: SolveResult):
    meta_dates = {}
    arrays = {}
    for t, store in sorted(result.dates.items()):
        base = f"d{t:05d}"
        meta_dates[str(t)] = {
            "active_vars": list(store.active_vars),
            "cells": list(store.cells),
            "delta_rows": {k: int(v) for k, v in store.delta_rows.items()},
            "has_cont": store.cont_coef is not None,
        }
        for i, e in enumerate(store.edges):
            arrays[f"{base}/edges{i}"] = e
        arrays[f"{base}/centers"] = store.centers
        if store.cont_coef is not None:
            arrays[f"{base}/cont"] = store.cont_coef
        for key, coef in store.delta_coef.items():
            arrays[f"{base}/delta/{key}"] = coef
    meta = {
        "value": result.value,
        "stderr": result.stderr,
        "n_paths": result.n_paths,
        "seed": result.seed,
        "exercise_stats": result.exercise_stats,
        "dates": meta_dates,
    }
    return meta, arrays


def save_result(path: str, result: SolveResult, config_hash: bytes) -> None:
    meta, arrays = _flatten(result)
    names = sorted(arrays)
    sizes = [(n, arrays[n]) for n in names]
    manifest = {"meta": meta, "arrays": []}
    # iterate until the payload offset is consistent with the manifest length
    offset = 0
    while True:
        manifest["arrays"] = []
        pos = offset
        for name, arr in sizes:
            manifest["arrays"].append({
                "name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                "offset": pos, "nbytes": int(arr.nbytes)})
            pos += int(arr.nbytes)
        blob = json.dumps(manifest, separators=(",", ":")).encode()
        header = len(MAGIC) + 4 + 32 + 8 + len(blob)
        if offset == header:
            break
        offset = header
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(config_hash)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name, arr in sizes:
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_hash(path: str) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(40)
    if head[:4] != MAGIC:
        raise ArchiveError(f"{path} is not a strategy archive")
    version = int.from_bytes(head[4:8], "little")
    if version != VERSION:
        raise ArchiveError(f"{path}: archive version {version}, expected {VERSION}")
    return head[8:40]


def load_result(path: str, config_hash: bytes, levels, rspec) -> SolveResult:
    stored = read_hash(path)
    if stored != config_hash:
        raise ArchiveError(f"{path} was produced from a different configuration "
                           "(hash mismatch); re-run pricing")
    with open(path, "rb") as fh:
        fh.seek(40)
        mlen = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(mlen).decode())
    mm = np.memmap(path, mode="r", dtype=np.uint8)
    arrays = {}
    for e in manifest["arrays"]:
        seg = mm[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(seg, dtype=np.dtype(e["dtype"])) \
            .reshape(e["shape"])
    meta = manifest["meta"]
    dates = {}
    for t_str, d in meta["dates"].items():
        t = int(t_str)
        base = f"d{t:05d}"
        edges = []
        i = 0
        while f"{base}/edges{i}" in arrays:
            edges.append(arrays[f"{base}/edges{i}"])
            i += 1
        store = DateStore(
            t=t, active_vars=tuple(d["active_vars"]), cells=tuple(d["cells"]),
            edges=edges, centers=arrays[f"{base}/centers"],
            cont_coef=arrays.get(f"{base}/cont"),
            delta_coef={k: arrays[f"{base}/delta/{k}"] for k in d["delta_rows"]},
            delta_rows={k: int(v) for k, v in d["delta_rows"].items()})
        dates[t] = store
    return SolveResult(
        value=float(meta["value"]), stderr=float(meta["stderr"]),
        levels=levels, regressor=rspec, dates=dates,
        n_paths=int(meta["n_paths"]), seed=int(meta["seed"]),
        exercise_stats=[tuple(r) for r in meta["exercise_stats"]])
