"""Command-line interface: estimate, select-bandwidth, simulate, report."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from npebci import __version__
from npebci.bandwidth import LAMBDA, N_FOLDS, Rule, select_bandwidth
from npebci.baselines import akp_all, cox_morris_all, estimate_A, naive_all
from npebci.core import Dataset, InvalidInput, Method, NpebciError
from npebci.quantile import np_ebci_all
from npebci.simulate import DESIGN_NAMES, CellConfig, oracle_gap, run_cell

EXIT_OK, EXIT_INPUT, EXIT_ESTIMATION, EXIT_SIMULATION = 0, 2, 3, 4
MAX_FAIL_FRACTION = 0.05

INTERVAL_COLUMNS = ["id", "method", "lower", "upper", "length", "flags"]
RESULT_COLUMNS = ["design", "n", "snr", "reps", "method", "coverage", "mc_se_cov",
                  "length_reduction", "mc_se_len", "oracle_gap", "flags"]
ESTIMATE_METHODS = [Method.NAIVE.value, Method.COX_MORRIS.value, Method.AKP.value,
                    Method.NPEBCI.value]


class InputError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def read_units(path) -> Dataset:
    """Parse an ``id,y,sigma`` CSV; errors name the offending data row."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "y", "sigma"]:
            raise InputError(f"expected header id,y,sigma, got {header}")
        ids, ys, ss = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != 3:
                raise InputError(f"row {row_no}: expected 3 fields, got {len(row)}")
            try:
                y, s = float(row[1]), float(row[2])
            except ValueError:
                raise InputError(f"row {row_no}: y and sigma must be numbers") from None
            if not (math.isfinite(y) and math.isfinite(s)):
                raise InputError(f"row {row_no}: non-finite value")
            if s <= 0:
                raise InputError(f"row {row_no}: sigma must be positive, got {s}")
            ids.append(row[0].strip())
            ys.append(y)
            ss.append(s)
    if len(set(ids)) != len(ids):
        seen = set()
        for k, i in enumerate(ids, start=1):
            if i in seen:
                raise InputError(f"row {k}: duplicate id {i!r}")
            seen.add(i)
    try:
        return Dataset(np.array(ys), np.array(ss), tuple(ids))
    except InvalidInput as exc:
        raise InputError(str(exc)) from None


def _load_config(path, allowed: set) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    unknown = set(cfg) - allowed
    if unknown:
        raise InputError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _resolve(args, cfg: dict, keys) -> dict:
    """Flags override the config file, which overrides defaults."""
    out = {}
    for k, default in keys.items():
        flag = getattr(args, k, None)
        out[k] = flag if flag is not None else cfg.get(k, default)
    return out


def _methods(spec, allowed) -> list[str]:
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    if spec == ["all"]:
        return list(allowed)
    bad = [m for m in spec if m not in allowed]
    if bad:
        raise InputError(f"unknown methods {bad}; choose from {list(allowed)} or all")
    return list(spec)


# ------------------------------------------------------------------ estimate

ESTIMATE_KEYS = {"alpha": 0.05, "methods": "all", "bandwidth": None, "folds": N_FOLDS,
                 "seed": 0, "rule": Rule.HARD.value, "lam": LAMBDA}


def cmd_estimate(args) -> int:
    cfg = _resolve(args, _load_config(args.config, set(ESTIMATE_KEYS)), ESTIMATE_KEYS)
    ds = read_units(args.input)
    methods = _methods(cfg["methods"], ESTIMATE_METHODS)
    a = float(cfg["alpha"])
    out = Path(args.output)
    rows = []
    manifest = {"command": "estimate", "config": {**cfg, "methods": methods,
                "input": str(args.input)}, "version": __version__}
    A = estimate_A(ds)
    manifest["A_hat"] = A.A_hat
    for m in methods:
        flags = [""] * ds.n
        if m == Method.NAIVE.value:
            lo, hi = naive_all(ds.y, ds.sigma, a)
        elif m == Method.COX_MORRIS.value:
            lo, hi = cox_morris_all(ds.y, ds.sigma, a, A.A_hat)
        elif m == Method.AKP.value:
            lo, hi = akp_all(ds.y, ds.sigma, a, A.A_hat)
        else:
            h = cfg["bandwidth"]
            if h is None:
                _log("selecting bandwidth")
                rep = select_bandwidth(ds, a, V=int(cfg["folds"]), seed=int(cfg["seed"]),
                                       rule=cfg["rule"], lam=float(cfg["lam"]))
                h = rep.chosen
                manifest["bandwidth_report"] = rep.to_dict()
            manifest["bandwidth"] = float(h)
            _log(f"NP-EBCI at h={h:.6g}")
            lo, hi, fl = np_ebci_all(ds, a, float(h))
            flags = [";".join(f) for f in fl]
            failed = int(np.sum(~np.isfinite(lo)))
            manifest["npebci_failed"] = failed
            if failed > MAX_FAIL_FRACTION * ds.n:
                _write_json(out.with_suffix(".manifest.json"), manifest)
                _log(f"error: NP-EBCI failed for {failed} of {ds.n} units")
                return EXIT_ESTIMATION
        for i in range(ds.n):
            rows.append({"id": ds.label(i), "method": m, "lower": float(lo[i]),
                         "upper": float(hi[i]), "length": float(hi[i] - lo[i]),
                         "flags": flags[i]})
    _write_csv(out, INTERVAL_COLUMNS, rows)
    _write_json(out.with_suffix(".manifest.json"), manifest)
    print(out)
    return EXIT_OK


# ------------------------------------------------------- select-bandwidth

SELECT_KEYS = {"alpha": 0.05, "folds": N_FOLDS, "seed": 0, "rule": Rule.HARD.value,
               "lam": LAMBDA, "candidates": None}


def cmd_select_bandwidth(args) -> int:
    cfg = _resolve(args, _load_config(args.config, set(SELECT_KEYS)), SELECT_KEYS)
    ds = read_units(args.input)
    cands = cfg["candidates"]
    if isinstance(cands, str):
        try:
            cands = [float(c) for c in cands.split(",")]
        except ValueError:
            raise InputError("candidates must be comma-separated numbers") from None
    try:
        rep = select_bandwidth(ds, float(cfg["alpha"]), cands, V=int(cfg["folds"]),
                               seed=int(cfg["seed"]), rule=cfg["rule"], lam=float(cfg["lam"]))
    except InvalidInput as exc:
        raise InputError(str(exc)) from None
    report = {"config": {**cfg, "input": str(args.input)}, "version": __version__,
              **rep.to_dict()}
    _write_json(Path(args.output), report)
    print(args.output)
    return EXIT_OK


# ----------------------------------------------------------------- simulate

CELL_KEYS = {"design", "n", "snr", "reps", "seed", "methods", "alpha", "fast_bandwidth",
             "bandwidth"}
SIM_KEYS = {"cells": None, "seed": 0, "alpha": 0.05, "methods": "all",
            "fast_bandwidth": False, "threads": None}


def _cells(cfg: dict) -> list[CellConfig]:
    cells = cfg["cells"]
    if not isinstance(cells, list) or not cells:
        raise InputError("config needs a non-empty 'cells' list")
    out = []
    for k, c in enumerate(cells):
        if not isinstance(c, dict):
            raise InputError(f"cell {k}: must be an object")
        unknown = set(c) - CELL_KEYS
        if unknown:
            raise InputError(f"cell {k}: unknown keys {sorted(unknown)}")
        try:
            out.append(CellConfig(
                design=int(c["design"]), n=int(c["n"]), snr=float(c["snr"]),
                reps=int(c["reps"]), seed=int(c.get("seed", cfg["seed"])),
                methods=tuple(_methods(c.get("methods", cfg["methods"]),
                                       [m.value for m in Method])),
                alpha=float(c.get("alpha", cfg["alpha"])),
                fast_bandwidth=bool(c.get("fast_bandwidth", cfg["fast_bandwidth"])),
                bandwidth=c.get("bandwidth"),
            ))
        except KeyError as exc:
            raise InputError(f"cell {k}: missing key {exc}") from None
        except (InvalidInput, ValueError, TypeError) as exc:
            raise InputError(f"cell {k}: {exc}") from None
        if out[-1].design not in DESIGN_NAMES:
            raise InputError(f"cell {k}: unknown design {out[-1].design}")
    return out


def _cell_rows(res) -> list[dict]:
    c = res.config
    try:
        gap = oracle_gap(res)
    except NpebciError:
        gap = None
    rows = []
    for m in c.methods:
        mm = res.methods[m]
        rows.append({
            "design": c.design, "n": c.n, "snr": c.snr, "reps": c.reps, "method": m,
            "coverage": mm.avg_coverage, "mc_se_cov": mm.mc_se_coverage,
            "length_reduction": mm.avg_length_reduction, "mc_se_len": mm.mc_se_length,
            "oracle_gap": gap if m == Method.NPEBCI.value else None,
            "flags": ";".join(f"{k}={v}" for k, v in sorted(mm.flag_counts.items())),
        })
    return rows


def cmd_simulate(args) -> int:
    raw = _load_config(args.config, set(SIM_KEYS))
    cfg = _resolve(args, raw, SIM_KEYS)
    cells = _cells(cfg)
    out = Path(args.output)
    rows: list[dict] = []
    manifest = {"command": "simulate", "config": cfg, "version": __version__, "cells": []}
    status = EXIT_OK
    for k, cell in enumerate(cells):
        _log(f"cell {k + 1}/{len(cells)}: design={cell.design} n={cell.n} snr={cell.snr} "
             f"reps={cell.reps}")
        try:
            res = run_cell(cell, threads=cfg["threads"])
        except Exception as exc:  # noqa: BLE001 - any cell failure is reported, not raised
            _log(f"error: cell {k + 1} failed: {type(exc).__name__}: {exc}")
            rows.append({"design": cell.design, "n": cell.n, "snr": cell.snr,
                         "reps": cell.reps, "method": "FAILED",
                         "flags": type(exc).__name__})
            status = EXIT_SIMULATION
            break
        rows.extend(_cell_rows(res))
        manifest["cells"].append(res.to_manifest())
    _write_csv(out, RESULT_COLUMNS, rows)
    _write_json(out.with_suffix(".manifest.json"), manifest)
    print(out)
    return status


# ------------------------------------------------------------------- report


def _read_results(path) -> list[dict]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_COLUMNS:
            raise InputError(f"results header must be {','.join(RESULT_COLUMNS)}")
        return [r for r in reader if r["method"] != "FAILED"]


def cmd_report(args) -> int:
    rows = _read_results(args.input)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    cells: dict = {}
    methods: list[str] = []
    for r in rows:
        key = (int(r["design"]), int(r["n"]), float(r["snr"]))
        cells.setdefault(key, {})[r["method"]] = r
        if r["method"] not in methods:
            methods.append(r["method"])
    order = [m.value for m in Method if m.value in methods]
    cols = ["design", "name", "n", "snr"]
    cols += [f"coverage_{m}" for m in order] + [f"length_reduction_{m}" for m in order]
    table = []
    long_rows = []
    for key in sorted(cells, key=lambda k: (k[2], k[1], k[0])):
        d, n, snr = key
        row = {"design": d, "name": DESIGN_NAMES.get(d, ""), "n": n, "snr": snr}
        for m in order:
            r = cells[key].get(m)
            if r is None:
                continue
            row[f"coverage_{m}"] = r["coverage"]
            row[f"length_reduction_{m}"] = r["length_reduction"]
            cell_id = f"d{d}_n{n}_snr{snr}"
            for metric in ("coverage", "mc_se_cov", "length_reduction", "mc_se_len",
                           "oracle_gap"):
                if r[metric] != "":
                    long_rows.append({"cell": cell_id, "method": m, "metric": metric,
                                      "value": r[metric]})
        table.append(row)
    _write_csv(outdir / "summary.csv", cols, table)
    _write_csv(outdir / "long.csv", ["cell", "method", "metric", "value"], long_rows)
    print(outdir / "summary.csv")
    print(outdir / "long.csv")
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npebci", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="interval estimates for every unit")
    e.add_argument("input")
    e.add_argument("-o", "--output", default="intervals.csv")
    e.add_argument("--config")
    e.add_argument("--alpha", type=float)
    e.add_argument("--methods", help="comma list or 'all'")
    e.add_argument("--bandwidth", type=float, help="fix h instead of selecting it")
    e.add_argument("--folds", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--rule", choices=[r.value for r in Rule])
    e.add_argument("--lam", type=float)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("select-bandwidth", help="V-fold bandwidth report")
    b.add_argument("input")
    b.add_argument("-o", "--output", default="bandwidth.json")
    b.add_argument("--config")
    b.add_argument("--alpha", type=float)
    b.add_argument("--folds", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--rule", choices=[r.value for r in Rule])
    b.add_argument("--lam", type=float)
    b.add_argument("--candidates", help="comma-separated bandwidths")
    b.set_defaults(func=cmd_select_bandwidth)

    s = sub.add_parser("simulate", help="run simulation cells from a JSON config")
    s.add_argument("config")
    s.add_argument("-o", "--output", default="results.csv")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--fast-bandwidth", dest="fast_bandwidth", action="store_const",
                   const=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="pivot a results CSV into summary tables")
    r.add_argument("input")
    r.add_argument("-o", "--output", default="report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT
    except NpebciError as exc:
        _log(f"error: {type(exc).__name__}: {exc}")
        return EXIT_ESTIMATION if args.command != "simulate" else EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
