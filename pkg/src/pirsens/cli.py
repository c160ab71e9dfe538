"""Command-line interface: ``pirsens {ingest,analyze,contour,simulate}``.

Exit codes: 0 on success, 1 on input errors, 2 when the sensitivity model is
infeasible on the full sample.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import r2calc as rc
from .bootstrap import BootstrapSpec, sensitivity_interval
from .contour import b_contour, comparison_points, default_r_axis, r_contour
from .exceptions import (
    InfeasibleAtCompile,
    MissingColumn,
    ModelInfeasibleOnSample,
    NonNumericColumn,
    ParseError,
    PirsensError,
)
from .gridopt import GridParams, solve_pir
from .sensmodel import DEFAULT_A_INTERVAL, SensitivityModel, compile_model
from .simharness import SimScenario, rows_to_csv, rows_to_table, run_coverage

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


class InputError(Exception):
    """Invalid command-line or configuration input."""


# ---------------------------------------------------------------- ingestion

def read_csv(path, columns=None):
    """Parse a numeric CSV with a header row.

    Returns
    -------
    names : list of str
    data : ndarray of shape (n, p)
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", row=1) from None
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names in header", row=1)
        if columns is None:
            columns = header
        missing = [c for c in columns if c not in header]
        if missing:
            raise MissingColumn(f"columns not found: {missing}", row=1, column=missing[0])
        pos = [header.index(c) for c in columns]
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not cell.strip() for cell in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(rec)}", row=line_no)
            vals = []
            for p, name in zip(pos, columns):
                cell = rec[p].strip()
                if cell == "":
                    raise ParseError("missing value", row=line_no, column=name)
                try:
                    v = float(cell)
                except ValueError:
                    raise NonNumericColumn(f"non-numeric value {cell!r}", row=line_no, column=name) from None
                if not math.isfinite(v):
                    raise NonNumericColumn(f"non-finite value {cell!r}", row=line_no, column=name)
                vals.append(v)
            rows.append(vals)
    if len(rows) < 2:
        raise ParseError("need at least two data rows")
    return list(columns), np.array(rows, dtype=float)


def ingest(path, roles: rc.Roles | None = None):
    """Centred 1/n covariance of the role columns (all columns without roles).

    Returns
    -------
    cov : CovarianceModel
    n : int
    """
    columns = list(roles.labels) if roles is not None else None
    names, data = read_csv(path, columns)
    cov = rc.CovarianceModel.from_data(names, data, roles)
    return cov, data.shape[0]


def read_covariance(path, n: int, roles: rc.Roles | None = None) -> rc.CovarianceModel:
    """Covariance file: header row of names followed by the square matrix."""
    names, mat = read_csv(path)
    if mat.shape != (len(names), len(names)):
        raise ParseError("covariance file must hold a square matrix matching the header")
    cov = rc.CovarianceModel(names, mat, None, n)
    if roles is not None:
        cov = cov.subset(list(roles.labels)).with_roles(roles)
    return cov


def write_covariance(cov: rc.CovarianceModel) -> str:
    lines = [",".join(cov.names)]
    for row in cov.sigma:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- config

def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"invalid TOML in {path}: {exc}") from None
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def _resolve(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def roles_from_config(cfg) -> rc.Roles:
    r = cfg.get("roles")
    if not r:
        raise InputError("missing [roles] section")
    try:
        return rc.Roles(r["outcome"], r["treatment"], r.get("instrument"),
                        tuple(r.get("xdot", ())), tuple(r.get("xtilde", ())))
    except KeyError as exc:
        raise InputError(f"[roles] lacks {exc.args[0]!r}") from None


def model_from_config(cfg) -> SensitivityModel:
    bounds = cfg.get("bounds")
    if not bounds:
        raise InputError("no [[bounds]] entries")
    default_a = tuple(cfg.get("model", {}).get("default_a_interval", DEFAULT_A_INTERVAL))
    try:
        return SensitivityModel.from_dicts(bounds, default_a_interval=default_a)
    except KeyError as exc:
        raise InputError(f"bound entry lacks {exc.args[0]!r}") from None


def grid_from_config(cfg, override=None) -> GridParams:
    g = dict(cfg.get("grid", {}))
    if override:
        g.update(n_a=override, n_b=override, n_g=override)
    if "n" in g:
        n = g.pop("n")
        g = {"n_a": n, "n_b": n, "n_g": n, **g}
    return GridParams(**g)


def bootstrap_from_config(cfg, seed: int):
    b = cfg.get("bootstrap")
    if b is None:
        return None
    return BootstrapSpec(int(b.get("n_boot", 1000)), float(b.get("level", 0.95)),
                         b.get("method", "percentile"), int(seed))


def data_from_config(cfg, roles):
    """Returns (cov, rows or None, names or None)."""
    d = cfg.get("data")
    if not d:
        raise InputError("missing [data] section")
    if "csv" in d:
        names, data = read_csv(_resolve(cfg, d["csv"]), list(roles.labels))
        return rc.CovarianceModel.from_data(names, data, roles), data, names
    if "covariance" in d:
        if "n" not in d:
            raise InputError("[data] with a covariance file needs the sample size n")
        return read_covariance(_resolve(cfg, d["covariance"]), int(d["n"]), roles), None, None
    raise InputError("[data] needs 'csv' or 'covariance'")


def _clean(obj):
    """JSON-safe copy: infinities become strings, NaN becomes null, arrays become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dump(doc) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    cov, n = ingest(args.csv)
    if args.out:
        Path(args.out).write_text(write_covariance(cov))
    doc = {"n": n, "names": list(cov.names), "covariance": cov.sigma}
    sys.stdout.write(_dump(doc))
    return EXIT_OK


def analyze(cfg, seed: int, threads: int = 1) -> dict:
    """Run the full pipeline for a loaded configuration and return the result document."""
    roles = roles_from_config(cfg)
    model = model_from_config(cfg)
    grid = grid_from_config(cfg)
    spec = bootstrap_from_config(cfg, seed)
    cov, data, names = data_from_config(cfg, roles)
    theta, cons = compile_model(model, cov)
    est = solve_pir(theta, cons, grid)
    if not est.feasible:
        raise ModelInfeasibleOnSample("the sensitivity model is infeasible on the full sample")
    effective = {k: v for k, v in cfg.items() if not k.startswith("_")}
    effective["grid"] = {"n_a": grid.n_a, "n_b": grid.n_b, "n_g": grid.n_g}
    effective["model"] = {"default_a_interval": list(model.default_a_interval)}
    effective["bounds"] = model.to_dicts()
    effective["seed"] = seed
    doc = {
        "config": effective,
        "theta": theta.to_dict(),
        "constraints": cons.to_dict(),
        "pir": est.to_dict(),
        "sensitivity_interval": None,
        "diagnostics": {"n": cov.n, "version": __version__},
    }
    if spec is not None:
        if data is None:
            raise InputError("bootstrap requires raw data ([data] csv)")
        effective["bootstrap"] = {"n_boot": spec.n_boot, "level": spec.level, "method": spec.method}
        res = sensitivity_interval(data, names, roles, model, grid, spec, threads)
        doc["sensitivity_interval"] = res.interval.to_dict()
        doc["diagnostics"]["n_infeasible_lower"] = res.interval.n_infeasible_lower
        doc["diagnostics"]["n_infeasible_upper"] = res.interval.n_infeasible_upper
    return doc


def cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    doc = analyze(cfg, args.seed, args.threads)
    out = args.out or cfg.get("output", {}).get("path")
    if out and not args.out:
        out = _resolve(cfg, out)
    _emit(_dump(doc), out)
    if args.timing:
        sys.stderr.write(f"runtime: {time.perf_counter() - t0:.3f} s\n")
    return EXIT_OK


def _parse_benchmarks(text):
    out = []
    if not text:
        return out
    for item in text.split(","):
        try:
            name, b = item.rsplit(":", 1)
            out.append((name.strip(), float(b)))
        except ValueError:
            raise InputError(f"benchmark {item!r} is not of the form covariate:b") from None
    return out


def cmd_contour(args) -> int:
    cfg = load_config(args.config)
    roles = roles_from_config(cfg)
    model = model_from_config(cfg)
    cov, _, _ = data_from_config(cfg, roles)
    if args.type == "b":
        res = args.res or 30
        grid = grid_from_config(cfg)
        vary = tuple(int(v) for v in args.vary.split(",")) if args.vary else tuple(
            k for k, bd in enumerate(model.bounds) if hasattr(bd, "b"))[:2]
        if len(vary) != 2:
            raise InputError("b-contours need two bounds with b-factors (see --vary)")
        axis = np.linspace(args.bmin, args.bmax, res)
        cg = b_contour(cov, model, vary, axis, axis, args.end, grid)
    else:
        res = args.res or 400
        theta, _ = compile_model(model, cov)
        axis = default_r_axis(res)
        cg = r_contour(theta, axis, axis)
        for name, b in _parse_benchmarks(args.benchmarks):
            for p in comparison_points(cov, name, [b]):
                cg.add_overlay(p)
    prefix = Path(args.out)
    if args.format == "json":
        prefix.with_suffix(".json").write_text(cg.to_json())
    else:
        prefix.with_suffix(".csv").write_text(cg.to_csv())
    prefix.with_name(prefix.stem + "_overlays.csv").write_text(cg.overlays_csv())
    return EXIT_OK


def cmd_simulate(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    spec = BootstrapSpec(args.boot, args.level, "percentile", args.seed)
    grid = GridParams(args.grid, args.grid, args.grid)
    scenario = SimScenario(args.scenario, args.n, args.reps, spec, grid, methods, args.seed)
    rows = run_coverage(scenario, threads=args.threads)
    text = rows_to_csv(rows, scenario)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(rows_to_table(rows) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pirsens", description="Sensitivity analysis for linear causal effects "
                                "under unmeasured confounding via partial identification.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    for parser, default in ((p, None), (common, argparse.SUPPRESS)):
        parser.add_argument("--threads", type=int, default=1 if default is None else default,
                            help="worker threads (results do not depend on it)")
        parser.add_argument("--seed", type=int, default=0 if default is None else default,
                            help="seed for all randomness")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="compute the centred 1/n covariance of a CSV file")
    s.add_argument("csv")
    s.add_argument("--out", help="write the covariance matrix as CSV")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("analyze", parents=[common], help="estimate the PIR and a sensitivity interval")
    s.add_argument("config")
    s.add_argument("--out", help="output JSON path (default: [output] path or stdout)")
    s.add_argument("--timing", action="store_true", help="report runtime on stderr")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("contour", parents=[common], help="emit b- or R-contour grids")
    s.add_argument("config")
    s.add_argument("--type", choices=("b", "r"), default="b")
    s.add_argument("--end", choices=("lower", "upper"), default="lower")
    s.add_argument("--res", type=int, default=None, help="points per axis (default 30 for b, 400 for r)")
    s.add_argument("--benchmarks", default="", help="comparison points, e.g. black:1,south:2")
    s.add_argument("--vary", default="", help="indices of the two bounds whose b-factors vary, e.g. 0,1")
    s.add_argument("--bmin", type=float, default=0.0)
    s.add_argument("--bmax", type=float, default=5.0)
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out", required=True, help="output path prefix")
    s.set_defaults(func=cmd_contour)

    s = sub.add_parser("simulate", parents=[common], help="coverage study on simulated data")
    s.add_argument("--scenario", choices=("regression", "iv"), default="regression")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--reps", type=int, default=300)
    s.add_argument("--boot", type=int, default=500)
    s.add_argument("--level", type=float, default=0.9)
    s.add_argument("--grid", type=int, default=200)
    s.add_argument("--methods", default="percentile,basic,heuristic,oracle")
    s.add_argument("--out", help="CSV output path")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelInfeasibleOnSample, InfeasibleAtCompile) as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE
    except (InputError, PirsensError, ValueError, KeyError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
