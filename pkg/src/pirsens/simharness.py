"""Coverage studies on linear structural-equation data.

Two data-generating processes are provided, both with independent standard
normal errors and true effect ``beta = 1``:

* regression:  U = e_U, X = e_X, D = X + U + e_D, Y = D + 2X + U + e_Y
* iv:          U = e_U, Z = e_Z, D = Z + U + e_D, Y = D + U + e_Y

Experiment ``k`` draws its data from the Philox stream keyed by
``(seed, k, 0)`` and its bootstrap from the seed derived from
``(seed, k, 1)``.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from . import r2calc as rc
from .bootstrap import (
    BootstrapSpec,
    _solve_cov,
    assemble_interval,
    bootstrap_distribution,
    heuristic_interval,
    jackknife,
)
from .exceptions import PirsensError
from .gridopt import GridParams, solve_pir
from .sensmodel import CompUD, CompUYUncondD, DirectUZ, DirectZY, SensitivityModel, compile_model

TRUE_BETA = 1.0
ALL_METHODS = ("percentile", "basic", "bca", "heuristic", "oracle")

REGRESSION_NAMES = ("U", "X", "D", "Y")
IV_NAMES = ("U", "Z", "D", "Y")
REGRESSION_ROLES = rc.Roles("Y", "D", xdot=("X",))
IV_ROLES = rc.Roles("Y", "D", "Z")

# population covariance of (U, X, D, Y) under the regression equations
REGRESSION_COV = np.array([
    [1.0, 0.0, 1.0, 2.0],
    [0.0, 1.0, 1.0, 3.0],
    [1.0, 1.0, 3.0, 6.0],
    [2.0, 3.0, 6.0, 15.0],
])
# population covariance of (U, Z, D, Y) under the iv equations
IV_COV = np.array([
    [1.0, 0.0, 1.0, 2.0],
    [0.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 3.0, 4.0],
    [2.0, 1.0, 4.0, 7.0],
])


def _rng(seed) -> np.random.Generator:
    if np.isscalar(seed):
        seed = [int(seed)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(s) for s in seed])))


def gen_regression(n: int, seed) -> np.ndarray:
    """Rows over (U, X, D, Y)."""
    e = _rng(seed).standard_normal((n, 4))
    u, x = e[:, 0], e[:, 1]
    d = x + u + e[:, 2]
    y = d + 2.0 * x + u + e[:, 3]
    return np.column_stack([u, x, d, y])


def gen_iv(n: int, seed) -> np.ndarray:
    """Rows over (U, Z, D, Y)."""
    e = _rng(seed).standard_normal((n, 4))
    u, z = e[:, 0], e[:, 1]
    d = z + u + e[:, 2]
    y = d + u + e[:, 3]
    return np.column_stack([u, z, d, y])


def regression_model() -> SensitivityModel:
    """U explains no more of D than X does, and at most 4/9 as much of Y."""
    return SensitivityModel((CompUD(("X",), 1.0), CompUYUncondD(("X",), 4.0 / 9.0)))


def iv_model() -> SensitivityModel:
    return SensitivityModel((DirectUZ(-0.002, 0.002), DirectZY(-0.002, 0.002)))


@dataclass(frozen=True)
class SimScenario:
    kind: str = "regression"
    n: int = 500
    reps: int = 300
    boot: BootstrapSpec = field(default_factory=lambda: BootstrapSpec(n_boot=500, level=0.9))
    grid: GridParams = field(default_factory=GridParams)
    methods: tuple = ("percentile", "basic", "heuristic", "oracle")
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("regression", "iv"):
            raise ValueError("kind must be 'regression' or 'iv'")
        if self.n < 10 or self.reps < 1:
            raise ValueError("n must be >= 10 and reps >= 1")
        object.__setattr__(self, "methods", tuple(self.methods))
        bad = set(self.methods) - set(ALL_METHODS)
        if bad or not self.methods:
            raise ValueError(f"unknown methods {sorted(bad)}")

    @property
    def names(self):
        return REGRESSION_NAMES if self.kind == "regression" else IV_NAMES

    @property
    def roles(self) -> rc.Roles:
        return REGRESSION_ROLES if self.kind == "regression" else IV_ROLES

    @property
    def model(self) -> SensitivityModel:
        return regression_model() if self.kind == "regression" else iv_model()

    def generate(self, n: int, seed) -> np.ndarray:
        return gen_regression(n, seed) if self.kind == "regression" else gen_iv(n, seed)

    @property
    def population_cov(self) -> np.ndarray:
        return REGRESSION_COV if self.kind == "regression" else IV_COV

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out


@dataclass(frozen=True)
class CoverageRow:
    method: str
    coverage_beta: float
    coverage_pir: float
    mean_length: float
    median_length: float
    n_experiments: int
    n_failures: int = 0
    n_infeasible_replicates: int = 0


def population_pir(scenario: SimScenario) -> tuple:
    """PIR of the scenario's model at the population covariance (U withheld)."""
    observed = [s for s in scenario.names if s != "U"]
    full = rc.CovarianceModel(scenario.names, scenario.population_cov)
    cov = full.subset(observed).with_roles(scenario.roles)
    theta, cons = compile_model(scenario.model, cov)
    est = solve_pir(theta, cons, scenario.grid)
    return est.lower, est.upper


def oracle_interval(data: np.ndarray, names, roles: rc.Roles, level: float) -> tuple:
    """Normal-theory interval for the D-coefficient regressing Y on (D, covariates, instrument, U)."""
    idx = {s: i for i, s in enumerate(names)}
    regs = [roles.treatment] + list(roles.covariates)
    if roles.instrument is not None:
        regs.append(roles.instrument)
    regs.append("U")
    n = data.shape[0]
    X = np.column_stack([np.ones(n)] + [data[:, idx[s]] for s in regs])
    y = data[:, idx[roles.outcome]]
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    s2 = resid @ resid / (n - X.shape[1])
    se = np.sqrt(s2 * np.linalg.inv(X.T @ X)[1, 1])
    z = float(ndtri(1.0 - (1.0 - level) / 2.0))
    return float(coef[1] - z * se), float(coef[1] + z * se)


def _experiment_seeds(seed: int, k: int):
    boot_seed = int(np.random.SeedSequence([int(seed), int(k), 1]).generate_state(1, np.uint64)[0])
    return [int(seed), int(k), 0], boot_seed


def run_experiment(scenario: SimScenario, k: int) -> dict:
    """One experiment: returns ``{method: (lower, upper) or None}`` plus diagnostics."""
    data_seed, boot_seed = _experiment_seeds(scenario.seed, k)
    full = scenario.generate(scenario.n, data_seed)
    names = scenario.names
    keep = [i for i, s in enumerate(names) if s != "U"]
    observed = full[:, keep]
    obs_names = [names[i] for i in keep]
    roles, model, grid = scenario.roles, scenario.model, scenario.grid
    spec = BootstrapSpec(scenario.boot.n_boot, scenario.boot.level, scenario.boot.method, boot_seed)
    out = {"intervals": {}, "failures": {}, "n_infeasible": 0}
    level = spec.level
    if "oracle" in scenario.methods:
        out["intervals"]["oracle"] = oracle_interval(full, names, roles, level)
    boot_methods = [m for m in ("percentile", "basic", "bca") if m in scenario.methods]
    needs_point = bool(boot_methods) or "heuristic" in scenario.methods
    point = theta = cons = None
    if needs_point:
        try:
            cov = rc.CovarianceModel.from_data(obs_names, observed, roles)
            theta, cons = compile_model(model, cov)
            point = solve_pir(theta, cons, grid)
            if not point.feasible:
                raise PirsensError("infeasible point estimate")
        except (PirsensError, ZeroDivisionError) as exc:
            for m in boot_methods + (["heuristic"] if "heuristic" in scenario.methods else []):
                out["failures"][m] = repr(exc)
            return out
    if "heuristic" in scenario.methods:
        h = heuristic_interval(theta, cons, grid, scenario.n, level)
        out["intervals"]["heuristic"] = (h.lower, h.upper)
    if boot_methods:
        lowers, uppers = bootstrap_distribution(observed, obs_names, roles, model, grid, spec)
        out["n_infeasible"] = int(np.sum(np.isneginf(lowers)))
        jack = jackknife(observed, obs_names, roles, model, grid) if "bca" in boot_methods else None
        for m in boot_methods:
            s = BootstrapSpec(spec.n_boot, level, m, spec.seed)
            try:
                iv = assemble_interval(lowers, uppers, point, s, jack)
                out["intervals"][m] = (iv.lower, iv.upper)
            except PirsensError as exc:
                out["failures"][m] = repr(exc)
    return out


def summarize(scenario: SimScenario, results: list, pir: tuple) -> list:
    rows = []
    n_infeasible = int(sum(r["n_infeasible"] for r in results))
    for m in scenario.methods:
        ivs = [r["intervals"][m] for r in results if m in r["intervals"]]
        fails = sum(1 for r in results if m in r["failures"])
        if not ivs:
            rows.append(CoverageRow(m, float("nan"), float("nan"), float("nan"), float("nan"), 0, fails))
            continue
        lo = np.array([v[0] for v in ivs])
        hi = np.array([v[1] for v in ivs])
        cov_beta = (lo <= TRUE_BETA) & (TRUE_BETA <= hi)
        cov_pir = (lo <= pir[0]) & (pir[1] <= hi)
        lengths = TRUE_BETA - lo[cov_beta]
        mean_len = float(np.mean(lengths)) if lengths.size else float("nan")
        med_len = float(np.median(lengths)) if lengths.size else float("nan")
        rows.append(CoverageRow(m, float(cov_beta.mean()), float(cov_pir.mean()), mean_len, med_len,
                                len(ivs), fails, n_infeasible if m in ("percentile", "basic", "bca") else 0))
    return rows


def run_coverage(scenario: SimScenario, threads: int = 1, return_raw: bool = False):
    """Run all experiments of ``scenario`` and aggregate coverage per method."""
    pir = population_pir(scenario)

    def one(k):
        return run_experiment(scenario, k)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(scenario.reps)))
    else:
        results = [one(k) for k in range(scenario.reps)]
    rows = summarize(scenario, results, pir)
    return (rows, results) if return_raw else rows


CSV_FIELDS = ("kind", "n", "reps", "n_boot", "level", "seed", "pir_lower", "pir_upper") + tuple(
    CoverageRow.__dataclass_fields__
)


def rows_to_csv(rows, scenario: SimScenario) -> str:
    pir = population_pir(scenario)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    meta = [scenario.kind, scenario.n, scenario.reps, scenario.boot.n_boot, scenario.boot.level,
            scenario.seed, repr(pir[0]), repr(pir[1])]
    for r in rows:
        w.writerow(meta + [repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
    return buf.getvalue()


def rows_to_table(rows) -> str:
    head = ("method", "cov(beta)", "cov(PIR)", "mean len", "median len", "runs", "fail")
    lines = ["{:<11}{:>10}{:>10}{:>10}{:>12}{:>6}{:>6}".format(*head)]
    for r in rows:
        lines.append("{:<11}{:>9.1%} {:>9.1%} {:>10.3f}{:>12.3f}{:>6d}{:>6d}".format(
            r.method, r.coverage_beta, r.coverage_pir, r.mean_length, r.median_length,
            r.n_experiments, r.n_failures))
    return "\n".join(lines)
