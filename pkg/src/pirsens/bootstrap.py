"""Bootstrap sensitivity intervals for the partially identified region.

Each replicate resamples rows, recomputes the covariance and re-solves the
plug-in program. Replicates whose model is infeasible contribute ``-inf`` to
the lower and ``+inf`` to the upper endpoint vectors, which can only widen a
percentile interval.

Replicate ``k`` draws from a Philox stream keyed by ``(seed, k)``, so results
do not depend on execution order or thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import r2calc as rc
from .exceptions import DegenerateBca, ModelInfeasibleOnSample, PirsensError
from .gridopt import GridParams, PirEstimate, boundary, solve_pir
from .sensmodel import SensitivityModel, compile_model

METHODS = ("percentile", "basic", "bca")


@dataclass(frozen=True)
class BootstrapSpec:
    n_boot: int = 1000
    level: float = 0.95
    method: str = "percentile"
    seed: int = 0

    def __post_init__(self):
        if int(self.n_boot) != self.n_boot or self.n_boot < 1:
            raise ValueError("n_boot must be a positive integer")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def alpha(self) -> float:
        return 1.0 - self.level


@dataclass(frozen=True)
class SensitivityInterval:
    lower: float
    upper: float
    method: str
    level: float
    n_infeasible_lower: int = 0
    n_infeasible_upper: int = 0

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def quantile(values, p: float) -> float:
    """Linear-interpolation sample quantile (Hyndman-Fan type 7) that tolerates infinities.

    Interpolating between an infinite and a finite order statistic returns
    the infinite one, which keeps intervals conservative.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("empty sample")
    if np.isnan(x).any():
        raise ValueError("sample contains NaN")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    h = (x.size - 1) * p
    lo = int(np.floor(h))
    frac = h - lo
    if frac == 0.0 or lo + 1 >= x.size:
        return float(x[lo])
    a, b = x[lo], x[lo + 1]
    if a == b:
        return float(a)
    if np.isfinite(a) and np.isfinite(b):
        return float(a + frac * (b - a))
    return float(a if np.isneginf(a) else b)


def resample_rows(n: int, seed: int, index: int) -> np.ndarray:
    """Row indices of bootstrap replicate ``index``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))
    return rng.integers(0, n, size=n)


def _solve_cov(cov: rc.CovarianceModel, model: SensitivityModel, grid: GridParams):
    """PIR endpoints on one covariance, with any degeneracy mapped to (-inf, +inf)."""
    try:
        theta, cons = compile_model(model, cov)
        est = solve_pir(theta, cons, grid)
    except (PirsensError, ZeroDivisionError, FloatingPointError):
        return -np.inf, np.inf
    if not est.feasible:
        return -np.inf, np.inf
    return est.lower, est.upper


def _map(fn, items, threads: int):
    if threads is None or threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def point_estimate(data, names, roles, model, grid) -> PirEstimate:
    cov = rc.CovarianceModel.from_data(names, data, roles)
    theta, cons = compile_model(model, cov)
    est = solve_pir(theta, cons, grid)
    if not est.feasible:
        raise ModelInfeasibleOnSample("the sensitivity model is infeasible on the full sample")
    return est


def bootstrap_distribution(data, names: Sequence[str], roles: rc.Roles, model: SensitivityModel,
                           grid: GridParams, spec: BootstrapSpec, threads: int = 1):
    """Bootstrap replicates of the PIR endpoints.

    Returns
    -------
    lowers, uppers : ndarray of shape (n_boot,)
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n < 10:
        raise ValueError("bootstrap needs at least 10 rows")
    point_estimate(data, names, roles, model, grid)

    def one(k):
        rows = resample_rows(n, spec.seed, k)
        try:
            cov = rc.CovarianceModel.from_data(names, data[rows], roles)
        except PirsensError:
            return -np.inf, np.inf
        return _solve_cov(cov, model, grid)

    out = _map(one, range(spec.n_boot), threads)
    arr = np.array(out, dtype=float).reshape(-1, 2)
    return arr[:, 0].copy(), arr[:, 1].copy()


def jackknife(data, names, roles, model, grid, threads: int = 1):
    """Leave-one-out PIR endpoints via rank-one downdates of the covariance."""
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if n < 2:
        raise ValueError("jackknife needs at least two rows")
    mean = data.mean(axis=0)
    dev = data - mean
    full = dev.T @ dev / n

    def one(i):
        delta = dev[i]
        sigma = (n * full - np.outer(delta, delta) * n / (n - 1)) / (n - 1)
        try:
            cov = rc.CovarianceModel(tuple(names), sigma, roles, n - 1)
        except PirsensError:
            return -np.inf, np.inf
        return _solve_cov(cov, model, grid)

    arr = np.array(_map(one, range(n), threads), dtype=float).reshape(-1, 2)
    return arr[:, 0].copy(), arr[:, 1].copy()


def _acceleration(loo) -> float:
    loo = np.asarray(loo, dtype=float)
    loo = loo[np.isfinite(loo)]
    if loo.size < 2:
        return 0.0
    dev = loo.mean() - loo
    ss = np.sum(dev ** 2)
    if ss <= 0:
        return 0.0
    return float(np.sum(dev ** 3) / (6.0 * ss ** 1.5))


def _bca_level(reps, point: float, p: float, accel: float) -> float:
    reps = np.asarray(reps, dtype=float)
    if not np.isfinite(reps).any():
        raise DegenerateBca("all replicates are infinite")
    frac = (np.sum(reps < point) + 0.5 * np.sum(reps == point)) / reps.size
    if frac <= 0.0 or frac >= 1.0:
        raise DegenerateBca("point estimate lies outside the replicate range")
    z0 = ndtri(frac)
    zp = ndtri(p)
    denom = 1.0 - accel * (z0 + zp)
    if denom <= 0:
        raise DegenerateBca("acceleration too large for the requested level")
    return float(ndtr(z0 + (z0 + zp) / denom))


def assemble_interval(lowers, uppers, point: PirEstimate, spec: BootstrapSpec,
                      jackknife_context: tuple | None = None) -> SensitivityInterval:
    """Combine bootstrap replicates into a two-sided sensitivity interval.

    ``jackknife_context`` holds the leave-one-out (lowers, uppers) and is
    required by the BCa method.
    """
    lowers = np.asarray(lowers, dtype=float)
    uppers = np.asarray(uppers, dtype=float)
    if lowers.size == 0 or uppers.size == 0:
        raise ValueError("replicate vectors must be nonempty")
    half = spec.alpha / 2.0
    n_inf_l = int(np.sum(np.isneginf(lowers)))
    n_inf_u = int(np.sum(np.isposinf(uppers)))
    if spec.method == "percentile":
        lo = quantile(lowers, half)
        hi = quantile(uppers, 1.0 - half)
    elif spec.method == "basic":
        # reflected around the point estimate; infeasible replicates must land on
        # the side that widens the reflected interval
        refl_l = np.where(np.isneginf(lowers), np.inf, lowers)
        refl_u = np.where(np.isposinf(uppers), -np.inf, uppers)
        lo = 2.0 * point.lower - quantile(refl_l, 1.0 - half)
        hi = 2.0 * point.upper - quantile(refl_u, half)
    else:
        if np.all(lowers == point.lower) and np.all(uppers == point.upper):
            lo, hi = point.lower, point.upper
        else:
            if jackknife_context is None:
                raise ValueError("BCa needs jackknife estimates")
            acc_l = _acceleration(jackknife_context[0])
            acc_u = _acceleration(jackknife_context[1])
            lo = quantile(lowers, _bca_level(lowers, point.lower, half, acc_l))
            hi = quantile(uppers, _bca_level(uppers, point.upper, 1.0 - half, acc_u))
    return SensitivityInterval(float(lo), float(hi), spec.method, spec.level, n_inf_l, n_inf_u)


def heuristic_interval(theta, constraints, grid: GridParams, n: int, level: float) -> SensitivityInterval:
    """Extremes of the normal-theory interval one would report if U were observed.

    For a fixed boundary slice the lower confidence bound is
    ``beta_ols - sigma_ratio * (b f(a) + k sqrt(1 - b^2))`` with
    ``k = z / (sqrt(n) sqrt(1 - a^2))``; it is convex in ``b``, so its minimum
    over ``[L, U]`` sits at the clipped stationary point. The upper bound is
    handled symmetrically.
    """
    if n < 1:
        raise ValueError("n must be positive")
    z = float(ndtri(1.0 - (1.0 - level) / 2.0))
    bv = boundary(constraints, theta, grid)
    if not bv.feasible:
        raise ModelInfeasibleOnSample("the sensitivity model is infeasible")
    ok = bv.present
    a, L, U = bv.A[ok], bv.L[ok], bv.U[ok]
    fa = a / np.sqrt(1.0 - a * a)
    k = z / (np.sqrt(n) * np.sqrt(1.0 - a * a))
    norm = np.sqrt(fa * fa + k * k)
    with np.errstate(divide="ignore", invalid="ignore"):
        b_star = np.where(norm > 0, fa / norm, 0.0)
    b_min = np.clip(b_star, L, U)
    b_max = np.clip(-b_star, L, U)
    s = theta.sigma_ratio
    lows = theta.beta_ols - s * (b_min * fa + k * np.sqrt(1.0 - b_min ** 2))
    highs = theta.beta_ols - s * (b_max * fa - k * np.sqrt(1.0 - b_max ** 2))
    return SensitivityInterval(float(lows.min()), float(highs.max()), "heuristic", level)


@dataclass
class BootstrapResult:
    point: PirEstimate
    interval: SensitivityInterval
    lowers: np.ndarray
    uppers: np.ndarray


def sensitivity_interval(data, names, roles, model, grid: GridParams, spec: BootstrapSpec,
                         threads: int = 1) -> BootstrapResult:
    """Point estimate, bootstrap replicates and the assembled interval."""
    point = point_estimate(data, names, roles, model, grid)
    lowers, uppers = bootstrap_distribution(data, names, roles, model, grid, spec, threads)
    jack = None
    if spec.method == "bca":
        jack = jackknife(data, names, roles, model, grid, threads)
    interval = assemble_interval(lowers, uppers, point, spec, jack)
    return BootstrapResult(point, interval, lowers, uppers)
