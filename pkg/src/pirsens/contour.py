"""Data grids for sensitivity contour plots and calibration points.

Two kinds of grids are produced. A b-contour re-solves the plug-in program
while two b-factors of a comparative model vary. An R-contour evaluates the
causal effect directly on a grid of ``(R_{D~U|X,Z}, R_{Y~U|X,Z,D})`` values.

Comparison points place ``U`` at ``b`` times the strength of an observed
covariate ``Xdot_j``. The rigorous versions are exact consequences of the
comparative bounds made active; the informal version simply rescales
observed partial correlations.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import r2calc as rc
from .estimands import EstimableParams
from .exceptions import DegenerateDenominator, PirsensError
from .gridopt import GridParams, _h_b, _h_d, boundary, solve_pir
from .sensmodel import CompiledConstraints, SensitivityModel, compile_model

POINT_KINDS = ("rigorous_uncond_d", "rigorous_cond_d", "informal")


@dataclass(frozen=True)
class ComparisonPoint:
    a_coord: float
    b_coord: float
    kind: str
    b_d: float
    b_y: float
    covariate: str
    in_range: bool | None = None

    def __post_init__(self):
        if self.kind not in POINT_KINDS:
            raise ValueError(f"kind must be one of {POINT_KINDS}")
        if not (np.isfinite(self.a_coord) and np.isfinite(self.b_coord)):
            raise ValueError("comparison point coordinates must be finite")
        if self.b_d < 0 or self.b_y < 0:
            raise ValueError("b-factors must be nonnegative")


@dataclass
class ContourGrid:
    """``values[i, j]`` belongs to ``(axis1[i], axis2[j])``; NaN marks infeasible cells."""

    axis1: np.ndarray
    axis2: np.ndarray
    values: np.ndarray
    which_end: str
    overlays: list = field(default_factory=list)
    kind: str = "b"

    def __post_init__(self):
        self.axis1 = np.asarray(self.axis1, dtype=float)
        self.axis2 = np.asarray(self.axis2, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.axis1.size, self.axis2.size):
            raise ValueError("values shape does not match the axes")
        if self.which_end not in ("lower", "upper", "beta"):
            raise ValueError("which_end must be 'lower', 'upper' or 'beta'")
        self.overlays = [self._flag(p) for p in self.overlays]

    def _flag(self, p: ComparisonPoint) -> ComparisonPoint:
        inside = bool(self.axis1.min() <= p.a_coord <= self.axis1.max()
                      and self.axis2.min() <= p.b_coord <= self.axis2.max())
        return dataclasses.replace(p, in_range=inside)

    def add_overlay(self, point: ComparisonPoint) -> None:
        self.overlays.append(self._flag(point))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["axis1", "axis2", "value"])
        for i, x in enumerate(self.axis1):
            for j, y in enumerate(self.axis2):
                v = self.values[i, j]
                w.writerow([repr(float(x)), repr(float(y)), "" if np.isnan(v) else repr(float(v))])
        return buf.getvalue()

    def overlays_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "a", "b", "b_d", "b_y", "covariate"])
        for p in self.overlays:
            w.writerow([p.kind, repr(p.a_coord), repr(p.b_coord), repr(p.b_d), repr(p.b_y), p.covariate])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "which_end": self.which_end,
            "axis1": self.axis1.tolist(),
            "axis2": self.axis2.tolist(),
            "values": [[None if np.isnan(v) else float(v) for v in row] for row in self.values],
            "overlays": [dataclasses.asdict(p) for p in self.overlays],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _with_b(bound, b: float):
    return dataclasses.replace(bound, b=float(b))


def b_contour(cov: rc.CovarianceModel, model: SensitivityModel, vary: tuple, b_axis1: Sequence[float],
              b_axis2: Sequence[float], which_end: str = "lower", grid: GridParams = GridParams()) -> ContourGrid:
    """PIR endpoint while the b-factors of bounds ``vary[0]`` and ``vary[1]`` range over the axes."""
    if which_end not in ("lower", "upper"):
        raise ValueError("which_end must be 'lower' or 'upper'")
    k1, k2 = vary
    for k in (k1, k2):
        if not hasattr(model.bounds[k], "b"):
            raise ValueError(f"bound {k} has no b-factor")
    ax1 = np.asarray(b_axis1, dtype=float)
    ax2 = np.asarray(b_axis2, dtype=float)
    values = np.full((ax1.size, ax2.size), np.nan)
    for i, b1 in enumerate(ax1):
        for j, b2 in enumerate(ax2):
            bounds = list(model.bounds)
            bounds[k1] = _with_b(bounds[k1], b1)
            bounds[k2] = _with_b(bounds[k2], b2)
            cell = SensitivityModel(tuple(bounds), model.default_a_interval)
            try:
                theta, cons = compile_model(cell, cov)
                est = solve_pir(theta, cons, grid)
            except (PirsensError, ZeroDivisionError):
                continue
            if est.feasible:
                values[i, j] = est.lower if which_end == "lower" else est.upper
    return ContourGrid(ax1, ax2, values, which_end, kind="b")


def default_r_axis(n: int = 400, limit: float = 0.99) -> np.ndarray:
    return np.linspace(-limit, limit, n)


def r_contour(theta: EstimableParams, a_axis: Sequence[float], b_axis: Sequence[float]) -> ContourGrid:
    """Causal effect on the (a, b) grid; no optimization involved."""
    a = np.asarray(a_axis, dtype=float)
    b = np.asarray(b_axis, dtype=float)
    if np.any(np.abs(a) >= 1.0) or np.any(np.abs(b) > 1.0):
        raise ValueError("axis values must satisfy |a| < 1 and |b| <= 1")
    fa = a / np.sqrt(1.0 - a * a)
    values = theta.beta_ols - np.outer(fa, b) * theta.sigma_ratio
    return ContourGrid(a, b, values, "beta", kind="r")


def _benchmark_sets(cov: rc.CovarianceModel, j: str):
    roles = cov.roles
    if j not in roles.xdot:
        raise ValueError(f"{j!r} is not an xdot covariate")
    z = [roles.instrument] if roles.instrument is not None else []
    w = list(roles.xtilde) + [s for s in roles.xdot if s != j] + z
    return w


def comparison_point_d(cov: rc.CovarianceModel, j: str, b_d: float) -> float:
    """R_{D~U|X,Z} when U explains ``b_d`` times the variance of D that ``j`` explains."""
    if b_d < 0:
        raise ValueError("b_d must be nonnegative")
    w = _benchmark_sets(cov, j)
    f_d = rc.f_value(cov, cov.roles.treatment, j, w)
    return float(np.sqrt(b_d) * f_d)


def comparison_point_y(cov: rc.CovarianceModel, j: str, b_d: float, b_y: float,
                       conditional_on_d: bool = False) -> float:
    """R_{Y~U|X,Z,D} at the comparison point for covariate ``j``.

    Unconditional: U explains ``b_y`` times the variance of Y that ``j``
    explains given the other covariates. Conditional: the same comparison
    additionally given D. In both cases U relates to D as in
    :func:`comparison_point_d` with ``b_d``.
    """
    if b_d < 0 or b_y < 0:
        raise ValueError("b-factors must be nonnegative")
    roles = cov.roles
    y, d = roles.outcome, roles.treatment
    w = _benchmark_sets(cov, j)
    r_d = rc.partial_r(cov, d, j, w)
    if 1.0 - (1.0 + b_d) * r_d * r_d <= rc.DENOM_TOL:
        raise DegenerateDenominator("comparison point undefined: U would explain all of D")
    a = comparison_point_d(cov, j, b_d)
    c1 = rc.partial_r(cov, y, d, w + [j])
    if conditional_on_d:
        e = np.sqrt(b_y) * rc.partial_r(cov, y, j, w + [d])
        c2 = rc.partial_r(cov, y, d, w)
        c4 = rc.partial_r(cov, y, j, w)
        d_val = _h_d(a, e, c2, r_d, c4)
    else:
        d_val = np.sqrt(b_y) * rc.f_value(cov, y, j, w)
    return float(_h_b(a, d_val, c1))


def comparison_point_closed_form(cov: rc.CovarianceModel, j: str, b: float, conditional_on_d: bool) -> float:
    """Single-factor simplification of :func:`comparison_point_y` (b_d = b_y = b)."""
    roles = cov.roles
    w = _benchmark_sets(cov, j)
    r_d2 = rc.partial_r2(cov, roles.treatment, [j], w)
    f_y = rc.f_value(cov, roles.outcome, j, w + [roles.treatment])
    den = np.sqrt(1.0 - (1.0 + b) * r_d2)
    if conditional_on_d:
        return float((np.sqrt(1.0 - (1.0 + b) * r_d2 + b * r_d2 * r_d2) + r_d2) / den * np.sqrt(b) * f_y)
    return float(np.sqrt(b) * f_y / den)


def informal_comparison_point(cov: rc.CovarianceModel, j: str, b: float) -> tuple:
    """Observed partial correlations of ``j`` with D and Y, scaled by sqrt(b)."""
    if b < 0:
        raise ValueError("b must be nonnegative")
    roles = cov.roles
    if j not in roles.covariates:
        raise ValueError(f"{j!r} is not a covariate")
    z = [roles.instrument] if roles.instrument is not None else []
    rest = [s for s in roles.covariates if s != j] + z
    s = np.sqrt(b)
    return (float(s * rc.partial_r(cov, roles.treatment, j, rest)),
            float(s * rc.partial_r(cov, roles.outcome, j, rest + [roles.treatment])))


def comparison_points(cov: rc.CovarianceModel, j: str, b_values: Sequence[float],
                      kinds: Sequence[str] = POINT_KINDS) -> list:
    """Comparison points of the requested kinds; undefined ones are skipped."""
    out = []
    for b in b_values:
        for kind in kinds:
            try:
                if kind == "informal":
                    x, y = informal_comparison_point(cov, j, b)
                else:
                    x = comparison_point_d(cov, j, b)
                    y = comparison_point_y(cov, j, b, b, conditional_on_d=(kind == "rigorous_cond_d"))
            except DegenerateDenominator:
                continue
            out.append(ComparisonPoint(x, y, kind, float(b), float(b), j))
    return out


def feasible_region_slice(theta: EstimableParams, constraints: CompiledConstraints,
                          grid: GridParams = GridParams()) -> np.ndarray:
    """Outline of the gridded feasible set as an (m, 2) array of distinct (a, b) points."""
    pts = boundary(constraints, theta, grid).points()
    if pts.size == 0:
        return pts.reshape(0, 2)
    _, idx = np.unique(pts, axis=0, return_index=True)
    return pts[np.sort(idx)]
