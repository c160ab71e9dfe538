"""Partial R-, R^2-, f- and f^2-values computed from a covariance matrix.

Every quantity here is a function of a centred, positive definite
covariance matrix. Residual (co)variances are Schur complements,

    Var(T | G) = S_TT - S_TG S_GG^{-1} S_GT,

and the partial R^2 of ``y`` on ``x`` given ``z`` is

    (R^2_{y~x+z} - R^2_{y~z}) / (1 - R^2_{y~z}),   R^2_{y~w} = 1 - s^2_{y~w} / s^2_y.

Variable sets are sequences of integer positions or labels of the
covariance model. The empty sequence is a valid conditioning set.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import DegenerateDenominator, RoleMismatch, SingularConditioningSet

PIVOT_TOL = 1e-10
DENOM_TOL = 1e-12
SYMMETRY_TOL = 1e-12

Label = Union[int, str]
VariableSet = Sequence[Label]


@dataclass(frozen=True)
class Roles:
    """Assignment of covariance labels to the roles of the causal model.

    ``xdot`` holds the covariates assumed partially uncorrelated with the
    unmeasured confounder given ``xtilde`` and the instrument; they are the
    only admissible benchmarks for comparative bounds.
    """

    outcome: str
    treatment: str
    instrument: str | None = None
    xdot: tuple[str, ...] = ()
    xtilde: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "xdot", tuple(self.xdot))
        object.__setattr__(self, "xtilde", tuple(self.xtilde))
        special = [self.outcome, self.treatment]
        if self.instrument is not None:
            special.append(self.instrument)
        if len(set(special)) != len(special):
            raise RoleMismatch("outcome, treatment and instrument must be distinct")
        if set(self.xdot) & set(self.xtilde):
            raise RoleMismatch("xdot and xtilde overlap")
        if len(set(self.xdot)) != len(self.xdot) or len(set(self.xtilde)) != len(self.xtilde):
            raise RoleMismatch("duplicate covariate label")
        if set(special) & (set(self.xdot) | set(self.xtilde)):
            raise RoleMismatch("covariates must exclude outcome, treatment and instrument")

    @property
    def covariates(self) -> tuple[str, ...]:
        return self.xdot + self.xtilde

    @property
    def labels(self) -> tuple[str, ...]:
        out = (self.outcome, self.treatment)
        if self.instrument is not None:
            out += (self.instrument,)
        return out + self.covariates


@dataclass(frozen=True)
class CovarianceModel:
    """Positive definite covariance matrix over named, centred variables.

    Parameters
    ----------
    names : sequence of str
        Variable labels, one per row/column of ``sigma``.
    sigma : array_like
        Symmetric positive definite matrix.
    roles : Roles, optional
        Role assignment; required by the identification and sensitivity
        modules, not by the functions in this module.
    n : int, optional
        Sample size the matrix was estimated from, if any.
    """

    names: tuple[str, ...]
    sigma: np.ndarray
    roles: Roles | None = None
    n: int | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(str(s) for s in self.names)
        sigma = np.array(self.sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma must be a square matrix")
        if sigma.shape[0] != len(names):
            raise ValueError("names and sigma dimensions differ")
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        scale = max(np.max(np.abs(sigma)), 1.0)
        if np.max(np.abs(sigma - sigma.T)) > SYMMETRY_TOL * scale:
            raise ValueError("sigma is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        _cholesky(sigma)
        sigma.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(names)})
        if self.roles is not None:
            missing = [s for s in self.roles.labels if s not in self._index]
            if missing:
                raise RoleMismatch(f"role labels not in covariance: {missing}")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, labels: Iterable[Label]) -> tuple[int, ...]:
        out = []
        for s in labels:
            if isinstance(s, (int, np.integer)):
                if not 0 <= s < self.dim:
                    raise IndexError(f"variable index {s} out of range")
                out.append(int(s))
            else:
                try:
                    out.append(self._index[s])
                except KeyError:
                    raise KeyError(f"unknown variable {s!r}") from None
        if len(set(out)) != len(out):
            raise ValueError("variable set contains duplicates")
        return tuple(out)

    @classmethod
    def from_data(cls, names: Sequence[str], data, roles: Roles | None = None) -> "CovarianceModel":
        """Centred covariance with 1/n scaling from an (n, p) row matrix."""
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(names):
            raise ValueError("data must be an (n, p) matrix matching names")
        n = data.shape[0]
        if n < 2:
            raise ValueError("need at least two rows")
        centred = data - data.mean(axis=0)
        return cls(tuple(names), centred.T @ centred / n, roles, n)

    def with_roles(self, roles: Roles) -> "CovarianceModel":
        return CovarianceModel(self.names, self.sigma, roles, self.n)

    def subset(self, labels: Sequence[str]) -> "CovarianceModel":
        idx = self.index(labels)
        return CovarianceModel(
            tuple(self.names[i] for i in idx), self.sigma[np.ix_(idx, idx)], None, self.n
        )


def _cholesky(m: np.ndarray) -> np.ndarray:
    """Cholesky factor with a pivot floor relative to the largest diagonal entry."""
    if m.shape[0] == 0:
        return m
    floor = PIVOT_TOL * max(float(m.diagonal().max()), 0.0)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise SingularConditioningSet("matrix is not positive definite") from None
    if floor <= 0 or float(chol.diagonal().min()) ** 2 <= floor:
        raise SingularConditioningSet("factorization pivot below tolerance")
    return chol


def _as_list(cov: CovarianceModel, s) -> tuple[int, ...]:
    if isinstance(s, (str, int, np.integer)):
        s = (s,)
    return cov.index(s)


def schur(sigma: np.ndarray, target: Sequence[int], given: Sequence[int]) -> np.ndarray:
    """Residual covariance of ``target`` after partialing out ``given`` (index form)."""
    t = list(target)
    g = list(given)
    rows = sigma[t]
    s_tt = rows[:, t]
    if not g:
        return s_tt.copy()
    if set(t) & set(g):
        raise ValueError("target and given must be disjoint")
    chol = _cholesky(sigma[g][:, g])
    w = solve_triangular(chol, rows[:, g].T, lower=True, check_finite=False)
    out = s_tt - w.T @ w
    return 0.5 * (out + out.T)


def residual_variance(cov: CovarianceModel, target: VariableSet, given: VariableSet = ()) -> np.ndarray:
    """Covariance matrix of ``target`` residualized on ``given``."""
    return schur(cov.sigma, _as_list(cov, target), _as_list(cov, given))


def r2(cov: CovarianceModel, y: Label, x: VariableSet) -> float:
    """Marginal R^2 of ``y`` regressed on ``x``."""
    return partial_r2(cov, y, x, ())


def partial_r2(cov: CovarianceModel, y, x: VariableSet, z: VariableSet = ()) -> float:
    """Partial R^2 of ``y`` on ``x`` given ``z``."""
    yi = _as_list(cov, y)
    if len(yi) != 1:
        raise ValueError("y must be a single variable")
    xi = _as_list(cov, x)
    zi = _as_list(cov, z)
    if set(yi) & set(xi) or set(yi) & set(zi) or set(xi) & set(zi):
        raise ValueError("y, x and z must be pairwise disjoint")
    if not xi:
        return 0.0
    s_y = cov.sigma[yi[0], yi[0]]
    s_z = schur(cov.sigma, yi, zi)[0, 0]
    if s_z / s_y < DENOM_TOL:
        raise DegenerateDenominator("1 - R^2 of y on the conditioning set is zero")
    s_xz = schur(cov.sigma, yi, xi + zi)[0, 0]
    return float(min(max((s_z - s_xz) / s_z, 0.0), 1.0))


def partial_r(cov: CovarianceModel, y: Label, x: Label, z: VariableSet = ()) -> float:
    """Partial correlation of scalar ``y`` and scalar ``x`` given ``z``."""
    yi = _as_list(cov, y)
    xi = _as_list(cov, x)
    if len(yi) != 1 or len(xi) != 1:
        raise ValueError("y and x must be single variables")
    zi = _as_list(cov, z)
    if set(yi + xi) & set(zi) or yi == xi:
        raise ValueError("y, x and z must be pairwise disjoint")
    res = schur(cov.sigma, yi + xi, zi)
    if res[0, 0] < DENOM_TOL * cov.sigma[yi[0], yi[0]] or res[1, 1] < DENOM_TOL * cov.sigma[xi[0], xi[0]]:
        raise DegenerateDenominator("residual variance is zero")
    r = res[0, 1] / np.sqrt(res[0, 0] * res[1, 1])
    return float(min(max(r, -1.0), 1.0))


def f_from_r(r):
    """Cohen's f = R / sqrt(1 - R^2); +-inf when |R| is 1 within tolerance."""
    r = np.asarray(r, dtype=float)
    one_minus = 1.0 - r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(one_minus < DENOM_TOL, np.sign(r) * np.inf, r / np.sqrt(np.maximum(one_minus, DENOM_TOL)))
    return float(out) if out.ndim == 0 else out


def f2_from_r2(r2_value):
    r2_value = np.asarray(r2_value, dtype=float)
    one_minus = 1.0 - r2_value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(one_minus < DENOM_TOL, np.inf, r2_value / np.maximum(one_minus, DENOM_TOL))
    return float(out) if out.ndim == 0 else out


def r_from_f(f):
    """Inverse of :func:`f_from_r`; maps +-inf to +-1."""
    f = np.asarray(f, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(f), np.sign(f), f / np.sqrt(1.0 + f * f))
    return float(out) if out.ndim == 0 else out


def f_value(cov: CovarianceModel, y: Label, x: Label, z: VariableSet = ()) -> float:
    return f_from_r(partial_r(cov, y, x, z))


def f2_value(cov: CovarianceModel, y: Label, x: VariableSet, z: VariableSet = ()) -> float:
    return f2_from_r2(partial_r2(cov, y, x, z))


def regression_coef(cov: CovarianceModel, y: Label, x: Label, z: VariableSet = ()) -> float:
    """Coefficient of scalar ``x`` when regressing ``y`` on ``x`` and ``z``."""
    yi = _as_list(cov, y)
    xi = _as_list(cov, x)
    res = schur(cov.sigma, yi + xi, _as_list(cov, z))
    if res[1, 1] <= DENOM_TOL * cov.sigma[xi[0], xi[0]]:
        raise DegenerateDenominator("regressor has no residual variance")
    return float(res[0, 1] / res[1, 1])


def sd_ratio(cov: CovarianceModel, y: Label, d: Label, z: VariableSet) -> float:
    """sigma_{y ~ z + d} / sigma_{d ~ z}."""
    zi = _as_list(cov, z)
    yi = _as_list(cov, y)
    di = _as_list(cov, d)
    num = schur(cov.sigma, yi, zi + di)[0, 0]
    den = schur(cov.sigma, di, zi)[0, 0]
    return float(np.sqrt(num / den))
