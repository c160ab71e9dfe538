"""Identification of the causal effect in terms of estimable and sensitivity parameters.

The effect of ``D`` on ``Y`` adjusting for ``X``, ``Z`` and the unmeasured
``U`` satisfies

    beta = beta_OLS - R_{Y~U|X,Z,D} * f_{D~U|X,Z} * sigma_{Y~X+Z+D} / sigma_{D~X+Z},

and, with an instrument, the same effect can be written around the TSLS
estimand with an extra term for the direct path from ``Z`` to ``Y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import r2calc as rc
from .exceptions import (
    DegenerateDenominator,
    InstrumentMissing,
    PreconditionViolated,
    WeakInstrument,
)

WEAK_IV_TOL = 1e-8


@dataclass
class EstimableParams:
    """Observable quantities (theta) entering the objective and constraints.

    The per-bound lists are aligned with the bounds of the corresponding
    kind in the sensitivity model, in declaration order.
    """

    beta_ols: float
    sigma_ratio: float
    c1: float
    beta_tsls: float | None = None
    c5: float | None = None
    c6: float | None = None
    # comparative U->Y bounds conditional on D: R_{Y~D|.}, R_{D~Xdot_Ic|.}, R_{Y~Xdot_Ic|.}
    c2: list = field(default_factory=list)
    c3: list = field(default_factory=list)
    c4: list = field(default_factory=list)
    # comparative Z->Y bounds: R_{Y~Xdot_j|Xtilde,Xdot_-j,Z,D} and R_{D~Xdot_j|Xtilde,Xdot_-j,Z}
    c7: list = field(default_factory=list)
    c8: list = field(default_factory=list)
    comparative_rhs: dict = field(default_factory=dict)

    @property
    def has_instrument(self) -> bool:
        return self.c5 is not None

    def to_dict(self) -> dict:
        out = {
            "beta_ols": self.beta_ols,
            "beta_tsls": self.beta_tsls,
            "sigma_ratio": self.sigma_ratio,
            "c1": self.c1,
            "c2": list(self.c2),
            "c3": list(self.c3),
            "c4": list(self.c4),
            "c5": self.c5,
            "c6": self.c6,
            "c7": list(self.c7),
            "c8": list(self.c8),
            "comparative_rhs": {str(k): v for k, v in self.comparative_rhs.items()},
        }
        return out


@dataclass(frozen=True)
class SensitivityPoint:
    """Sensitivity parameters and auxiliary partial correlations.

    a = R_{D~U|X,Z}, b = R_{Y~U|X,Z,D}, d = R_{Y~U|X,Z},
    e = R_{Y~U|Xtilde,Xdot_I,Z,D} (one per conditional bound),
    g = R_{Z~U|X,D}, m = R_{Z~U|X}, o = R_{Y~Z|X,U,D},
    q = R_{Y~Xdot_j|Xtilde,Xdot_-j,Z,U,D} (one per comparative Z->Y bound).
    """

    a: float
    b: float
    d: float | None = None
    e: tuple | None = None
    g: float | None = None
    m: float | None = None
    o: float | None = None
    q: tuple | None = None

    def __post_init__(self):
        for name in ("a", "b", "d", "g", "m", "o"):
            v = getattr(self, name)
            if v is not None and not -1.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [-1, 1]")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _sets(roles: rc.Roles):
    z = [roles.instrument] if roles.instrument is not None else []
    x = list(roles.xdot) + list(roles.xtilde)
    return x, z


def estimate_theta(cov: rc.CovarianceModel, model=None) -> EstimableParams:
    """Compute every observable constant needed by ``model`` from ``cov``.

    Parameters
    ----------
    cov : CovarianceModel
        Covariance with roles attached.
    model : SensitivityModel, optional
        Determines which per-bound constants are populated. Without a
        model only the core quantities are returned.
    """
    from .sensmodel import check_roles, comparative_constants

    roles = cov.roles
    if roles is None:
        raise InstrumentMissing("covariance model has no roles")
    x, z = _sets(roles)
    y, d = roles.outcome, roles.treatment
    xz = x + z
    theta = EstimableParams(
        beta_ols=rc.regression_coef(cov, y, d, xz),
        sigma_ratio=rc.sd_ratio(cov, y, d, xz),
        c1=rc.partial_r(cov, y, d, xz),
    )
    if z:
        zz = z[0]
        res = rc.residual_variance(cov, [y, d, zz], x)
        theta.c5 = rc.partial_r(cov, d, zz, x)
        theta.c6 = rc.partial_r(cov, y, zz, x + [d])
        if abs(res[1, 2]) > 0:
            theta.beta_tsls = float(res[0, 2] / res[1, 2])
    if model is not None:
        check_roles(model, roles)
        comparative_constants(cov, model, theta)
    return theta


def _fa(a):
    if abs(a) >= 1 - rc.DENOM_TOL:
        raise DegenerateDenominator("|R_{D~U|X,Z}| must be below 1")
    return a / np.sqrt(1 - a * a)


def causal_beta(theta: EstimableParams, psi: SensitivityPoint) -> float:
    """Causal effect implied by ``theta`` at sensitivity parameters ``psi``."""
    return theta.beta_ols - psi.b * _fa(psi.a) * theta.sigma_ratio


def tsls_gap(theta: EstimableParams, psi: SensitivityPoint) -> float:
    """Causal effect written around the TSLS estimand."""
    if not theta.has_instrument or theta.beta_tsls is None:
        raise InstrumentMissing("no instrument in the estimable parameters")
    if abs(theta.c5) < WEAK_IV_TOL:
        raise WeakInstrument("R_{D~Z|X} is numerically zero")
    f6 = rc.f_from_r(theta.c6)
    return theta.beta_tsls - (f6 / theta.c5 + psi.b * _fa(psi.a)) * theta.sigma_ratio


def multi_confounder_bound(theta: EstimableParams, r2_yu: float, f2_du: float) -> float:
    """Upper bound on |beta_OLS - beta| for a possibly vector-valued confounder.

    ``r2_yu`` is R^2_{Y~U|X,Z,D} and ``f2_du`` is f^2_{D~U|X,Z}.
    """
    if not 0 <= r2_yu < 1:
        raise ValueError("r2_yu must lie in [0, 1)")
    if f2_du < 0:
        raise ValueError("f2_du must be nonnegative")
    return float(np.sqrt(r2_yu * f2_du) * theta.sigma_ratio)


def bias_uncorrelated_confounders(cov: rc.CovarianceModel, confounders: Sequence[str], tol: float = 1e-9) -> float:
    """OLS bias from several confounders that are partially uncorrelated given (X, Z).

    Returns ``sum_j beta_{Y~U_j|X,Z,D,U_-j} * beta_{U_j~D|X,Z}``, which
    equals ``beta_OLS - beta`` when the components of ``U`` are partially
    uncorrelated given ``(X, Z)``.
    """
    roles = cov.roles
    x, z = _sets(roles)
    xz = x + z
    y, d = roles.outcome, roles.treatment
    u = list(confounders)
    for i in range(len(u)):
        for j in range(i + 1, len(u)):
            if abs(rc.partial_r(cov, u[i], u[j], xz)) > tol:
                raise PreconditionViolated(f"{u[i]} and {u[j]} are partially correlated given (X, Z)")
    total = 0.0
    for j, uj in enumerate(u):
        rest = u[:j] + u[j + 1:]
        total += rc.regression_coef(cov, y, uj, xz + [d] + rest) * rc.regression_coef(cov, uj, d, xz)
    return float(total)


def two_confounder_bias(theta: EstimableParams, r_y: Sequence[float], f_d: Sequence[float]) -> float:
    """Closed-form bias for two partially uncorrelated confounders.

    ``r_y[j]`` is R_{Y~U_j|X,Z,D,U_-j}; ``f_d[j]`` is f_{D~U_j|X,Z}.
    """
    total = 0.0
    for j in (0, 1):
        k = 1 - j
        rj, rk = r_y[j], r_y[k]
        fj, fk = f_d[j], f_d[k]
        inner = rk * np.sqrt((1 - rj * rj) / (1 - rk * rk)) - rj * fj * fk
        total += rj * fj / np.sqrt(1 - fj * fj * fk * fk + inner * inner)
    return float(total * theta.sigma_ratio)


def true_psi(cov: rc.CovarianceModel, confounder: str, model=None) -> SensitivityPoint:
    """Read the sensitivity point off a covariance that includes the confounder.

    Used for validation on simulated or constructed covariances; ``model``
    determines which auxiliary entries (e, q) are filled in.
    """
    from .sensmodel import CompUYCondD, CompZY, resolve_sets

    roles = cov.roles
    x, z = _sets(roles)
    y, d, u = roles.outcome, roles.treatment, confounder
    xz = x + z
    kw = dict(
        a=rc.partial_r(cov, d, u, xz),
        b=rc.partial_r(cov, y, u, xz + [d]),
        d=rc.partial_r(cov, y, u, xz),
    )
    if z:
        kw["g"] = rc.partial_r(cov, z[0], u, x + [d])
        kw["m"] = rc.partial_r(cov, z[0], u, x)
        kw["o"] = rc.partial_r(cov, y, z[0], x + [u, d])
    if model is not None:
        e, q = [], []
        for bound in model.bounds:
            if isinstance(bound, CompUYCondD):
                i_set, _, _ = resolve_sets(bound, roles)
                e.append(rc.partial_r(cov, y, u, list(roles.xtilde) + i_set + z + [d]))
            elif isinstance(bound, CompZY):
                rest = [s for s in roles.xdot if s != bound.covariate]
                q.append(rc.partial_r(cov, y, bound.covariate, list(roles.xtilde) + rest + z + [u, d]))
        kw["e"] = tuple(e)
        kw["q"] = tuple(q)
    return SensitivityPoint(**kw)


def direct_beta(cov: rc.CovarianceModel, confounders: Sequence[str]) -> float:
    """beta_{Y~D|X,Z,U} by Schur complement (requires the confounders in ``cov``)."""
    roles = cov.roles
    x, z = _sets(roles)
    return rc.regression_coef(cov, roles.outcome, roles.treatment, x + z + list(confounders))
