"""Sensitivity bounds and their compilation into optimization constraints.

Direct bounds restrict a sensitivity parameter to an interval. Comparative
bounds tie the explanatory power of ``U`` to that of observed covariates in
``Xdot`` and are translated, via the R^2-calculus, into interval bounds on
auxiliary partial correlations plus the equality links between them:

    edge 1  a^2 <= b R^2_{D~Xdot_J|.} / (1 - R^2_{D~Xdot_Ic|.})
    edge 2  d^2 <= b R^2_{Y~Xdot_J|.} / (1 - R^2_{Y~Xdot_Ic|.}),  b = h_b(a, d)
            e^2 <= b R^2_{Y~Xdot_J|.,D},                       d = h_d(a, e)
    edge 3  m^2 <= b R^2 (1 - R^2) / (1 - b R^4),  R = R_{Z~Xdot_j|Xtilde,Xdot_-j}
    edge 4  o^2 <= b q^2,  f_q = h_fq(a, b)

where ``.`` abbreviates the conditioning set (Xtilde, Xdot_I, Z).

The partition of X into Xdot and Xtilde assumes R^2_{U~Xdot|Xtilde,Z} = 0.
This is a modelling assumption and is not checked.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import r2calc as rc
from .estimands import EstimableParams, SensitivityPoint, estimate_theta
from .exceptions import (
    DegenerateDenominator,
    EmptyModel,
    InfeasibleAtCompile,
    InstrumentMissing,
    RoleMismatch,
)

DEFAULT_A_INTERVAL = (-0.999, 0.999)


def _check_direct(lower, upper):
    if not -1.0 < lower <= upper < 1.0:
        raise ValueError(f"direct bound requires -1 < lower <= upper < 1, got [{lower}, {upper}]")


def _check_b(b):
    if not b >= 0:
        raise ValueError("b-factor must be nonnegative")


@dataclass(frozen=True)
class DirectUD:
    """R_{D~U|X,Z} in [lower, upper]."""

    lower: float
    upper: float
    kind = "direct_ud"

    def __post_init__(self):
        _check_direct(self.lower, self.upper)


@dataclass(frozen=True)
class DirectUY:
    """R_{Y~U|X,Z,D} in [lower, upper]."""

    lower: float
    upper: float
    kind = "direct_uy"

    def __post_init__(self):
        _check_direct(self.lower, self.upper)


@dataclass(frozen=True)
class DirectUZ:
    """R_{Z~U|X} in [lower, upper]."""

    lower: float
    upper: float
    kind = "direct_uz"

    def __post_init__(self):
        _check_direct(self.lower, self.upper)


@dataclass(frozen=True)
class DirectZY:
    """R_{Y~Z|X,U,D} in [lower, upper]."""

    lower: float
    upper: float
    kind = "direct_zy"

    def __post_init__(self):
        _check_direct(self.lower, self.upper)


@dataclass(frozen=True)
class _Comparative:
    compare: tuple
    b: float
    given: tuple | None = None

    def __post_init__(self):
        if isinstance(self.compare, str):
            object.__setattr__(self, "compare", (self.compare,))
        object.__setattr__(self, "compare", tuple(self.compare))
        if self.given is not None:
            object.__setattr__(self, "given", tuple(self.given))
        if not self.compare:
            raise ValueError("comparison set must be nonempty")
        _check_b(self.b)


@dataclass(frozen=True)
class CompUD(_Comparative):
    """R^2_{D~U|Xtilde,Xdot_I,Z} <= b R^2_{D~Xdot_J|Xtilde,Xdot_I,Z}."""

    kind = "comp_ud"


@dataclass(frozen=True)
class CompUYUncondD(_Comparative):
    """R^2_{Y~U|Xtilde,Xdot_I,Z} <= b R^2_{Y~Xdot_J|Xtilde,Xdot_I,Z}."""

    kind = "comp_uy_uncond_d"


@dataclass(frozen=True)
class CompUYCondD(_Comparative):
    """R^2_{Y~U|Xtilde,Xdot_I,Z,D} <= b R^2_{Y~Xdot_J|Xtilde,Xdot_I,Z,D}."""

    kind = "comp_uy_cond_d"


@dataclass(frozen=True)
class CompUZ:
    """R^2_{Z~U|Xtilde,Xdot_-j} <= b R^2_{Z~Xdot_j|Xtilde,Xdot_-j}."""

    covariate: str
    b: float
    kind = "comp_uz"

    def __post_init__(self):
        _check_b(self.b)


@dataclass(frozen=True)
class CompZY:
    """R^2_{Y~Z|X,U,D} <= b R^2_{Y~Xdot_j|Xtilde,Xdot_-j,Z,U,D}."""

    covariate: str
    b: float
    kind = "comp_zy"

    def __post_init__(self):
        _check_b(self.b)


SensitivityBound = Union[
    DirectUD, CompUD, DirectUY, CompUYUncondD, CompUYCondD, DirectUZ, CompUZ, DirectZY, CompZY
]

BOUND_TYPES = {
    cls.kind: cls
    for cls in (DirectUD, CompUD, DirectUY, CompUYUncondD, CompUYCondD, DirectUZ, CompUZ, DirectZY, CompZY)
}
IV_KINDS = {"direct_uz", "comp_uz", "direct_zy", "comp_zy"}


def bound_from_dict(spec: dict) -> SensitivityBound:
    """Build a bound from a config entry such as ``{"kind": "comp_ud", "compare": ["x"], "b": 1}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in BOUND_TYPES:
        raise ValueError(f"unknown bound kind {kind!r}")
    cls = BOUND_TYPES[kind]
    if issubclass(cls, _Comparative):
        return cls(compare=tuple(spec.pop("compare")), b=float(spec.pop("b")),
                   given=_given(spec))
    if cls in (CompUZ, CompZY):
        cov = spec.pop("covariate", None)
        if cov is None:
            compare = spec.pop("compare")
            if isinstance(compare, str):
                compare = [compare]
            if len(compare) != 1:
                raise ValueError(f"{kind} compares against exactly one covariate")
            cov = compare[0]
        return cls(covariate=cov, b=float(spec.pop("b")))
    return cls(lower=float(spec.pop("lower")), upper=float(spec.pop("upper")))


def _given(spec):
    given = spec.get("given", spec.get("given_extra"))
    return None if given is None else tuple(given)


def bound_to_dict(bound: SensitivityBound) -> dict:
    out = {"kind": bound.kind}
    for k, v in bound.__dict__.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


@dataclass(frozen=True)
class SensitivityModel:
    """A set of sensitivity bounds; the feasible set is their intersection."""

    bounds: tuple
    default_a_interval: tuple = DEFAULT_A_INTERVAL

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple(self.bounds))
        if not self.bounds:
            raise EmptyModel("a sensitivity model needs at least one bound")

    @property
    def has_iv_bounds(self) -> bool:
        return any(bd.kind in IV_KINDS for bd in self.bounds)

    @classmethod
    def from_dicts(cls, specs: Sequence[dict], **kw) -> "SensitivityModel":
        return cls(tuple(bound_from_dict(s) for s in specs), **kw)

    def to_dicts(self) -> list:
        return [bound_to_dict(bd) for bd in self.bounds]

    def replace_bound(self, index: int, bound) -> "SensitivityModel":
        bounds = list(self.bounds)
        bounds[index] = bound
        return SensitivityModel(tuple(bounds), self.default_a_interval)


@dataclass(frozen=True)
class EBound:
    """|e| <= limit, with d = h_d(a, e; c2, c3, c4)."""

    limit: float
    c2: float
    c3: float
    c4: float


@dataclass(frozen=True)
class ZYBound:
    """|o| <= sqrt(b_zy) |q|, with f_q = h_fq(a, b; c7, c8)."""

    b_zy: float
    c7: float
    c8: float


@dataclass(frozen=True)
class CompiledConstraints:
    """Numeric constraints on the sensitivity parameters.

    ``d_interval`` and ``e_bounds`` are only populated when the
    corresponding comparative U->Y bounds are present; likewise
    ``m_interval``, ``o_interval`` and ``zy_bounds`` for edges 3 and 4.
    """

    a_interval: tuple
    b_interval: tuple = (-1.0, 1.0)
    d_interval: tuple | None = None
    e_bounds: tuple = ()
    m_interval: tuple | None = None
    o_interval: tuple | None = None
    zy_bounds: tuple = ()
    c1: float = 0.0
    c5: float | None = None
    c6: float | None = None

    @property
    def uses_d(self) -> bool:
        return self.d_interval is not None or bool(self.e_bounds)

    @property
    def iv_active(self) -> bool:
        """Whether the equality link between (a, b) and (g, m, o) is active."""
        return self.m_interval is not None or self.o_interval is not None or bool(self.zy_bounds)

    def to_dict(self) -> dict:
        return {
            "a_interval": list(self.a_interval),
            "b_interval": list(self.b_interval),
            "d_interval": None if self.d_interval is None else list(self.d_interval),
            "e_bounds": [e.__dict__.copy() for e in self.e_bounds],
            "m_interval": None if self.m_interval is None else list(self.m_interval),
            "o_interval": None if self.o_interval is None else list(self.o_interval),
            "zy_bounds": [z.__dict__.copy() for z in self.zy_bounds],
            "links": {"b_d": self.uses_d, "d_e": bool(self.e_bounds), "iv": self.iv_active},
        }


def resolve_sets(bound: _Comparative, roles: rc.Roles):
    """Return (I, J, I^c) as label lists for a comparative bound."""
    xdot = list(roles.xdot)
    j_set = list(bound.compare)
    if bound.given is None:
        i_set = [s for s in xdot if s not in j_set]
    else:
        i_set = list(bound.given)
    ic = [s for s in xdot if s not in i_set]
    return i_set, j_set, ic


def check_roles(model: SensitivityModel, roles: rc.Roles) -> None:
    """Raise RoleMismatch when a bound is inconsistent with the role assignment."""
    xdot = set(roles.xdot)
    for bound in model.bounds:
        if bound.kind in IV_KINDS and roles.instrument is None:
            raise InstrumentMissing(f"bound {bound.kind} requires an instrument")
        if isinstance(bound, _Comparative):
            i_set, j_set, _ = resolve_sets(bound, roles)
            bad = [s for s in list(i_set) + list(j_set) if s not in xdot]
            if bad:
                raise RoleMismatch(f"comparison covariates {bad} are not in xdot")
            if set(i_set) & set(j_set):
                raise RoleMismatch("comparison set J must be disjoint from I")
            if len(set(i_set)) == len(xdot):
                raise RoleMismatch("I must be a proper subset of xdot")
        elif isinstance(bound, (CompUZ, CompZY)):
            if bound.covariate not in xdot:
                raise RoleMismatch(f"comparison covariate {bound.covariate!r} is not in xdot")


def _safe_ratio(num, den):
    if den < rc.DENOM_TOL:
        raise DegenerateDenominator("comparison covariates explain all variation")
    return num / den


def comparative_constants(cov: rc.CovarianceModel, model: SensitivityModel, theta: EstimableParams) -> None:
    """Fill the per-bound constants of ``theta`` (in place)."""
    roles = cov.roles
    y, d = roles.outcome, roles.treatment
    z = [roles.instrument] if roles.instrument is not None else []
    xt = list(roles.xtilde)
    theta.c2, theta.c3, theta.c4, theta.c7, theta.c8 = [], [], [], [], []
    theta.comparative_rhs = {}
    for k, bound in enumerate(model.bounds):
        if isinstance(bound, (CompUD, CompUYUncondD)):
            i_set, j_set, ic = resolve_sets(bound, roles)
            target = d if isinstance(bound, CompUD) else y
            given = xt + i_set + z
            r2_j = rc.partial_r2(cov, target, j_set, given)
            r2_ic = rc.partial_r2(cov, target, ic, given)
            theta.comparative_rhs[k] = bound.b * _safe_ratio(r2_j, 1.0 - r2_ic)
        elif isinstance(bound, CompUYCondD):
            i_set, j_set, ic = resolve_sets(bound, roles)
            given = xt + i_set + z
            theta.c2.append(rc.partial_r(cov, y, d, given))
            theta.c3.append(float(np.sqrt(rc.partial_r2(cov, d, ic, given))))
            theta.c4.append(float(np.sqrt(rc.partial_r2(cov, y, ic, given))))
            theta.comparative_rhs[k] = bound.b * rc.partial_r2(cov, y, j_set, given + [d])
        elif isinstance(bound, CompUZ):
            rest = [s for s in roles.xdot if s != bound.covariate]
            r2z = rc.partial_r2(cov, z[0], [bound.covariate], xt + rest)
            theta.comparative_rhs[k] = uz_rhs(bound.b, r2z)
        elif isinstance(bound, CompZY):
            rest = [s for s in roles.xdot if s != bound.covariate]
            given = xt + rest + z
            theta.c7.append(rc.partial_r(cov, y, bound.covariate, given + [d]))
            theta.c8.append(rc.partial_r(cov, d, bound.covariate, given))
            theta.comparative_rhs[k] = bound.b


def uz_rhs(b: float, r2z: float) -> float:
    """Bound on R^2_{Z~U|X} implied by R^2_{Z~U|Xtilde,Xdot_-j} <= b R^2_{Z~Xdot_j|Xtilde,Xdot_-j}."""
    if b * r2z >= 1.0:
        return 1.0
    return b * r2z * (1.0 - r2z) / (1.0 - b * r2z * r2z)


def _intersect(iv, lo, hi):
    return (max(iv[0], lo), min(iv[1], hi))


def compile_model(model: SensitivityModel, cov: rc.CovarianceModel) -> tuple:
    """Estimate theta from ``cov`` and compile ``model`` into constraints.

    Returns
    -------
    theta : EstimableParams
    constraints : CompiledConstraints
    """
    if cov.roles is None:
        raise RoleMismatch("covariance model has no roles")
    theta = estimate_theta(cov, model)
    return theta, compile_constraints(model, theta)


compile = compile_model


def compile_constraints(model: SensitivityModel, theta: EstimableParams) -> CompiledConstraints:
    """Compile ``model`` against already estimated ``theta``."""
    a_iv = (-1.0, 1.0)
    a_bounded = False
    b_iv = (-1.0, 1.0)
    d_iv = None
    m_iv = None
    o_iv = None
    e_bounds = []
    zy_bounds = []
    ie = iz = 0
    for k, bound in enumerate(model.bounds):
        kind = bound.kind
        if kind == "direct_ud":
            a_iv = _intersect(a_iv, bound.lower, bound.upper)
            a_bounded = True
        elif kind == "comp_ud":
            lim = float(np.sqrt(theta.comparative_rhs[k]))
            lim = min(lim, model.default_a_interval[1])
            a_iv = _intersect(a_iv, -lim, lim)
            a_bounded = True
        elif kind == "direct_uy":
            b_iv = _intersect(b_iv, bound.lower, bound.upper)
        elif kind == "comp_uy_uncond_d":
            lim = min(float(np.sqrt(theta.comparative_rhs[k])), 1.0)
            d_iv = _intersect(d_iv or (-1.0, 1.0), -lim, lim)
        elif kind == "comp_uy_cond_d":
            lim = min(float(np.sqrt(theta.comparative_rhs[k])), 1.0)
            e_bounds.append(EBound(lim, theta.c2[ie], theta.c3[ie], theta.c4[ie]))
            ie += 1
        elif kind == "direct_uz":
            m_iv = _intersect(m_iv or (-1.0, 1.0), bound.lower, bound.upper)
        elif kind == "comp_uz":
            lim = min(float(np.sqrt(theta.comparative_rhs[k])), 1.0)
            m_iv = _intersect(m_iv or (-1.0, 1.0), -lim, lim)
        elif kind == "direct_zy":
            o_iv = _intersect(o_iv or (-1.0, 1.0), bound.lower, bound.upper)
        elif kind == "comp_zy":
            zy_bounds.append(ZYBound(bound.b, theta.c7[iz], theta.c8[iz]))
            iz += 1
    if not a_bounded:
        a_iv = tuple(model.default_a_interval)
    iv_needed = m_iv is not None or o_iv is not None or zy_bounds
    if iv_needed:
        if theta.c5 is None:
            raise InstrumentMissing("instrument bounds without an instrument")
        if m_iv is None:
            m_iv = (-1.0, 1.0)
        if o_iv is None:
            o_iv = (-1.0, 1.0)
    for name, iv in (("a", a_iv), ("b", b_iv), ("d", d_iv), ("m", m_iv), ("o", o_iv)):
        if iv is not None and iv[0] > iv[1]:
            raise InfeasibleAtCompile(f"static {name}-interval is empty: {iv}")
    return CompiledConstraints(
        a_interval=tuple(float(v) for v in a_iv),
        b_interval=tuple(float(v) for v in b_iv),
        d_interval=None if d_iv is None else tuple(float(v) for v in d_iv),
        e_bounds=tuple(e_bounds),
        m_interval=None if m_iv is None else tuple(float(v) for v in m_iv),
        o_interval=None if o_iv is None else tuple(float(v) for v in o_iv),
        zy_bounds=tuple(zy_bounds),
        c1=theta.c1,
        c5=theta.c5,
        c6=theta.c6,
    )


def eq5_residual(theta: EstimableParams, psi: SensitivityPoint) -> tuple:
    """Residuals (LHS - RHS) of the two equations linking (a, b) to (g, m, o)."""
    if not theta.has_instrument:
        raise InstrumentMissing("equation residuals need an instrument")
    if None in (psi.g, psi.m, psi.o):
        raise ValueError("psi must carry g, m and o")
    for v in (psi.a, psi.b, psi.g, theta.c5):
        if abs(v) >= 1 - rc.DENOM_TOL:
            raise DegenerateDenominator("partial correlation of magnitude one")
    f_o = rc.f_from_r(psi.o)
    f_6 = rc.f_from_r(theta.c6)
    f_g = rc.f_from_r(psi.g)
    f_m = rc.f_from_r(psi.m)
    r1 = f_o * np.sqrt(1 - psi.b ** 2) - (f_6 * np.sqrt(1 - psi.g ** 2) - psi.b * psi.g)
    r2 = f_g * np.sqrt(1 - psi.a ** 2) - (f_m * np.sqrt(1 - theta.c5 ** 2) - theta.c5 * psi.a)
    return float(r1), float(r2)
