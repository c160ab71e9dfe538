"""Grid-search estimate of the partially identified region.

For fixed ``a = R_{D~U|X,Z}`` the causal effect is affine in
``b = R_{Y~U|X,Z,D}``, so its extrema over the feasible set are attained on
the per-slice boundary ``{(a, L(a)), (a, U(a))}``. The boundary is located by
pushing interval bounds through monotone transfer functions; only when the
instrument links are active do we need an inner search over ``b`` and ``g``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import r2calc as rc
from .estimands import EstimableParams, SensitivityPoint
from .exceptions import DegenerateDenominator
from .sensmodel import CompiledConstraints

FEAS_TOL = 1e-8
_CHUNK_ELEMS = 2_000_000


@dataclass(frozen=True)
class GridParams:
    """Grid resolutions for ``a`` slices, inner ``b`` scan and ``g`` candidates."""

    n_a: int = 200
    n_b: int = 200
    n_g: int = 200

    def __post_init__(self):
        for name in ("n_a", "n_b", "n_g"):
            v = getattr(self, name)
            if int(v) != v or v < 2:
                raise ValueError(f"{name} must be an integer >= 2")
            object.__setattr__(self, name, int(v))


def _check_r(*values):
    for v in values:
        if np.any(np.abs(np.asarray(v, dtype=float)) >= 1.0):
            raise DegenerateDenominator("partial correlation of magnitude one")


def h_b(a, d, c1):
    """R_{Y~U|X,Z,D} from R_{D~U|X,Z} = a and R_{Y~U|X,Z} = d."""
    _check_r(a, c1)
    return _h_b(np.asarray(a, float), np.asarray(d, float), c1)[()]


def _h_b(a, d, c1):
    return (d - c1 * a) / (np.sqrt(1.0 - c1 * c1) * np.sqrt(1.0 - a * a))


def _h_b_inverse(a, b, c1):
    return c1 * a + b * np.sqrt(1.0 - c1 * c1) * np.sqrt(1.0 - a * a)


def h_d(a, e, c2, c3, c4):
    """R_{Y~U|X,Z} from a and e = R_{Y~U|Xtilde,Xdot_I,Z,D}."""
    _check_r(a, c2, c4)
    return _h_d(np.asarray(a, float), np.asarray(e, float), c2, c3, c4)[()]


def _h_d(a, e, c2, c3, c4):
    lin = c2 * np.sqrt(1.0 - c3 * c3) * a
    return (lin + e * np.sqrt(1.0 - c2 * c2) * np.sqrt(1.0 - a * a * (1.0 - c3 * c3))) / np.sqrt(1.0 - c4 * c4)


def h_fg(a, f_m, c5):
    """f_{Z~U|X,D} from a and f_{Z~U|X} = f_m."""
    _check_r(a, c5)
    return _h_fg(np.asarray(a, float), np.asarray(f_m, float), c5)[()]


def _h_fg(a, f_m, c5):
    return (np.sqrt(1.0 - c5 * c5) * f_m - c5 * a) / np.sqrt(1.0 - a * a)


def h_fo(b, g, f_c6):
    """f_{Y~Z|X,U,D} from b and g = R_{Z~U|X,D}."""
    _check_r(b, g)
    return _h_fo(np.asarray(b, float), np.asarray(g, float), f_c6)[()]


def _h_fo(b, g, f_c6):
    return (np.sqrt(1.0 - g * g) * f_c6 - b * g) / np.sqrt(1.0 - b * b)


def h_fq(a, b, c7, c8):
    """f_{Y~Xdot_j|Xtilde,Xdot_-j,Z,U,D} from (a, b).

    ``c7`` is R_{Y~Xdot_j|Xtilde,Xdot_-j,Z,D} and ``c8`` is
    R_{D~Xdot_j|Xtilde,Xdot_-j,Z}.
    """
    _check_r(a, b, c7)
    return _h_fq(np.asarray(a, float), np.asarray(b, float), c7, c8)[()]


def _h_fq(a, b, c7, c8):
    f7 = c7 / np.sqrt(1.0 - c7 * c7)
    num = np.sqrt(1.0 - a * a) * f7 + c8 * a * b
    return num / (np.sqrt(1.0 - b * b) * np.sqrt(1.0 - a * a * (1.0 - c8 * c8)))


@dataclass(frozen=True)
class BoundaryVectors:
    """Per-slice boundary of the feasible set; NaN marks a missing slice."""

    A: np.ndarray
    L: np.ndarray
    U: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.L)

    @property
    def feasible(self) -> bool:
        return bool(np.any(self.present))

    def points(self):
        """Boundary points (a, b) as an (m, 2) array: lower edge then upper edge reversed."""
        ok = self.present
        lower = np.column_stack([self.A[ok], self.L[ok]])
        upper = np.column_stack([self.A[ok], self.U[ok]])[::-1]
        return np.vstack([lower, upper])


@dataclass(frozen=True)
class PirEstimate:
    """Plug-in estimate of the partially identified region.

    ``lower`` and ``upper`` are None when no slice is feasible.
    """

    lower: float | None
    upper: float | None
    argmin_psi: SensitivityPoint | None
    argmax_psi: SensitivityPoint | None
    boundary: BoundaryVectors
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "feasible": self.feasible,
            "argmin_psi": None if self.argmin_psi is None else self.argmin_psi.to_dict(),
            "argmax_psi": None if self.argmax_psi is None else self.argmax_psi.to_dict(),
        }


def _static_b(constraints: CompiledConstraints, a: np.ndarray):
    """Closed-form b-interval per slice from the direct, d- and e-bounds."""
    b_lo = np.full(a.shape, max(constraints.b_interval[0], -1.0))
    b_hi = np.full(a.shape, min(constraints.b_interval[1], 1.0))
    if constraints.uses_d:
        d_lo = np.full(a.shape, -1.0)
        d_hi = np.full(a.shape, 1.0)
        if constraints.d_interval is not None:
            d_lo = np.maximum(d_lo, constraints.d_interval[0])
            d_hi = np.minimum(d_hi, constraints.d_interval[1])
        for eb in constraints.e_bounds:
            # h_d is increasing in e
            d_lo = np.maximum(d_lo, _h_d(a, -eb.limit, eb.c2, eb.c3, eb.c4))
            d_hi = np.minimum(d_hi, _h_d(a, eb.limit, eb.c2, eb.c3, eb.c4))
        empty = d_lo > d_hi
        # h_b is increasing in d
        c1 = constraints.c1
        b_lo = np.maximum(b_lo, _h_b(a, d_lo, c1))
        b_hi = np.minimum(b_hi, _h_b(a, d_hi, c1))
        b_lo[empty] = np.inf
    return b_lo, b_hi


def _o_limits(constraints: CompiledConstraints, a, b):
    """o-interval as a function of (a, b); arrays broadcast together."""
    lo = np.full(np.broadcast(a, b).shape, constraints.o_interval[0])
    hi = np.full(lo.shape, constraints.o_interval[1])
    for zb in constraints.zy_bounds:
        with np.errstate(divide="ignore", invalid="ignore"):
            q = rc.r_from_f(_h_fq(a, b, zb.c7, zb.c8))
        lim = np.sqrt(zb.b_zy) * np.abs(q)
        lo = np.maximum(lo, -lim)
        hi = np.minimum(hi, lim)
    return lo, hi


@njit(cache=True)
def _r_of_f(f):
    if np.isinf(f):
        return 1.0 if f > 0 else -1.0
    return f / np.sqrt(1.0 + f * f)


@njit(cache=True)
def _frac(k, n):
    # same candidate positions as np.linspace(0, 1, n), endpoint included exactly
    if k == n - 1:
        return 1.0
    return k * (1.0 / (n - 1.0))


@njit(cache=True)
def _b_feasible(a, b, g_lo, g_hi, n_g, f6, o_lo0, o_hi0, zy, tol):
    if abs(b) >= 1.0:
        return False
    o_lo = o_lo0
    o_hi = o_hi0
    sb = np.sqrt(1.0 - b * b)
    for r in range(zy.shape[0]):
        b_zy, c7, c8 = zy[r, 0], zy[r, 1], zy[r, 2]
        f7 = c7 / np.sqrt(1.0 - c7 * c7)
        fq = (np.sqrt(1.0 - a * a) * f7 + c8 * a * b) / (sb * np.sqrt(1.0 - a * a * (1.0 - c8 * c8)))
        lim = np.sqrt(b_zy) * abs(_r_of_f(fq))
        o_lo = max(o_lo, -lim)
        o_hi = min(o_hi, lim)
    if o_lo > o_hi + 2.0 * tol:
        return False
    for k in range(n_g):
        g = g_lo + (g_hi - g_lo) * _frac(k, n_g)
        o = _r_of_f((np.sqrt(1.0 - g * g) * f6 - b * g) / sb)
        if o >= o_lo - tol and o <= o_hi + tol:
            return True
    return False


@njit(cache=True)
def _iv_scan_kernel(a, b_lo, b_hi, g_lo, g_hi, n_b, n_g, f6, o_lo, o_hi, zy, tol, L, U):
    for i in range(a.size):
        if not (b_lo[i] <= b_hi[i]) or not (g_lo[i] <= g_hi[i]):
            continue
        width = b_hi[i] - b_lo[i]
        first = -1
        for j in range(n_b):
            b = b_lo[i] + width * _frac(j, n_b)
            if _b_feasible(a[i], b, g_lo[i], g_hi[i], n_g, f6, o_lo, o_hi, zy, tol):
                first = j
                break
        if first < 0:
            continue
        L[i] = b_lo[i] + width * _frac(first, n_b)
        for j in range(n_b - 1, first - 1, -1):
            b = b_lo[i] + width * _frac(j, n_b)
            if _b_feasible(a[i], b, g_lo[i], g_hi[i], n_g, f6, o_lo, o_hi, zy, tol):
                U[i] = b
                break


def _g_bounds(constraints, a):
    c5 = constraints.c5
    m_lo, m_hi = constraints.m_interval
    with np.errstate(divide="ignore", invalid="ignore"):
        g_lo = rc.r_from_f(_h_fg(a, rc.f_from_r(m_lo), c5))
        g_hi = rc.r_from_f(_h_fg(a, rc.f_from_r(m_hi), c5))
    return np.asarray(g_lo, float), np.asarray(g_hi, float)


def _iv_scan(constraints, theta, a, b_lo, b_hi, grid):
    """Inner search over (b, g): first feasible b from below and from above."""
    n = a.size
    L = np.full(n, np.nan)
    U = np.full(n, np.nan)
    g_lo, g_hi = _g_bounds(constraints, a)
    zy = np.array([[z.b_zy, z.c7, z.c8] for z in constraints.zy_bounds], dtype=float).reshape(-1, 3)
    _iv_scan_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b_lo), np.ascontiguousarray(b_hi),
                    g_lo, g_hi, grid.n_b, grid.n_g, float(rc.f_from_r(constraints.c6)),
                    float(constraints.o_interval[0]), float(constraints.o_interval[1]), zy, FEAS_TOL, L, U)
    return L, U


def _iv_scan_dense(constraints, theta, a, b_lo, b_hi, grid):
    """Array version of the inner search; evaluates every (b, g) pair."""
    n = a.size
    L = np.full(n, np.nan)
    U = np.full(n, np.nan)
    f6 = rc.f_from_r(constraints.c6)
    g_lo, g_hi = _g_bounds(constraints, a)
    steps_b = np.linspace(0.0, 1.0, grid.n_b)
    steps_g = np.linspace(0.0, 1.0, grid.n_g)
    chunk = max(1, _CHUNK_ELEMS // (grid.n_b * grid.n_g))
    for s in range(0, n, chunk):
        sl = slice(s, min(n, s + chunk))
        ai = a[sl][:, None]
        B = b_lo[sl][:, None] + (b_hi[sl] - b_lo[sl])[:, None] * steps_b[None, :]
        G = g_lo[sl][:, None] + (g_hi[sl] - g_lo[sl])[:, None] * steps_g[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            o_lo, o_hi = _o_limits(constraints, ai, B)
            o = rc.r_from_f(_h_fo(B[:, :, None], G[:, None, :], f6))
            hit = (o >= o_lo[:, :, None] - FEAS_TOL) & (o <= o_hi[:, :, None] + FEAS_TOL)
        ok = hit.any(axis=2) & (np.abs(B) < 1.0)
        ok &= (b_lo[sl] <= b_hi[sl])[:, None]
        ok &= (g_lo[sl] <= g_hi[sl])[:, None]
        anyok = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        last = grid.n_b - 1 - np.argmax(ok[:, ::-1], axis=1)
        rows = np.arange(B.shape[0])
        L[sl] = np.where(anyok, B[rows, first], np.nan)
        U[sl] = np.where(anyok, B[rows, last], np.nan)
    return L, U


def boundary(constraints: CompiledConstraints, theta: EstimableParams, grid: GridParams = GridParams(),
             dense: bool = False) -> BoundaryVectors:
    """Discretized per-slice boundary of the feasible set.

    ``dense=True`` switches the instrument-link search to the array
    implementation, which evaluates the full (b, g) grid; both give the same
    result up to floating-point rounding.
    """
    a_lo, a_hi = constraints.a_interval
    n = grid.n_a
    if a_lo > a_hi:
        nan = np.full(n, np.nan)
        return BoundaryVectors(nan.copy(), nan.copy(), nan.copy())
    A = np.linspace(a_lo, a_hi, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        b_lo, b_hi = _static_b(constraints, A)
    b_lo = np.clip(b_lo, -1.0, np.inf)
    b_hi = np.clip(b_hi, -np.inf, 1.0)
    valid = b_lo <= b_hi
    if constraints.iv_active:
        scan = _iv_scan_dense if dense else _iv_scan
        L, U = scan(constraints, theta, A, b_lo, b_hi, grid)
    else:
        L, U = b_lo.copy(), b_hi.copy()
    missing = ~valid | np.isnan(L)
    L[missing] = np.nan
    U[missing] = np.nan
    A = A.copy()
    A[missing] = np.nan
    return BoundaryVectors(A, L, U)


def _psi(constraints, a, b):
    d = None
    if constraints.uses_d:
        d = float(np.clip(_h_b_inverse(a, b, constraints.c1), -1.0, 1.0))
    return SensitivityPoint(a=float(a), b=float(b), d=d)


def beta_on_boundary(theta: EstimableParams, bv: BoundaryVectors):
    """Causal effect at the lower and upper boundary points of every slice."""
    with np.errstate(divide="ignore", invalid="ignore"):
        fa = bv.A / np.sqrt(1.0 - bv.A * bv.A)
    beta_l = theta.beta_ols - bv.L * fa * theta.sigma_ratio
    beta_u = theta.beta_ols - bv.U * fa * theta.sigma_ratio
    return beta_l, beta_u


def solve_pir(theta: EstimableParams, constraints: CompiledConstraints, grid: GridParams = GridParams()) -> PirEstimate:
    """Minimize and maximize the causal effect over the gridded boundary."""
    bv = boundary(constraints, theta, grid)
    if not bv.feasible:
        return PirEstimate(None, None, None, None, bv, False)
    beta_l, beta_u = beta_on_boundary(theta, bv)
    both = np.concatenate([beta_l, beta_u])
    n = bv.A.size
    i_min = int(np.nanargmin(both))
    i_max = int(np.nanargmax(both))

    def point(k):
        i = k % n
        b = bv.L[i] if k < n else bv.U[i]
        return _psi(constraints, bv.A[i], b)

    return PirEstimate(float(both[i_min]), float(both[i_max]), point(i_min), point(i_max), bv, True)

