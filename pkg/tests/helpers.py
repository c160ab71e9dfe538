"""Shared generators and independent oracles for the test suite.

The oracles deliberately avoid the package's Schur-complement code path:
partial R^2 comes from determinants, partial correlations from the
precision matrix, and regression coefficients from least squares on an
exactly matching synthetic sample.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from pirsens import r2calc as rc

REG_NAMES = ("U", "X", "D", "Y")
REG_COV = np.array([
    [1.0, 0.0, 1.0, 2.0],
    [0.0, 1.0, 1.0, 3.0],
    [1.0, 1.0, 3.0, 6.0],
    [2.0, 3.0, 6.0, 15.0],
])
IV_NAMES = ("U", "Z", "D", "Y")
IV_COV = np.array([
    [1.0, 0.0, 1.0, 2.0],
    [0.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 3.0, 4.0],
    [2.0, 1.0, 4.0, 7.0],
])


def reg_cov(with_u=True):
    roles = rc.Roles("Y", "D", xdot=("X",))
    full = rc.CovarianceModel(REG_NAMES, REG_COV)
    if with_u:
        return full.with_roles(roles)
    return full.subset(["X", "D", "Y"]).with_roles(roles)


def iv_cov(with_u=True):
    roles = rc.Roles("Y", "D", "Z")
    full = rc.CovarianceModel(IV_NAMES, IV_COV)
    if with_u:
        return full.with_roles(roles)
    return full.subset(["Z", "D", "Y"]).with_roles(roles)


def random_pd(rng, dim, eps=0.05):
    g = rng.normal(size=(dim + 2, dim))
    return g.T @ g + eps * np.eye(dim)


def sem_cov(rng, n_xdot=2, n_xtilde=1, instrument=True, z_on_u=0.0, scale=0.7):
    """Covariance of a random linear SEM over (Xt.., U, Xd.., Z, D, Y).

    U and the Xdot covariates depend only on Xtilde and independent noise,
    so R^2_{U~Xdot|Xtilde} = 0. With ``z_on_u = 0`` the instrument does not
    load on U, so R^2_{U~Xdot|Xtilde,Z} = 0 as well.
    """
    xt = [f"T{i}" for i in range(n_xtilde)]
    xd = [f"K{i}" for i in range(n_xdot)]
    names = xt + ["U"] + xd + (["Z"] if instrument else []) + ["D", "Y"]
    p = len(names)
    pos = {s: i for i, s in enumerate(names)}
    B = np.zeros((p, p))
    for t in xt:
        B[pos["U"], pos[t]] = rng.normal() * scale
        for k in xd:
            B[pos[k], pos[t]] = rng.normal() * scale
    if instrument:
        for s in xt + xd:
            B[pos["Z"], pos[s]] = rng.normal() * scale
        B[pos["Z"], pos["U"]] = z_on_u
    for s in names[: pos["D"]]:
        B[pos["D"], pos[s]] = rng.normal() * scale
    for s in names[: pos["Y"]]:
        B[pos["Y"], pos[s]] = rng.normal() * scale
    M = np.linalg.inv(np.eye(p) - B)
    S = M @ np.diag(rng.uniform(0.5, 2.0, p)) @ M.T
    roles = rc.Roles("Y", "D", "Z" if instrument else None, xdot=tuple(xd), xtilde=tuple(xt))
    full = rc.CovarianceModel(names, S, roles)
    observed = full.subset([s for s in names if s != "U"]).with_roles(roles)
    return full, observed


# ------------------------------------------------------------------ oracles

def _sub(S, idx):
    return S[np.ix_(idx, idx)]


def oracle_partial_r2(S, y, x, z=()):
    """Determinant form: 1 - R^2_{y~w} = det(S_{y,w}) / (det(S_w) S_yy)."""
    x, z = list(x), list(z)

    def unexplained(w):
        if not w:
            return 1.0
        return np.linalg.det(_sub(S, [y] + w)) / (np.linalg.det(_sub(S, w)) * S[y, y])

    full = unexplained(x + z)
    base = unexplained(z)
    return 1.0 - full / base


def oracle_partial_r(S, y, x, z=()):
    """Partial correlation from the precision matrix of (y, x, z)."""
    idx = [y, x] + list(z)
    P = np.linalg.inv(_sub(S, idx))
    return -P[0, 1] / np.sqrt(P[0, 0] * P[1, 1])


def oracle_coef(S, y, x, z=()):
    """Coefficient of x in the population regression of y on (x, z)."""
    reg = [x] + list(z)
    return np.linalg.solve(_sub(S, reg), S[reg, y])[0]


def ix(cov, *labels):
    return [cov.names.index(s) for s in labels]


# ------------------------------------------------------ brute-force region

def _f(r):
    return r / np.sqrt(1 - r ** 2)


def _r_of(v):
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(v), np.sign(v), v / np.sqrt(1 + v ** 2))


@dataclass
class BruteForce:
    lower: float
    upper: float
    count: int
    # extremes over the feasible cells grown by one grid cell in every direction
    lower_dilated: float
    upper_dilated: float


def brute_force_pir(theta, cons, n_a=400, n_2=400, n_g=400, chunk=8):
    """Dense-grid scan of the feasible set.

    Without instrument links the scan runs over (a, d) and reads b off the
    recursion identity (an (a, d, b) grid collapsed along the equality). With
    instrument links it scans (a, b, g) and recovers m by inverting the
    Z-U link, so every constraint is checked in the direction opposite to the
    optimizer's. The second grid axis includes the endpoints -1 and 1; they are
    never feasible but take part in the one-cell dilation.
    """
    a_vals = np.linspace(cons.a_interval[0], cons.a_interval[1], n_a)
    second = np.linspace(-1, 1, n_2 + 2)
    if cons.iv_active:
        masks = [_iv_mask(cons, a_vals[s:s + chunk], second, n_g) for s in range(0, n_a, chunk)]
        mask = np.concatenate(masks, axis=0)
        B = np.broadcast_to(second[None, :], mask.shape)
    else:
        mask, B = _plain_mask(cons, a_vals, second)
    A = np.broadcast_to(a_vals[:, None], mask.shape)
    with np.errstate(all="ignore"):
        beta = theta.beta_ols - np.clip(B, -1, 1) * _f(A) * theta.sigma_ratio
    grown = ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool)) & np.isfinite(beta)
    if not mask.any():
        return BruteForce(np.inf, -np.inf, 0, np.inf, -np.inf)
    return BruteForce(float(beta[mask].min()), float(beta[mask].max()), int(mask.sum()),
                      float(beta[grown].min()), float(beta[grown].max()))


def _plain_mask(cons, a_vals, d_vals):
    a = a_vals[:, None]
    if cons.uses_d:
        d = d_vals[None, :]
        with np.errstate(all="ignore"):
            b = _recursion_b(a, d, cons.c1)
        ok = np.abs(b) < 1
        if cons.d_interval is not None:
            ok &= (d >= cons.d_interval[0]) & (d <= cons.d_interval[1])
        for eb in cons.e_bounds:
            with np.errstate(all="ignore"):
                e = _e_of(a, d, eb)
            ok &= np.abs(e) <= eb.limit
    else:
        b = np.broadcast_to(d_vals[None, :], (a_vals.size, d_vals.size))
        ok = np.abs(b) < 1
    ok &= (b >= cons.b_interval[0]) & (b <= cons.b_interval[1])
    return ok, b


def _e_of(a, d, eb):
    # inverse direction of the conditional-on-D link: e from (a, d)
    return (d * np.sqrt(1 - eb.c4 ** 2) - eb.c2 * np.sqrt(1 - eb.c3 ** 2) * a) / (
        np.sqrt(1 - eb.c2 ** 2) * np.sqrt(1 - a ** 2 * (1 - eb.c3 ** 2)))


def _recursion_b(a, d, c1):
    return (d - c1 * a) / np.sqrt((1 - c1 ** 2) * (1 - a ** 2))


def _iv_mask(cons, a_vals, b_vals, n_g):
    a = a_vals[:, None, None]
    b = b_vals[None, :, None]
    g = np.linspace(-1, 1, n_g + 2)[1:-1][None, None, :]
    shape = np.broadcast_shapes(a.shape, b.shape, g.shape)
    with np.errstate(all="ignore"):
        m = _r_of((_f(g) * np.sqrt(1 - a ** 2) + cons.c5 * a) / np.sqrt(1 - cons.c5 ** 2))
        o = _r_of((np.sqrt(1 - g ** 2) * _f(cons.c6) - b * g) / np.sqrt(1 - b ** 2))
        ok = np.broadcast_to((m >= cons.m_interval[0]) & (m <= cons.m_interval[1]), shape).copy()
        ok &= (o >= cons.o_interval[0]) & (o <= cons.o_interval[1])
        for zb in cons.zy_bounds:
            fq = (np.sqrt(1 - a ** 2) * _f(zb.c7) + zb.c8 * a * b) / (
                np.sqrt(1 - b ** 2) * np.sqrt(1 - a ** 2 * (1 - zb.c8 ** 2)))
            ok &= np.abs(o) <= np.sqrt(zb.b_zy) * np.abs(_r_of(fq))
        ok = ok.any(axis=2)
        a2, b2 = a[:, :, 0], b[:, :, 0]
        ok &= np.abs(b2) < 1
        ok &= (b2 >= cons.b_interval[0]) & (b2 <= cons.b_interval[1])
        if cons.uses_d:
            d = cons.c1 * a2 + b2 * np.sqrt(1 - cons.c1 ** 2) * np.sqrt(1 - a2 ** 2)
            if cons.d_interval is not None:
                ok &= (d >= cons.d_interval[0]) & (d <= cons.d_interval[1])
            for eb in cons.e_bounds:
                ok &= np.abs(_e_of(a2, d, eb)) <= eb.limit
    return ok


def optimizer_envelope(theta, cons, est, grid):
    """Extremes of beta over the optimizer's boundary grown by one of its grid cells.

    Each boundary point (A_i, L_i) is paired with the neighbouring a-values
    and with b moved by the larger of one inner-scan step and the change of
    the edge between adjacent slices.
    """
    bv = est.boundary
    n = bv.A.size
    a_all = np.linspace(cons.a_interval[0], cons.a_interval[1], n)
    step_b = 2.0 / (grid.n_b - 1) if cons.iv_active else 0.0
    lo, hi = np.inf, -np.inf
    for edge in (bv.L, bv.U):
        for i in np.flatnonzero(~np.isnan(edge)):
            nb = [edge[k] for k in (i - 1, i + 1) if 0 <= k < n and not np.isnan(edge[k])]
            db = max([step_b] + [abs(v - edge[i]) for v in nb])
            for k in (i - 1, i, i + 1):
                if not 0 <= k < n:
                    continue
                a = a_all[k]
                for b in (edge[i] - db, edge[i] + db):
                    v = theta.beta_ols - np.clip(b, -1, 1) * _f(a) * theta.sigma_ratio
                    lo, hi = min(lo, v), max(hi, v)
    return lo, hi


# ------------------------------------------------------- R^2 rule checker

def replace_variable(S, t, weights):
    """Covariance after variable ``t`` is replaced by ``sum_j weights[j] * v_j``."""
    T = np.eye(S.shape[0])
    T[t] = weights
    return T @ S @ T.T


def orthogonalize(S, t, on, rng, mix=()):
    """Replace ``t`` by its residual on ``on`` plus a random combination of ``mix``."""
    on = list(on)
    w = np.zeros(S.shape[0])
    w[t] = 1.0
    if on:
        w[on] -= np.linalg.solve(_sub(S, on), S[on, t])
    for k in mix:
        w[k] += rng.normal()
    return replace_variable(S, t, w)


def r2_rule_errors(rng, dim):
    """Absolute errors of every R^2-calculus rule on one random matrix.

    Variables are split into Y (index 0), X, W and a conditioning set Z that
    may be empty, so each rule is exercised in its conditional form. Rules
    that need orthogonality get a matrix built by residualizing.
    """
    S = random_pd(rng, dim)
    perm = rng.permutation(np.arange(1, dim))
    kx = int(rng.integers(1, dim - 1))
    kw = int(rng.integers(1, dim - kx))
    X, W, Z = list(perm[:kx]), list(perm[kx:kx + kw]), list(perm[kx + kw:])
    y = 0
    cov = lambda M: rc.CovarianceModel([f"v{i}" for i in range(dim)], M)
    C = cov(S)
    R2 = lambda M, a, b, c=(): rc.partial_r2(M, a, list(b), list(c))
    R = lambda M, a, b, c=(): rc.partial_r(M, a, b, list(c))
    F = lambda M, a, b, c=(): rc.f_value(M, a, b, list(c))
    err = {}

    # Y orthogonal to X given Z
    Ci = cov(orthogonalize(S, y, X + Z, rng, mix=Z))
    err["orthogonal_zero"] = abs(R2(Ci, y, X, Z))

    # every X_i orthogonal to W given Z
    Sii = S
    for xi in X:
        Sii = orthogonalize(Sii, xi, W + Z, rng, mix=Z)
    Cii = cov(Sii)
    err["orthogonal_additivity"] = abs(R2(Cii, y, X + W, Z) - R2(Cii, y, X, Z) - R2(Cii, y, W, Z))

    # decomposition of unexplained variance
    err["unexplained_product"] = abs((1 - R2(C, y, X + W, Z)) - (1 - R2(C, y, X, Z)) * (1 - R2(C, y, W, Z + X)))

    # partial-correlation and f recursions with scalar X and W
    x, w = X[0], W[0]
    rhs = (R(C, y, x, Z) - R(C, y, w, Z) * R(C, x, w, Z)) / (
        np.sqrt(1 - R(C, y, w, Z) ** 2) * np.sqrt(1 - R(C, x, w, Z) ** 2))
    err["partial_r_recursion"] = abs(R(C, y, x, Z + [w]) - rhs)
    lhs = F(C, y, x, Z + [w]) * np.sqrt(1 - R2(C, y, [w], Z + [x]))
    rhs = F(C, y, x, Z) * np.sqrt(1 - R2(C, x, [w], Z)) - R(C, y, w, Z + [x]) * R(C, x, w, Z)
    err["f_recursion"] = abs(lhs - rhs)

    # Y orthogonal to the (possibly vector) W given Z, scalar X
    Cv = cov(orthogonalize(S, y, W + Z, rng, mix=Z))
    rhs = R(Cv, y, x, Z) / np.sqrt(1 - R2(Cv, x, W, Z))
    err["orthogonal_rescaling"] = abs(R(Cv, y, x, Z + W) - rhs)

    # R^2 of residualized variables, and R^2 equals the squared partial r for scalar x
    keep = [y] + X
    res = rc.residual_variance(C, keep, Z)
    Cres = rc.CovarianceModel([f"r{i}" for i in range(len(keep))], res)
    err["residualized"] = abs(R2(C, y, X, Z) - rc.partial_r2(Cres, 0, list(range(1, len(keep)))))
    err["scalar_square"] = abs(R2(C, y, [x], Z) - R(C, y, x, Z) ** 2)
    return err


def partitioned_cov(rng, n_xdot=3, n_xtilde=2, instrument=True):
    """Random covariance where U is partially uncorrelated with Xdot given (Xtilde, Z).

    U keeps arbitrary associations with Xtilde, Z, D and Y, which makes this
    a stronger test bed than :func:`sem_cov` for the comparative folds.
    """
    xt = [f"T{i}" for i in range(n_xtilde)]
    xd = [f"K{i}" for i in range(n_xdot)]
    z = ["Z"] if instrument else []
    names = xt + xd + z + ["U", "D", "Y"]
    pos = {s: i for i, s in enumerate(names)}
    S = random_pd(rng, len(names))
    on = [pos[s] for s in xt + xd + z]
    S = orthogonalize(S, pos["U"], on, rng, mix=[pos[s] for s in xt + z])
    roles = rc.Roles("Y", "D", "Z" if instrument else None, xdot=tuple(xd), xtilde=tuple(xt))
    full = rc.CovarianceModel(names, S, roles)
    observed = full.subset([s for s in names if s != "U"]).with_roles(roles)
    return full, observed


def random_model(rng, iv):
    """Random small sensitivity model over the covariates of :func:`sem_cov`."""
    from pirsens import sensmodel as sm

    def u(lo, hi):
        return float(rng.uniform(lo, hi))

    bounds = []
    if rng.random() < 0.5:
        bounds.append(sm.CompUD(("K0",), u(0.3, 3)))
    else:
        w = u(0.3, 0.9)
        bounds.append(sm.DirectUD(-w, w))
    if not iv or rng.random() < 0.5:
        kind = rng.integers(3)
        if kind == 0:
            bounds.append(sm.CompUYUncondD(("K0",), u(0.3, 3)))
        elif kind == 1:
            bounds.append(sm.CompUYCondD(("K0",), u(0.3, 3)))
        else:
            w = u(0.2, 0.8)
            bounds.append(sm.DirectUY(-w, w))
    if iv:
        if rng.random() < 0.5:
            w = u(0.05, 0.3)
            bounds.append(sm.DirectUZ(-w, w))
        else:
            bounds.append(sm.CompUZ("K0", u(0.3, 3)))
        if rng.random() < 0.5:
            w = u(0.05, 0.3)
            bounds.append(sm.DirectZY(-w, w))
        else:
            bounds.append(sm.CompZY("K1", u(0.3, 3)))
    return sm.SensitivityModel(tuple(bounds))


def widen(rng, model):
    """Copy of ``model`` with one randomly chosen bound relaxed."""
    k = int(rng.integers(len(model.bounds)))
    bound = model.bounds[k]
    if hasattr(bound, "b"):
        new = replace(bound, b=bound.b * float(rng.uniform(1.1, 2.0)))
    else:
        grow = float(rng.uniform(0.02, 0.1))
        new = type(bound)(max(bound.lower - grow, -0.95), min(bound.upper + grow, 0.95))
    return model.replace_bound(k, new)


def random_joint(rng, n_x=2, instrument=True, n_u=1, sigma=None):
    """Random PD covariance over (Y, D, X.., Z, U..) with roles attached."""
    names = ["Y", "D"] + [f"X{i}" for i in range(n_x)] + (["Z"] if instrument else [])
    us = [f"U{i}" for i in range(n_u)] if n_u > 1 else ["U"]
    names += us
    S = random_pd(rng, len(names)) if sigma is None else sigma
    roles = rc.Roles("Y", "D", "Z" if instrument else None, xdot=tuple(f"X{i}" for i in range(n_x)))
    full = rc.CovarianceModel(names, S, roles)
    observed = full.subset([s for s in names if s not in us]).with_roles(roles)
    return full, observed, us
