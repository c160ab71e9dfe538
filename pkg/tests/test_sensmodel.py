import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import iv_cov, partitioned_cov, reg_cov, sem_cov
from pirsens import estimands as es
from pirsens import gridopt as go
from pirsens import r2calc as rc
from pirsens import sensmodel as sm
from pirsens.exceptions import EmptyModel, InfeasibleAtCompile, InstrumentMissing, RoleMismatch

seeds = st.integers(0, 2 ** 32 - 1)

REGRESSION_MODEL = sm.SensitivityModel((sm.CompUD(("X",), 1.0), sm.CompUYUncondD(("X",), 4 / 9)))


def test_regression_model_compiles_to_the_population_extremes():
    theta, cons = sm.compile_model(REGRESSION_MODEL, reg_cov(with_u=False))
    assert cons.a_interval == pytest.approx((-1 / np.sqrt(2), 1 / np.sqrt(2)), abs=1e-12)
    # R^2_{Y~X} = 3/5 so b R^2 / (1 - R^2) = (4/9)(3/5)/(2/5) = 2/3
    assert cons.d_interval == pytest.approx((-np.sqrt(2 / 3), np.sqrt(2 / 3)), abs=1e-12)
    assert theta.comparative_rhs == pytest.approx({0: 0.5, 1: 2 / 3}, abs=1e-12)
    assert cons.uses_d and not cons.iv_active
    assert cons.c1 == pytest.approx(np.sqrt(3) / 2)


def test_regression_model_true_point_sits_on_both_bounds():
    psi = es.true_psi(reg_cov(), "U")
    _, cons = sm.compile_model(REGRESSION_MODEL, reg_cov(with_u=False))
    assert abs(psi.a) == pytest.approx(cons.a_interval[1], abs=1e-12)
    assert abs(psi.d) == pytest.approx(cons.d_interval[1], abs=1e-12)


def test_direct_bound_passes_through():
    _, cons = sm.compile_model(sm.SensitivityModel((sm.DirectUD(-0.5, 0.5),)), reg_cov(with_u=False))
    assert cons.a_interval == (-0.5, 0.5)
    assert not cons.uses_d and not cons.iv_active
    assert cons.b_interval == (-1.0, 1.0)


def test_instrument_bounds_use_the_default_a_interval_and_activate_the_link():
    model = sm.SensitivityModel((sm.DirectUZ(-0.002, 0.002), sm.DirectZY(-0.002, 0.002)))
    _, cons = sm.compile_model(model, iv_cov(with_u=False))
    assert cons.a_interval == (-0.999, 0.999)
    assert cons.iv_active
    assert cons.m_interval == (-0.002, 0.002) and cons.o_interval == (-0.002, 0.002)
    links = cons.to_dict()["links"]
    assert links == {"b_d": False, "d_e": False, "iv": True}


def _partitioned_model_cov():
    _, obs = partitioned_cov(np.random.default_rng(3))
    return obs


@pytest.mark.parametrize("bound, field", [
    (sm.CompUD(("K0",), 0.0), "a_interval"),
    (sm.CompUYUncondD(("K0",), 0.0), "d_interval"),
    (sm.CompUZ("K0", 0.0), "m_interval"),
])
def test_zero_b_factor_forces_the_quantity_to_zero(bound, field):
    _, cons = sm.compile_model(sm.SensitivityModel((bound,)), _partitioned_model_cov())
    assert getattr(cons, field) == (0.0, 0.0)


def test_zero_b_factor_for_conditional_and_instrument_outcome_bounds():
    obs = _partitioned_model_cov()
    _, cons = sm.compile_model(sm.SensitivityModel((sm.CompUYCondD(("K0",), 0.0),)), obs)
    assert cons.e_bounds[0].limit == 0.0
    _, cons = sm.compile_model(sm.SensitivityModel((sm.CompZY("K1", 0.0),)), obs)
    assert cons.zy_bounds[0].b_zy == 0.0
    # with b_zy = 0 the only admissible o is zero
    theta, cons = sm.compile_model(sm.SensitivityModel((sm.DirectUD(-0.3, 0.3), sm.CompZY("K1", 0.0))), obs)
    lo, hi = go._o_limits(cons, np.array([0.1]), np.array([0.2]))
    assert lo[0] == 0.0 and hi[0] == 0.0


def test_uz_rhs_edge_cases():
    assert sm.uz_rhs(0.0, 0.4) == 0.0
    assert sm.uz_rhs(1.0, 0.0) == 0.0
    assert sm.uz_rhs(10.0, 0.5) == 1.0
    assert sm.uz_rhs(1.0, 0.5) == pytest.approx(0.25 / 0.75)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_compiled_constants_match_direct_evaluation(seed):
    rng = np.random.default_rng(seed)
    _, obs = partitioned_cov(rng)
    b = [float(v) for v in rng.uniform(0.1, 2.0, size=5)]
    model = sm.SensitivityModel((
        sm.CompUD(("K0",), b[0], given=("K2",)),
        sm.CompUYUncondD(("K0", "K1"), b[1]),
        sm.CompUYCondD(("K1",), b[2], given=("K2",)),
        sm.CompUZ("K0", b[3]),
        sm.CompZY("K1", b[4]),
    ))
    theta, _ = sm.compile_model(model, obs)
    pr2, pr = rc.partial_r2, rc.partial_r
    t = ["T0", "T1"]
    g = t + ["K2", "Z"]
    want_ud = b[0] * pr2(obs, "D", ["K0"], g) / (1 - pr2(obs, "D", ["K0", "K1"], g))
    # J = {K0, K1} leaves I = {K2} by default, so I^c = J
    want_uy = b[1] * pr2(obs, "Y", ["K0", "K1"], g) / (1 - pr2(obs, "Y", ["K0", "K1"], g))
    want_e = b[2] * pr2(obs, "Y", ["K1"], g + ["D"])
    r2z = pr2(obs, "Z", ["K0"], t + ["K1", "K2"])
    want_uz = b[3] * r2z * (1 - r2z) / (1 - b[3] * r2z ** 2) if b[3] * r2z < 1 else 1.0
    rhs = theta.comparative_rhs
    for got, want in ((rhs[0], want_ud), (rhs[1], want_uy), (rhs[2], want_e), (rhs[3], want_uz), (rhs[4], b[4])):
        assert got == pytest.approx(want, abs=1e-12)
    assert theta.c2[0] == pytest.approx(pr(obs, "Y", "D", g), abs=1e-12)
    assert theta.c3[0] == pytest.approx(np.sqrt(pr2(obs, "D", ["K0", "K1"], g)), abs=1e-12)
    assert theta.c4[0] == pytest.approx(np.sqrt(pr2(obs, "Y", ["K0", "K1"], g)), abs=1e-12)
    assert theta.c7[0] == pytest.approx(pr(obs, "Y", "K1", t + ["K0", "K2", "Z", "D"]), abs=1e-12)
    assert theta.c8[0] == pytest.approx(pr(obs, "D", "K1", t + ["K0", "K2", "Z"]), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds, st.booleans())
def test_comparative_bounds_are_sharp_at_the_true_b_factor(seed, use_sem):
    """With b set to the true ratio, each right-hand side equals the true squared quantity."""
    rng = np.random.default_rng(seed)
    full, obs = sem_cov(rng, n_xdot=3, n_xtilde=2) if use_sem else partitioned_cov(rng)
    covs = list(full.roles.covariates) + ["Z"]
    xt = list(full.roles.xtilde)
    I, J = ("K2",), ("K0",)
    g = xt + list(I) + ["Z"]
    pr2 = rc.partial_r2

    def rhs(bound):
        theta, _ = sm.compile_model(sm.SensitivityModel((bound,)), obs)
        return theta.comparative_rhs[0]

    b = pr2(full, "D", ["U"], g) / pr2(full, "D", list(J), g)
    assert rhs(sm.CompUD(J, b, given=I)) == pytest.approx(pr2(full, "D", ["U"], covs), abs=1e-10)
    b = pr2(full, "Y", ["U"], g) / pr2(full, "Y", list(J), g)
    assert rhs(sm.CompUYUncondD(J, b, given=I)) == pytest.approx(pr2(full, "Y", ["U"], covs), abs=1e-10)
    e2 = pr2(full, "Y", ["U"], g + ["D"])
    b = e2 / pr2(full, "Y", list(J), g + ["D"])
    assert rhs(sm.CompUYCondD(J, b, given=I)) == pytest.approx(e2, abs=1e-10)
    rest = xt + ["K1", "K2"]
    b = pr2(full, "Z", ["U"], rest) / pr2(full, "Z", ["K0"], rest)
    assert rhs(sm.CompUZ("K0", b)) == pytest.approx(pr2(full, "Z", ["U"], covs[:-1]), abs=1e-10)


def _transfer_truth(seed):
    full, obs = partitioned_cov(np.random.default_rng(seed))
    model = sm.SensitivityModel((sm.CompUYCondD(("K0",), 1.0, given=("K2",)), sm.CompZY("K1", 1.0)))
    theta, _ = sm.compile_model(model, obs)
    psi = es.true_psi(full, "U", model)
    return theta, psi


def _literal_h_b(a, d, c3):
    return (d - c3 * a) / (np.sqrt(1 - c3 ** 2) * np.sqrt(1 - a ** 2))


def _literal_h_d(a, e, c2, c3):
    # the abbreviation list treats c4 as c3 and squares a in the first term
    return (c2 * np.sqrt(1 - c3 ** 2) * a ** 2 + e * np.sqrt(1 - c2 ** 2) * np.sqrt(1 - a ** 2 * (1 - c3 ** 2))) / (
        np.sqrt(1 - c3 ** 2))


def _literal_fq(a, b, c7):
    f7 = rc.f_from_r(c7)
    return (np.sqrt(1 - a ** 2) * f7 + c7 * a * b) / (np.sqrt(1 - b ** 2) * np.sqrt(1 - a ** 2 * (1 - c7 ** 2)))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_transfer_functions_reproduce_the_true_point(seed):
    theta, psi = _transfer_truth(seed)
    assert go.h_b(psi.a, psi.d, theta.c1) == pytest.approx(psi.b, abs=1e-9)
    assert go.h_d(psi.a, psi.e[0], theta.c2[0], theta.c3[0], theta.c4[0]) == pytest.approx(psi.d, abs=1e-9)
    assert go.h_fg(psi.a, rc.f_from_r(psi.m), theta.c5) == pytest.approx(rc.f_from_r(psi.g), abs=1e-9)
    assert go.h_fo(psi.b, psi.g, rc.f_from_r(theta.c6)) == pytest.approx(rc.f_from_r(psi.o), abs=1e-9)
    assert go.h_fq(psi.a, psi.b, theta.c7[0], theta.c8[0]) == pytest.approx(rc.f_from_r(psi.q[0]), abs=1e-9)


def test_only_the_equation_form_of_the_transfers_matches_the_truth():
    """The abbreviation-list variants of h_b, h_d and h_fq disagree with the true point."""
    misses = {"h_b": 0, "h_d": 0, "h_fq": 0}
    for seed in range(20):
        theta, psi = _transfer_truth(seed)
        assert go.h_b(psi.a, psi.d, theta.c1) == pytest.approx(psi.b, abs=1e-9)
        misses["h_b"] += abs(_literal_h_b(psi.a, psi.d, theta.c3[0]) - psi.b) > 1e-6
        misses["h_d"] += abs(_literal_h_d(psi.a, psi.e[0], theta.c2[0], theta.c3[0]) - psi.d) > 1e-6
        misses["h_fq"] += abs(_literal_fq(psi.a, psi.b, theta.c7[0]) - rc.f_from_r(psi.q[0])) > 1e-6
    assert misses == {"h_b": 20, "h_d": 20, "h_fq": 20}


def test_role_errors():
    obs = reg_cov(with_u=False)
    with pytest.raises(RoleMismatch):
        sm.compile_model(sm.SensitivityModel((sm.CompUD(("W",), 1.0),)), obs)
    with pytest.raises(RoleMismatch):
        sm.compile_model(sm.SensitivityModel((sm.CompUD(("X",), 1.0, given=("X",)),)), obs)
    with pytest.raises(InstrumentMissing):
        sm.compile_model(sm.SensitivityModel((sm.DirectUZ(-0.1, 0.1),)), obs)
    with pytest.raises(RoleMismatch):
        sm.compile_model(sm.SensitivityModel((sm.CompZY("W", 1.0),)), _partitioned_model_cov())


def test_empty_and_statically_infeasible_models():
    with pytest.raises(EmptyModel):
        sm.SensitivityModel(())
    model = sm.SensitivityModel((sm.DirectUD(0.1, 0.2), sm.DirectUD(0.3, 0.4)))
    with pytest.raises(InfeasibleAtCompile):
        sm.compile_model(model, reg_cov(with_u=False))


def test_bound_validation():
    with pytest.raises(ValueError):
        sm.DirectUD(0.5, 0.4)
    with pytest.raises(ValueError):
        sm.DirectUY(-1.0, 0.2)
    with pytest.raises(ValueError):
        sm.CompUD(("X",), -1.0)
    with pytest.raises(ValueError):
        sm.bound_from_dict({"kind": "nope"})


def test_bound_dict_round_trip():
    specs = [
        {"kind": "comp_uy_cond_d", "compare": ["black"], "given_extra": [], "b": 5.0},
        {"kind": "comp_ud", "compare": ["black", "south"], "b": 2},
        {"kind": "direct_uy", "lower": -0.3, "upper": 0.2},
        {"kind": "comp_uz", "compare": "black", "b": 1.0},
        {"kind": "comp_zy", "covariate": "south", "b": 0.5},
    ]
    model = sm.SensitivityModel.from_dicts(specs)
    assert model.bounds[0] == sm.CompUYCondD(("black",), 5.0, given=())
    assert model.bounds[3] == sm.CompUZ("black", 1.0)
    again = sm.SensitivityModel.from_dicts(model.to_dicts())
    assert again == model


def test_link_residuals_vanish_for_the_null_model():
    theta = es.estimate_theta(iv_cov(with_u=False))
    theta.c6 = 0.0
    psi = es.SensitivityPoint(0.0, 0.0, g=0.0, m=0.0, o=0.0)
    assert sm.eq5_residual(theta, psi) == (0.0, 0.0)


def test_link_residuals_at_the_iv_population_point():
    theta = es.estimate_theta(iv_cov(with_u=False))
    r1, r2 = sm.eq5_residual(theta, es.true_psi(iv_cov(), "U"))
    assert abs(r1) < 1e-12 and abs(r2) < 1e-12


def test_link_residuals_require_instrument_quantities():
    with pytest.raises(InstrumentMissing):
        sm.eq5_residual(es.estimate_theta(reg_cov(with_u=False)), es.SensitivityPoint(0.1, 0.1, g=0, m=0, o=0))
    with pytest.raises(ValueError):
        sm.eq5_residual(es.estimate_theta(iv_cov(with_u=False)), es.SensitivityPoint(0.1, 0.1))
