import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cempc.bounds import (
    DEFAULT_BUDGET,
    alpha_beta,
    budget_companions,
    certify,
    decrease_certificate,
    geometric_sum,
    local_decay_constants,
    log_budget_grid,
    mismatch_propagators,
    one_step_error_coeff,
    optimize_budget,
    performance_bound,
    stability_certificate,
    sufficient_conditions,
    value_gap_constants,
)
from cempc.errors import InvalidBudgetError, InvalidHorizonError, InvalidInputError, MissingGainError
from cempc.system import CostWeights, InputPolytope, LinearSystem, UncertaintySpec, sample_estimate

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def unit_scalar():
    return (
        LinearSystem(np.eye(1), np.eye(1)),
        CostWeights(np.eye(1), np.eye(1)),
        InputPolytope(np.array([[1.0], [-1.0]])),
    )


def test_propagators_horizon_one(bench):
    spec = UncertaintySpec(0.01, 0.02)
    prop = mismatch_propagators(bench.system, spec, 1, 2.0, 1.0, 1.0)
    assert prop.gbar_x == pytest.approx(0.01, rel=1e-12)
    assert prop.gbar_u == pytest.approx(0.02, rel=1e-12)
    assert prop.g_x(0) == 0.0
    with pytest.raises(InvalidHorizonError):
        mismatch_propagators(bench.system, spec, 0, 2.0, 1.0, 1.0)


def test_propagators_vanish_without_mismatch(bench):
    prop = mismatch_propagators(bench.system, UncertaintySpec(0.0, 0.0), 8, 2.0, 3.0, 4.0)
    assert prop.gbar_x == 0.0 and prop.gbar_u == 0.0
    assert prop.theta_u == 0.0 and prop.theta_xu == 0.0


def test_input_difference_saturates_at_large_mismatch(bench, x0):
    small = value_gap_constants(bench.system, UncertaintySpec(1e-4, 1e-4), bench.weights, bench.inputs, 8, x0)
    large = value_gap_constants(bench.system, UncertaintySpec(10.0, 10.0), bench.weights, bench.inputs, 8, x0)
    # the input set diameter caps the sensitivity estimate
    assert large.Delta_du == pytest.approx(math.sqrt(8 * 0.04), rel=1e-12)
    assert small.Delta_du < large.Delta_du


def test_one_step_coefficient(bench):
    assert one_step_error_coeff(UncertaintySpec(1e-2, 1e-2), bench.weights) == pytest.approx(1.5e-4, rel=1e-12)
    assert one_step_error_coeff(UncertaintySpec(0.0, 0.0), bench.weights) == 0.0


def test_scalar_stability_certificate():
    model, W, U = unit_scalar()
    cert = stability_certificate(model, W, U, M_Vhat=0.5)
    assert cert.K[0, 0] == pytest.approx(-(GOLDEN - 1.0), rel=1e-9)
    assert cert.lambda_K == pytest.approx(1.0, rel=1e-12)
    # scalar closed loop: rho is the square of the closed-loop pole
    assert cert.rho_K == pytest.approx((2.0 - GOLDEN) ** 2, rel=1e-9)
    assert cert.gamma == pytest.approx(GOLDEN, rel=1e-9)
    assert cert.gamma > 1.0
    assert 0.0 < cert.rho_gamma < 1.0
    assert cert.N0 == 0
    assert cert.L_Vhat == pytest.approx(cert.gamma)


def test_stability_certificate_validates_M():
    model, W, U = unit_scalar()
    with pytest.raises(InvalidInputError):
        stability_certificate(model, W, U, M_Vhat=-1.0)
    with pytest.raises(InvalidInputError):
        stability_certificate(model, W, U, M_Vhat=math.inf)


def test_zero_gain_clamps_eps_K_with_warning():
    model = LinearSystem(np.array([[0.5]]), np.eye(1))
    _, W, U = unit_scalar()
    with pytest.warns(RuntimeWarning):
        cert = stability_certificate(model, W, U, M_Vhat=1.0, K=np.zeros((1, 1)))
    assert cert.eps_K_clamped
    assert math.isfinite(cert.eps_K)


def test_local_decay_constants_bound_powers(rng):
    for _ in range(20):
        A = rng.standard_normal((3, 3))
        A *= rng.uniform(0.2, 0.9) / max(abs(np.linalg.eigvals(A)))
        lam, rho = local_decay_constants(A)
        Ak = np.eye(3)
        for k in range(25):
            assert np.linalg.norm(Ak, 2) <= lam * rho ** (k / 2) * (1 + 1e-9)
            Ak = A @ Ak


def test_geometric_sum():
    assert geometric_sum(1.0, 7) == 6.0
    assert geometric_sum(0.5, 1) == 0.0
    assert geometric_sum(2.0, 3) == pytest.approx(1.0 + 4.0)


def test_decrease_without_mismatch(bench, x0, v_inf):
    bundle = certify(bench.system, UncertaintySpec(0.0, 0.0), bench.weights, bench.inputs, 8, x0, v_inf)
    dec = bundle.decrease
    assert dec.h == 0.0 and dec.xi_N == 0.0
    assert dec.margin == pytest.approx(1.0 - dec.eta_N)
    assert bundle.value_gap.alpha_N == 0.0 and bundle.value_gap.beta_N == 0.0
    assert bundle.bound.j_bound == pytest.approx(v_inf / (1.0 - dec.eta_N), rel=1e-12)


def test_decrease_requires_positive_horizon(bench):
    cert = stability_certificate(bench.system, bench.weights, bench.inputs, 0.2)
    with pytest.raises(InvalidHorizonError):
        decrease_certificate(cert, bench.system, bench.weights, UncertaintySpec(0.0, 0.0), 0)


def test_extension_mode_needs_gain(bench):
    cert = stability_certificate(bench.system, bench.weights, bench.inputs, 0.2)
    with pytest.raises(MissingGainError):
        decrease_certificate(cert, bench.system, bench.weights, UncertaintySpec(0.0, 0.0), 8, mode="extension")
    with pytest.raises(InvalidInputError):
        decrease_certificate(cert, bench.system, bench.weights, UncertaintySpec(0.0, 0.0), 8, mode="other")


def test_extension_mode_bundle(bench, x0, v_inf):
    spec = UncertaintySpec(1e-3, 1e-3)
    ext = certify(bench.system, spec, bench.weights, bench.inputs, 9, x0, v_inf, mode="extension")
    base = certify(bench.system, spec, bench.weights, bench.inputs, 9, x0, v_inf)
    d = ext.dump()
    assert d["mode"] == "extension"
    assert {"A_cl_hat_norm", "C_star_Khat", "admissibility_checked"} <= set(d)
    np.testing.assert_array_equal(ext.decrease.K_hat, ext.stability.K)
    # both modes share the value gap
    assert ext.value_gap.alpha_N == base.value_gap.alpha_N


def test_threshold_is_root_of_margin(bench, x0, v_inf):
    for N in (8, 9, 10):
        bundle = certify(bench.system, UncertaintySpec(1e-3, 1e-3), bench.weights, bench.inputs, N, x0, v_inf)
        dec, thr = bundle.decrease, bundle.conditions.h_threshold
        assert 0.0 < thr < math.inf
        residual = dec.omega_1 * thr + 2.0 * dec.omega_half * math.sqrt(thr) - (1.0 - dec.eta_N)
        assert abs(residual) <= 1e-10


def test_sufficient_conditions_imply_positive_margin(bench, x0, v_inf):
    for delta in (0.0, 1e-3, 3e-3, 1e-2):
        for N in range(4, 12):
            bundle = certify(bench.system, UncertaintySpec(delta, delta), bench.weights, bench.inputs, N, x0, v_inf)
            cond = bundle.conditions
            if cond.horizon_ok and cond.mismatch_ok:
                assert bundle.decrease.margin > 0.0
            if bundle.decrease.eta_N >= 1.0:
                assert cond.h_threshold == 0.0


def test_unit_spectral_norm_uses_linear_geometric_sum():
    model = LinearSystem(np.array([[1.0]]), np.array([[1.0]]))
    _, W, U = unit_scalar()
    cert = stability_certificate(model, W, U, 0.5)
    dec = decrease_certificate(cert, model, W, UncertaintySpec(0.0, 0.0), 5)
    assert dec.G_N == 4.0


def test_performance_bound_infinite_without_margin(bench, x0, v_inf):
    bundle = certify(bench.system, UncertaintySpec(0.0, 0.0), bench.weights, bench.inputs, 4, x0, v_inf)
    assert bundle.decrease.margin <= 0.0
    assert bundle.bound.j_bound == math.inf
    assert not bundle.bound.stable
    with pytest.raises(InvalidInputError):
        performance_bound(bundle.value_gap, bundle.decrease, -1.0)


def test_budget_companions():
    assert budget_companions((1.0, 2.0, 4.0)) == (1.0, 0.5, 0.25)
    for bad in [(1.0, 1.0), (1.0, 0.0, 1.0), (1.0, -2.0, 1.0), (1.0, math.inf, 1.0), (1.0, math.nan, 1.0)]:
        with pytest.raises(InvalidBudgetError):
            budget_companions(bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(0.0, 1e3))
def test_cross_term_linearisation(p, s):
    # 2 sqrt(s e) <= p s + q e with q = 1/p, here with e = 1
    q = budget_companions((p, 1.0, 1.0))[0]
    assert 2.0 * math.sqrt(s) <= p * s + q + 1e-9 * (p * s + q)


def test_alpha_beta_zero_gap():
    assert alpha_beta(0.0, 0.0, 0.0, DEFAULT_BUDGET) == (0.0, 0.0)


def test_optimize_budget(bench, x0, v_inf):
    spec = UncertaintySpec(1e-3, 1e-3)
    bundle = certify(bench.system, spec, bench.weights, bench.inputs, 9, x0, v_inf)
    p, j = optimize_budget(bundle.value_gap, bundle.decrease, v_inf)
    assert j <= bundle.bound.j_bound
    assert len(p) == 3
    best = certify(bench.system, spec, bench.weights, bench.inputs, 9, x0, v_inf, p_budget="optimize")
    assert best.bound.j_bound == pytest.approx(j, rel=1e-12)
    with pytest.raises(InvalidInputError):
        optimize_budget(bundle.value_gap, bundle.decrease, v_inf, grid=[])


def test_optimize_budget_without_mismatch(bench, x0, v_inf):
    bundle = certify(bench.system, UncertaintySpec(0.0, 0.0), bench.weights, bench.inputs, 9, x0, v_inf)
    p, j = optimize_budget(bundle.value_gap, bundle.decrease, v_inf)
    # every budget gives the same bound, so the first grid point wins
    assert p == log_budget_grid()[0]
    assert j == bundle.bound.j_bound


def test_dump_keys(bench, x0, v_inf):
    d = certify(bench.system, UncertaintySpec(1e-3, 1e-3), bench.weights, bench.inputs, 8, x0, v_inf).dump()
    for key in ("gbar_x", "gbar_u", "theta_u", "theta_xu", "Delta_du", "Delta_psi", "E_psi", "E_u", "E_psi_u",
                "alpha_N", "beta_N", "h", "G_N", "omega_1", "omega_half", "xi_N", "eta_N", "lambda_K", "rho_K",
                "C_star_K", "eps_K", "gamma", "rho_gamma", "N0", "L_Vhat", "M_Vhat", "min_horizon",
                "h_threshold", "j_bound", "stable"):
        assert key in d
    assert d["mode"] == "baseline"
    assert "C_star_Khat" not in d


def test_bounds_use_only_the_estimate(bench, x0, v_inf):
    # the certificate is a function of the estimate; the true plant never enters
    model = sample_estimate(bench.system, UncertaintySpec(2e-3, 2e-3), seed=5)
    a = certify(model, UncertaintySpec(2e-3, 2e-3), bench.weights, bench.inputs, 9, x0, v_inf).dump()
    b = certify(model, UncertaintySpec(2e-3, 2e-3), bench.weights, bench.inputs, 9, x0, v_inf).dump()
    assert a == b


def test_certified_horizons_at_benchmark(bench, x0, v_inf):
    spec = UncertaintySpec(0.0, 0.0)
    cert = certify(bench.system, spec, bench.weights, bench.inputs, 8, x0, v_inf)
    assert cert.stability.N0 == 2
    assert 6.0 < cert.conditions.min_horizon < 7.0
    assert not certify(bench.system, spec, bench.weights, bench.inputs, 6, x0, v_inf).bound.stable
    for N in range(7, 13):
        assert certify(bench.system, spec, bench.weights, bench.inputs, N, x0, v_inf).bound.stable


def test_sufficient_conditions_on_scalar():
    model, W, U = unit_scalar()
    cert = stability_certificate(model, W, U, 0.5)
    dec = decrease_certificate(cert, model, W, UncertaintySpec(0.0, 0.0), 3)
    cond = sufficient_conditions(cert, dec, UncertaintySpec(0.0, 0.0), W, 3)
    assert cond.horizon_ok and cond.mismatch_ok
