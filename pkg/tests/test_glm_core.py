import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compordinal.errors import InvalidInputError, NumericalError, SingularCurvatureError
from compordinal.glm_core import (
    LinkFunction,
    ModelFit,
    PriorSpec,
    covariance_factor,
    expand_priors,
    fit_map,
    link_inverse,
    sample_posterior,
)

from oracles import grid_search_map, log_posterior

finite_x = st.floats(min_value=-30, max_value=30, allow_nan=False)


# ---------------------------------------------------------------- links

def test_link_inverse_reference_values():
    assert link_inverse(LinkFunction.logit(), 0.0) == 0.5
    assert link_inverse(LinkFunction.burr(1.0), 0.0) == pytest.approx(0.5, abs=1e-15)
    assert link_inverse(LinkFunction.burr(0.5), 0.0) == pytest.approx(1 - 2 ** -0.5, abs=1e-12)
    assert 1 - 2 ** -0.5 == pytest.approx(0.292893, abs=1e-6)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_link_inverse_rejects_non_finite(bad):
    with pytest.raises(InvalidInputError):
        link_inverse(LinkFunction.logit(), bad)


def test_burr_shape_must_be_positive():
    with pytest.raises(InvalidInputError):
        LinkFunction.burr(0.0)


@given(finite_x)
def test_logit_symmetry(x):
    f = LinkFunction.logit()
    assert link_inverse(f, x) + link_inverse(f, -x) == pytest.approx(1.0, abs=1e-12)


@given(finite_x)
def test_burr_with_unit_shape_is_logistic(x):
    assert LinkFunction.burr(1.0).inverse(x) == pytest.approx(
        LinkFunction.logit().inverse(x), abs=1e-15)


@given(st.floats(0.1, 5.0), finite_x, st.floats(1e-3, 5.0))
def test_inverse_link_in_unit_interval_and_increasing(c, x, h):
    f = LinkFunction.burr(c)
    lo, hi = float(f.inverse(x)), float(f.inverse(x + h))
    assert 0.0 <= lo <= hi <= 1.0
    if -5 < x and x + h < 5:  # away from double-precision saturation
        assert 0.0 < lo < hi < 1.0


def test_burr_log_terms_match_finite_differences():
    f = LinkFunction.burr(0.5)
    eta = np.linspace(-6, 6, 13)
    log_f, log_s, d_f, d2_f, d_s, d2_s = f.log_terms(eta)
    h = 1e-5
    for val, deriv, fn in ((log_f, d_f, lambda e: np.log(f.inverse(e))),
                           (log_s, d_s, lambda e: np.log1p(-f.inverse(e)))):
        np.testing.assert_allclose(val, fn(eta), rtol=1e-10)
        np.testing.assert_allclose(deriv, (fn(eta + h) - fn(eta - h)) / (2 * h), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(d2_f, (f.log_terms(eta + h)[2] - f.log_terms(eta - h)[2]) / (2 * h),
                               rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(d2_s, (f.log_terms(eta + h)[4] - f.log_terms(eta - h)[4]) / (2 * h),
                               rtol=1e-5, atol=1e-9)


# ---------------------------------------------------------------- priors

def test_prior_defaults_and_validation():
    assert PriorSpec.cauchy().scale == 2.5
    assert PriorSpec.ridge().scale == 3.0
    assert PriorSpec.lasso().scale == 3.0
    with pytest.raises(InvalidInputError):
        PriorSpec.ridge(scale=0.0)
    with pytest.raises(InvalidInputError):
        PriorSpec.ridge(shrinkage_lambda=-1.0)


def test_intercept_prior_rules():
    cauchy = expand_priors(PriorSpec.cauchy(), 2, True)
    assert [p.kind.value for p in cauchy] == ["cauchy"] * 3
    ridge = expand_priors(PriorSpec.ridge(), 2, True)
    assert [p.kind.value for p in ridge] == ["flat", "ridge", "ridge"]
    with pytest.raises(InvalidInputError):
        expand_priors([PriorSpec.flat()], 2, True)


# ---------------------------------------------------------------- fit_map

def _logistic_data(n, beta, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, len(beta) - 1))
    eta = beta[0] + x @ np.asarray(beta[1:])
    y = (r.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return x, y


def test_intercept_only_balanced_response():
    y = np.r_[np.ones(50), np.zeros(50)]
    fit = fit_map(np.empty((100, 0)), y, PriorSpec.flat())
    assert abs(fit.coefficients[0]) < 1e-8
    assert fit.converged


def test_separation_flat_raises_cauchy_matches_grid():
    x = np.linspace(-2, 2, 40)
    y = (x > 0).astype(float)
    with pytest.raises(SingularCurvatureError, match="proper prior"):
        fit_map(x, y, PriorSpec.flat())
    fit = fit_map(x, y, PriorSpec.cauchy())
    assert np.all(np.isfinite(fit.coefficients))
    X1 = np.column_stack([np.ones_like(x), x])
    oracle = grid_search_map(X1, y, cauchy_scale=2.5, half_width=20.0)
    np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-4)


def test_known_coefficients_recovered():
    x, y = _logistic_data(500, (-0.5, 1.0), seed=3)
    fit = fit_map(x, y, PriorSpec.flat())
    z = (fit.coefficients - np.array([-0.5, 1.0])) / fit.standard_errors
    assert np.all(np.abs(z) < 3)
    X1 = np.column_stack([np.ones(500), x])
    np.testing.assert_allclose(fit.coefficients, grid_search_map(X1, y), atol=1e-4)


def test_matches_statsmodels_logit():
    sm = pytest.importorskip("statsmodels.api")
    x, y = _logistic_data(300, (0.3, -0.7, 0.4), seed=11)
    fit = fit_map(x, y, PriorSpec.flat())
    ref = sm.Logit(y, sm.add_constant(x)).fit(disp=0)
    np.testing.assert_allclose(fit.coefficients, ref.params, atol=1e-7)
    np.testing.assert_allclose(fit.standard_errors, ref.bse, rtol=1e-6)


@pytest.mark.parametrize("prior", [PriorSpec.flat(), PriorSpec.cauchy(), PriorSpec.ridge(2.0)])
def test_gradient_zero_and_hessian_matches_finite_differences(prior):
    x, y = _logistic_data(200, (0.2, 0.8, -0.5), seed=5)
    fit = fit_map(x, y, prior)
    assert fit.gradient_norm <= 1e-8
    X1 = np.column_stack([np.ones(200), x])
    scale = 2.5 if prior.kind.value == "cauchy" else None

    def logpost(b):
        v = float(log_posterior(b, X1, y, scale)[0])
        if prior.kind.value == "ridge":
            v -= 0.5 * float(np.sum(b[1:] ** 2)) / 4.0
        return v

    b0 = fit.coefficients
    h = 1e-4
    p = b0.size
    grad = np.array([(logpost(b0 + h * e) - logpost(b0 - h * e)) / (2 * h) for e in np.eye(p)])
    assert np.max(np.abs(grad)) < 1e-5
    hess = np.empty((p, p))
    for i, ei in enumerate(np.eye(p)):
        for j, ej in enumerate(np.eye(p)):
            hess[i, j] = (logpost(b0 + h * ei + h * ej) - logpost(b0 + h * ei - h * ej)
                          - logpost(b0 - h * ei + h * ej) + logpost(b0 - h * ei - h * ej)) / (4 * h * h)
    np.testing.assert_allclose(np.linalg.inv(fit.covariance), -hess, rtol=1e-4)


def test_wide_ridge_approaches_flat():
    x, y = _logistic_data(400, (0.1, 0.5, 0.5), seed=8)
    flat = fit_map(x, y, PriorSpec.flat())
    wide = fit_map(x, y, PriorSpec.ridge(scale=1e6))
    np.testing.assert_allclose(wide.coefficients, flat.coefficients, atol=1e-4)


def test_lasso_and_ridge_shrink_slopes():
    x, y = _logistic_data(150, (0.0, 1.0, -1.0), seed=9)
    flat = fit_map(x, y, PriorSpec.flat())
    for prior in (PriorSpec.ridge(1.0, 50.0), PriorSpec.lasso(1.0, 50.0)):
        fit = fit_map(x, y, prior)
        assert np.all(np.abs(fit.coefficients[1:]) < np.abs(flat.coefficients[1:]))


def test_burr_link_recovers_generator():
    r = np.random.default_rng(21)
    x = r.standard_normal(6000)
    f = LinkFunction.burr(0.5)
    y = (r.random(x.size) < f.inverse(0.4 + 0.9 * x)).astype(float)
    fit = fit_map(x, y, PriorSpec.flat(), f)
    z = (fit.coefficients - np.array([0.4, 0.9])) / fit.standard_errors
    assert np.all(np.abs(z) < 4)


def test_rank_deficient_flat_raises():
    x = np.random.default_rng(0).standard_normal(50)
    y = (x > 0.3).astype(float)
    y[:5] = 1 - y[:5]
    with pytest.raises(SingularCurvatureError):
        fit_map(np.column_stack([x, 2 * x]), y, PriorSpec.flat())


def test_input_validation():
    with pytest.raises(InvalidInputError):
        fit_map(np.array([[np.nan], [1.0]]), np.array([0, 1]))
    with pytest.raises(InvalidInputError):
        fit_map(np.ones((3, 1)), np.array([0, 2, 1]))
    with pytest.raises(InvalidInputError):
        fit_map(np.ones((3, 1)), np.array([0, 1]))


def test_iteration_cap_reports_not_converged():
    x, y = _logistic_data(200, (0.5, 2.0), seed=4)
    fit = fit_map(x, y, PriorSpec.flat(), max_iter=1)
    assert not fit.converged
    assert fit.iterations == 1


def test_covariance_symmetric_psd():
    x, y = _logistic_data(200, (0.5, 1.0, 0.0), seed=13)
    fit = fit_map(x, y, PriorSpec.cauchy())
    np.testing.assert_array_equal(fit.covariance, fit.covariance.T)
    assert np.linalg.eigvalsh(fit.covariance).min() >= -1e-8
    assert fit.covariance.shape == (fit.n_coefficients,) * 2


# ---------------------------------------------------------------- posterior draws

def test_zero_covariance_draws_equal_mode():
    fit = ModelFit(np.array([0.1, -0.2]), np.zeros((2, 2)))
    draws = sample_posterior(fit, 10, 1)
    assert np.all(draws == fit.coefficients)


def test_draw_moments():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    fit = ModelFit(np.array([0.5, -1.0]), cov)
    n = 100_000
    draws = sample_posterior(fit, n, 2024)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(draws.mean(axis=0) - fit.coefficients) < 4 * sd / math.sqrt(n))
    emp = np.cov(draws, rowvar=False)
    np.testing.assert_allclose(emp, cov, rtol=0.05)


def test_draws_bit_identical_for_seed():
    fit = ModelFit(np.zeros(3), np.eye(3))
    a = sample_posterior(fit, 50, 99)
    b = sample_posterior(fit, 50, 99)
    assert a.tobytes() == b.tobytes()


def test_draw_errors():
    bad = ModelFit(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NumericalError):
        sample_posterior(bad, 5, 0)
    with pytest.raises(NumericalError):
        covariance_factor(bad.covariance)
    unconverged = ModelFit(np.zeros(2), np.eye(2), converged=False)
    with pytest.raises(NumericalError):
        sample_posterior(unconverged, 5, 0)
    assert sample_posterior(unconverged, 5, 0, allow_unconverged=True).shape == (5, 2)
    with pytest.raises(InvalidInputError):
        sample_posterior(ModelFit(np.zeros(2), np.eye(2)), 0, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_covariance_factor_reconstructs(seed):
    a = np.random.default_rng(seed).standard_normal((4, 3))
    cov = a @ a.T  # rank-deficient PSD
    L = covariance_factor(cov)
    np.testing.assert_allclose(L @ L.T, cov, atol=1e-10)
