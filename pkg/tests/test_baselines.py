import numpy as np
import pytest
from scipy.special import digamma
from scipy.stats import gamma as gamma_dist

from semfx import baselines, effects, fit, model
from semfx.errors import DataError, UnsupportedResponseError

from conftest import bernoulli_dataset, poisson_dataset, trunc_normal_dataset

TIGHT = fit.FitConfig(tol=1e-13, grad_tol_scale=1e-11, max_iter=300)


def gamma_dataset(seed=0, n=500, beta=(0.5, 1.0), alpha=5.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 1.0, size=(n, len(beta)))
    scale = 1.0 / (alpha * (x @ np.asarray(beta)))
    y = gamma_dist.ppf(rng.uniform(size=n), alpha, scale=scale)
    support = fit.infer_continuous_support(y)
    return fit.make_dataset(x, y, support)


def test_normal_fit_is_rescaled_ols():
    data = trunc_normal_dataset(seed=40, n=300)
    pfit = baselines.fit_parametric(data, "normal")
    design = np.column_stack([np.ones(data.n), data.x])
    coef, *_ = np.linalg.lstsq(design, data.y, rcond=None)
    resid = data.y - design @ coef
    sigma2 = resid @ resid / data.n
    np.testing.assert_allclose(pfit.beta, coef[1:] / sigma2, rtol=1e-10)
    assert pfit.dispersion["sigma"] == pytest.approx(np.sqrt(sigma2))


def test_normal_effects_equal_ols_slopes_for_all_tau():
    data = trunc_normal_dataset(seed=41, n=300)
    pfit = baselines.fit_parametric(data, "normal")
    rows = baselines.parametric_effects(pfit, data, tau_list=(0.1, 0.5, 0.9))
    xi = rows[0].point
    design = np.column_stack([np.ones(data.n), data.x])
    coef, *_ = np.linalg.lstsq(design, data.y, rcond=None)
    np.testing.assert_allclose(xi, coef[1:], rtol=1e-10)
    for row in rows[1:]:
        np.testing.assert_allclose(row.point, xi, rtol=1e-12)
        np.testing.assert_allclose(row.se, rows[0].se, rtol=1e-12)


def test_bernoulli_matches_tilt_fit():
    data = bernoulli_dataset(seed=42, n=600)
    pfit = baselines.fit_parametric(data, "bernoulli")
    tilt = fit.fit_mle(data, config=TIGHT)
    np.testing.assert_allclose(pfit.beta, tilt.beta, atol=1e-7)
    xi_par = baselines.parametric_effects(pfit, data)[0].point
    xi_tilt = effects.marginal_effect(tilt, data)
    np.testing.assert_allclose(xi_par, xi_tilt, atol=1e-7)


def test_family_scores_vanish_at_optimum():
    data = gamma_dataset(seed=43)
    pfit = baselines.fit_parametric(data, "gamma")
    x = data.x_raw
    beta_raw = pfit.params[:data.p]
    alpha = pfit.params[data.p]
    lin = x @ beta_raw
    score_beta = alpha * x.T @ (1.0 / lin - data.y)
    score_alpha = np.sum(np.log(data.y) - data.y * lin + np.log(lin)
                         + np.log(alpha) + 1.0 - digamma(alpha))
    assert np.max(np.abs(score_beta)) < 1e-8 * data.n
    assert abs(score_alpha) < 1e-8 * data.n

    pdata = poisson_dataset(seed=44)
    ppois = baselines.fit_parametric(pdata, "poisson")
    xr = pdata.x_raw
    score = xr.T @ (pdata.y - np.exp(xr @ ppois.params))
    assert np.max(np.abs(score)) < 1e-8 * pdata.n


def test_poisson_marginal_effect_matches_mean_function_derivative():
    data = poisson_dataset(seed=45)
    pfit = baselines.fit_parametric(data, "poisson")
    xi = baselines.parametric_effects(pfit, data)[0].point
    x = data.x_raw
    h = 1e-6
    for k in range(data.p):
        shift = np.zeros(data.p)
        shift[k] = h
        fd = np.mean(np.exp((x + shift) @ pfit.params)
                     - np.exp((x - shift) @ pfit.params)) / (2 * h)
        assert xi[k] == pytest.approx(fd, rel=1e-6)


def test_gamma_effects_match_tilt_embedding():
    # embed the gamma family in the tilt model with its exact carrier and
    # compare conditional variance / quantile slope on a wide support
    alpha, theta_lin = 5.0, 1.2  # natural parameter is -alpha*theta_lin
    support = model.ContinuousSupport(0.0, 40.0, 801)
    carrier = lambda y: (alpha - 1.0) * np.log(np.maximum(y, 1e-300))
    deriv = lambda y: (alpha - 1.0) / y
    tilt = model.ContinuousModel.from_carrier(carrier, support, deriv,
                                              n_nodes=801)
    eta = np.array([-alpha * theta_lin])
    p_mat, logz = tilt.masses(eta)
    ey, ey2 = tilt.power_moments(p_mat, 2)
    scale = 1.0 / (alpha * theta_lin)
    assert ey[0] == pytest.approx(alpha * scale, rel=1e-10)
    assert (ey2 - ey**2)[0] == pytest.approx(alpha * scale**2, rel=1e-8)
    for tau in (0.25, 0.75):
        q, _, qprime, _ = tilt.quantile_local(eta, tau, p_mat, logz)
        assert q[0] == pytest.approx(gamma_dist.ppf(tau, alpha, scale=scale),
                                     rel=1e-9)
        assert qprime[0] == pytest.approx(
            gamma_dist.ppf(tau, alpha) * scale**2, rel=1e-7)


def test_normal_variance_matches_tilt_embedding():
    sigma = 1.3
    support = model.ContinuousSupport(-14.0, 14.0, 801)
    carrier = lambda y: -(y**2) / (2 * sigma**2)
    tilt = model.ContinuousModel.from_carrier(carrier, support,
                                              lambda y: -y / sigma**2,
                                              n_nodes=801)
    eta = np.array([0.7])  # mean is sigma^2 * eta
    p_mat, _ = tilt.masses(eta)
    ey, ey2 = tilt.power_moments(p_mat, 2)
    assert ey[0] == pytest.approx(sigma**2 * 0.7, abs=1e-10)
    assert (ey2 - ey**2)[0] == pytest.approx(sigma**2, rel=1e-10)


def test_generator_scale_beta_matches_native_parameterizations():
    data = gamma_dataset(seed=46)
    pfit = baselines.fit_parametric(data, "gamma")
    est, se = baselines.generator_scale_beta(pfit)
    np.testing.assert_allclose(est, pfit.params[:data.p])
    np.testing.assert_allclose(pfit.beta,
                               -pfit.dispersion["alpha"] * est, rtol=1e-12)
    assert np.all(se > 0)


def test_family_domain_errors():
    data = trunc_normal_dataset(seed=47, n=100)  # has negative responses
    with pytest.raises(DataError):
        baselines.fit_parametric(data, "gamma")
    with pytest.raises(DataError):
        baselines.fit_parametric(data, "bernoulli")
    with pytest.raises(DataError):
        baselines.fit_parametric(data, "poisson")


def test_quantile_effects_unsupported_for_counts():
    data = poisson_dataset(seed=48)
    pfit = baselines.fit_parametric(data, "poisson")
    with pytest.raises(UnsupportedResponseError):
        baselines.parametric_effects(pfit, data, tau_list=(0.5,))
