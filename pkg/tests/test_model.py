import numpy as np
import pytest
from scipy.integrate import quad

from semfx import model
from semfx.errors import ConfigError, OutOfDomainError, UnsupportedResponseError

from conftest import random_basis


def test_log_normalizer_uniform_baseline(cubic_bernstein):
    sup = model.ContinuousSupport(0.0, 1.0)
    val = model.log_normalizer([0.0], [0.0], np.zeros(4), cubic_bernstein, sup)
    assert val == pytest.approx(0.0, abs=1e-13)


def test_log_normalizer_discrete_two_levels():
    sup = model.DiscreteSupport(1)
    val = model.log_normalizer([0.0], [0.0], np.zeros(2), None, sup)
    assert val == pytest.approx(np.log(2.0), abs=1e-14)


def test_log_normalizer_bernoulli_tilt():
    sup = model.DiscreteSupport(1)
    val = model.log_normalizer([1.0], [1.2], np.zeros(2), None, sup)
    assert val == pytest.approx(np.log(1.0 + np.exp(1.2)), abs=1e-12)


def test_uniform_moments(cubic_bernstein):
    sup = model.ContinuousSupport(0.0, 1.0)
    state = model.conditional_moments([0.0], [0.0], np.zeros(4),
                                      cubic_bernstein, sup)
    assert state.ey == pytest.approx(0.5, abs=1e-12)
    assert state.var == pytest.approx(1.0 / 12.0, abs=1e-10)
    assert state.ey3 == pytest.approx(0.25, abs=1e-10)
    assert state.ey4 == pytest.approx(0.2, abs=1e-10)


def test_bernoulli_variance():
    basis = model.IndicatorBasis(np.array([0, 1]))
    gamma = np.array([0.0, 0.7])
    state = model.conditional_moments([1.0], [0.4], gamma, basis,
                                      model.DiscreteSupport(1))
    prob = 1.0 / (1.0 + np.exp(-(0.4 + 0.7)))
    assert state.var == pytest.approx(prob * (1.0 - prob), abs=1e-14)


def test_discrete_logistic_probability_exact():
    basis = model.IndicatorBasis(np.array([0, 1]))
    tilt = model.DiscreteModel(basis, np.array([0.0, -0.3]))
    eta = np.array([-1.0, 0.0, 2.5])
    pr = tilt.pr(eta)
    np.testing.assert_allclose(pr[:, 1], 1.0 / (1.0 + np.exp(-(eta - 0.3))),
                               atol=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_density_normalizes_against_independent_quadrature(seed):
    rng = np.random.default_rng(seed)
    basis = random_basis(seed=seed, lo=-1.0, hi=2.0, n_interior=3)
    gamma = basis.full_coef(rng.uniform(-3, 3, basis.m - 1))
    eta = rng.uniform(-3, 3)
    sup = model.ContinuousSupport(-1.0, 2.0)
    tilt = model.ContinuousModel.from_basis(basis, gamma, sup)
    logz = float(tilt.log_normalizer([eta])[0])

    def dens(y):
        return np.exp(y * eta + float(basis.design_matrix(y)[0] @ gamma) - logz)

    total, _ = quad(dens, -1.0, 2.0, limit=200,
                    points=list(basis.knots.interior), epsabs=1e-12)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_grid_convergence_on_node_doubling():
    rng = np.random.default_rng(11)
    basis = random_basis(seed=11, lo=0.0, hi=1.0, n_interior=3)
    gamma = basis.full_coef(rng.uniform(-2, 2, basis.m - 1))
    eta = np.array([-2.0, 0.3, 1.7])
    base = model.ContinuousModel.from_basis(basis, gamma,
                                            model.ContinuousSupport(0, 1, 201))
    fine = model.ContinuousModel.from_basis(basis, gamma,
                                            model.ContinuousSupport(0, 1, 402))
    diff = np.abs(base.log_normalizer(eta) - fine.log_normalizer(eta))
    assert np.max(diff) < 1e-9


def test_quadrature_grid_invariants():
    grid = model.panel_gauss_grid([0.0, 0.4, 1.3], 100)
    assert np.all(np.diff(grid.nodes) > 0)
    assert grid.weights.sum() == pytest.approx(1.3, abs=1e-12)
    assert np.all(grid.weights > 0)


def test_uniform_quantile_and_derivatives(cubic_bernstein):
    sup = model.ContinuousSupport(0.0, 1.0)
    loc = model.conditional_quantile([0.0], [0.0], np.zeros(4), 0.3,
                                     cubic_bernstein, sup)
    assert loc.q == pytest.approx(0.3, abs=1e-10)
    assert loc.dens_at_q == pytest.approx(1.0, abs=1e-10)
    # closed forms for the uniform tilt family at eta = 0
    assert loc.qprime == pytest.approx(0.105, abs=1e-9)
    assert loc.qdprime == pytest.approx(0.3 / 3 - 0.3**2 + 2 * 0.3**3 / 3, abs=1e-8)
    mid = model.conditional_quantile([0.0], [0.0], np.zeros(4), 0.5,
                                     cubic_bernstein, sup)
    assert mid.q == pytest.approx(0.5, abs=1e-10)


def test_quantile_solves_defining_equation_and_monotone():
    rng = np.random.default_rng(2)
    basis = random_basis(seed=2, lo=-1.0, hi=1.5, n_interior=3)
    gamma = basis.full_coef(rng.uniform(-1.5, 1.5, basis.m - 1))
    tilt = model.ContinuousModel.from_basis(basis, gamma,
                                            model.ContinuousSupport(-1.0, 1.5))
    eta = rng.uniform(-4, 4, 40)
    prev = None
    for tau in (0.05, 0.25, 0.5, 0.75, 0.95):
        q = tilt.quantile(eta, tau)
        cdf = tilt.cdf(eta, q)
        assert np.max(np.abs(cdf - tau)) < 1e-10
        if prev is not None:
            assert np.all(q > prev)
        prev = q


@pytest.mark.parametrize("tau", [0.2, 0.5, 0.8])
def test_qprime_matches_finite_difference(tau):
    rng = np.random.default_rng(5)
    basis = random_basis(seed=5, lo=0.0, hi=2.0, n_interior=3)
    gamma = basis.full_coef(rng.uniform(-1, 1, basis.m - 1))
    tilt = model.ContinuousModel.from_basis(basis, gamma,
                                            model.ContinuousSupport(0.0, 2.0))
    eta = rng.uniform(-2, 2, 20)
    _, _, qprime, _ = tilt.quantile_local(eta, tau)
    h = 1e-4
    fd = (tilt.quantile(eta + h, tau) - tilt.quantile(eta - h, tau)) / (2 * h)
    assert np.max(np.abs(qprime - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-5


def test_qdprime_matches_second_finite_difference():
    rng = np.random.default_rng(9)
    basis = random_basis(seed=9, lo=0.0, hi=2.0, n_interior=2)
    gamma = basis.full_coef(rng.uniform(-1, 1, basis.m - 1))
    tilt = model.ContinuousModel.from_basis(basis, gamma,
                                            model.ContinuousSupport(0.0, 2.0))
    eta = rng.uniform(-1.5, 1.5, 20)
    tau = 0.4
    _, _, _, qdprime = tilt.quantile_local(eta, tau)
    h = 1e-3
    fd2 = (tilt.quantile(eta + h, tau) - 2 * tilt.quantile(eta, tau)
           + tilt.quantile(eta - h, tau)) / h**2
    assert np.max(np.abs(qdprime - fd2) / np.maximum(np.abs(fd2), 1e-2)) < 1e-4


def test_partial_expectations_match_full_at_upper_edge():
    rng = np.random.default_rng(3)
    basis = random_basis(seed=3, lo=0.0, hi=1.0, n_interior=3)
    gamma = basis.full_coef(rng.uniform(-1, 1, basis.m - 1))
    tilt = model.ContinuousModel.from_basis(basis, gamma,
                                            model.ContinuousSupport(0.0, 1.0))
    eta = rng.uniform(-2, 2, 10)
    p_mat, logz = tilt.masses(eta)
    parts = tilt.partial_expectations(eta, np.full(10, 1.0), p_mat, logz,
                                      with_basis=True)
    ey, ey2 = tilt.power_moments(p_mat, 2)
    np.testing.assert_allclose(parts[0], 1.0, atol=1e-12)
    np.testing.assert_allclose(parts[1], ey, atol=1e-12)
    np.testing.assert_allclose(parts[2], ey2, atol=1e-12)
    np.testing.assert_allclose(parts["b"], tilt.mean_basis(p_mat), atol=1e-12)


def test_quantile_rejects_discrete_and_bad_tau(cubic_bernstein):
    with pytest.raises(UnsupportedResponseError):
        model.conditional_quantile([0.0], [0.0], np.zeros(2), 0.5, None,
                                   model.DiscreteSupport(1))
    sup = model.ContinuousSupport(0.0, 1.0)
    with pytest.raises(ConfigError):
        model.conditional_quantile([0.0], [0.0], np.zeros(4), 1.5,
                                   cubic_bernstein, sup)


def test_cdf_rejects_out_of_support(cubic_bernstein):
    tilt = model.ContinuousModel.from_basis(cubic_bernstein, np.zeros(4),
                                            model.ContinuousSupport(0.0, 1.0))
    with pytest.raises(OutOfDomainError):
        tilt.cdf(np.array([0.0]), np.array([1.2]))


def test_indicator_basis_rejects_unknown_level():
    basis = model.IndicatorBasis(np.array([0, 1, 3]))
    with pytest.raises(OutOfDomainError):
        basis.design_matrix(np.array([2.0]))


def test_non_finite_inputs_rejected(cubic_bernstein):
    tilt = model.ContinuousModel.from_basis(cubic_bernstein, np.zeros(4),
                                            model.ContinuousSupport(0.0, 1.0))
    from semfx.errors import NumericError
    with pytest.raises(NumericError):
        tilt.masses(np.array([0.0, np.inf]))
