"""Joint maximization of the tilt log-likelihood in (beta, gamma).

The objective

    l(beta, gamma) = sum_i [ y_i beta'x_i + B(y_i)'gamma - log Z(x_i) ]

is concave, so a damped Newton iteration from the origin with Armijo
backtracking reaches the unique optimizer.  The anchored spline coefficient is
dropped from the free parameter vector, which keeps the Newton system strictly
definite.  Covariates are centered internally; slopes are unaffected because
the carrier absorbs the induced linear tilt.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    CollapseError,
    ConfigError,
    DataError,
    DivergenceError,
    NonConvergenceError,
    NumericError,
    SingularHessianError,
)
from .model import (
    ContinuousModel,
    ContinuousSupport,
    DiscreteModel,
    DiscreteSupport,
    GridTilt,
    IndicatorBasis,
    panel_gauss_grid,
)
from .spline import SplineBasis, build_knots

__all__ = [
    "FitConfig",
    "Dataset",
    "FittedModel",
    "make_dataset",
    "infer_continuous_support",
    "loglik_grad_hess",
    "fit_mle",
    "fit_discrete",
]


@dataclass
class FitConfig:
    """Newton controls; tol is the relative log-likelihood change threshold."""

    tol: float = 1e-6
    max_iter: int = 200
    grad_tol_scale: float = 1e-6  # sup-norm threshold is grad_tol_scale * n
    max_abs_beta: float = 1e4
    armijo_c: float = 1e-4

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError("tolerance must be positive")


@dataclass(frozen=True)
class Dataset:
    """Centered design matrix plus response and support descriptor."""

    x: np.ndarray          # (n, p), centered
    y: np.ndarray          # (n,)
    support: ContinuousSupport | DiscreteSupport
    x_means: np.ndarray    # (p,), original column means

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def x_raw(self) -> np.ndarray:
        """Covariates on the original (uncentered) scale."""
        return self.x + self.x_means


def infer_continuous_support(y, pad: float = 0.05,
                             quad_nodes: int | None = None) -> ContinuousSupport:
    """Observed range padded by ``pad`` of the range on each side."""
    y = np.asarray(y, dtype=float)
    lo, hi = float(np.min(y)), float(np.max(y))
    width = hi - lo
    if width <= 0:
        raise DataError("response has zero range; cannot infer a support")
    kwargs = {} if quad_nodes is None else {"quad_nodes": quad_nodes}
    return ContinuousSupport(lo - pad * width, hi + pad * width, **kwargs)


def make_dataset(x, y, support) -> Dataset:
    """Validate raw arrays, center the covariates, and bundle them."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] != y.size:
        raise DataError("covariate and response lengths differ")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise DataError("non-finite entries in the data")
    if isinstance(support, ContinuousSupport):
        if np.min(y) < support.lo or np.max(y) > support.hi:
            raise DataError("responses outside the declared support")
    elif isinstance(support, DiscreteSupport):
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("discrete responses must be nonnegative integers")
        if np.max(y) > support.m_levels:
            raise DataError("response level exceeds m_levels")
    else:
        raise ConfigError("unknown support descriptor")
    means = x.mean(axis=0)
    return Dataset(x=x - means, y=y, support=support, x_means=means)


@dataclass
class FittedModel:
    """Converged tilt fit; gamma carries the anchored zero coefficient."""

    beta: np.ndarray
    gamma: np.ndarray
    loglik: float
    basis: SplineBasis | IndicatorBasis
    support: ContinuousSupport | DiscreteSupport
    iterations: int
    grad_norm: float
    n_obs: int

    @property
    def anchor(self) -> int:
        return self.basis.anchor

    @property
    def gamma_free(self) -> np.ndarray:
        return np.delete(self.gamma, self.anchor)

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.support, DiscreteSupport)

    @property
    def df(self) -> int:
        """Free parameter count p + m - 1."""
        return self.beta.size + self.basis.m - 1

    @cached_property
    def model(self):
        if self.is_discrete:
            return DiscreteModel(self.basis, self.gamma)
        return ContinuousModel.from_basis(self.basis, self.gamma, self.support)


class _Workspace:
    """Fixed grid / design matrices reused across Newton iterations."""

    def __init__(self, data: Dataset, basis):
        self.x = data.x
        self.y = data.y
        self.basis = basis
        if isinstance(data.support, DiscreteSupport):
            self.nodes = basis.levels.astype(float)
            self.logw = np.zeros(basis.m)
            self.bq = np.delete(np.eye(basis.m), basis.anchor, axis=1)
        else:
            grid = panel_gauss_grid(basis.knots.panel_edges, data.support.quad_nodes)
            self.nodes = grid.nodes
            self.logw = np.log(grid.weights)
            self.bq = basis.design_matrix(self.nodes, drop_anchor=True)
        self.by = basis.design_matrix(data.y, drop_anchor=True)
        self.sum_by = self.by.sum(axis=0)

    def core(self, gamma_free) -> GridTilt:
        cq = self.bq @ gamma_free if gamma_free.size else np.zeros_like(self.nodes)
        return GridTilt(self.nodes, self.logw, cq, self.bq)

    def value_grad_hess(self, beta, gamma_free):
        eta = self.x @ beta
        core = self.core(gamma_free)
        p_mat, logz = core.masses(eta)
        value = float(self.y @ eta + self.sum_by @ gamma_free - logz.sum())
        ey, ey2 = core.power_moments(p_mat, 2)
        mean_b = core.mean_basis(p_mat)
        grad = np.concatenate([
            self.x.T @ (self.y - ey),
            self.sum_by - mean_b.sum(axis=0),
        ])
        var_y = np.maximum(ey2 - ey**2, 0.0)
        cov_yb = core.cov_y_basis(p_mat, ey, mean_b)
        h_bb = -(self.x * var_y[:, None]).T @ self.x
        h_bg = -self.x.T @ cov_yb
        h_gg = -core.sum_var_basis(p_mat, mean_b)
        hess = np.block([[h_bb, h_bg], [h_bg.T, h_gg]])
        if not (np.isfinite(value) and np.all(np.isfinite(grad))
                and np.all(np.isfinite(hess))):
            bad = np.flatnonzero(~np.isfinite(ey))
            raise NumericError("non-finite likelihood term",
                               index=int(bad[0]) if bad.size else None)
        return value, grad, hess


def loglik_grad_hess(data: Dataset, basis, beta, gamma_free):
    """Log-likelihood value, gradient, and Hessian in the free parameters.

    The gradient stacks x_i(y_i - E*(Y|x_i)) over the beta block and
    B(y_i) - E*{B(Y)|x_i} (anchor dropped) over the gamma block; the Hessian
    is minus the summed conditional covariance of (x_i Y, B(Y)), hence
    negative semidefinite.
    """
    beta = np.asarray(beta, dtype=float)
    gamma_free = np.asarray(gamma_free, dtype=float)
    ws = _Workspace(data, basis)
    return ws.value_grad_hess(beta, gamma_free)


def _solve_newton(hess, grad):
    neg_h = -hess
    try:
        factor = scipy.linalg.cho_factor(neg_h, check_finite=False)
        return scipy.linalg.cho_solve(factor, grad, check_finite=False)
    except scipy.linalg.LinAlgError:
        ridge = 1e-8 * max(1.0, float(np.max(np.diag(neg_h))))
        try:
            factor = scipy.linalg.cho_factor(
                neg_h + ridge * np.eye(neg_h.shape[0]), check_finite=False)
            return scipy.linalg.cho_solve(factor, grad, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise SingularHessianError(
                "Newton system singular even after ridge retry") from exc


def _newton(ws: _Workspace, p: int, m_free: int, config: FitConfig, start=None):
    n = ws.y.size
    grad_tol = config.grad_tol_scale * n
    if start is None:
        phi = np.zeros(p + m_free)
    else:
        beta0, gamma0 = start
        phi = np.concatenate([np.asarray(beta0, dtype=float).ravel(),
                              np.asarray(gamma0, dtype=float).ravel()])
        if phi.size != p + m_free:
            raise ConfigError("start point has the wrong dimension")
    value, grad, hess = ws.value_grad_hess(phi[:p], phi[p:])
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        direction = _solve_newton(hess, grad)
        slope = float(grad @ direction)
        if slope <= 0:
            # at (or numerically past) the optimum
            break
        step, accepted = 1.0, False
        new_value = value
        for _ in range(60):
            candidate = phi + step * direction
            cand_value, cand_grad, cand_hess = ws.value_grad_hess(
                candidate[:p], candidate[p:])
            if cand_value >= value + config.armijo_c * step * slope:
                accepted = True
                new_value = cand_value
                break
            step *= 0.5
        if not accepted:
            if np.max(np.abs(grad)) <= grad_tol:
                break
            raise NonConvergenceError(
                "line search failed to improve the log-likelihood",
                beta=phi[:p], gamma=phi[p:], loglik=value,
                grad_norm=float(np.max(np.abs(grad))))
        phi = candidate
        if np.max(np.abs(phi[:p])) > config.max_abs_beta:
            raise DivergenceError(
                "coefficients exceeded the divergence bound; the likelihood "
                "appears monotone (e.g. separated binary data)")
        rel_change = abs(new_value - value) / (abs(new_value) + 1.0)
        value, grad, hess = new_value, cand_grad, cand_hess
        if rel_change < config.tol and np.max(np.abs(grad)) <= grad_tol:
            break
    else:
        raise NonConvergenceError(
            f"no convergence in {config.max_iter} Newton iterations",
            beta=phi[:p], gamma=phi[p:], loglik=value,
            grad_norm=float(np.max(np.abs(grad))))
    return phi, value, float(np.max(np.abs(grad))), iterations


def fit_mle(data: Dataset, config: FitConfig | None = None,
            basis: SplineBasis | None = None, order: int = 4,
            start=None) -> FittedModel:
    """Maximize the tilt log-likelihood jointly in (beta, gamma).

    Continuous responses get a data-driven cubic B-spline carrier unless a
    basis is supplied; discrete responses dispatch to :func:`fit_discrete`.
    The optional start point (beta0, gamma_free0) only changes the Newton
    path, never the optimum, since the objective is concave.
    """
    config = config or FitConfig()
    if isinstance(data.support, DiscreteSupport):
        return fit_discrete(data, config, start=start)
    if basis is None:
        knots = build_knots(data.y, order=order,
                            lo=data.support.lo, hi=data.support.hi)
        basis = SplineBasis(knots)
    if data.n <= data.p + basis.m:
        warnings.warn("sample size does not exceed the free parameter count; "
                      "the fit may be rank deficient", RuntimeWarning)
    ws = _Workspace(data, basis)
    phi, value, grad_norm, iterations = _newton(ws, data.p, basis.m - 1, config,
                                                start=start)
    return FittedModel(
        beta=phi[:data.p],
        gamma=basis.full_coef(phi[data.p:]),
        loglik=value,
        basis=basis,
        support=data.support,
        iterations=iterations,
        grad_norm=grad_norm,
        n_obs=data.n,
    )


def fit_discrete(data: Dataset, config: FitConfig | None = None,
                 start=None) -> FittedModel:
    """Tilt MLE with an indicator carrier over the observed levels.

    Levels never observed are collapsed out of the support with a warning;
    their coefficients would otherwise diverge to -inf.
    """
    config = config or FitConfig()
    if not isinstance(data.support, DiscreteSupport):
        raise ConfigError("fit_discrete requires a discrete support")
    observed = np.unique(data.y.astype(int))
    if observed.size < 2:
        raise CollapseError("response observed at a single level")
    if observed.size < data.support.m_levels + 1:
        warnings.warn(
            f"{data.support.m_levels + 1 - observed.size} unobserved level(s) "
            "collapsed out of the support", RuntimeWarning)
    basis = IndicatorBasis(levels=observed, anchor=0)
    if data.n <= data.p + basis.m:
        warnings.warn("sample size does not exceed the free parameter count; "
                      "the fit may be rank deficient", RuntimeWarning)
    ws = _Workspace(data, basis)
    phi, value, grad_norm, iterations = _newton(ws, data.p, basis.m - 1, config,
                                                start=start)
    return FittedModel(
        beta=phi[:data.p],
        gamma=basis.full_coef(phi[data.p:]),
        loglik=value,
        basis=basis,
        support=data.support,
        iterations=iterations,
        grad_norm=grad_norm,
        n_obs=data.n,
    )
