"""Plug-in asymptotic covariance matrices and Wald inference.

Population expectations in the limiting variance formulas are replaced by
sample averages over observations, with inner conditional moments evaluated
under the fitted model.  The information blocks assemble to minus 1/n times
the fitted log-likelihood Hessian, and the coefficient covariance is the
inverse Schur complement of the carrier block.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .effects import EffectEstimate, marginal_effect, quantile_effect
from .errors import (
    IllConditionedQuantileError,
    NumericError,
    SingularInformationError,
    UnsupportedResponseError,
)
from .fit import Dataset, FittedModel

__all__ = [
    "Z975",
    "SigmaBlocks",
    "XiVarParts",
    "EtaVarParts",
    "sigma_blocks",
    "var_xi",
    "var_eta",
    "wald",
    "aic_bic",
    "curve_band",
    "beta_estimate",
    "estimate_effects",
]

Z975 = 1.959964


@dataclass
class SigmaBlocks:
    """Plug-in information blocks and the derived coefficient covariance."""

    s11: np.ndarray
    s12: np.ndarray
    s22: np.ndarray
    sstar: np.ndarray
    sigma_beta: np.ndarray

    @property
    def s21(self) -> np.ndarray:
        return self.s12.T

    @cached_property
    def assembled(self) -> np.ndarray:
        return np.block([[self.s11, self.s12], [self.s21, self.s22]])

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.assembled)


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def sigma_blocks(fit: FittedModel, data: Dataset) -> SigmaBlocks:
    """Sample-averaged conditional covariance of the stacked score pieces."""
    model = fit.model
    eta = data.x @ fit.beta
    p_mat, _ = model.masses(eta)
    ey, ey2 = model.power_moments(p_mat, 2)
    var_y = ey2 - ey**2
    mean_b = model.mean_basis(p_mat)
    cov_yb = model.cov_y_basis(p_mat, ey, mean_b)
    n = data.n
    s11 = (data.x * var_y[:, None]).T @ data.x / n
    s12 = data.x.T @ cov_yb / n
    s22 = _symmetrize(model.sum_var_basis(p_mat, mean_b) / n)
    try:
        s22_factor = scipy.linalg.cho_factor(s22, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularInformationError("carrier information block singular") from exc
    sstar = _symmetrize(s11 - s12 @ scipy.linalg.cho_solve(s22_factor, s12.T,
                                                           check_finite=False))
    eigs = np.linalg.eigvalsh(sstar)
    if eigs[0] <= 1e-10 * max(1.0, eigs[-1]):
        raise SingularInformationError("Schur complement not positive definite")
    sigma_beta = _symmetrize(np.linalg.inv(sstar))
    return SigmaBlocks(s11=s11, s12=s12, s22=s22, sstar=sstar,
                       sigma_beta=sigma_beta)


@dataclass
class XiVarParts:
    """Pieces of the marginal-effect variance: gradient blocks and the
    dispersion of the conditional variance across covariates."""

    a1: np.ndarray
    a2: np.ndarray
    var_of_condvar: float


def var_xi(fit: FittedModel, data: Dataset, blocks: SigmaBlocks):
    """Asymptotic covariance of the marginal effect estimator."""
    model = fit.model
    eta = data.x @ fit.beta
    p_mat, _ = model.masses(eta)
    ey, ey2, ey3 = model.power_moments(p_mat, 3)
    var_y = ey2 - ey**2
    m3 = ey3 - 3.0 * ey2 * ey + 2.0 * ey**3
    mean_b = model.mean_basis(p_mat)
    nodes = model.nodes
    e_yb = p_mat @ (nodes[:, None] * model.bq)
    e_y2b = p_mat @ (nodes[:, None] ** 2 * model.bq)
    # E*{(Y - mu)^2 (B - mean_b) | x}
    central = (e_y2b - 2.0 * ey[:, None] * e_yb
               + (ey**2)[:, None] * mean_b - var_y[:, None] * mean_b)

    vbar = float(np.mean(var_y))
    a1 = vbar * np.eye(data.p) + np.outer(fit.beta, (data.x * m3[:, None]).mean(axis=0))
    a2 = np.outer(fit.beta, central.mean(axis=0))
    a_full = np.hstack([a1, a2])
    var_of_condvar = float(np.mean(var_y**2) - np.mean(var_y) ** 2)
    sigma_xi = _symmetrize(
        a_full @ np.linalg.solve(blocks.assembled, a_full.T)
        + np.outer(fit.beta, fit.beta) * var_of_condvar)
    return XiVarParts(a1=a1, a2=a2, var_of_condvar=var_of_condvar), sigma_xi


@dataclass
class EtaVarParts:
    """Pieces of the quantile-effect variance at one quantile level."""

    c1: np.ndarray
    c2: np.ndarray
    var_of_qprime: float


def var_eta(fit: FittedModel, data: Dataset, blocks: SigmaBlocks, tau: float):
    """Asymptotic covariance of the quantile effect estimator at level tau."""
    if fit.is_discrete:
        raise UnsupportedResponseError(
            "quantile effects are not defined for discrete responses")
    model = fit.model
    eta = data.x @ fit.beta
    p_mat, logz = model.masses(eta)
    q, dens, qprime, qdprime = model.quantile_local(eta, float(tau), p_mat, logz)
    if np.any(dens < 1e-12):
        raise IllConditionedQuantileError(
            "fitted density below 1e-12 at a conditional quantile")
    parts = model.partial_expectations(eta, q, p_mat, logz, with_basis=True)
    ey = p_mat @ model.nodes
    mean_b = model.mean_basis(p_mat)
    e_yb = p_mat @ (model.nodes[:, None] * model.bq)
    eps_yb = tau * e_yb - parts["yb"]          # E*([tau - 1{Y<=q}] Y B | x)
    eps_b = tau * mean_b - parts["b"]          # E*([tau - 1{Y<=q}] B | x)
    b_at_q = fit.basis.design_matrix(q, drop_anchor=True)
    cprime = np.asarray(model.carrier_deriv(q), dtype=float)
    bracket = q + qprime * eta + qprime * cprime
    c2_rows = (eps_yb / dens[:, None]
               - qprime[:, None] * b_at_q
               - eps_b / dens[:, None] * bracket[:, None])

    qbar = float(np.mean(qprime))
    c1 = qbar * np.eye(data.p) + np.outer(fit.beta,
                                          (data.x * qdprime[:, None]).mean(axis=0))
    c2 = np.outer(fit.beta, c2_rows.mean(axis=0))
    c_full = np.hstack([c1, c2])
    var_of_qprime = float(np.mean(qprime**2) - np.mean(qprime) ** 2)
    sigma_eta = _symmetrize(
        c_full @ np.linalg.solve(blocks.assembled, c_full.T)
        + np.outer(fit.beta, fit.beta) * var_of_qprime)
    return EtaVarParts(c1=c1, c2=c2, var_of_qprime=var_of_qprime), sigma_eta


def wald(point, sigma, n: int):
    """Standard errors, 95% confidence limits, and two-sided p-values.

    sigma is the asymptotic covariance of sqrt(n)*(estimate - truth), so the
    standard error of component k is sqrt(sigma_kk / n).
    """
    point = np.atleast_1d(np.asarray(point, dtype=float))
    diag = np.atleast_1d(np.diag(np.atleast_2d(sigma))).astype(float).copy()
    if np.any(diag < -1e-12):
        raise NumericError("variance diagonal significantly negative")
    if np.any(diag < 0):
        warnings.warn("tiny negative variance clamped to zero", RuntimeWarning)
        diag = np.maximum(diag, 0.0)
    se = np.sqrt(diag / n)
    ci_lo = point - Z975 * se
    ci_hi = point + Z975 * se
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(point) / se
    p_value = np.where(se > 0, 2.0 * norm.sf(z),
                       np.where(point == 0.0, 1.0, 0.0))
    return se, ci_lo, ci_hi, p_value


def aic_bic(fit: FittedModel):
    """Information criteria with df = p + m - 1 free parameters."""
    df = fit.df
    aic = -2.0 * fit.loglik + 2.0 * df
    bic = -2.0 * fit.loglik + np.log(fit.n_obs) * df
    return float(aic), float(bic)


def curve_band(fit: FittedModel, blocks: SigmaBlocks, grid) -> np.ndarray:
    """Fitted carrier curve with a pointwise 95% delta-method band.

    Returns an array with columns (y, c_hat, lower, upper).  The variance
    uses the carrier block of the inverse information divided by n.
    """
    if fit.is_discrete:
        raise UnsupportedResponseError("carrier curves require a continuous fit")
    grid = np.asarray(grid, dtype=float)
    b_free = fit.basis.design_matrix(grid, drop_anchor=True)
    c_hat = b_free @ fit.gamma_free
    p = fit.beta.size
    v_gamma = blocks.inverse[p:, p:] / fit.n_obs
    var_c = np.maximum(np.einsum("ij,jk,ik->i", b_free, v_gamma, b_free), 0.0)
    half = Z975 * np.sqrt(var_c)
    return np.column_stack([grid, c_hat, c_hat - half, c_hat + half])


def beta_estimate(fit: FittedModel, blocks: SigmaBlocks,
                  names=None) -> EffectEstimate:
    """Wald summary of the regression coefficients."""
    se, lo, hi, p = wald(fit.beta, blocks.sigma_beta, fit.n_obs)
    return EffectEstimate(kind="coef", tau=None, point=fit.beta.copy(), se=se,
                          ci_lo=lo, ci_hi=hi, p_value=p, names=names)


def estimate_effects(fit: FittedModel, data: Dataset, taus=(),
                     blocks: SigmaBlocks | None = None,
                     names=None) -> list[EffectEstimate]:
    """Marginal effect plus one quantile effect row per requested level."""
    blocks = blocks or sigma_blocks(fit, data)
    _, sigma_xi = var_xi(fit, data, blocks)
    xi = marginal_effect(fit, data)
    se, lo, hi, p = wald(xi, sigma_xi, data.n)
    out = [EffectEstimate(kind="marginal", tau=None, point=xi, se=se, ci_lo=lo,
                          ci_hi=hi, p_value=p, names=names)]
    for tau in taus:
        _, sigma_eta = var_eta(fit, data, blocks, tau)
        eta_tau = quantile_effect(fit, data, tau)
        se, lo, hi, p = wald(eta_tau, sigma_eta, data.n)
        out.append(EffectEstimate(kind="quantile", tau=float(tau), point=eta_tau,
                                  se=se, ci_lo=lo, ci_hi=hi, p_value=p,
                                  names=names))
    return out
