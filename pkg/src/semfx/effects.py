"""Marginal and quantile effects of the covariates under a fitted tilt model.

Both effects are the coefficient vector scaled by an average conditional
quantity: the mean conditional variance for the marginal effect, the mean
conditional-quantile slope for the quantile effect.  The scalar factors are
exposed separately so the construction identity is directly testable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UnsupportedResponseError
from .fit import Dataset, FittedModel

__all__ = [
    "EffectEstimate",
    "average_conditional_variance",
    "marginal_effect",
    "quantile_slopes",
    "average_quantile_slope",
    "quantile_effect",
]


@dataclass
class EffectEstimate:
    """Point estimate with Wald inference for one effect vector.

    kind is "coef", "marginal", or "quantile"; tau is set for quantile rows.
    All quantities are on the original covariate scale.
    """

    kind: str
    tau: float | None
    point: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    p_value: np.ndarray
    names: list[str] | None = None


def average_conditional_variance(fit: FittedModel, data: Dataset) -> float:
    """n^{-1} sum_i var*(Y | x_i) under the fitted model."""
    p_mat, _ = fit.model.masses(data.x @ fit.beta)
    ey, ey2 = fit.model.power_moments(p_mat, 2)
    return float(np.mean(ey2 - ey**2))


def marginal_effect(fit: FittedModel, data: Dataset) -> np.ndarray:
    """beta_hat times the average fitted conditional variance."""
    return fit.beta * average_conditional_variance(fit, data)


def quantile_slopes(fit: FittedModel, data: Dataset, tau: float) -> np.ndarray:
    """Per-observation derivative q'(eta_i) of the conditional tau-quantile."""
    if fit.is_discrete:
        raise UnsupportedResponseError(
            "quantile effects are not defined for discrete responses")
    if not 0.0 < float(tau) < 1.0:
        raise ConfigError("quantile level must lie strictly inside (0, 1)")
    _, _, qprime, _ = fit.model.quantile_local(data.x @ fit.beta, float(tau))
    return qprime


def average_quantile_slope(fit: FittedModel, data: Dataset, tau: float) -> float:
    return float(np.mean(quantile_slopes(fit, data, tau)))


def quantile_effect(fit: FittedModel, data: Dataset, tau: float) -> np.ndarray:
    """beta_hat times the average conditional-quantile slope at level tau."""
    return fit.beta * average_quantile_slope(fit, data, tau)
