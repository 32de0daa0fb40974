"""semfx: semiparametric exponential-tilt regression with effect inference.

The conditional density of a response Y given covariates x is modeled as
exp{y beta'x + c(y)} normalized over a compact support, with the carrier c
left unspecified and approximated by a clamped B-spline (continuous case) or
estimated freely per level (discrete case).  The package provides the joint
maximum-likelihood fit, marginal and quantile effect estimators, plug-in
asymptotic inference, parametric baselines, and a Monte Carlo harness.
"""

from .baselines import ParametricFit, fit_parametric, parametric_effects
from .effects import (
    EffectEstimate,
    average_conditional_variance,
    average_quantile_slope,
    marginal_effect,
    quantile_effect,
    quantile_slopes,
)
from .errors import (
    CollapseError,
    ConfigError,
    DataError,
    DegenerateKnotsError,
    DivergenceError,
    IllConditionedQuantileError,
    NonConvergenceError,
    NumericError,
    OutOfDomainError,
    ScenarioError,
    SemfxError,
    SingularHessianError,
    SingularInformationError,
    UnsupportedOrderError,
    UnsupportedResponseError,
)
from .fit import (
    Dataset,
    FitConfig,
    FittedModel,
    fit_discrete,
    fit_mle,
    infer_continuous_support,
    loglik_grad_hess,
    make_dataset,
)
from .inference import (
    EtaVarParts,
    SigmaBlocks,
    XiVarParts,
    aic_bic,
    beta_estimate,
    curve_band,
    estimate_effects,
    sigma_blocks,
    var_eta,
    var_xi,
    wald,
)
from .model import (
    ConditionalState,
    ContinuousModel,
    ContinuousSupport,
    DiscreteModel,
    DiscreteSupport,
    IndicatorBasis,
    QuadratureGrid,
    QuantileLocal,
    conditional_moments,
    conditional_quantile,
    log_normalizer,
)
from .sim import (
    PRESETS,
    Scenario,
    SimulationReport,
    TrueEffects,
    generate,
    natural_beta,
    preset,
    run_scenario,
    true_effects,
)
from .spline import KnotVector, SplineBasis, build_knots, eval_basis, eval_deriv

__version__ = "0.1.0"
