"""Exception hierarchy for semfx.

Exit-code mapping for the CLI lives in semfx.cli; library code raises these.
"""


class SemfxError(Exception):
    """Base class for all semfx errors."""


class DataError(SemfxError):
    """Invalid input data (non-finite entries, bad CSV cell, missing column)."""


class ConfigError(SemfxError):
    """Invalid configuration (bad tau, unknown preset, bad support)."""


class DegenerateKnotsError(SemfxError):
    """Too few distinct response values to place strictly monotone interior knots."""


class OutOfDomainError(SemfxError):
    """Evaluation point outside the response support."""


class UnsupportedOrderError(SemfxError):
    """Spline order too low for the requested operation (derivatives need order >= 2)."""


class UnsupportedResponseError(SemfxError):
    """Operation undefined for this response type (e.g. quantiles of a discrete response)."""


class NumericError(SemfxError):
    """Non-finite intermediate value.

    Carries the index of the offending observation when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NonConvergenceError(SemfxError):
    """Optimizer hit the iteration cap; carries the last iterate."""

    def __init__(self, message, beta=None, gamma=None, loglik=None, grad_norm=None):
        super().__init__(message)
        self.beta = beta
        self.gamma = gamma
        self.loglik = loglik
        self.grad_norm = grad_norm


class DivergenceError(SemfxError):
    """Monotone-likelihood direction detected (e.g. separated binary data)."""


class SingularHessianError(SemfxError):
    """Newton system numerically singular even after ridge regularization."""


class SingularInformationError(SemfxError):
    """Schur complement of the information matrix not positive definite."""


class IllConditionedQuantileError(SemfxError):
    """Fitted density at a conditional quantile is numerically zero."""


class CollapseError(SemfxError):
    """Discrete response observed at a single level; model degenerate."""


class ScenarioError(SemfxError):
    """Simulation scenario failed (too many replicate failures or bad preset)."""
