"""Exponential-tilt conditional law f(y|x) ∝ exp{y*eta + c(y)} on a compact support.

The carrier c is either a spline curve (fitted models), an arbitrary callable
(closed-form oracles), or a per-level vector (discrete responses).  All heavy
paths are vectorized over observations: ``eta`` is the n-vector of linear
predictors and densities are represented as n x Q probability masses on a
fixed response grid.

Continuous supports use composite Gauss-Legendre quadrature with panels split
at the spline knots, so each panel integrates an analytic function and the
grid is effectively exact at the default node budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.polynomial.legendre as npleg

from .errors import (
    ConfigError,
    IllConditionedQuantileError,
    NumericError,
    OutOfDomainError,
    UnsupportedResponseError,
)
from .spline import SplineBasis

__all__ = [
    "ContinuousSupport",
    "DiscreteSupport",
    "QuadratureGrid",
    "IndicatorBasis",
    "GridTilt",
    "ContinuousModel",
    "DiscreteModel",
    "ConditionalState",
    "QuantileLocal",
    "log_normalizer",
    "conditional_moments",
    "conditional_quantile",
]

DEFAULT_QUAD_NODES = 201
_SEGMENT_NODES = 24
_CDF_TOL = 1e-12
_CDF_MAX_ITER = 120


@dataclass(frozen=True)
class ContinuousSupport:
    """Compact continuous response support with a quadrature node budget."""

    lo: float
    hi: float
    quad_nodes: int = DEFAULT_QUAD_NODES

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("continuous support needs lo < hi")
        if self.quad_nodes < 8:
            raise ConfigError("quadrature node budget too small")


@dataclass(frozen=True)
class DiscreteSupport:
    """Discrete response support {0, ..., m_levels}."""

    m_levels: int

    def __post_init__(self):
        if self.m_levels < 1:
            raise ConfigError("discrete support needs m_levels >= 1")


@dataclass(frozen=True)
class QuadratureGrid:
    """Nodes and positive weights of a composite rule; weights sum to hi-lo."""

    nodes: np.ndarray
    weights: np.ndarray
    panel_edges: np.ndarray
    panel_starts: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("quadrature nodes must be strictly increasing")
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")
        width = self.panel_edges[-1] - self.panel_edges[0]
        if abs(self.weights.sum() - width) > 1e-12 * max(1.0, abs(width)):
            raise ValueError("quadrature weights do not sum to the support width")


@lru_cache(maxsize=64)
def _leggauss(k: int):
    x, w = npleg.leggauss(k)
    return x, w


def panel_gauss_grid(panel_edges, n_nodes: int, min_per_panel: int = 16) -> QuadratureGrid:
    """Composite Gauss-Legendre rule with one panel per polynomial span."""
    edges = np.asarray(panel_edges, dtype=float)
    lengths = np.diff(edges)
    total = edges[-1] - edges[0]
    nodes, weights, starts = [], [], []
    pos = 0
    for left, length in zip(edges[:-1], lengths):
        k = max(min_per_panel, int(round(n_nodes * length / total)))
        u, w = _leggauss(k)
        half = 0.5 * length
        nodes.append(left + half * (u + 1.0))
        weights.append(w * half)
        starts.append(pos)
        pos += k
    return QuadratureGrid(
        nodes=np.concatenate(nodes),
        weights=np.concatenate(weights),
        panel_edges=edges,
        panel_starts=np.asarray(starts, dtype=int),
    )


@dataclass(frozen=True)
class IndicatorBasis:
    """One-hot 'basis' over the observed discrete levels, with an anchor level."""

    levels: np.ndarray
    anchor: int = 0

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=int)
        object.__setattr__(self, "levels", levels)
        if levels.size < 2:
            raise ValueError("need at least two levels")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("levels must be strictly increasing")
        if not 0 <= self.anchor < levels.size:
            raise ValueError("anchor index outside level range")

    @property
    def m(self) -> int:
        return int(self.levels.size)

    @property
    def free_indices(self) -> np.ndarray:
        return np.delete(np.arange(self.m), self.anchor)

    def design_matrix(self, y, drop_anchor: bool = False) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y))
        idx = np.searchsorted(self.levels, y)
        idx = np.clip(idx, 0, self.m - 1)
        if np.any(self.levels[idx] != y):
            raise OutOfDomainError("response level outside the model support")
        out = np.zeros((y.size, self.m))
        out[np.arange(y.size), idx] = 1.0
        if drop_anchor:
            out = np.delete(out, self.anchor, axis=1)
        return out

    def full_coef(self, gamma_free: np.ndarray) -> np.ndarray:
        return np.insert(np.asarray(gamma_free, dtype=float), self.anchor, 0.0)


def _check_finite_params(eta, *arrays):
    if not np.all(np.isfinite(eta)):
        bad = int(np.flatnonzero(~np.isfinite(np.atleast_1d(eta)))[0])
        raise NumericError("non-finite linear predictor", index=bad)
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise NumericError("non-finite model parameter")


class _TiltCore:
    """Shared mass/moment machinery over a fixed response grid.

    Subclasses provide ``nodes`` (Q,), ``logw`` (Q,), ``cq`` carrier values at
    the nodes, and optionally ``bq`` (Q, m_free) free-basis values.
    """

    nodes: np.ndarray
    logw: np.ndarray
    cq: np.ndarray
    bq: np.ndarray | None

    def masses(self, eta):
        """Probability masses P (n, Q) with unit row sums, and logZ (n,)."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        _check_finite_params(eta, self.cq)
        expo = eta[:, None] * self.nodes[None, :] + (self.cq + self.logw)[None, :]
        shift = expo.max(axis=1)
        p = np.exp(expo - shift[:, None])
        total = p.sum(axis=1)
        if np.any(~np.isfinite(total)) or np.any(total <= 0):
            bad = int(np.flatnonzero(~np.isfinite(total) | (total <= 0))[0])
            raise NumericError("degenerate normalizer", index=bad)
        p /= total[:, None]
        return p, shift + np.log(total)

    def log_normalizer(self, eta) -> np.ndarray:
        return self.masses(eta)[1]

    def power_moments(self, p, k_max: int = 4) -> list[np.ndarray]:
        """E(Y^k | x) for k = 1..k_max from the mass matrix."""
        return [p @ self.nodes**k for k in range(1, k_max + 1)]

    def mean_basis(self, p) -> np.ndarray:
        return p @ self.bq

    def cov_y_basis(self, p, ey=None, mean_b=None) -> np.ndarray:
        if ey is None:
            ey = p @ self.nodes
        if mean_b is None:
            mean_b = p @ self.bq
        eyb = p @ (self.nodes[:, None] * self.bq)
        return eyb - ey[:, None] * mean_b

    def sum_var_basis(self, p, mean_b=None) -> np.ndarray:
        """Sum over observations of var{B(Y)|x_i}; (m_free, m_free)."""
        if mean_b is None:
            mean_b = p @ self.bq
        second = self.bq.T @ (p.sum(axis=0)[:, None] * self.bq)
        return second - mean_b.T @ mean_b


class GridTilt(_TiltCore):
    """Tilt core over explicit grid arrays; lets the fit loop swap carriers in
    place without rebuilding quadrature or basis matrices."""

    def __init__(self, nodes, logw, cq, bq=None):
        self.nodes = nodes
        self.logw = logw
        self.cq = cq
        self.bq = bq


class ContinuousModel(_TiltCore):
    """Tilted density on [lo, hi] with quadrature-backed integrals."""

    def __init__(self, support: ContinuousSupport, carrier, carrier_deriv=None,
                 basis: SplineBasis | None = None, panel_edges=None,
                 n_nodes: int | None = None):
        self.support = support
        self.carrier = carrier
        self.carrier_deriv = carrier_deriv
        self.basis = basis
        if panel_edges is None:
            panel_edges = [support.lo, support.hi]
        self.grid = panel_gauss_grid(panel_edges, n_nodes or support.quad_nodes)
        self.nodes = self.grid.nodes
        self.logw = np.log(self.grid.weights)
        self.cq = np.asarray(carrier(self.nodes), dtype=float)
        self.bq = basis.design_matrix(self.nodes, drop_anchor=True) if basis else None

    @classmethod
    def from_basis(cls, basis: SplineBasis, gamma_full, support: ContinuousSupport,
                   n_nodes: int | None = None) -> "ContinuousModel":
        gamma_full = np.asarray(gamma_full, dtype=float)
        if gamma_full.size != basis.m:
            raise ValueError("gamma length does not match the basis size")
        carrier = lambda y: basis.design_matrix(y) @ gamma_full
        deriv = lambda y: basis.deriv_matrix(y) @ gamma_full
        return cls(support, carrier, deriv, basis=basis,
                   panel_edges=basis.knots.panel_edges, n_nodes=n_nodes)

    @classmethod
    def from_carrier(cls, carrier, support: ContinuousSupport, carrier_deriv=None,
                     panel_edges=None, n_nodes: int | None = None) -> "ContinuousModel":
        return cls(support, carrier, carrier_deriv, panel_edges=panel_edges,
                   n_nodes=n_nodes)

    # -- CDF / quantile machinery ------------------------------------------

    def _panel_cum(self, values) -> np.ndarray:
        """Cumulative per-panel sums at panel edges; (n, n_panels + 1)."""
        per_panel = np.add.reduceat(values, self.grid.panel_starts, axis=1)
        cum = np.zeros((values.shape[0], per_panel.shape[1] + 1))
        np.cumsum(per_panel, axis=1, out=cum[:, 1:])
        return cum

    def _segment(self, eta, logz, left, q, integrand_pows=(0,), with_basis=False):
        """Integrals of y^s f(y|x) (and optionally B, y*B) over [left_i, q_i]."""
        n = eta.size
        u, w = _leggauss(_SEGMENT_NODES)
        half = 0.5 * (q - left)
        yseg = left[:, None] + (u[None, :] + 1.0) * half[:, None]
        yflat = np.clip(yseg.ravel(), self.support.lo, self.support.hi)
        cseg = np.asarray(self.carrier(yflat), dtype=float).reshape(n, -1)
        dens = np.exp(yseg * eta[:, None] + cseg - logz[:, None])
        dens *= w[None, :] * half[:, None]
        out = {s: (dens * yseg**s).sum(axis=1) if s else dens.sum(axis=1)
               for s in integrand_pows}
        if with_basis:
            bseg = self.basis.design_matrix(yflat, drop_anchor=True)
            bseg = bseg.reshape(n, _SEGMENT_NODES, -1)
            out["b"] = np.einsum("nk,nkj->nj", dens, bseg)
            out["yb"] = np.einsum("nk,nkj->nj", dens * yseg, bseg)
        return out

    def cdf(self, eta, q, p=None, logz=None) -> np.ndarray:
        """P(Y <= q_i | x_i) under the tilted density."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if np.any(q < self.support.lo) or np.any(q > self.support.hi):
            raise OutOfDomainError("CDF argument outside the support")
        if p is None or logz is None:
            p, logz = self.masses(eta)
        cum = self._panel_cum(p)
        edges = self.grid.panel_edges
        j = np.clip(np.searchsorted(edges, q, side="right") - 1, 0, len(edges) - 2)
        base = cum[np.arange(eta.size), j]
        seg = self._segment(eta, logz, edges[j], q)[0]
        return base + seg

    def density(self, eta, q, logz=None) -> np.ndarray:
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if logz is None:
            logz = self.log_normalizer(eta)
        c = np.asarray(self.carrier(q), dtype=float)
        return np.exp(q * eta + c - logz)

    def quantile(self, eta, tau: float, p=None, logz=None) -> np.ndarray:
        """Conditional tau-quantiles, |CDF(q) - tau| <= 1e-10 guaranteed."""
        if not 0.0 < tau < 1.0:
            raise ConfigError("quantile level must lie strictly inside (0, 1)")
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        if p is None or logz is None:
            p, logz = self.masses(eta)
        n = eta.size
        cum = self._panel_cum(p)
        edges = self.grid.panel_edges
        j = np.clip((cum[:, :-1] <= tau).sum(axis=1) - 1, 0, len(edges) - 2)
        rows = np.arange(n)
        br_lo, br_hi = edges[j].copy(), edges[j + 1].copy()
        # start at the grid node where the running node mass crosses tau; this
        # lands inside the non-negligible-density region even for extreme eta
        node_cum = np.cumsum(p, axis=1)
        pos = np.argmax(node_cum >= tau, axis=1)
        q = np.clip(self.nodes[pos], br_lo, br_hi)
        base = cum[rows, j]
        left = edges[j]

        resid = np.full(n, np.inf)
        for _ in range(_CDF_MAX_ITER):
            seg = self._segment(eta, logz, left, q)[0]
            resid = base + seg - tau
            active = np.abs(resid) > _CDF_TOL
            if not active.any():
                break
            dens = self.density(eta, q, logz)
            br_lo = np.where(active & (resid < 0), q, br_lo)
            br_hi = np.where(active & (resid > 0), q, br_hi)
            step = resid / np.maximum(dens, 1e-300)
            q_new = q - step
            bad = ~np.isfinite(q_new) | (q_new <= br_lo) | (q_new >= br_hi)
            q_new = np.where(bad, 0.5 * (br_lo + br_hi), q_new)
            q = np.where(active, q_new, q)
        if np.max(np.abs(resid)) > 1e-10:
            raise NumericError("quantile solver failed to reach CDF tolerance",
                               index=int(np.argmax(np.abs(resid))))
        return q

    def partial_expectations(self, eta, q, p=None, logz=None,
                             with_basis: bool = False) -> dict:
        """One-sided integrals ∫_lo^{q_i} y^s f dy for s = 0,1,2 (+ basis)."""
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if p is None or logz is None:
            p, logz = self.masses(eta)
        edges = self.grid.panel_edges
        j = np.clip(np.searchsorted(edges, q, side="right") - 1, 0, len(edges) - 2)
        rows = np.arange(eta.size)
        out = {}
        for s in (0, 1, 2):
            cum = self._panel_cum(p * self.nodes**s if s else p)
            out[s] = cum[rows, j]
        if with_basis:
            nb = self.bq.shape[1]
            starts = list(self.grid.panel_starts) + [self.nodes.size]
            cum_b = np.zeros((eta.size, len(edges), nb))
            cum_yb = np.zeros_like(cum_b)
            for k in range(len(edges) - 1):
                s0, s1 = starts[k], starts[k + 1]
                blk = self.bq[s0:s1]
                cum_b[:, k + 1] = cum_b[:, k] + p[:, s0:s1] @ blk
                cum_yb[:, k + 1] = cum_yb[:, k] + (p[:, s0:s1] * self.nodes[s0:s1]) @ blk
            out["b"] = cum_b[rows, j]
            out["yb"] = cum_yb[rows, j]
        seg = self._segment(eta, logz, edges[j], q, integrand_pows=(0, 1, 2),
                            with_basis=with_basis)
        for s in (0, 1, 2):
            out[s] = out[s] + seg[s]
        if with_basis:
            out["b"] = out["b"] + seg["b"]
            out["yb"] = out["yb"] + seg["yb"]
        return out

    def quantile_local(self, eta, tau: float, p=None, logz=None):
        """Quantiles plus the ratio-identity derivatives q', q''.

        q'  = E([tau - 1{Y<q}] Y | x) / f(q|x)
        q'' = E([tau - 1{Y<q}] Y^2 | x) / f(q|x) - q q' - q'[q + q' eta + q' c'(q)]
        """
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        if p is None or logz is None:
            p, logz = self.masses(eta)
        q = self.quantile(eta, tau, p, logz)
        dens = self.density(eta, q, logz)
        if np.any(dens <= 1e-300):
            raise IllConditionedQuantileError("density vanishes at a conditional quantile")
        parts = self.partial_expectations(eta, q, p, logz)
        ey, ey2 = self.power_moments(p, 2)
        qprime = (tau * ey - parts[1]) / dens
        eps_y2 = tau * ey2 - parts[2]
        if self.carrier_deriv is None:
            raise ConfigError("carrier derivative required for quantile curvature")
        cprime = np.asarray(self.carrier_deriv(q), dtype=float)
        qdprime = eps_y2 / dens - q * qprime - qprime * (q + qprime * eta + qprime * cprime)
        return q, dens, qprime, qdprime


class DiscreteModel(_TiltCore):
    """Tilted mass function on the observed levels (counting measure)."""

    def __init__(self, basis: IndicatorBasis, gamma_full):
        gamma_full = np.asarray(gamma_full, dtype=float)
        if gamma_full.size != basis.m:
            raise ValueError("gamma length does not match the level count")
        self.basis = basis
        self.support = DiscreteSupport(int(basis.levels[-1]))
        self.nodes = basis.levels.astype(float)
        self.logw = np.zeros(basis.m)
        self.cq = gamma_full
        self.bq = np.delete(np.eye(basis.m), basis.anchor, axis=1)

    def pr(self, eta) -> np.ndarray:
        """Conditional level probabilities; (n, n_levels)."""
        return self.masses(eta)[0]


# -- single-observation surface ------------------------------------------------


@dataclass
class ConditionalState:
    """Conditional law summary at one covariate vector."""

    x: np.ndarray
    eta: float
    logz: float
    ey: float
    ey2: float
    ey3: float
    ey4: float
    mean_b: np.ndarray
    cov_yb: np.ndarray
    var_b: np.ndarray

    @property
    def var(self) -> float:
        return self.ey2 - self.ey**2


@dataclass
class QuantileLocal:
    """Conditional quantile with local density and derivatives in eta."""

    q: float
    dens_at_q: float
    qprime: float
    qdprime: float


def _model_for(beta, gamma, basis, support):
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if isinstance(support, DiscreteSupport):
        if basis is None:
            basis = IndicatorBasis(np.arange(support.m_levels + 1))
        return DiscreteModel(basis, gamma)
    return ContinuousModel.from_basis(basis, gamma, support)


def log_normalizer(x, beta, gamma, basis, support) -> float:
    """log of the partition integral/sum at a single covariate vector."""
    model = _model_for(beta, gamma, basis, support)
    eta = float(np.dot(np.asarray(x, dtype=float), np.asarray(beta, dtype=float)))
    return float(model.log_normalizer([eta])[0])


def conditional_moments(x, beta, gamma, basis, support) -> ConditionalState:
    """Moments to fourth order plus basis means and covariances at one x."""
    model = _model_for(beta, gamma, basis, support)
    x = np.asarray(x, dtype=float)
    eta = float(np.dot(x, np.asarray(beta, dtype=float)))
    p, logz = model.masses([eta])
    ey, ey2, ey3, ey4 = (float(v[0]) for v in model.power_moments(p, 4))
    mean_b = model.mean_basis(p)[0]
    cov_yb = model.cov_y_basis(p)[0]
    var_b = model.sum_var_basis(p)
    return ConditionalState(x=x, eta=eta, logz=float(logz[0]), ey=ey, ey2=ey2,
                            ey3=ey3, ey4=ey4, mean_b=mean_b, cov_yb=cov_yb,
                            var_b=var_b)


def conditional_quantile(x, beta, gamma, tau, basis, support) -> QuantileLocal:
    """Conditional tau-quantile and its first two derivatives in eta."""
    if isinstance(support, DiscreteSupport):
        raise UnsupportedResponseError(
            "conditional quantiles are not defined for discrete responses")
    if not 0.0 < float(tau) < 1.0:
        raise ConfigError("quantile level must lie strictly inside (0, 1)")
    model = _model_for(beta, gamma, basis, support)
    eta = float(np.dot(np.asarray(x, dtype=float), np.asarray(beta, dtype=float)))
    q, dens, qprime, qdprime = model.quantile_local([eta], float(tau))
    return QuantileLocal(q=float(q[0]), dens_at_q=float(dens[0]),
                         qprime=float(qprime[0]), qdprime=float(qdprime[0]))
