"""Clamped B-spline bases with data-driven knot placement.

The basis lives on a compact response support [lo, hi].  Boundary knots are
repeated ``order`` times at each end, interior knots are placed at evenly
spaced empirical quantiles of the observed responses, and identifiability is
imposed by pinning one basis coefficient (the left-edge one by default) to
zero; the anchored column is dropped from the free parameterization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .errors import DegenerateKnotsError, OutOfDomainError, UnsupportedOrderError

__all__ = [
    "KnotVector",
    "SplineBasis",
    "interior_knot_count",
    "build_knots",
    "eval_basis",
    "eval_deriv",
]

# Relative nudge applied to tied or boundary-colliding quantile knots.
_TIE_NUDGE = 1e-9


def interior_knot_count(n: int) -> int:
    """Smallest integer strictly larger than 0.7 * n**(1/5)."""
    if n < 2:
        raise ValueError("need at least 2 observations to place knots")
    raw = 0.7 * float(n) ** 0.2
    count = math.ceil(raw)
    if count == raw:
        count += 1
    return count


@dataclass(frozen=True)
class KnotVector:
    """Clamped knot layout on [lo, hi].

    ``interior`` holds the strictly increasing interior knots; the full
    sequence repeats lo and hi ``order`` times each.  The basis size is
    m = len(interior) + order.
    """

    interior: np.ndarray
    lo: float
    hi: float
    order: int

    def __post_init__(self):
        interior = np.atleast_1d(np.asarray(self.interior, dtype=float))
        object.__setattr__(self, "interior", interior)
        if self.order < 1:
            raise ValueError("spline order must be >= 1")
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")
        if interior.size:
            if np.any(np.diff(interior) <= 0):
                raise ValueError("interior knots must be strictly increasing")
            if interior[0] <= self.lo or interior[-1] >= self.hi:
                raise ValueError("interior knots must lie strictly inside (lo, hi)")

    @property
    def n_interior(self) -> int:
        return int(self.interior.size)

    @property
    def m(self) -> int:
        """Number of basis functions."""
        return self.n_interior + self.order

    @cached_property
    def full(self) -> np.ndarray:
        """Full clamped knot sequence of length m + order."""
        return np.concatenate(
            [np.full(self.order, self.lo), self.interior, np.full(self.order, self.hi)]
        )

    @cached_property
    def panel_edges(self) -> np.ndarray:
        """Breakpoints [lo, t_1, ..., t_N, hi] delimiting polynomial spans."""
        return np.concatenate([[self.lo], self.interior, [self.hi]])


def build_knots(y, n: int | None = None, order: int = 4,
                lo: float | None = None, hi: float | None = None,
                n_interior: int | None = None) -> KnotVector:
    """Data-driven knot vector: interior knots at empirical quantiles.

    The interior knot count is the smallest integer larger than
    0.7 * n**(1/5) unless overridden; the knots sit at the type-7 sample
    quantiles of ``y`` at levels k/(N+1), k = 1..N.  Tied or
    boundary-colliding quantiles are nudged inward to restore strict
    monotonicity.
    """
    y = np.asarray(y, dtype=float).ravel()
    if n is None:
        n = y.size
    if n < 2 or y.size < 2:
        raise ValueError("need at least 2 observations")
    if lo is None:
        lo = float(np.min(y))
    if hi is None:
        hi = float(np.max(y))
    if not lo < hi:
        raise ValueError("need lo < hi")
    if np.min(y) < lo or np.max(y) > hi:
        raise OutOfDomainError("responses outside the declared support [lo, hi]")

    n_int = interior_knot_count(n) if n_interior is None else int(n_interior)
    if n_int < 1:
        raise ValueError("need at least one interior knot")
    levels = np.arange(1, n_int + 1) / (n_int + 1)
    knots = np.quantile(y, levels)

    needs_fix = (
        np.any(np.diff(knots) <= 0) if knots.size > 1 else False
    ) or knots[0] <= lo or knots[-1] >= hi
    if needs_fix:
        if np.unique(y).size < n_int + 2:
            raise DegenerateKnotsError(
                f"only {np.unique(y).size} distinct responses for {n_int} interior knots"
            )
        eps = _TIE_NUDGE * (hi - lo)
        knots = np.clip(knots, lo + eps, hi - eps)
        for k in range(1, knots.size):
            if knots[k] <= knots[k - 1]:
                knots[k] = knots[k - 1] + eps
        if knots[-1] >= hi:
            raise DegenerateKnotsError("cannot separate tied knots inside the support")

    return KnotVector(interior=knots, lo=float(lo), hi=float(hi), order=int(order))


@dataclass(frozen=True)
class SplineBasis:
    """Evaluable clamped B-spline basis with an anchored coefficient.

    ``anchor`` indexes the basis coefficient constrained to zero (first one
    by default, pinning the fitted curve to 0 at the left support edge).
    Immutable after construction; evaluation is thread-safe.
    """

    knots: KnotVector
    anchor: int = 0

    def __post_init__(self):
        if not 0 <= self.anchor < self.m:
            raise ValueError("anchor index outside basis range")

    @property
    def m(self) -> int:
        return self.knots.m

    @property
    def order(self) -> int:
        return self.knots.order

    @property
    def lo(self) -> float:
        return self.knots.lo

    @property
    def hi(self) -> float:
        return self.knots.hi

    @property
    def free_indices(self) -> np.ndarray:
        return np.delete(np.arange(self.m), self.anchor)

    @cached_property
    def _deriv_spline(self) -> BSpline:
        # all m basis derivatives at once via an identity coefficient block
        return BSpline(self.knots.full, np.eye(self.m), self.order - 1).derivative(1)

    def _check_domain(self, t: np.ndarray):
        if np.any(t < self.lo) or np.any(t > self.hi):
            raise OutOfDomainError(
                f"evaluation point outside support [{self.lo}, {self.hi}]"
            )

    def design_matrix(self, t, drop_anchor: bool = False) -> np.ndarray:
        """Dense (len(t), m) matrix of basis values; rows sum to one."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_domain(t)
        out = BSpline.design_matrix(
            t, self.knots.full, self.order - 1, extrapolate=False
        ).toarray()
        if drop_anchor:
            out = np.delete(out, self.anchor, axis=1)
        return out

    def deriv_matrix(self, t, drop_anchor: bool = False) -> np.ndarray:
        """Dense (len(t), m) matrix of first derivatives; rows sum to zero."""
        if self.order < 2:
            raise UnsupportedOrderError("derivatives require spline order >= 2")
        t = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_domain(t)
        out = self._deriv_spline(t)
        if drop_anchor:
            out = np.delete(out, self.anchor, axis=1)
        return out

    def full_coef(self, gamma_free: np.ndarray) -> np.ndarray:
        """Insert the anchored zero into a free coefficient vector."""
        gamma_free = np.asarray(gamma_free, dtype=float)
        return np.insert(gamma_free, self.anchor, 0.0)


def eval_basis(basis: SplineBasis, t: float) -> np.ndarray:
    """All m basis values at a single point of the support."""
    return basis.design_matrix(float(t))[0]


def eval_deriv(basis: SplineBasis, t: float) -> np.ndarray:
    """All m basis first derivatives at a single point of the support."""
    return basis.deriv_matrix(float(t))[0]
