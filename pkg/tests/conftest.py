"""Shared fixtures and independent oracle helpers for the test suite."""

import numpy as np
import pytest
from scipy.stats import truncnorm

from semfx import fit, model, spline


def trunc_normal_dataset(seed=0, n=400, beta=(0.8, -0.5), bounds=(-4.0, 4.0),
                         quad_nodes=201):
    """Small truncated-normal regression dataset with known support."""
    rng = np.random.default_rng(seed)
    p = len(beta)
    x = rng.standard_normal((n, p))
    theta = x @ np.asarray(beta)
    lo, hi = bounds
    y = truncnorm.ppf(rng.uniform(size=n), lo - theta, hi - theta, loc=theta)
    support = model.ContinuousSupport(lo, hi, quad_nodes)
    return fit.make_dataset(x, y, support)


def bernoulli_dataset(seed=0, n=600, beta=(-0.5, 0.5, 1.0)):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, len(beta)))
    prob = 1.0 / (1.0 + np.exp(-(x @ np.asarray(beta))))
    y = (rng.uniform(size=n) < prob).astype(float)
    return fit.make_dataset(x, y, model.DiscreteSupport(1))


def poisson_dataset(seed=0, n=500, beta=(0.0, 1.0)):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.5, 1.0, size=(n, len(beta)))
    y = rng.poisson(np.exp(x @ np.asarray(beta))).astype(float)
    return fit.make_dataset(x, y, model.DiscreteSupport(int(y.max())))


def random_basis(seed=0, lo=0.0, hi=1.0, n_interior=3, order=4):
    rng = np.random.default_rng(seed)
    interior = np.sort(rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo),
                                   n_interior))
    knots = spline.KnotVector(interior=interior, lo=lo, hi=hi, order=order)
    return spline.SplineBasis(knots)


def fd_gradient(func, x0, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    for k in range(x0.size):
        step = h * (1.0 + abs(x0[k]))
        hi, lo = x0.copy(), x0.copy()
        hi[k] += step
        lo[k] -= step
        grad[k] = (func(hi) - func(lo)) / (2.0 * step)
    return grad


def fd_hessian(func, x0, h=1e-4):
    """Central finite-difference Hessian of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    hess = np.zeros((d, d))
    steps = h * (1.0 + np.abs(x0))
    f0 = func(x0)
    for i in range(d):
        for j in range(i, d):
            if i == j:
                hi, lo = x0.copy(), x0.copy()
                hi[i] += steps[i]
                lo[i] -= steps[i]
                hess[i, i] = (func(hi) - 2.0 * f0 + func(lo)) / steps[i] ** 2
            else:
                pp, pm, mp_, mm = (x0.copy() for _ in range(4))
                pp[i] += steps[i]; pp[j] += steps[j]
                pm[i] += steps[i]; pm[j] -= steps[j]
                mp_[i] -= steps[i]; mp_[j] += steps[j]
                mm[i] -= steps[i]; mm[j] -= steps[j]
                hess[i, j] = hess[j, i] = (
                    func(pp) - func(pm) - func(mp_) + func(mm)
                ) / (4.0 * steps[i] * steps[j])
    return hess


@pytest.fixture
def cubic_bernstein():
    """Clamped cubic with no interior knots on [0, 1]: the Bernstein basis."""
    knots = spline.KnotVector(interior=np.array([]), lo=0.0, hi=1.0, order=4)
    return spline.SplineBasis(knots)
