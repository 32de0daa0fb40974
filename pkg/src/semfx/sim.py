"""Monte Carlo designs: data generators, exact effect truths, replicate runner.

Built-in scenario presets cover truncated/plain normal regression with mildly
correlated Gaussian covariates, truncated/plain gamma regression with uniform
covariates, and Bernoulli / Poisson / negative binomial counts.
Replicates draw from counter-based per-replicate RNG streams so serial and
parallel runs produce bit-identical results.

True marginal and quantile effects are evaluated to high precision by tensor
quadrature over the covariate law combined with exact (closed-form or
quadrature) conditional moments under the generating law.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.polynomial.hermite_e as herme
import numpy.polynomial.legendre as npleg
from scipy.stats import gamma as gamma_dist
from scipy.stats import truncnorm

from . import baselines, effects, inference
from .errors import ConfigError, ScenarioError, SemfxError
from .fit import Dataset, fit_mle, infer_continuous_support, make_dataset
from .model import ContinuousModel, ContinuousSupport, DiscreteSupport

__all__ = [
    "Scenario",
    "EstimandRow",
    "SimulationReport",
    "TrueEffects",
    "PRESETS",
    "preset",
    "generate",
    "natural_beta",
    "true_effects",
    "run_scenario",
]

RESPONSE_LAWS = ("trunc-normal", "normal", "trunc-gamma", "gamma",
                 "bernoulli", "poisson", "negbinomial")
DEFAULT_TAUS = (0.05, 0.25, 0.50, 0.75, 0.95)
MAX_FAILURE_FRACTION = 0.05


@dataclass(frozen=True)
class Scenario:
    """One simulation design; hyperparameters on the generator scale."""

    name: str
    covariate_law: str          # "mvnormal" (corr 0.1^|k-l|) or "uniform" [0.5, 1]
    response_law: str
    beta: tuple
    n: int = 1000
    replicates: int = 1000
    tau_list: tuple = ()
    seed: int = 0
    sigma: float = 1.0          # normal laws
    trunc: tuple | None = None  # (a, b) truncation window
    alpha: float = 5.0          # gamma shape
    nb_r: int = 2               # negative binomial size
    quad_nodes: int = 201

    def __post_init__(self):
        if self.response_law not in RESPONSE_LAWS:
            raise ConfigError(f"unknown response law '{self.response_law}'")
        if self.covariate_law not in ("mvnormal", "uniform"):
            raise ConfigError(f"unknown covariate law '{self.covariate_law}'")
        if self.n < 10 or self.replicates < 1:
            raise ConfigError("need n >= 10 and replicates >= 1")
        for tau in self.tau_list:
            if not 0.0 < tau < 1.0:
                raise ConfigError("tau levels must lie inside (0, 1)")
        if self.tau_list and self.response_law in ("bernoulli", "poisson",
                                                   "negbinomial"):
            raise ConfigError("quantile levels undefined for discrete laws")

    @property
    def p(self) -> int:
        return len(self.beta)


def preset(name: str, n: int = 1000, replicates: int = 1000, seed: int = 0,
           tau_list: tuple | None = None, quad_nodes: int = 201) -> Scenario:
    """Named scenario presets for the built-in coverage studies."""
    base = dict(n=n, replicates=replicates, seed=seed, quad_nodes=quad_nodes)
    if name == "trunc-normal":
        taus = DEFAULT_TAUS if tau_list is None else tuple(tau_list)
        return Scenario(name=name, covariate_law="mvnormal",
                        response_law="trunc-normal", beta=(1.0, 2.0, 3.0),
                        sigma=1.0, trunc=(-5.0, 5.0), tau_list=taus, **base)
    if name == "normal":
        taus = DEFAULT_TAUS if tau_list is None else tuple(tau_list)
        return Scenario(name=name, covariate_law="mvnormal",
                        response_law="normal", beta=(1.0, 2.0, 3.0),
                        sigma=1.0, tau_list=taus, **base)
    if name == "trunc-gamma":
        taus = DEFAULT_TAUS if tau_list is None else tuple(tau_list)
        return Scenario(name=name, covariate_law="uniform",
                        response_law="trunc-gamma", beta=(0.5, 1.0),
                        alpha=5.0, trunc=(0.0, 2.0), tau_list=taus, **base)
    if name == "gamma":
        taus = DEFAULT_TAUS if tau_list is None else tuple(tau_list)
        return Scenario(name=name, covariate_law="uniform",
                        response_law="gamma", beta=(0.5, 1.0),
                        alpha=5.0, tau_list=taus, **base)
    if name == "bernoulli":
        return Scenario(name=name, covariate_law="mvnormal",
                        response_law="bernoulli", beta=(-0.5, 0.5, 1.0), **base)
    if name == "poisson":
        return Scenario(name=name, covariate_law="uniform",
                        response_law="poisson", beta=(0.0, 1.0), **base)
    if name == "negbinomial":
        return Scenario(name=name, covariate_law="uniform",
                        response_law="negbinomial", beta=(0.0, -1.0), **base)
    raise ConfigError(f"unknown scenario preset '{name}'")


PRESETS = ("trunc-normal", "normal", "trunc-gamma", "gamma", "bernoulli",
           "poisson", "negbinomial")


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream: deterministic in (seed, index), order-free."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))


def _mvnormal_cov(p: int) -> np.ndarray:
    k = np.arange(p)
    return 0.1 ** np.abs(k[:, None] - k[None, :])


def _draw_covariates(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    if scenario.covariate_law == "mvnormal":
        chol = np.linalg.cholesky(_mvnormal_cov(scenario.p))
        return rng.standard_normal((scenario.n, scenario.p)) @ chol.T
    return rng.uniform(0.5, 1.0, size=(scenario.n, scenario.p))


def _draw_response(scenario: Scenario, theta: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    law = scenario.response_law
    if law == "trunc-normal":
        a, b = scenario.trunc
        u = rng.uniform(size=theta.size)
        lo = (a - theta) / scenario.sigma
        hi = (b - theta) / scenario.sigma
        return truncnorm.ppf(u, lo, hi, loc=theta, scale=scenario.sigma)
    if law == "normal":
        return theta + scenario.sigma * rng.standard_normal(theta.size)
    if law == "trunc-gamma":
        _, b = scenario.trunc
        scale = 1.0 / (scenario.alpha * theta)
        u = rng.uniform(size=theta.size)
        cap = gamma_dist.cdf(b, scenario.alpha, scale=scale)
        return gamma_dist.ppf(u * cap, scenario.alpha, scale=scale)
    if law == "gamma":
        scale = 1.0 / (scenario.alpha * theta)
        u = rng.uniform(size=theta.size)
        return gamma_dist.ppf(u, scenario.alpha, scale=scale)
    if law == "bernoulli":
        prob = 1.0 / (1.0 + np.exp(-theta))
        return rng.binomial(1, prob).astype(float)
    if law == "poisson":
        return rng.poisson(np.exp(theta)).astype(float)
    if law == "negbinomial":
        prob_success = 1.0 - np.exp(theta)
        if np.any(prob_success <= 0):
            raise ConfigError("negative binomial needs exp(beta'x) < 1")
        return rng.negative_binomial(scenario.nb_r, prob_success).astype(float)
    raise ConfigError(f"unknown response law '{law}'")


def _support_for(scenario: Scenario, y: np.ndarray):
    law = scenario.response_law
    if law in ("trunc-normal", "trunc-gamma"):
        a, b = scenario.trunc
        return ContinuousSupport(float(a), float(b), scenario.quad_nodes)
    if law in ("normal", "gamma"):
        return infer_continuous_support(y, quad_nodes=scenario.quad_nodes)
    if law == "bernoulli":
        return DiscreteSupport(1)
    return DiscreteSupport(int(np.max(y)))


def generate(scenario: Scenario, replicate_index: int) -> Dataset:
    """Deterministic dataset for (scenario.seed, replicate_index)."""
    rng = replicate_rng(scenario.seed, replicate_index)
    x = _draw_covariates(scenario, rng)
    theta = x @ np.asarray(scenario.beta)
    y = _draw_response(scenario, theta, rng)
    return make_dataset(x, y, _support_for(scenario, y))


def natural_beta(scenario: Scenario) -> np.ndarray:
    """Generator coefficients mapped to the tilt natural-parameter scale."""
    beta = np.asarray(scenario.beta, dtype=float)
    law = scenario.response_law
    if law in ("trunc-normal", "normal"):
        return beta / scenario.sigma**2
    if law in ("trunc-gamma", "gamma"):
        return -scenario.alpha * beta
    return beta


def _beta_report_scale(scenario: Scenario) -> float:
    """Factor mapping natural-scale coefficients back to the generator scale,
    under which the tables report the beta rows."""
    law = scenario.response_law
    if law in ("trunc-normal", "normal"):
        return scenario.sigma**2
    if law in ("trunc-gamma", "gamma"):
        return -1.0 / scenario.alpha
    return 1.0


# -- exact effect truths -------------------------------------------------------


@dataclass(frozen=True)
class TrueEffects:
    beta: np.ndarray
    xi: np.ndarray
    eta: dict


def _theta_quadrature(scenario: Scenario, n_nodes: int = 120):
    """Nodes/weights for E[g(beta'X)] under the covariate law."""
    beta = np.asarray(scenario.beta, dtype=float)
    if scenario.covariate_law == "mvnormal":
        s = float(np.sqrt(beta @ _mvnormal_cov(scenario.p) @ beta))
        z, w = herme.hermegauss(n_nodes)
        return s * z, w / w.sum()
    z, w = npleg.leggauss(64)
    half = 0.25  # [0.5, 1] has half-width 1/4
    x1 = 0.75 + half * z
    w1 = w * 0.5  # normalized weights on the interval
    theta = np.add.outer(beta[0] * x1, beta[1] * x1).ravel()
    weights = np.outer(w1, w1).ravel()
    return theta, weights


def _conditional_truth(scenario: Scenario, theta: np.ndarray, taus):
    """Per-theta conditional variance and quantile slopes wrt the natural
    parameter, under the generating law."""
    law = scenario.response_law
    if law == "trunc-normal":
        a, b = scenario.trunc
        sig = scenario.sigma
        support = ContinuousSupport(a, b, 801)
        carrier = lambda y: -(y**2) / (2.0 * sig**2)
        deriv = lambda y: -y / sig**2
        model = ContinuousModel.from_carrier(carrier, support, deriv, n_nodes=801)
        eta_nat = theta / sig**2
        p_mat, logz = model.masses(eta_nat)
        ey, ey2 = model.power_moments(p_mat, 2)
        var = ey2 - ey**2
        slopes = {}
        for tau in taus:
            _, _, qp, _ = model.quantile_local(eta_nat, tau, p_mat, logz)
            slopes[tau] = qp
        return var, slopes
    if law == "normal":
        var = np.full(theta.size, scenario.sigma**2)
        return var, {tau: var.copy() for tau in taus}
    if law == "trunc-gamma":
        _, b = scenario.trunc
        alpha = scenario.alpha
        support = ContinuousSupport(0.0, b, 801)
        carrier = lambda y: (alpha - 1.0) * np.log(np.maximum(y, 1e-300))
        deriv = lambda y: (alpha - 1.0) / y
        model = ContinuousModel.from_carrier(carrier, support, deriv, n_nodes=801)
        eta_nat = -alpha * theta
        p_mat, logz = model.masses(eta_nat)
        ey, ey2 = model.power_moments(p_mat, 2)
        var = ey2 - ey**2
        slopes = {}
        for tau in taus:
            _, _, qp, _ = model.quantile_local(eta_nat, tau, p_mat, logz)
            slopes[tau] = qp
        return var, slopes
    if law == "gamma":
        alpha = scenario.alpha
        var = 1.0 / (alpha * theta**2)
        slopes = {tau: gamma_dist.ppf(tau, alpha) / (alpha**2 * theta**2)
                  for tau in taus}
        return var, slopes
    if law == "bernoulli":
        prob = 1.0 / (1.0 + np.exp(-theta))
        return prob * (1.0 - prob), {}
    if law == "poisson":
        return np.exp(theta), {}
    if law == "negbinomial":
        rate = np.exp(theta)
        return scenario.nb_r * rate / (1.0 - rate) ** 2, {}
    raise ConfigError(f"unknown response law '{law}'")


@lru_cache(maxsize=32)
def _true_effects_cached(scenario: Scenario) -> TrueEffects:
    taus = scenario.tau_list if scenario.response_law in (
        "trunc-normal", "normal", "trunc-gamma", "gamma") else ()
    theta, weights = _theta_quadrature(scenario)
    var, slopes = _conditional_truth(scenario, theta, taus)
    beta_nat = natural_beta(scenario)
    xi = beta_nat * float(weights @ var)
    eta = {tau: beta_nat * float(weights @ slopes[tau]) for tau in taus}
    return TrueEffects(beta=beta_nat, xi=xi, eta=eta)


def true_effects(scenario: Scenario) -> TrueEffects:
    """Exact marginal/quantile effect values under the generating law."""
    return _true_effects_cached(scenario)


# -- replicate runner ------------------------------------------------------------


_BASELINE_FAMILY = {
    "trunc-normal": "normal",
    "normal": "normal",
    "trunc-gamma": "gamma",
    "gamma": "gamma",
    "bernoulli": "bernoulli",
    "poisson": "poisson",
    "negbinomial": "poisson",
}


@dataclass
class EstimandRow:
    """One table row: a single estimand under a single method."""

    estimand: str
    method: str
    truth: float
    abs_bias: float
    sigma_sim: float | None
    mean_se: float
    coverage: float


@dataclass
class SimulationReport:
    scenario: Scenario
    methods: tuple
    n_replicates: int
    n_failed: int
    rows: list

    def row(self, estimand: str, method: str) -> EstimandRow:
        for row in self.rows:
            if row.estimand == estimand and row.method == method:
                return row
        raise KeyError((estimand, method))

    def to_dict(self) -> dict:
        return {
            "scenario": {
                "name": self.scenario.name,
                "response_law": self.scenario.response_law,
                "covariate_law": self.scenario.covariate_law,
                "beta": list(self.scenario.beta),
                "n": self.scenario.n,
                "replicates": self.scenario.replicates,
                "tau_list": list(self.scenario.tau_list),
                "seed": self.scenario.seed,
            },
            "methods": list(self.methods),
            "n_replicates": self.n_replicates,
            "n_failed": self.n_failed,
            "rows": [
                {
                    "estimand": r.estimand,
                    "method": r.method,
                    "truth": r.truth,
                    "abs_bias": r.abs_bias,
                    "sigma_sim": r.sigma_sim,
                    "sigma_est": r.mean_se,
                    "coverage": r.coverage,
                }
                for r in self.rows
            ],
        }


def _estimand_names(scenario: Scenario, taus) -> list:
    names = [f"beta{k + 1}" for k in range(scenario.p)]
    names += [f"xi{k + 1}" for k in range(scenario.p)]
    for tau in taus:
        names += [f"eta_{tau:g}_{k + 1}" for k in range(scenario.p)]
    return names


def _replicate_estimates(scenario: Scenario, index: int, methods, taus) -> dict:
    """(method, estimand) -> (estimate, se) for one replicate."""
    data = generate(scenario, index)
    scale = _beta_report_scale(scenario)
    out = {}
    if "amle" in methods:
        fitted = fit_mle(data)
        blocks = inference.sigma_blocks(fitted, data)
        beta_se = np.sqrt(np.diag(blocks.sigma_beta) / data.n)
        for k in range(data.p):
            out[("amle", f"beta{k + 1}")] = (scale * fitted.beta[k],
                                             abs(scale) * beta_se[k])
        _, sigma_xi = inference.var_xi(fitted, data, blocks)
        xi = effects.marginal_effect(fitted, data)
        xi_se = np.sqrt(np.diag(sigma_xi) / data.n)
        for k in range(data.p):
            out[("amle", f"xi{k + 1}")] = (xi[k], xi_se[k])
        for tau in taus:
            _, sigma_eta = inference.var_eta(fitted, data, blocks, tau)
            eta = effects.quantile_effect(fitted, data, tau)
            eta_se = np.sqrt(np.diag(sigma_eta) / data.n)
            for k in range(data.p):
                out[("amle", f"eta_{tau:g}_{k + 1}")] = (eta[k], eta_se[k])
    if "mle" in methods:
        family = _BASELINE_FAMILY[scenario.response_law]
        pfit = baselines.fit_parametric(data, family)
        beta_gen, beta_gen_se = baselines.generator_scale_beta(pfit)
        for k in range(data.p):
            out[("mle", f"beta{k + 1}")] = (beta_gen[k], beta_gen_se[k])
        quantile_ok = family in ("normal", "gamma")
        rows = baselines.parametric_effects(pfit, data,
                                            taus if quantile_ok else ())
        for row in rows:
            stem = "xi" if row.kind == "marginal" else f"eta_{row.tau:g}_"
            for k in range(data.p):
                out[("mle", f"{stem}{k + 1}")] = (row.point[k], row.se[k])
    return out


def _worker(args):
    scenario, index, methods, taus = args
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return index, _replicate_estimates(scenario, index, methods, taus), None
    except (SemfxError, np.linalg.LinAlgError) as exc:
        return index, None, f"replicate {index}: {exc}"


def run_scenario(scenario: Scenario, methods=("amle", "mle"),
                 workers: int | None = None) -> SimulationReport:
    """Generate -> fit -> effects -> inference across replicates; aggregate."""
    methods = tuple(methods)
    for method in methods:
        if method not in ("amle", "mle"):
            raise ConfigError(f"unknown method '{method}'")
    taus = tuple(scenario.tau_list)
    if workers is None:
        workers = int(os.environ.get("SEMFX_THREADS", "1"))
    truth = true_effects(scenario)
    truth_map = {}
    for k in range(scenario.p):
        truth_map[f"beta{k + 1}"] = float(scenario.beta[k])
        truth_map[f"xi{k + 1}"] = float(truth.xi[k])
    for tau in truth.eta:
        for k in range(scenario.p):
            truth_map[f"eta_{tau:g}_{k + 1}"] = float(truth.eta[tau][k])

    jobs = [(scenario, i, methods, taus) for i in range(scenario.replicates)]
    if workers > 1 and scenario.replicates > 1:
        chunk = max(1, scenario.replicates // (workers * 8))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs, chunksize=chunk))
    else:
        results = [_worker(job) for job in jobs]
    results.sort(key=lambda r: r[0])

    failures = [msg for _, _, msg in results if msg is not None]
    kept = [est for _, est, msg in results if msg is None]
    if len(failures) > MAX_FAILURE_FRACTION * scenario.replicates:
        raise ScenarioError(
            f"{len(failures)} of {scenario.replicates} replicates failed; "
            f"first failure: {failures[0]}")

    rows = []
    estimands = _estimand_names(scenario, taus)
    for method in methods:
        for est_name in estimands:
            pairs = [rep[(method, est_name)] for rep in kept
                     if (method, est_name) in rep]
            if not pairs:
                continue
            values = np.array([p[0] for p in pairs])
            ses = np.array([p[1] for p in pairs])
            truth_val = truth_map[est_name]
            covered = np.abs(values - truth_val) <= inference.Z975 * ses
            rows.append(EstimandRow(
                estimand=est_name,
                method=method,
                truth=truth_val,
                abs_bias=float(np.mean(np.abs(values - truth_val))),
                sigma_sim=float(np.std(values, ddof=1)) if values.size > 1 else None,
                mean_se=float(np.mean(ses)),
                coverage=float(np.mean(covered)),
            ))
    return SimulationReport(scenario=scenario, methods=methods,
                            n_replicates=scenario.replicates,
                            n_failed=len(failures), rows=rows)
