"""Command-line surface: fit, effects, simulate, curve, analyze.

Exit codes: 0 success, 2 parse/usage/data error, 3 convergence or numeric
failure, 4 unsupported operation.  All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import baselines, inference, sim
from .effects import EffectEstimate
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
from .fit import fit_mle, infer_continuous_support, make_dataset
from .model import ContinuousSupport, DiscreteSupport
from .spline import SplineBasis, build_knots

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_CONVERGENCE = 3
EXIT_UNSUPPORTED = 4

DEFAULT_TAUS = (0.05, 0.25, 0.50, 0.75, 0.95)

_PARSE_ERRORS = (DataError, ConfigError, DegenerateKnotsError, OutOfDomainError,
                 CollapseError)
_CONVERGENCE_ERRORS = (NonConvergenceError, DivergenceError, SingularHessianError,
                       SingularInformationError, NumericError,
                       IllConditionedQuantileError, ScenarioError)
_UNSUPPORTED_ERRORS = (UnsupportedResponseError, UnsupportedOrderError)


def _load_table(path, response, covariates):
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot parse CSV '{path}': {exc}") from exc
    if frame.empty or frame.shape[1] == 0:
        raise DataError(f"CSV '{path}' contains no data rows")
    if response not in frame.columns:
        raise DataError(f"response column '{response}' not in CSV header")
    if covariates:
        missing = [c for c in covariates if c not in frame.columns]
        if missing:
            raise DataError(f"covariate column(s) {missing} not in CSV header")
    else:
        covariates = [c for c in frame.columns if c != response]
    if not covariates:
        raise DataError("no covariate columns left after removing the response")
    numeric = {}
    for col in [response] + list(covariates):
        coerced = pd.to_numeric(frame[col], errors="coerce")
        bad = coerced.index[coerced.isna() & frame[col].notna()]
        if len(bad) or coerced.isna().any():
            row = int(bad[0]) if len(bad) else int(coerced.index[coerced.isna()][0])
            raise DataError(f"non-numeric or missing cell at row {row}, "
                            f"column '{col}'")
        numeric[col] = coerced.to_numpy(dtype=float)
    y = numeric[response]
    x = np.column_stack([numeric[c] for c in covariates])
    return x, y, list(covariates)


def _dataset_from_args(args):
    x, y, names = _load_table(args.input, args.response, args.covariates)
    if args.discrete:
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("discrete responses must be nonnegative integers")
        support = DiscreteSupport(int(np.max(y)))
    elif args.support is not None:
        lo, hi = args.support
        support = ContinuousSupport(lo, hi, args.quad_nodes)
    else:
        support = infer_continuous_support(y, quad_nodes=args.quad_nodes)
    return make_dataset(x, y, support), names


def _fit_from_args(args, data):
    basis = None
    if not isinstance(data.support, DiscreteSupport) and args.knots is not None:
        knots = build_knots(data.y, lo=data.support.lo, hi=data.support.hi,
                            n_interior=args.knots)
        basis = SplineBasis(knots)
    return fit_mle(data, basis=basis)


def _effect_records(est: EffectEstimate, names):
    rows = []
    for k, name in enumerate(names):
        rows.append({
            "kind": est.kind,
            "tau": est.tau,
            "covariate": name,
            "estimate": float(est.point[k]),
            "se": float(est.se[k]),
            "ci_lo": float(est.ci_lo[k]),
            "ci_hi": float(est.ci_hi[k]),
            "p_value": float(est.p_value[k]),
            "significant_5pct": bool(est.p_value[k] < 0.05),
        })
    return rows


def _emit(payload_rows, payload_json, args):
    """Write rows as CSV or the full payload as JSON, per --format."""
    text_json = json.dumps(payload_json, indent=2, sort_keys=True) + "\n"
    if args.format == "json":
        out = text_json
    else:
        out = pd.DataFrame(payload_rows).to_csv(index=False)
    if args.output:
        Path(args.output).write_text(out)
    else:
        sys.stdout.write(out)


def _taus_from_args(args, default=()):
    if args.tau is None:
        return tuple(default)
    return tuple(args.tau)


# -- subcommands -----------------------------------------------------------------


def cmd_fit(args) -> int:
    data, names = _dataset_from_args(args)
    fitted = _fit_from_args(args, data)
    blocks = inference.sigma_blocks(fitted, data)
    beta_row = inference.beta_estimate(fitted, blocks, names=names)
    aic, bic = inference.aic_bic(fitted)
    payload = {
        "command": "fit",
        "n": data.n,
        "p": data.p,
        "response_type": "discrete" if fitted.is_discrete else "continuous",
        "loglik": fitted.loglik,
        "aic": aic,
        "bic": bic,
        "iterations": fitted.iterations,
        "grad_norm": fitted.grad_norm,
        "converged": True,
        "gamma": [float(g) for g in fitted.gamma],
        "coefficients": _effect_records(beta_row, names),
    }
    if not fitted.is_discrete:
        payload["support"] = [fitted.support.lo, fitted.support.hi]
        payload["interior_knots"] = [float(t) for t in fitted.basis.knots.interior]
    _emit(payload["coefficients"], payload, args)
    return EXIT_OK


def cmd_effects(args) -> int:
    data, names = _dataset_from_args(args)
    fitted = _fit_from_args(args, data)
    if fitted.is_discrete:
        if args.tau:
            raise UnsupportedResponseError(
                "quantile effects are not defined for a discrete response")
        taus = ()
    else:
        taus = _taus_from_args(args, DEFAULT_TAUS)
    blocks = inference.sigma_blocks(fitted, data)
    rows = []
    for est in inference.estimate_effects(fitted, data, taus, blocks, names=names):
        rows.extend(_effect_records(est, names))
    payload = {"command": "effects", "n": data.n, "tau_list": list(taus),
               "effects": rows}
    _emit(rows, payload, args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.scenario in sim.PRESETS:
        scenario = sim.preset(args.scenario, n=args.n, replicates=args.replicates,
                              seed=args.seed, tau_list=args.tau)
    elif os.path.exists(args.scenario):
        with open(args.scenario) as handle:
            conf = json.load(handle)
        conf.setdefault("n", args.n)
        conf.setdefault("replicates", args.replicates)
        conf.setdefault("seed", args.seed)
        for key in ("beta", "tau_list", "trunc"):
            if key in conf and conf[key] is not None:
                conf[key] = tuple(conf[key])
        scenario = sim.Scenario(**conf)
    else:
        raise ConfigError(f"unknown scenario preset or file '{args.scenario}'")
    report = sim.run_scenario(scenario, workers=args.workers)
    payload = report.to_dict()
    rows = payload["rows"]
    _emit(rows, payload, args)
    if args.output:
        side = Path(args.output).with_suffix(".json")
        side.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_curve(args) -> int:
    data, _ = _dataset_from_args(args)
    if isinstance(data.support, DiscreteSupport):
        raise UnsupportedResponseError("carrier curves require a continuous fit")
    fitted = _fit_from_args(args, data)
    blocks = inference.sigma_blocks(fitted, data)
    grid = np.linspace(data.support.lo, data.support.hi, args.grid_size)
    band = inference.curve_band(fitted, blocks, grid)
    rows = [{"y": float(r[0]), "c_hat": float(r[1]), "band_lo": float(r[2]),
             "band_hi": float(r[3])} for r in band]
    payload = {"command": "curve", "grid_size": args.grid_size, "curve": rows}
    _emit(rows, payload, args)
    return EXIT_OK


def cmd_analyze(args) -> int:
    data, names = _dataset_from_args(args)
    fitted = _fit_from_args(args, data)
    blocks = inference.sigma_blocks(fitted, data)
    taus = () if fitted.is_discrete else _taus_from_args(args, DEFAULT_TAUS)
    rows = []
    for est in inference.estimate_effects(fitted, data, taus, blocks, names=names):
        for rec in _effect_records(est, names):
            rec["method"] = "amle"
            rows.append(rec)
    aic, bic = inference.aic_bic(fitted)
    criteria = [{"method": "amle", "aic": aic, "bic": bic}]
    for family in ("normal", "gamma"):
        if fitted.is_discrete:
            continue
        if family == "gamma" and np.any(data.y <= 0):
            continue
        try:
            pfit = baselines.fit_parametric(data, family)
        except SemfxError:
            continue
        df = data.p + 1 + len(pfit.dispersion)
        criteria.append({
            "method": family,
            "aic": -2.0 * pfit.loglik + 2.0 * df,
            "bic": -2.0 * pfit.loglik + np.log(data.n) * df,
        })
        for est in baselines.parametric_effects(pfit, data, taus):
            for rec in _effect_records(est, names):
                rec["method"] = family
                rows.append(rec)
    payload = {"command": "analyze", "criteria": criteria, "effects": rows}
    _emit(rows, payload, args)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _add_data_flags(parser):
    parser.add_argument("--input", required=True, help="CSV file with a header row")
    parser.add_argument("--response", required=True, help="response column name")
    parser.add_argument("--covariates", nargs="*", default=None,
                        help="covariate columns (default: all other columns)")
    parser.add_argument("--support", type=float, nargs=2, metavar=("LO", "HI"),
                        default=None, help="continuous support bounds")
    parser.add_argument("--discrete", action="store_true",
                        help="treat the response as discrete levels 0..max")
    parser.add_argument("--knots", type=int, default=None,
                        help="override the interior knot count")
    parser.add_argument("--quad-nodes", type=int, default=201, dest="quad_nodes",
                        help="quadrature node budget")


def _add_common_flags(parser):
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    parser.add_argument("--output", default=None, help="output path (default stdout)")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semfx",
        description="Semiparametric exponential-tilt regression: coefficient, "
                    "marginal-effect, and quantile-effect estimation with "
                    "asymptotic inference.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit the model and report coefficients")
    _add_data_flags(p_fit)
    _add_common_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_eff = sub.add_parser("effects", help="marginal and quantile effect table")
    _add_data_flags(p_eff)
    _add_common_flags(p_eff)
    p_eff.add_argument("--tau", type=float, nargs="*", default=None,
                       help="quantile levels (default 0.05 0.25 0.5 0.75 0.95)")
    p_eff.set_defaults(func=cmd_effects)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    p_sim.add_argument("scenario", help="preset name or scenario JSON file")
    p_sim.add_argument("--replicates", type=int, default=1000)
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--workers", type=int, default=None,
                       help="worker processes (default $SEMFX_THREADS or 1)")
    p_sim.add_argument("--tau", type=float, nargs="*", default=None)
    _add_common_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_curve = sub.add_parser("curve", help="fitted carrier curve with 95% band")
    _add_data_flags(p_curve)
    _add_common_flags(p_curve)
    p_curve.add_argument("--grid-size", type=int, default=200, dest="grid_size")
    p_curve.set_defaults(func=cmd_curve)

    p_an = sub.add_parser("analyze",
                          help="fit + effects + AIC/BIC against parametric baselines")
    _add_data_flags(p_an)
    _add_common_flags(p_an)
    p_an.add_argument("--tau", type=float, nargs="*", default=None)
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UNSUPPORTED_ERRORS as exc:
        print(f"semfx: unsupported operation: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except _CONVERGENCE_ERRORS as exc:
        print(f"semfx: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except _PARSE_ERRORS as exc:
        print(f"semfx: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
