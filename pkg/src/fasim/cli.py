"""Command-line front door.

Every run emits a provenance header (version, resolved config, root seed)
into its primary output so any figure-style artifact can be reproduced
byte-for-byte from the header alone.  Exit codes: 0 success, 1 invalid
input (single-line JSON on stderr), 2 internal failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._parallel import default_threads
from .core_data import SeedSpec, load_csv
from .estimate import fit_fasim
from .exceptions import FasimError, InvalidInputError
from .fast import fast_test
from .forecast import ForecastConfig, moving_window_forecast
from .inference import InferenceConfig, infer_fasim
from .simulate import (
    DgpConfig,
    NoiseSpec,
    OutlierSpec,
    n_grid_for_rates,
    run_coverage,
    run_estimation_error,
    run_size_power,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through exit code 1
        raise InvalidInputError(message)


def _provenance(command: str, args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {
        "version": __version__,
        "command": command,
        "config": cfg,
        "root_seed": getattr(args, "seed", None),
    }


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
            if not text.endswith("\n"):
                fh.write("\n")


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def _load_dataset(args) -> "Dataset":
    if args.response is None and args.response_index is None:
        raise InvalidInputError("missing required flag --response or --response-index")
    return load_csv(args.input, response=args.response, response_index=args.response_index)


def _add_io_flags(p: _Parser) -> None:
    p.add_argument("--input", required=True, help="input CSV with header row")
    p.add_argument("--response", default=None, help="response column name")
    p.add_argument("--response-index", type=int, default=None, dest="response_index")
    p.add_argument("--output", default=None, help="output path (default stdout)")


def _add_common_flags(p: _Parser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default FASIM_THREADS or cpu count)")


def _add_factor_flags(p: _Parser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--factors", type=int, default=None, help="fixed number of factors")
    g.add_argument("--auto-factors", action="store_true", dest="auto_factors",
                   help="eigenvalue-ratio selection (default)")


def _cmd_test(args) -> int:
    ds = _load_dataset(args)
    res = fast_test(
        ds, K=args.factors, B=args.bootstrap, alpha=args.alpha,
        seed=SeedSpec(args.seed),
    )
    out = {
        "provenance": _provenance("test", args),
        "M_n": res.M_n,
        "critical_value": res.critical_value,
        "p_value": res.p_value,
        "reject": res.reject,
        "K": res.K,
        "B": res.B,
    }
    _emit(_json_dumps(out), args.output)
    return 0


def _cmd_fit(args) -> int:
    ds = _load_dataset(args)
    fit = fit_fasim(
        ds, K=args.factors, lam=args.lam, seed=SeedSpec(args.seed),
        folds=args.cv_folds, standardize=args.standardize,
    )
    nz = {int(j): float(fit.beta_hat[j]) for j in np.flatnonzero(fit.beta_hat)}
    out = {
        "provenance": _provenance("fit", args),
        "beta_hat": nz,
        "gamma_hat": [float(g) for g in fit.gamma_hat],
        "lambda": fit.lam,
        "K": int(fit.gamma_hat.shape[0]),
        "converged": fit.converged,
    }
    _emit(_json_dumps(out), args.output)
    return 0


def _cmd_infer(args) -> int:
    ds = _load_dataset(args)
    cfg = InferenceConfig(
        K=args.factors, lam=args.lam, folds=args.cv_folds, delta=args.delta,
        alpha=args.alpha, seed=SeedSpec(args.seed), standardize=args.standardize,
    )
    res = infer_fasim(ds, cfg)
    names = ds.names if ds.names is not None else tuple(str(j) for j in range(ds.p))
    lines = [f"# provenance: {_json_dumps(_provenance('infer', args))}"]
    lines.append("index,name,beta_hat,beta_tilde,sd,ci_lower,ci_upper")
    for j in range(ds.p):
        lines.append(
            f"{j},{names[j]},{float(res.beta_hat[j])!r},{float(res.beta_tilde[j])!r},"
            f"{float(res.sigma_z[j])!r},{float(res.ci_lower[j])!r},{float(res.ci_upper[j])!r}"
        )
    _emit("\n".join(lines), args.output)
    return 0


def _parse_outliers(text: Optional[str]) -> Optional[OutlierSpec]:
    if text is None or text == "none":
        return None
    try:
        frac, mult = text.split(":")
        return OutlierSpec(fraction=float(frac), multiplier=float(mult))
    except ValueError:
        raise InvalidInputError(f"cannot parse outlier spec {text!r}; want FRACTION:MULTIPLIER") from None


def _dgp_from_args(args, u_dist_default: str) -> DgpConfig:
    return DgpConfig(
        model=args.model,
        n=args.n,
        p=args.p,
        K=args.k,
        s=args.s,
        omega=args.omega,
        gamma=tuple([args.gamma_value] * args.k),
        factor_case={"i": "iid_normal", "ii": "ar1"}.get(args.factor_case, args.factor_case),
        noise=NoiseSpec.parse(args.noise),
        u_dist=args.u_dist if args.u_dist is not None else u_dist_default,
        outliers=_parse_outliers(args.outliers),
        seed=SeedSpec(args.seed),
    )


def _emit_report(report, command: str, args) -> int:
    header = f"# provenance: {_json_dumps(_provenance(command, args))}"
    csv_text = "\n".join([header] + report.to_csv_lines())
    _emit(csv_text, args.output)
    if args.output is not None:
        sys.stdout.write(report.to_json() + "\n")
    if getattr(args, "points_json", None):
        _emit(report.to_json(), args.points_json)
    return 0


def _cmd_simulate_power(args) -> int:
    cfg = _dgp_from_args(args, u_dist_default="toeplitz")
    grid = [float(w) for w in args.omega_grid.split(",")]
    report = run_size_power(
        grid, cfg, R=args.reps, alpha=args.alpha, B=args.bootstrap,
        threads=args.threads,
    )
    return _emit_report(report, "simulate-power", args)


def _cmd_simulate_estimation(args) -> int:
    cfg = _dgp_from_args(args, u_dist_default="iid_normal")
    if args.n_grid:
        n_grid = [int(v) for v in args.n_grid.split(",")]
    else:
        rates = [float(v) for v in args.rates.split(",")]
        n_grid = n_grid_for_rates(rates, cfg.s, cfg.p)
    report = run_estimation_error(
        n_grid, cfg, R=args.reps, N_mc=args.oracle_draws, threads=args.threads
    )
    return _emit_report(report, "simulate-estimation", args)


def _cmd_simulate_coverage(args) -> int:
    cfg = _dgp_from_args(args, u_dist_default="iid_normal")
    report = run_coverage(
        cfg, R=args.reps, alpha=args.alpha, delta=args.delta,
        N_mc=args.oracle_draws, threads=args.threads,
    )
    return _emit_report(report, "simulate-coverage", args)


def _cmd_forecast(args) -> int:
    ds = _load_dataset(args)
    cfg = ForecastConfig(
        K=args.factors, lam=args.lam, folds=args.cv_folds,
        n_knots=args.knots, seed=SeedSpec(args.seed),
    )
    report = moving_window_forecast(ds, window=args.window, config=cfg, threads=args.threads)
    header = f"# provenance: {_json_dumps(_provenance('forecast', args))}"
    lines = [header, "t,Y,Y_hat"]
    for t, y, yhat in report.predictions:
        lines.append(f"{int(t)},{float(y)!r},{float(yhat)!r}")
    _emit("\n".join(lines), args.output)
    sys.stdout.write(_json_dumps({"mse": report.mse}) + "\n")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="fasim", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("test", help="factor-adequacy score test")
    _add_io_flags(p)
    _add_common_flags(p)
    _add_factor_flags(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bootstrap", type=int, default=2000)
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("fit", help="penalized transform-scale fit")
    _add_io_flags(p)
    _add_common_flags(p)
    _add_factor_flags(p)
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--cv-folds", type=int, default=10, dest="cv_folds")
    p.add_argument("--standardize", action="store_true")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("infer", help="debiased coefficients and intervals")
    _add_io_flags(p)
    _add_common_flags(p)
    _add_factor_flags(p)
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--cv-folds", type=int, default=10, dest="cv_folds")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--cv-delta", action="store_true", dest="cv_delta",
                   help="cross-validate the constraint level")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_infer)

    for name, fn, extra in (
        ("simulate-power", _cmd_simulate_power, "power"),
        ("simulate-estimation", _cmd_simulate_estimation, "estimation"),
        ("simulate-coverage", _cmd_simulate_coverage, "coverage"),
    ):
        p = sub.add_parser(name, help=f"desk-scale {extra} experiment")
        _add_common_flags(p)
        p.add_argument("--model", choices=["linear", "nonlinear"], default="linear")
        p.add_argument("--n", type=int, default=200)
        p.add_argument("--p", type=int, default=200)
        p.add_argument("--k", type=int, default=2)
        p.add_argument("--s", type=int, default=3)
        p.add_argument("--omega", type=float, default=0.5)
        p.add_argument("--gamma-value", type=float, default=0.5, dest="gamma_value")
        p.add_argument("--factor-case", choices=["i", "ii", "iid_normal", "ar1"],
                       default="i", dest="factor_case")
        p.add_argument("--noise", default="gaussian:0.25",
                       help="gaussian:VAR | uniform:HALFWIDTH | t:DF")
        p.add_argument("--u-dist", choices=["toeplitz", "iid_normal"], default=None,
                       dest="u_dist")
        p.add_argument("--outliers", default=None, help="FRACTION:MULTIPLIER")
        p.add_argument("--reps", type=int, default=200)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--output", default=None)
        p.add_argument("--points-json", default=None, dest="points_json",
                       help="also write report rows as JSON")
        if extra == "power":
            p.add_argument("--omega-grid", default="0,0.1,0.2,0.3,0.4,0.5",
                           dest="omega_grid")
            p.add_argument("--bootstrap", type=int, default=500)
        if extra == "estimation":
            p.add_argument("--rates", default="0.10,0.15,0.20,0.25,0.30")
            p.add_argument("--n-grid", default=None, dest="n_grid")
            p.add_argument("--oracle-draws", type=int, default=1_000_000,
                           dest="oracle_draws")
        if extra == "coverage":
            p.add_argument("--delta", type=float, default=None)
            p.add_argument("--oracle-draws", type=int, default=1_000_000,
                           dest="oracle_draws")
        p.set_defaults(func=fn)

    p = sub.add_parser("forecast", help="moving-window forecasting")
    _add_io_flags(p)
    _add_common_flags(p)
    _add_factor_flags(p)
    p.add_argument("--window", type=int, default=90)
    p.add_argument("--knots", type=int, default=6)
    p.add_argument("--lambda", type=float, default=None, dest="lam")
    p.add_argument("--cv-folds", type=int, default=10, dest="cv_folds")
    p.set_defaults(func=_cmd_forecast)

    return parser


def parse_and_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (InvalidInputError, FasimError) as exc:
        sys.stderr.write(_json_dumps({"error": str(exc)}) + "\n")
        return 1
    except SystemExit:
        raise
    except Exception as exc:  # internal failure contract
        sys.stderr.write(_json_dumps({"error": str(exc), "type": "internal"}) + "\n")
        return 2


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
