"""Command-line front end: fit, predict, simulate, bench.

Exit codes: 0 success, 2 user/validation error, 1 internal error. The seed
falls back to the NVCSSL_SEED environment variable when not given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import simbench
from .baselines import PenaltySpec, fit_penalized
from .data_model import center_response, load_long_csv, write_long_csv
from .em_fitters import (
    eb_working_covariance,
    fit_nvcssl,
    fit_robustified,
    fit_unstructured,
    load_model,
    predict,
    save_model,
    select_xi,
)
from .errors import UserError
from .spline_basis import build_design, make_basis, write_curve_csv
from .ssgl_math import DEFAULT_ATOMS, DEFAULT_LADDER, DEFAULT_XI_GRID, SSGLConfig

FIT_METHODS = ("nvcssl", "robustified", "unstructured", "glasso", "gscad", "gmcp")


def _seed_from(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("NVCSSL_SEED")
    return int(env) if env else 0


def _parse_grid(text, cast=float):
    if ":" in text and cast is int:
        lo, hi = text.split(":")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(cast(v) for v in text.split(","))


def _config_from(args, p=None) -> SSGLConfig:
    kwargs = {}
    if args.ladder:
        kwargs["lambda0_ladder"] = _parse_grid(args.ladder)
    if args.lambda1 is not None:
        kwargs["lambda1"] = args.lambda1
    if args.atoms:
        kwargs["rho_atoms"] = _parse_grid(args.atoms)
    if args.a is not None:
        kwargs["a"] = args.a
    if args.b is not None:
        kwargs["b"] = args.b
    if args.em_tol is not None:
        kwargs["em_tol"] = args.em_tol
    if args.em_max_iter is not None:
        kwargs["em_max_iter"] = args.em_max_iter
    return SSGLConfig(**kwargs)


def cmd_fit(args) -> int:
    ds = load_long_csv(args.input)
    if not args.no_center:
        ds = center_response(ds)
    cfg = _config_from(args)
    os.makedirs(args.output_dir, exist_ok=True)
    if args.time_range:
        lo, hi = (float(v) for v in args.time_range.split(":"))
    else:
        lo, hi = float(np.min(ds.stacked_times)), float(np.max(ds.stacked_times))

    def basis_at(d):
        return make_basis(lo, hi, d)

    if args.method == "nvcssl":
        if args.d_grid:
            best = None
            for d in sorted(_parse_grid(args.d_grid, int)):
                cand = fit_nvcssl(ds, build_design(ds, basis_at(d)), cfg, args.structure)
                if best is None or cand.aicc < best.aicc:
                    best = cand
            fit = best
        else:
            fit = fit_nvcssl(ds, build_design(ds, basis_at(args.d)), cfg, args.structure)
    elif args.method in ("robustified", "unstructured"):
        design = build_design(ds, basis_at(args.d))
        if args.method == "unstructured":
            fit = fit_unstructured(ds, design, cfg)
        else:
            if args.working == "eb":
                s2, rho, S_list = eb_working_covariance(ds, design)
                eb = (s2, rho)
            else:
                S_list, eb = None, None
            if args.xi is not None:
                fit = fit_robustified(ds, design, cfg, S_list, args.xi, eb_estimates=eb)
            else:
                grid = _parse_grid(args.xi_grid) if args.xi_grid else DEFAULT_XI_GRID
                best_xi, fits = select_xi(ds, design, cfg, S_list, grid, eb_estimates=eb)
                fit = fits[best_xi]
    else:
        penalty = PenaltySpec(kind=args.method)
        if args.d_grid:
            fit = fit_penalized(ds, None, penalty, d_grid=_parse_grid(args.d_grid, int),
                                time_range=(lo, hi))
        else:
            fit = fit_penalized(ds, build_design(ds, basis_at(args.d)), penalty)

    model_path = os.path.join(args.output_dir, "model.json")
    curves_path = os.path.join(args.output_dir, "curves.csv")
    save_model(fit, model_path)
    write_curve_csv(fit.basis, fit.gamma, fit.variable_names, curves_path, num=args.curve_points)

    summary = {
        "method": fit.method,
        "d": fit.basis.d,
        "selected": [fit.variable_names[k] for k in fit.selected],
        "n_selected": len(fit.selected),
        "theta_hat": fit.theta_hat,
        "sigma2_hat": fit.sigma2_hat,
        "rho_hat": fit.rho_hat,
        "xi": fit.xi,
        "aicc": fit.aicc,
        "converged": fit.converged,
    }
    summary_path = os.path.join(args.output_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    if args.verbose:
        print(json.dumps(summary, indent=1))
    print(f"wrote {model_path}, {curves_path}, {summary_path}")
    return 0


def cmd_predict(args) -> int:
    fit = load_model(args.model)
    ds = load_long_csv(args.input)
    design = build_design(ds, fit.basis)
    yhat = predict(fit, design)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("subject,time,y_hat\n")
        row = 0
        for sid, t in zip(ds.subject_ids, ds.times):
            for j in range(t.size):
                fh.write(f"{sid},{t[j]:.12g},{yhat[row]:.12g}\n")
                row += 1
    print(f"wrote {args.output}")
    return 0


def cmd_simulate(args) -> int:
    overrides = {}
    if args.n is not None:
        overrides["n"] = args.n
    if args.p is not None:
        overrides["p"] = args.p
    if args.rho is not None:
        overrides["rho"] = args.rho
    if args.structure:
        overrides["structure"] = args.structure
    if args.n_test is not None:
        overrides["n_test_subjects"] = args.n_test
    scn = simbench.Scenario.default(args.scenario.lower(), seed=_seed_from(args), **overrides)
    train, test, truth = simbench.generate(scn)
    os.makedirs(args.output_dir, exist_ok=True)
    train_path = os.path.join(args.output_dir, "train.csv")
    write_long_csv(train, train_path)
    paths = [train_path]
    if test is not None:
        test_path = os.path.join(args.output_dir, "test.csv")
        write_long_csv(test, test_path)
        paths.append(test_path)

    grid = np.linspace(*scn.time_range, 201)
    truth_doc = {
        "scenario": scn.kind, "n": scn.n, "p": scn.p, "rho": scn.rho,
        "structure": scn.structure, "sigma2": scn.sigma2, "seed": scn.seed,
        "n_test_subjects": scn.n_test_subjects,
        "support": [f"x{k + 1}" for k in truth.support],
        "beta_grid": {"t": grid.tolist(),
                      **{f"x{k + 1}": fn(grid).tolist()
                         for k, fn in zip(truth.support, truth.betas)}},
    }
    truth_path = os.path.join(args.output_dir, "truth.json")
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth_doc, fh)
    paths.append(truth_path)
    print("wrote " + ", ".join(paths))
    return 0


def cmd_bench(args) -> int:
    cfg = simbench.load_bench_config(args.config)
    if args.threads is not None:
        from dataclasses import replace
        cfg = replace(cfg, threads=args.threads)
    if args.output:
        from dataclasses import replace
        cfg = replace(cfg, output=args.output)
    if not cfg.output:
        raise UserError("no output path: set 'output' in the config or pass --output")
    rows = simbench.run_benchmark(cfg)
    failures = [r for r in rows if r.error]
    print(f"wrote {cfg.output} ({len(rows)} rows, {len(failures)} failed)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvcssl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model to a long-format CSV")
    fit.add_argument("--input", required=True, help="long CSV: subject,time,y,<covariates>")
    fit.add_argument("--output-dir", required=True, help="directory for model.json/curves.csv/summary.json")
    fit.add_argument("--method", default="nvcssl", choices=FIT_METHODS, help="fitting method (default: nvcssl)")
    fit.add_argument("--structure", default="ar1", choices=("ar1", "cs"), help="error correlation structure (default: ar1)")
    fit.add_argument("--d", type=int, default=8, help="basis dimension (default: 8)")
    fit.add_argument("--d-grid", default=None, help="tune d on this grid, e.g. 4:12 or 4,6,8")
    fit.add_argument("--time-range", default=None,
                     help="basis span as LO:HI (default: observed time range)")
    fit.add_argument("--xi", type=float, default=None, help="fractional power in (0,1); default tunes on --xi-grid")
    fit.add_argument("--xi-grid", default=None, help=f"xi tuning grid (default: {','.join(map(str, DEFAULT_XI_GRID))})")
    fit.add_argument("--working", default="eb", choices=("eb", "independence"),
                     help="working covariance for --method robustified (default: eb)")
    fit.add_argument("--ladder", default=None, help=f"spike ladder (default: {','.join(map(str, DEFAULT_LADDER))})")
    fit.add_argument("--lambda1", type=float, default=None, help="slab parameter (default: 1)")
    fit.add_argument("--atoms", default=None, help=f"correlation atoms (default: {','.join(map(str, DEFAULT_ATOMS))})")
    fit.add_argument("--a", type=float, default=None, help="beta prior shape a (default: 1)")
    fit.add_argument("--b", type=float, default=None, help="beta prior shape b (default: p)")
    fit.add_argument("--em-tol", type=float, default=None, help="EM stopping tolerance (default: 1e-6)")
    fit.add_argument("--em-max-iter", type=int, default=None, help="EM iteration cap (default: 100)")
    fit.add_argument("--no-center", action="store_true", help="fit raw responses (skip grand-mean centering)")
    fit.add_argument("--curve-points", type=int, default=200, help="grid size for curves.csv (default: 200)")
    fit.add_argument("--seed", type=int, default=None, help="seed (default: $NVCSSL_SEED or 0)")
    fit.add_argument("--verbose", "-v", action="store_true", help="print the fit summary")
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="predict on new data from a saved model")
    pred.add_argument("--model", required=True, help="model.json from fit")
    pred.add_argument("--input", required=True, help="long CSV of new observations")
    pred.add_argument("--output", required=True, help="predictions CSV path")
    pred.set_defaults(func=cmd_predict)

    sim = sub.add_parser("simulate", help="generate a simulation scenario to CSV")
    sim.add_argument("--scenario", required=True, help=f"one of {', '.join(simbench.KINDS)}")
    sim.add_argument("--output-dir", required=True, help="directory for train.csv/test.csv/truth.json")
    sim.add_argument("--seed", type=int, default=None, help="seed (default: $NVCSSL_SEED or 0)")
    sim.add_argument("--n", type=int, default=None, help="subjects (default: scenario-specific)")
    sim.add_argument("--p", type=int, default=None, help="covariates (default: scenario-specific)")
    sim.add_argument("--rho", type=float, default=None, help="error correlation (default: 0.8)")
    sim.add_argument("--structure", default=None, choices=("ar1", "cs"), help="error structure (default: ar1)")
    sim.add_argument("--n-test", type=int, default=None, help="fresh test subjects (default: 50)")
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("bench", help="run a benchmark from a key-value config file")
    bench.add_argument("--config", required=True, help="key = value config file")
    bench.add_argument("--output", default=None, help="results CSV (overrides config)")
    bench.add_argument("--threads", type=int, default=None, help="worker cap (default: available parallelism)")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UserError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
