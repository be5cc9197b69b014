"""Command-line front end.

Exit status: 0 on success, 2 for input or configuration errors, 3 for
numeric failures (singular designs, degenerate cells, failed checks).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .condmean import fit_cond_mean, profile_cond_mean, delta_series
from .core import DataMatrix
from .decomposition import local_decompose, decompose
from .dgpsim import PRESETS, DgpSpec, monte_carlo, preset, simulate_draws
from .efficiency import (default_density, minimizer_check, nrwe_star_weights, parse_grid,
                         per_x_normalized_weights, ripple_weights, uniqueness_probe,
                         WeightGrid)
from .errors import ConfigError, InputError, NrweError
from .io import read_numeric_csv, write_csv, write_json
from .rng import GENERATOR_NAME
from .weights import GridSpec, conditional_weight_field, yitzhaki_weights_empirical

log = logging.getLogger("nrwe")

DEFAULT_SEED = 42
COND_MEAN_CHOICES = ("linear", "binned", "local-linear")


def _setup_logging():
    level = os.environ.get("NRWE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(level=levels[level], stream=sys.stderr,
                        format="nrwe %(levelname)s %(name)s: %(message)s")


def _controls(text):
    if text is None or text == "":
        return []
    return [c.strip() for c in text.split(",") if c.strip()]


def load_data(path, outcome, treatment, controls) -> DataMatrix:
    header, m = read_numeric_csv(path)
    for name in [outcome, treatment] + list(controls):
        if name not in header:
            raise InputError(f"{path}: column {name!r} not in header {header}")
    col = {h: m[:, i] for i, h in enumerate(header)}
    xs = np.column_stack([col[c] for c in controls]) if controls else None
    return DataMatrix.from_columns(col[outcome], col[treatment], xs, controls,
                                   outcome_name=outcome, treatment_name=treatment)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _data_args(p, need_controls=False):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--outcome", default="y", help="outcome column (default: y)")
    p.add_argument("--treatment", default="t", help="treatment column (default: t)")
    p.add_argument("--controls", default=None, required=need_controls,
                   help="comma-separated control columns; a constant is always added")


def _threads(args) -> int:
    return args.threads if args.threads and args.threads > 0 else (os.cpu_count() or 1)


# -- commands ----------------------------------------------------------------

def cmd_decompose(args) -> int:
    data = load_data(args.input, args.outcome, args.treatment, _controls(args.controls))
    model = fit_cond_mean(data, args.cond_mean, bins=args.bins)
    d = decompose(data, model)
    doc = {"input": str(args.input), "n": data.n, "outcome": data.outcome_name,
           "treatment": data.treatment_name, "controls": list(data.control_names[1:]),
           "cond_mean": model.to_dict(), "decomposition": d.to_dict()}
    if model.method == "binned":
        doc["local"] = local_decompose(data, model).to_dict()
    out = _out_dir(args)
    write_json(out / "decomposition.json", doc)
    write_csv(out / "decomposition.csv", d.csv_header(), [d.csv_row()])
    log.info("beta=%.6g weighted=%.6g misspec=%.6g", d.beta, d.weighted_effect, d.misspec_bias)
    return 0


def _dgp(args) -> DgpSpec:
    if (args.dgp is None) == (args.spec is None):
        raise ConfigError("give exactly one of --dgp or --spec")
    if args.dgp is not None:
        spec = preset(args.dgp)
    else:
        try:
            text = Path(args.spec).read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"cannot read {args.spec}: {exc.strerror}") from None
        spec = DgpSpec.from_json(text)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    return spec


def cmd_simulate(args) -> int:
    spec = _dgp(args)
    if args.n < 1 or args.reps < 2:
        raise ConfigError("--n must be positive and --reps at least 2")
    out = _out_dir(args)
    if args.export_sample:
        data = simulate_draws(spec, args.n, stream=0)
        write_csv(out / "sample.csv", ("y", "t", "x"),
                  zip(data.y, data.t, data.x[:, 1]))
    mu_mode = args.cond_mean or "oracle"
    report = monte_carlo(spec, args.n, args.reps, mu_mode, bins=args.bins,
                         threads=_threads(args))
    report.write(out)
    log.info("means %s", report.means)
    return 0


def cmd_weights(args) -> int:
    data = load_data(args.input, args.outcome, args.treatment, _controls(args.controls))
    out = _out_dir(args)
    grid = GridSpec(points=args.points)
    uni = yitzhaki_weights_empirical(data.t, grid)
    write_csv(out / "weights_univariate.csv", ("t", "w"), uni.rows())
    summary = {"n": data.n, "univariate": {"mass": uni.mass, "argmax": uni.argmax,
                                           "n_clamped": uni.n_clamped}}
    if data.k > 1:
        model = fit_cond_mean(data, args.cond_mean, bins=args.bins)
        for mode in ("nrwe", "ols"):
            field = conditional_weight_field(data, model, mode, bins=args.bins, grid_spec=grid)
            write_csv(out / f"weights_{mode}.csv", ("cell", "cell_mass", "t", "w", "w_normalized"),
                      field.rows())
            summary[mode] = {"total_mass": field.total_mass(),
                             "expected_mass": field.expected_mass(),
                             "denominator": field.denominator, "n_cells": len(field.cell_ids),
                             "n_degenerate": field.n_degenerate, "n_clamped": field.n_clamped}
    write_json(out / "weights_summary.json", summary)
    return 0


def cmd_diagnose(args) -> int:
    data = load_data(args.input, args.outcome, args.treatment, _controls(args.controls))
    if data.k < 2:
        raise ConfigError("diagnose needs at least one control")
    out = _out_dir(args)
    summary = {"n": data.n, "profiles": {}}
    for j, name in enumerate(data.control_names[1:], start=1):
        prof = profile_cond_mean(data, j, args.bins or 20)
        write_csv(out / f"profile_{name}.csv", ("x", "mean_t", "count", "sparse"), prof.rows())
        summary["profiles"][name] = {"bins": len(prof.x), "sparse_bins": int(prof.sparse.sum())}
    model = fit_cond_mean(data, args.cond_mean, bins=args.bins)
    ds = delta_series(data, model)
    summary["cond_mean"] = model.method
    summary["var_delta"] = ds.variance
    summary["cov_y_delta"] = ds.cov_with_y
    write_json(out / "diagnose.json", summary)
    return 0


def cmd_verify_efficiency(args) -> int:
    nt, nx = parse_grid(args.grid)
    density = default_density(nt, nx)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    report = minimizer_check(density, args.sigma2, args.perturbations, seed)
    star = nrwe_star_weights(density)
    fd = WeightGrid.from_a(star.a, density.t)
    closed_k = (density.t[:, None] - density.mu) * density.f / density.e_var
    step_var = float(np.max(np.abs(np.diff(closed_k, axis=0))))
    report["closed_form_k"] = {"max_abs_error": float(np.max(np.abs(fd.k - closed_k))),
                               "two_step_bound": 2.0 * step_var}
    report["closed_form_k"]["ok"] = (report["closed_form_k"]["max_abs_error"]
                                     <= report["closed_form_k"]["two_step_bound"])
    report["a_star_min"] = float(star.a.min())
    probes = {"a_star": uniqueness_probe(star, density, args.basis),
              "per_x_normalized": uniqueness_probe(per_x_normalized_weights(density), density,
                                                   args.basis),
              "ripple": uniqueness_probe(ripple_weights(density), density, args.basis)}
    report["uniqueness"] = probes
    overall = (report["pass"] and report["v_min_ok"] and report["eps_scaling_ok"]
               and probes["a_star"]["max_abs_discrepancy"] <= 1e-8
               and all(not probes[k]["pass"] and probes[k]["max_abs_discrepancy"] > 1e-3
                       for k in ("per_x_normalized", "ripple")))
    report["overall_pass"] = bool(overall)
    out = _out_dir(args)
    write_json(out / "efficiency.json", report)
    print(("PASS" if overall else "FAIL")
          + f" V(a*)={report['v_star']:.12g} sigma2/E[Var(T|X)]={report['v_min_formula']:.12g}"
          + f" min_excess={report['min_excess']:.3g}")
    return 0 if overall else 3


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nrwe",
        description="Decompose OLS treatment coefficients into a weighted effect and a "
                    "misspecification bias, and run the accompanying simulations and checks.",
        epilog=f"Random numbers: {GENERATOR_NAME}. Seed default {DEFAULT_SEED}. "
               "Logging via NRWE_LOG=error|info|debug. "
               "Exit status 0 ok, 2 input error, 3 numeric error.")
    p.add_argument("--version", action="version", version=f"nrwe {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out-dir", default=".", help="directory for output files")
        sp.add_argument("--seed", type=int, default=None,
                        help=f"random seed (default {DEFAULT_SEED})")
        sp.add_argument("--threads", type=int, default=0,
                        help="worker threads (default: available cores)")

    sp = sub.add_parser("decompose", help="decompose the coefficient on T from a CSV")
    _data_args(sp)
    sp.add_argument("--cond-mean", choices=COND_MEAN_CHOICES, default="binned")
    sp.add_argument("--bins", type=int, default=None, help="bins per control (binned)")
    common(sp)
    sp.set_defaults(func=cmd_decompose)

    sp = sub.add_parser("simulate", help="Monte Carlo over a preset or JSON process")
    sp.add_argument("--dgp", choices=PRESETS, default=None)
    sp.add_argument("--spec", default=None, help="JSON process description")
    sp.add_argument("--n", type=int, default=200_000)
    sp.add_argument("--reps", type=int, default=50)
    sp.add_argument("--cond-mean", choices=("oracle",) + COND_MEAN_CHOICES, default="oracle")
    sp.add_argument("--bins", type=int, default=None)
    sp.add_argument("--export-sample", action="store_true",
                    help="also write the stream-0 draws to sample.csv")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("weights", help="emit Yitzhaki and conditional weight curves")
    _data_args(sp)
    sp.add_argument("--cond-mean", choices=COND_MEAN_CHOICES, default="binned")
    sp.add_argument("--bins", type=int, default=None)
    sp.add_argument("--points", type=int, default=512, help="grid points per curve")
    common(sp)
    sp.set_defaults(func=cmd_weights)

    sp = sub.add_parser("diagnose", help="emit E[T|x_j] profiles and Delta summaries")
    _data_args(sp, need_controls=True)
    sp.add_argument("--cond-mean", choices=COND_MEAN_CHOICES, default="binned")
    sp.add_argument("--bins", type=int, default=None, help="profile bins (default 20)")
    common(sp)
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("verify-efficiency", help="grid checks of the efficiency bound")
    sp.add_argument("--grid", default="512x64", help="TxX grid size")
    sp.add_argument("--sigma2", type=float, default=1.0)
    sp.add_argument("--perturbations", type=int, default=100)
    sp.add_argument("--basis", type=int, default=16, help="bumps and x-blocks in the probe")
    common(sp)
    sp.set_defaults(func=cmd_verify_efficiency)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NrweError as exc:
        print(f"nrwe: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"nrwe: I/O error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # never let a traceback be the interface
        log.debug("unexpected failure", exc_info=True)
        print(f"nrwe: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
