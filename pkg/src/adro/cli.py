"""Command line front end.

Exit codes: 0 success, 1 input or configuration error, 2 numerical
non-convergence (partial output is still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import debias
from .dual import WdroConfig, fit_dro
from .errors import AdroError, NewtonFailedError
from .models import LABEL_KIND_FOR, Dataset, GlmModel, ModelKind, check_labels
from .simulate import SCHEMA_VERSION, ExperimentConfig, ExperimentReport, run_experiment
from .synthetic import LINEAR_BETA_STAR, LINEAR_SIGMA, LOGISTIC_BETA_STAR

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

REFERENCE_N_GRID = (500, 700, 1000, 1500, 1800, 2000)
REFERENCE_TAU_GRID = (1.0, 1.5, 2.0, 2.5)


class InputError(Exception):
    pass


def read_dataset_csv(path, model_kind) -> Dataset:
    """Read ``x1,...,xd,y`` CSV text; errors name the offending line."""
    kind = ModelKind(model_kind)
    label_kind = LABEL_KIND_FOR[kind]
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise InputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header != [f"x{j}" for j in range(1, d + 1)] + ["y"]:
            raise InputError(f"{path}:1: header must be x1,...,xd,y, got {','.join(header)}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise InputError(f"{path}:{line_no}: expected {d + 1} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputError(f"{path}:{line_no}: non-numeric field in {','.join(row)}") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}:{line_no}: non-finite value")
            try:
                check_labels(label_kind, [vals[-1]])
            except AdroError as exc:
                raise InputError(f"{path}:{line_no}: {exc}") from None
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, :-1], arr[:, -1], label_kind)


def write_dataset_csv(path, data: Dataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(1, data.d + 1)] + ["y"])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _emit(doc, out):
    text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    data = read_dataset_csv(args.data, args.model)
    n = data.n if args.n_for_radius == "auto" else int(args.n_for_radius)
    config = WdroConfig(tau=args.tau, n=n, step_size=args.step_size, max_iters=args.max_iters,
                        grad_tol=args.grad_tol, seed=args.seed)
    fit = fit_dro(GlmModel(args.model), data, config)
    _emit({
        "schema": SCHEMA_VERSION,
        "type": "fit",
        "model": args.model,
        "tau": args.tau,
        "n_for_radius": n,
        "radius": config.radius,
        "rows": data.n,
        "beta_dro": fit.beta_dro.tolist(),
        "robust_loss": fit.robust_loss,
        "lambda_star": _finite_or_none(fit.lambda_star),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "grad_norm": fit.grad_norm,
    }, args.out)
    return EXIT_OK if fit.converged else EXIT_NUMERIC


def _load_json(path, expected_type=None):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    text = path.read_text()
    if not text.strip():
        raise InputError(f"{path}: empty file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema {doc.get('schema') if isinstance(doc, dict) else None!r}")
    if expected_type and doc.get("type") != expected_type:
        raise InputError(f"{path}: expected a {expected_type} record, got {doc.get('type')!r}")
    return doc


def cmd_adjust(args) -> int:
    fit = _load_json(args.fit, "fit")
    kind = ModelKind(fit["model"])
    if args.closed_form and kind is not ModelKind.LINEAR:
        raise InputError("--closed-form applies to linear fits only")
    data = read_dataset_csv(args.data, kind)
    model = GlmModel(kind)
    tau, n = float(fit["tau"]), int(fit["n_for_radius"])
    beta_dro = np.array(fit["beta_dro"], dtype=float)
    doc = {"schema": SCHEMA_VERSION, "type": "adjust", "model": kind.value, "tau": tau, "n_for_radius": n,
           "beta_dro": beta_dro.tolist()}
    if args.closed_form:
        sigma_hat, c_hat = debias.estimate_linear_nuisance(data, beta_dro)
        sigma = args.sigma if args.sigma is not None else sigma_hat
        c = args.c if args.c is not None else c_hat
        beta_adro = debias.adjust_closed_form_linear(beta_dro, tau, sigma, c, n)
        curvature = debias.isotropic_linear_curvature_fn(tau, sigma, c)
        resid = debias.K_n(beta_adro, curvature, n) - beta_dro
        doc.update({
            "method": "closed_form",
            "sigma": sigma,
            "c": c,
            "beta_adro": beta_adro.tolist(),
            "newton_iterations": 0,
            "residual_norm": float(np.max(np.abs(resid))),
            "existence_margin": debias.existence_check(curvature, beta_adro, n),
            "adjustment_distance": float(np.linalg.norm(beta_adro - beta_dro)),
        })
    else:
        curvature = debias.empirical_curvature_fn(model, data, tau)
        opts = debias.NewtonOptions(tol=args.tol, max_iter=args.max_iter)
        try:
            res = debias.adjust_newton(beta_dro, curvature, n, opts)
        except NewtonFailedError as exc:
            doc.update({"method": "newton", "error": str(exc),
                        "last_iterate": None if exc.last_iterate is None else np.asarray(exc.last_iterate).tolist(),
                        "residual_norm": exc.residual_norm})
            _emit(doc, args.out)
            print(f"adjust: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        doc.update({
            "method": "newton",
            "beta_adro": res.beta_adro.tolist(),
            "newton_iterations": res.newton_iterations,
            "residual_norm": res.residual_norm,
            "existence_margin": res.existence_margin,
            "adjustment_distance": res.adjustment_distance,
        })
    doc["existence_verified"] = doc["existence_margin"] > 0
    _emit(doc, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    kind = ModelKind(args.model)
    if args.reference_grid:
        n_grid, tau_grid = REFERENCE_N_GRID, REFERENCE_TAU_GRID
    else:
        n_grid = [int(v) for v in _floats(args.n_grid)]
        tau_grid = _floats(args.tau_grid)
    if args.beta_star:
        beta_star = _floats(args.beta_star)
    else:
        beta_star = LINEAR_BETA_STAR if kind is ModelKind.LINEAR else LOGISTIC_BETA_STAR
    sigma = None
    if kind is ModelKind.LINEAR:
        sigma = args.sigma if args.sigma is not None else LINEAR_SIGMA
    config = ExperimentConfig(kind, tuple(beta_star), tuple(n_grid), tuple(tau_grid), args.replicates,
                              base_seed=args.seed, sigma=sigma, step_size=args.step_size,
                              max_iters=args.max_iters, estimate_nuisance=args.estimate_nuisance)
    report = run_experiment(config, workers=args.workers)
    _emit(report.to_dict(), args.out)
    return EXIT_OK if all(r.ok for r in report.records) else EXIT_NUMERIC


def boxplot_stats(values):
    v = np.asarray(values, dtype=float)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(x) for x in q)))


def build_report(report: ExperimentReport) -> dict:
    """Plot-ready series: MSE versus log(n) per (estimator, tau), and difference boxplots."""
    cells = report.cells()
    series = []
    for tau in sorted({tau for (_, tau), _ in cells}):
        for est, key in (("dro", "sq_err_dro"), ("adro", "sq_err_adro")):
            points = []
            for (n, t), recs in cells:
                if t != tau:
                    continue
                vals = [getattr(r, key) for r in recs if r.ok]
                points.append({"n": n, "log_n": math.log(n), "mse": float(np.mean(vals)) if vals else None,
                               "count": len(vals)})
            series.append({"estimator": est, "tau": tau, "points": points})
    boxes = []
    for (n, tau), recs in cells:
        diffs = [r.diff for r in recs if r.ok]
        row = {"n": n, "tau": tau, "count": len(diffs), "records": len(recs)}
        if diffs:
            row.update(boxplot_stats(diffs))
            row["positive_fraction"] = float(np.mean(np.array(diffs) > 0))
        boxes.append(row)
    return {"schema": SCHEMA_VERSION, "type": "report", "model": report.config.model_kind.value,
            "mse_series": series, "diff_boxplots": boxes}


def _write_csv_tables(doc, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "mse_series.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "tau", "n", "log_n", "mse", "count"])
        for s in doc["mse_series"]:
            for p in s["points"]:
                w.writerow([s["estimator"], s["tau"], p["n"], p["log_n"], p["mse"], p["count"]])
    cols = ["n", "tau", "count", "min", "q1", "median", "q3", "max", "positive_fraction"]
    with (directory / "diff_boxplots.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for b in doc["diff_boxplots"]:
            w.writerow([b.get(c) for c in cols])


def cmd_report(args) -> int:
    raw = _load_json(args.input)
    try:
        report = ExperimentReport.from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.input}: malformed report ({exc})") from None
    doc = build_report(report)
    _emit(doc, args.out)
    if args.csv:
        _write_csv_tables(doc, args.csv)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adro", description="Wasserstein DRO estimators for GLMs and their bias adjustment")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the WDRO estimator to a CSV dataset")
    f.add_argument("--model", choices=["logistic", "linear"], required=True)
    f.add_argument("--tau", type=float, required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--n-for-radius", default="auto", help="sample size in rho = tau/sqrt(n); 'auto' uses the row count")
    f.add_argument("--step-size", type=float, default=0.3)
    f.add_argument("--max-iters", type=int, default=50000)
    f.add_argument("--grad-tol", type=float, default=1e-7)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("adjust", help="compute the adjusted estimator from a fit record")
    a.add_argument("--fit", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--closed-form", action="store_true", help="isotropic linear rescaling instead of Newton")
    a.add_argument("--sigma", type=float, help="noise std for --closed-form (default: estimated)")
    a.add_argument("--c", type=float, help="feature variance for --closed-form (default: estimated)")
    a.add_argument("--tol", type=float, default=1e-10)
    a.add_argument("--max-iter", type=int, default=50)
    a.add_argument("--out")
    a.set_defaults(func=cmd_adjust)

    s = sub.add_parser("simulate", help="run the replicated Monte Carlo experiment")
    s.add_argument("--model", choices=["logistic", "linear"], required=True)
    s.add_argument("--beta-star", help="comma-separated; defaults to the model's reference parameter")
    s.add_argument("--sigma", type=float)
    s.add_argument("--n-grid", default="500,700,1000,1500,1800,2000")
    s.add_argument("--tau-grid", default="1,1.5,2,2.5")
    s.add_argument("--reference-grid", action="store_true", help="use the reference n and tau grids")
    s.add_argument("--replicates", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step-size", type=float, default=0.3)
    s.add_argument("--max-iters", type=int, default=50000)
    s.add_argument("--estimate-nuisance", action="store_true", help="linear: estimate sigma and c instead of using truth")
    s.add_argument("--workers", type=int, default=None, help="parallel workers (default: ADRO_THREADS or 1)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="summarise a simulate output into plot-ready tables")
    r.add_argument("--input", required=True)
    r.add_argument("--out")
    r.add_argument("--csv", metavar="DIR", help="also write flat CSV tables into DIR")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, AdroError, OSError) as exc:
        print(f"adro {args.command}: {exc}", file=sys.stderr)
        # validation errors are ValueErrors; the remaining package errors are numerical
        if isinstance(exc, AdroError) and not isinstance(exc, ValueError):
            return EXIT_NUMERIC
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
