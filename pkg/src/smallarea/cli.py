"""Command-line interface: ``fit``, ``simulate`` and ``validate``.

Exit codes: 0 success, 1 failed condition checks, 2 invalid input or
options, 3 estimator failure, 4 too many failed simulation replicates.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .adjustment import default_grid, factor_ll, factor_nre, factor_yl, validate_factor
from .exceptions import (
    DatasetError,
    DomainError,
    FormEstimatorMismatchError,
    SimulationAbortedError,
    SmallAreaError,
)
from .io import read_areas, sha256, write_rows
from .mse import MseForm, factor_from_c, mse_estimate
from .prediction import eblup
from .simulation import SimConfig, run_simulation
from .variance import DEFAULT_TOL, METHOD_NAMES, VarianceMethod, estimate_per_area, estimate_variance

FIT_COLUMNS = ["area_id", "y", "theta_hat", "b_hat", "a_used", "mse_hat"]
_FORM_METHOD = {"naive": "reml", "dl": "reml", "naive-n": "nre"}


def _fail(code, message):
    print(f"error: {message}", file=sys.stderr)
    return code


def _check_compatible(method: str, form: MseForm | None) -> None:
    if form is None:
        return
    if form.name == "general-c":
        ok = method == "custom" or (method == "reml" and form.c == 2.0)
    else:
        ok = method == _FORM_METHOD[form.name]
    if not ok:
        raise FormEstimatorMismatchError(f"MSE form {form} cannot be used with method {method!r}")


def _estimates(data, method, form, a_max, tol):
    if method == "nre":
        return estimate_per_area(data, VarianceMethod.nre(0), a_max, tol)
    if method == "custom":
        c = form.c
        if c == 2.0:
            return estimate_variance(data, VarianceMethod.custom(factor_from_c(2.0, 1.0)), a_max, tol)
        l_add = factor_yl(data)
        return estimate_per_area(
            data,
            VarianceMethod.reml(),
            a_max,
            tol,
            factor_for_area=lambda i: factor_from_c(c, float(data.d[i]), l_add, area=i, validate_add=False),
        )
    return estimate_variance(data, VarianceMethod.from_name(method), a_max, tol)


def cmd_fit(args) -> int:
    try:
        form = None if args.mse is None else MseForm.from_name(args.mse)
        if args.method == "custom" and (form is None or form.name != "general-c"):
            raise FormEstimatorMismatchError("method 'custom' takes its factor from --mse general-c:<c>")
        _check_compatible(args.method, form)
        if args.tol is not None and not args.tol > 0:
            raise DomainError("--tol must be positive")
        if args.a_max is not None and not args.a_max > 0:
            raise DomainError("--a-max must be positive")
        data = read_areas(args.input)
    except FileNotFoundError as exc:
        return _fail(2, f"cannot read input: {exc}")
    except (SmallAreaError, ValueError) as exc:
        return _fail(2, str(exc))

    tol = DEFAULT_TOL if args.tol is None else args.tol
    try:
        est = _estimates(data, args.method, form, args.a_max, tol)
        pred = eblup(data, est)
        mse = None if form is None else mse_estimate(data, form, est)
    except SmallAreaError as exc:
        return _fail(3, f"{type(exc).__name__}: {exc}")

    rows = []
    for i, aid in enumerate(data.area_ids):
        rows.append(
            {
                "area_id": aid,
                "y": float(data.y[i]),
                "theta_hat": float(pred.theta_hat[i]),
                "b_hat": float(pred.b_hat[i]),
                "a_used": float(pred.a_used[i]),
                "mse_hat": None if mse is None else float(mse.values[i]),
            }
        )
    out = Path(args.output)
    write_rows(out, rows, FIT_COLUMNS)
    est_list = est if isinstance(est, list) else [est]
    meta = {
        "tool": "smallarea",
        "version": __version__,
        "method": args.method,
        "mse_form": None if form is None else str(form),
        "input": str(args.input),
        "input_sha256": sha256(args.input),
        "estimates": [e.to_dict() for e in est_list],
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    out.with_name(out.name + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_simulate(args) -> int:
    try:
        config = SimConfig.from_json(args.config)
        if args.workers < 1:
            raise DomainError("--workers must be >= 1")
    except FileNotFoundError as exc:
        return _fail(2, f"cannot read config: {exc}")
    except (SmallAreaError, ValueError, TypeError) as exc:
        return _fail(2, f"invalid config: {exc}")
    try:
        report = run_simulation(config, workers=args.workers)
    except SimulationAbortedError as exc:
        return _fail(4, str(exc))
    except SmallAreaError as exc:
        return _fail(2, str(exc))
    report.write(args.output_dir, workers=args.workers)
    print(report.summary())
    return 0


def validation_reports(data) -> list:
    """Condition checks of the built-in factors on ``data``."""
    grid = default_grid(float(np.median(data.d)))
    reports = [
        validate_factor(factor_ll(), grid, ("A1",)),
        validate_factor(factor_yl(data), grid, ("A2", "A3")),
    ]
    seen = set()
    for i, di in enumerate(data.d):
        if float(di) in seen:
            continue
        seen.add(float(di))
        rep = validate_factor(factor_nre(i, data), grid, ("A1",))
        rep.label = f"nre[area {data.area_ids[i]}]"
        reports.append(rep)
    return reports


def cmd_validate(args) -> int:
    try:
        data = read_areas(args.input)
    except FileNotFoundError as exc:
        return _fail(2, f"cannot read input: {exc}")
    except DatasetError as exc:
        return _fail(2, str(exc))
    print(f"dataset ok: m={data.m}, p={data.p}, max leverage={data.leverage.max():.4g}")
    if data.m <= data.p + 4:
        print(f"warning: m={data.m} <= p+4, nre is unavailable")
    reports = validation_reports(data)
    for rep in reports:
        print(rep.summary())
    return 0 if all(r.passed() for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smallarea", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"smallarea {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate A, EBLUPs and their MSE for an area file")
    fit.add_argument("--input", required=True, help="CSV or JSON with area_id,y,d,x1..xp")
    fit.add_argument("--method", default="reml", choices=METHOD_NAMES + ("custom",))
    fit.add_argument("--mse", default=None, help="naive | dl | naive-n | general-c:<c>")
    fit.add_argument("--output", required=True, help="output CSV (or .json)")
    fit.add_argument("--tol", type=float, default=None)
    fit.add_argument("--a-max", type=float, default=None)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--output-dir", required=True)
    sim.add_argument("--workers", type=int, default=1)
    sim.set_defaults(func=cmd_simulate)

    val = sub.add_parser("validate", help="check an area file and the adjustment factor conditions")
    val.add_argument("--input", required=True)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
