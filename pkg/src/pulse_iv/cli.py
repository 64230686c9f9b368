"""Command-line front door: estimate on CSV data, simulate, run experiments.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure,
5 dual infeasibility when no fallback was requested.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import CsvSchema, DesignView, ModelPartition, center, load_csv
from .estimators import EstimatorSpec, estimate
from .exceptions import DataError, PulseIVError
from .experiments import DESIGNS, ExperimentConfig, run_experiment, write_result
from .inference import ANDERSON_RUBIN, PLAIN, TestConfig, test_statistic, weak_instrument_stat
from .pulse import MESSAGE_TEXT, PulseConfig, PulseMessage, pulse_estimate
from .sem import InterventionSpec, load_sem_json, model_to_json, sem_sample

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR, INFEASIBLE_ERROR = 2, 3, 4, 5


def _round10(value: float) -> float:
    return float(f"{value:.10g}")


def _csv_list(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulse-iv",
        description="K-class / PULSE estimation, SEM simulation, and experiments",
    )
    parser.add_argument("--version", action="version", version=f"pulse-iv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_schema_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--data", required=True, help="CSV file with a header row")
        p.add_argument("--target", required=True, help="response column")
        p.add_argument("--endogenous", required=True, help="comma-separated endogenous columns")
        p.add_argument(
            "--included-exogenous",
            default="",
            help="comma-separated exogenous columns entering the target equation",
        )
        p.add_argument(
            "--instruments",
            required=True,
            help="comma-separated excluded exogenous columns (the instruments)",
        )
        group = p.add_mutually_exclusive_group()
        group.add_argument(
            "--center",
            action="store_true",
            default=None,
            help="mean-center every column and fit no intercept (default)",
        )
        group.add_argument(
            "--intercept",
            action="store_true",
            default=None,
            help="append a constant column to both the regressors and the exogenous set",
        )

    est = sub.add_parser("estimate", help="fit estimators on CSV data")
    add_schema_flags(est)
    est.add_argument(
        "--estimator",
        default="pulse",
        help="comma-separated list: ols|tsls|kclass:K|liml|fuller:A|pulse|modified-tsls",
    )
    est.add_argument("--pmin", type=float, default=0.05, help="test level (default 0.05)")
    est.add_argument(
        "--scaling", choices=("ar", "plain"), default="ar", help="test scaling scheme"
    )
    est.add_argument(
        "--precision", type=int, default=2**20, help="binary-search precision parameter N"
    )
    est.add_argument(
        "--fallback",
        default="fuller:4",
        help="PULSE fallback estimator (tsls|liml|fuller:A) or 'none'",
    )
    est.add_argument("--json", dest="json_out", help="also write a JSON report to this file")

    sim = sub.add_parser("simulate", help="sample a linear SEM to CSV")
    sim.add_argument("--sem", required=True, help="SEM config JSON")
    sim.add_argument("--n", required=True, type=int, help="number of rows")
    sim.add_argument("--seed", required=True, type=int, help="sampling seed")
    sim.add_argument("--intervene", help="intervention JSON overriding the config block")
    sim.add_argument("--out", required=True, help="output CSV path")

    exp = sub.add_parser("experiment", help="run a Monte Carlo experiment design")
    exp.add_argument("--config", help="experiment config JSON")
    exp.add_argument("--design", help=f"one of: {', '.join(DESIGNS)}")
    exp.add_argument("--reps", type=int, help="repetitions per cell")
    exp.add_argument("--seed", type=int, help="master seed")
    exp.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("PULSE_THREADS", "1")),
        help="worker threads over grid cells (default env PULSE_THREADS or 1)",
    )
    exp.add_argument("--out", required=True, help="output directory")

    diag = sub.add_parser("diagnose", help="weak-instrument and identification diagnostics")
    add_schema_flags(diag)

    return parser


def _load_view(args: argparse.Namespace) -> tuple[DesignView, bool]:
    schema = CsvSchema(
        target=args.target,
        endogenous=tuple(_csv_list(args.endogenous)),
        exogenous=tuple(_csv_list(args.included_exogenous) + _csv_list(args.instruments)),
    )
    ds = load_csv(args.data, schema)
    n_included = len(_csv_list(args.included_exogenous))
    use_intercept = bool(args.intercept)
    if use_intercept:
        ds = ds.with_intercept()
        included_exo = tuple(range(n_included)) + (ds.q - 1,)
    else:
        ds = center(ds)
        included_exo = tuple(range(n_included))
    partition = ModelPartition(
        included_endogenous=tuple(range(ds.d)), included_exogenous=included_exo
    )
    return DesignView(ds, partition), use_intercept


def _fmt(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isinf(value)):
        return "-" if value is None else "inf"
    return f"{value:.4f}"


def cmd_estimate(args: argparse.Namespace) -> int:
    view, use_intercept = _load_view(args)
    scaling = ANDERSON_RUBIN if args.scaling == "ar" else PLAIN
    test_cfg = TestConfig(p_min=args.pmin, scaling=scaling)
    fallback_spec = None if args.fallback == "none" else EstimatorSpec.parse(args.fallback)

    rows: list[dict] = []
    for label in _csv_list(args.estimator):
        if label == "pulse":
            pulse_cfg = PulseConfig(
                p_min=args.pmin,
                precision_n=args.precision,
                fallback=fallback_spec or EstimatorSpec.fuller(4.0),
                test_cfg=test_cfg,
            )
            result = pulse_estimate(view, pulse_cfg)
            if result.fallback_used and fallback_spec is None:
                print(MESSAGE_TEXT[PulseMessage.TSLS_REJECTED_FALLBACK])
                print("error: dual representation infeasible and no fallback requested", file=sys.stderr)
                return INFEASIBLE_ERROR
            if result.message is not PulseMessage.NONE:
                print(MESSAGE_TEXT[result.message])
            rows.append(
                {
                    "estimator": "pulse",
                    "alpha": result.alpha,
                    "kappa": result.kappa_star,
                    "lambda": result.lambda_star,
                    "test": result.test_at_solution,
                    "message": result.message.value,
                }
            )
        else:
            res = estimate(view, EstimatorSpec.parse(label))
            rows.append(
                {
                    "estimator": label,
                    "alpha": res.alpha,
                    "kappa": res.kappa_used,
                    "lambda": res.lambda_used,
                    "test": test_statistic(view, res.alpha, test_cfg),
                    "message": "",
                }
            )

    coef_names = view.coef_names
    print(f"data: {args.data}  n={view.n}  d1={view.d1}  q1={view.q1}  q={view.q}")
    print(f"identification: {view.identification.value} (degree {view.identification_degree})")
    header = ["estimator", *coef_names, "kappa", "lambda", "test", "threshold", "message"]
    print("  ".join(f"{h:>12}" for h in header))
    for row in rows:
        cells = [f"{row['estimator']:>12}"]
        cells += [f"{_fmt(float(v)):>12}" for v in row["alpha"]]
        cells.append(f"{_fmt(row['kappa']):>12}")
        lam = row["lambda"]
        cells.append(f"{_fmt(lam if lam is None else float(lam)):>12}")
        cells.append(f"{_fmt(row['test'].statistic):>12}")
        cells.append(f"{_fmt(row['test'].threshold):>12}")
        cells.append(f"{row['message']:>12}")
        print("  ".join(cells))

    try:
        weak = weak_instrument_stat(view)
        print(
            f"weak instruments: min eig G_n = {weak.min_eigenvalue:.4f} "
            f"(rule-of-thumb >10: {'pass' if weak.rule_of_thumb_pass else 'fail'})"
        )
    except PulseIVError as exc:
        weak = None
        print(f"weak instruments: unavailable ({exc})")

    if args.json_out:
        doc = {
            "data": str(args.data),
            "n": view.n,
            "coefficients": list(coef_names),
            "identification": view.identification.value,
            "centering": "none" if use_intercept else "all",
            "intercept": use_intercept,
            "scaling": scaling,
            "p_min": args.pmin,
            "estimates": [
                {
                    "estimator": row["estimator"],
                    "alpha": {nm: _round10(float(v)) for nm, v in zip(coef_names, row["alpha"])},
                    "kappa": None if row["kappa"] is None else _round10(float(row["kappa"])),
                    "lambda": None
                    if row["lambda"] is None
                    else ("inf" if math.isinf(row["lambda"]) else _round10(float(row["lambda"]))),
                    "test_statistic": _round10(row["test"].statistic),
                    "threshold": _round10(row["test"].threshold),
                    "accepted": row["test"].accepted,
                    "message": row["message"],
                }
                for row in rows
            ],
        }
        if weak is not None:
            doc["weak_instruments"] = {
                "g_matrix": [[_round10(float(v)) for v in r] for r in weak.g_matrix],
                "min_eigenvalue": _round10(weak.min_eigenvalue),
                "rule_of_thumb_pass": weak.rule_of_thumb_pass,
            }
        Path(args.json_out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    model, iv = load_sem_json(args.sem)
    if args.intervene:
        path = Path(args.intervene)
        if not path.exists():
            raise DataError(f"intervention file not found: {path}")
        block = json.loads(path.read_text(encoding="utf-8"))
        kind = block.get("kind")
        if kind == "hard":
            iv = InterventionSpec.hard(np.asarray(block["mean"], dtype=float))
        elif kind == "stochastic":
            iv = InterventionSpec.stochastic(
                np.asarray(block["cov"], dtype=float),
                np.asarray(block.get("mean", [0.0] * model.q), dtype=float),
            )
        elif kind == "none":
            iv = InterventionSpec.none()
        else:
            raise DataError(f"unknown intervention kind {kind!r}")
    ds = sem_sample(model, args.n, args.seed, iv)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = list(ds.a_names) + list(ds.x_names) + [ds.y_name]
    with out.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(ds.n):
            vals = [*ds.a[i], *ds.x[i], ds.y[i]]
            fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")
    manifest = {
        "seed": args.seed,
        "n": args.n,
        "sem": model_to_json(model, iv),
        "columns": header,
        "library_version": __version__,
    }
    Path(str(out) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {ds.n} rows to {out}")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    if bool(args.config) == bool(args.design):
        print("error: provide exactly one of --config or --design", file=sys.stderr)
        return USAGE_ERROR
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"experiment config not found: {path}")
        cfg = ExperimentConfig.from_json(json.loads(path.read_text(encoding="utf-8")))
    else:
        if args.design not in DESIGNS:
            print(
                f"error: unknown design {args.design!r}; valid designs: {', '.join(DESIGNS)}",
                file=sys.stderr,
            )
            return USAGE_ERROR
        cfg = ExperimentConfig(design=args.design)
    overrides = {}
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if overrides:
        cfg = ExperimentConfig.from_json({**cfg.to_json(), **overrides})
    result = run_experiment(cfg, threads=max(1, args.threads))
    csv_path, manifest_path = write_result(result, args.out)
    print(f"wrote {csv_path} and {manifest_path}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    view, _ = _load_view(args)
    print(f"n={view.n}  d1={view.d1}  q1={view.q1}  q2={view.q2}  q={view.q}")
    print(
        f"identification: {view.identification.value} (degree {view.identification_degree})"
    )
    print(f"rcond(Z^T Z) = {view.rcond_ztz:.3e}   rcond(A^T A) = {view.rcond_ata:.3e}")
    report = weak_instrument_stat(view)
    print("G_n =")
    for row in report.g_matrix:
        print("  " + "  ".join(f"{v:12.4f}" for v in row))
    print(f"min eigenvalue = {report.min_eigenvalue:.4f}")
    print(f"rule-of-thumb (>10): {'pass' if report.rule_of_thumb_pass else 'fail'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "estimate": cmd_estimate,
        "simulate": cmd_simulate,
        "experiment": cmd_experiment,
        "diagnose": cmd_diagnose,
    }
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except PulseIVError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except (ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
