"""Monte Carlo experiment runner and performance metrics.

Designs: a univariate weak-instrument grid, two multivariate confounding
studies, a distributional-robustness path study, and an under-identified
convergence study.  Every run is deterministic given the master seed: cells
and repetitions own derived counter-based streams and metric reductions use
numpy's pairwise summation in repetition order, so threading does not change
results.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .data import DesignView, checked_solve
from .estimators import EstimatorSpec, estimate
from .exceptions import PulseIVError
from .inference import weak_instrument_stat
from .pulse import PulseConfig, pulse_estimate
from .sem import (
    SemModel,
    e1_model,
    e3_model,
    mv_fixed_model,
    mv_varying_model,
    population_pulse_underid,
    sem_sample,
    univariate_model,
    wcmspe_curve_e1,
)

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF

DESIGNS = ("univariate", "mv-random", "mv-fixed", "robustness-e1", "underid-e3")

#: Declared grids of the univariate study; other values need the extension flag.
UNIVARIATE_DECLARED = {
    "q": (1, 2, 3, 4, 5, 10, 20, 30),
    "rho": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "r2": (0.0001, 0.001, 0.01, 0.1, 0.3),
    "n": (50, 100, 150),
}

#: Noise triples (eta, phi1, phi2) of the fixed-confounding study.
FIXED_NOISE_DECLARED = (
    (0.80, 0.19, 0.19),
    (0.20, 0.15, 0.15),
    (0.80, 0.47, 0.47),
    (0.20, 0.39, 0.39),
    (0.80, 0.76, 0.76),
    (0.20, 0.62, 0.62),
)

#: Reference hard-intervention strength for the robustness path study.
ROBUSTNESS_REFERENCE_X = 2.0


def cell_seed(master_seed: int, cell_index: int, rep_index: int) -> int:
    """Derived 64-bit stream seed: golden-ratio cell offset, XOR repetition."""
    return ((master_seed + _GOLDEN * cell_index) ^ rep_index) & _MASK


def xi_from_r2(r2: float, q: int) -> float:
    """Anchor coefficient with theoretical first-stage R-squared ``r2``.

    Solves ``q xi^2 / (q xi^2 + 1) = r2`` for ``xi >= 0``.
    """
    if not 0.0 < r2 < 1.0:
        raise ValueError(f"r2 must lie in (0, 1), got {r2}")
    if q < 1:
        raise ValueError(f"q must be positive, got {q}")
    return float(np.sqrt(r2 / (q * (1.0 - r2))))


def relative_change(metric_competitor: float, metric_pulse: float) -> float:
    """Signed relative change ``(competitor - pulse) / pulse``; positive favours PULSE."""
    if metric_pulse == 0.0:
        raise ZeroDivisionError("relative change undefined for a zero reference metric")
    if metric_pulse < 0.0:
        raise ValueError("reference metric must be positive")
    return (metric_competitor - metric_pulse) / metric_pulse


class MseOrder(str, Enum):
    """Verdict of the PSD partial order between two MSE matrices."""

    A_LESS_OR_EQUAL = "a<=b"
    B_LESS_OR_EQUAL = "b<=a"
    EQUAL = "equal"
    INCOMPARABLE = "incomparable"


def mse_partial_order(mse_a: np.ndarray, mse_b: np.ndarray, tol_scale: float = 1e-9) -> MseOrder:
    """Compare MSE matrices in the PSD cone with a Monte Carlo noise floor."""
    a = np.atleast_2d(np.asarray(mse_a, dtype=float))
    b = np.atleast_2d(np.asarray(mse_b, dtype=float))
    if a.shape != b.shape or a.shape[0] != a.shape[1]:
        raise ValueError(f"MSE matrices must be square and same shape; got {a.shape}, {b.shape}")
    for name, mat in (("mse_a", a), ("mse_b", b)):
        if not np.allclose(mat, mat.T, atol=1e-10 * max(1.0, float(np.abs(mat).max()))):
            raise ValueError(f"{name} must be symmetric")
    tol = tol_scale * max(float(np.trace(a)), float(np.trace(b)), 1e-300)
    diff = b - a
    a_le = float(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0]) >= -tol
    b_le = float(np.linalg.eigvalsh(0.5 * (-diff - diff.T))[0]) >= -tol
    if a_le and b_le:
        return MseOrder.EQUAL
    if a_le:
        return MseOrder.A_LESS_OR_EQUAL
    if b_le:
        return MseOrder.B_LESS_OR_EQUAL
    return MseOrder.INCOMPARABLE


def rho_norm_multivariate(mu: np.ndarray, delta: np.ndarray, sigma_sq: tuple[float, float]) -> float:
    """Confounding strength ``||rho||`` of the varying-confounding design."""
    mu = np.asarray(mu, dtype=float).reshape(2)
    delta = np.asarray(delta, dtype=float).reshape(2, 2)
    inner = delta.T @ delta + np.diag(sigma_sq)
    dtm = delta.T @ mu
    val = float(mu @ delta @ checked_solve("delta^T delta + diag(sigma^2)", inner, dtm))
    return float(np.sqrt(max(val, 0.0) / (mu @ mu + 1.0)))


def _pairwise_sum(arr: np.ndarray) -> np.ndarray:
    # numpy reduces float64 sums pairwise for contiguous axes; fixing the
    # repetition order therefore fixes the bits of the result.
    return np.sum(np.ascontiguousarray(arr), axis=0)


@dataclass
class EstimatorMetrics:
    """Monte Carlo summary of one estimator within one grid cell."""

    estimator: str
    n_used: int
    bias: np.ndarray
    mse: np.ndarray
    variance: np.ndarray
    trace_mse: float
    det_mse: float
    rmse: float
    iqr: np.ndarray
    median_abs_error: float


def summarize_estimates(estimator: str, estimates: np.ndarray, target: np.ndarray) -> EstimatorMetrics:
    """Bias/MSE summaries from stacked per-repetition estimates."""
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    target = np.asarray(target, dtype=float).reshape(-1)
    n_used, k = est.shape
    err = est - target
    mean_err = _pairwise_sum(err) / n_used
    mse = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            mse[i, j] = mse[j, i] = float(_pairwise_sum(err[:, i] * err[:, j])) / n_used
    variance = mse - np.outer(mean_err, mean_err)
    quart = np.quantile(est, [0.25, 0.75], axis=0, method="linear")
    trace_mse = float(np.trace(mse))
    return EstimatorMetrics(
        estimator=estimator,
        n_used=n_used,
        bias=mean_err,
        mse=mse,
        variance=variance,
        trace_mse=trace_mse,
        det_mse=float(np.linalg.det(mse)),
        rmse=float(np.sqrt(trace_mse)),
        iqr=quart[1] - quart[0],
        median_abs_error=float(np.median(np.linalg.norm(err, axis=1))),
    )


@dataclass
class CellResult:
    """All per-cell outputs: parameters, per-estimator metrics, diagnostics."""

    params: dict[str, Any]
    metrics: dict[str, EstimatorMetrics]
    failures: dict[str, dict[str, int]]
    weak: dict[str, float] = field(default_factory=dict)
    pairwise: dict[str, dict[str, Any]] = field(default_factory=dict)
    alerts: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ExperimentConfig:
    """Design name, grids, repetition count and seeding for one experiment."""

    design: str
    repetitions: int = 1000
    master_seed: int = 0
    p_min: float = 0.05
    estimators: tuple[str, ...] | None = None
    q_values: tuple[int, ...] | None = None
    rho_values: tuple[float, ...] | None = None
    r2_values: tuple[float, ...] | None = None
    n_values: tuple[int, ...] | None = None
    n_models: int = 100
    sample_size: int = 50
    noise_triples: tuple[tuple[float, float, float], ...] | None = None
    allow_extensions: bool = False

    def __post_init__(self) -> None:
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}; valid designs: {DESIGNS}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        if self.design == "univariate" and not self.allow_extensions:
            grids = {
                "q": self.q_values,
                "rho": self.rho_values,
                "r2": self.r2_values,
                "n": self.n_values,
            }
            for name, values in grids.items():
                if values is None:
                    continue
                extras = [v for v in values if v not in UNIVARIATE_DECLARED[name]]
                if extras:
                    raise ValueError(
                        f"{name} values {extras} outside the declared grid "
                        f"{UNIVARIATE_DECLARED[name]}; set allow_extensions=True to proceed"
                    )

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_json(doc: dict[str, Any]) -> "ExperimentConfig":
        kwargs = dict(doc)
        for key in ("estimators", "q_values", "rho_values", "r2_values", "n_values"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("noise_triples") is not None:
            kwargs["noise_triples"] = tuple(tuple(t) for t in kwargs["noise_triples"])
        return ExperimentConfig(**kwargs)


@dataclass
class ExperimentResult:
    """Cells (or per-repetition rows), canonical CSV rows, and the manifest."""

    design: str
    config: ExperimentConfig
    cells: list[CellResult]
    rows: list[dict[str, Any]]
    columns: list[str]

    def manifest(self) -> dict[str, Any]:
        return {
            "design": self.design,
            "master_seed": self.config.master_seed,
            "config": self.config.to_json(),
            "columns": self.columns,
            "library_version": __version__,
        }


def _estimator_alpha(view: DesignView, label: str, pulse_cfg: PulseConfig) -> np.ndarray:
    if label == "pulse":
        return pulse_estimate(view, pulse_cfg).alpha
    return estimate(view, EstimatorSpec.parse(label)).alpha


def _run_cell(
    model: SemModel,
    n: int,
    target: np.ndarray,
    estimators: tuple[str, ...],
    cfg: ExperimentConfig,
    cell_index: int,
    params: dict[str, Any],
    collect_weak: bool = True,
) -> CellResult:
    pulse_cfg = PulseConfig(p_min=cfg.p_min)
    collected: dict[str, list[np.ndarray]] = {e: [] for e in estimators}
    failures: dict[str, dict[str, int]] = {e: {} for e in estimators}
    min_eigs: list[float] = []
    g_sum: np.ndarray | None = None
    g_count = 0

    for rep in range(cfg.repetitions):
        ds = sem_sample(model, n, cell_seed(cfg.master_seed, cell_index, rep))
        view = DesignView(ds)
        if collect_weak:
            try:
                report = weak_instrument_stat(view)
                min_eigs.append(report.min_eigenvalue)
                g_sum = report.g_matrix if g_sum is None else g_sum + report.g_matrix
                g_count += 1
            except PulseIVError:
                pass
        for label in estimators:
            try:
                collected[label].append(_estimator_alpha(view, label, pulse_cfg))
            except PulseIVError as exc:
                cause = type(exc).__name__
                failures[label][cause] = failures[label].get(cause, 0) + 1

    metrics: dict[str, EstimatorMetrics] = {}
    alerts: list[str] = []
    for label in estimators:
        stack = collected[label]
        if not stack:
            alerts.append(f"{label}: no successful repetitions")
            continue
        metrics[label] = summarize_estimates(label, np.vstack(stack), target)
        excluded = cfg.repetitions - len(stack)
        if excluded > 0.01 * cfg.repetitions:
            alerts.append(f"{label}: {excluded} of {cfg.repetitions} repetitions excluded")

    weak: dict[str, float] = {}
    if collect_weak and min_eigs:
        weak["mean_min_eig_gn"] = float(np.mean(min_eigs))
        weak["min_eig_mean_gn"] = float(np.linalg.eigvalsh(g_sum / g_count)[0])
        weak["gn_repetitions"] = float(g_count)

    pairwise: dict[str, dict[str, Any]] = {}
    if "pulse" in metrics:
        ref = metrics["pulse"]
        for label, met in metrics.items():
            if label == "pulse":
                continue
            entry: dict[str, Any] = {
                "mse_order_vs_pulse": mse_partial_order(ref.mse, met.mse).value,
            }
            for scalar in ("rmse", "trace_mse", "det_mse"):
                ref_val = getattr(ref, scalar)
                if ref_val > 0:
                    entry[f"rel_change_{scalar}_vs_pulse"] = relative_change(
                        getattr(met, scalar), ref_val
                    )
            pairwise[label] = entry

    return CellResult(
        params=params,
        metrics=metrics,
        failures={k: v for k, v in failures.items() if v},
        weak=weak,
        pairwise=pairwise,
        alerts=alerts,
    )


def _metric_rows(cell: CellResult, param_names: list[str]) -> list[dict[str, Any]]:
    rows: list[dict[str, Any]] = []

    def base(estimator: str, metric: str, value: Any, reps: int) -> dict[str, Any]:
        row = {name: cell.params.get(name) for name in param_names}
        row.update(
            {"estimator": estimator, "metric": metric, "value": value, "repetitions_used": reps}
        )
        return row

    for label in sorted(cell.metrics):
        met = cell.metrics[label]
        k = met.bias.shape[0]
        for i in range(k):
            rows.append(base(label, f"bias_{i}", float(met.bias[i]), met.n_used))
            rows.append(base(label, f"iqr_{i}", float(met.iqr[i]), met.n_used))
        for i in range(k):
            for j in range(i, k):
                rows.append(base(label, f"mse_{i}{j}", float(met.mse[i, j]), met.n_used))
                rows.append(base(label, f"var_{i}{j}", float(met.variance[i, j]), met.n_used))
        rows.append(base(label, "trace_mse", met.trace_mse, met.n_used))
        rows.append(base(label, "det_mse", met.det_mse, met.n_used))
        rows.append(base(label, "rmse", met.rmse, met.n_used))
        rows.append(base(label, "median_abs_error", met.median_abs_error, met.n_used))
    for label in sorted(cell.failures):
        reps = cell.metrics[label].n_used if label in cell.metrics else 0
        for cause, count in sorted(cell.failures[label].items()):
            rows.append(base(label, f"excluded_{cause}", count, reps))
    for label in sorted(cell.pairwise):
        for metric, value in sorted(cell.pairwise[label].items()):
            rows.append(base(label, metric, value, cell.metrics[label].n_used))
    reps_weak = int(cell.weak.get("gn_repetitions", 0))
    for metric in ("mean_min_eig_gn", "min_eig_mean_gn"):
        if metric in cell.weak:
            rows.append(base("_instruments", metric, cell.weak[metric], reps_weak))
    return rows


def _model_rng(cfg: ExperimentConfig, cell_index: int) -> np.random.Generator:
    # model coefficients (not data) may use numpy's default stream; the data
    # path keeps the documented counter-based contract
    return np.random.Generator(
        np.random.Philox(key=[cell_seed(cfg.master_seed, cell_index, 0), 2])
    )


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Execute a design and return cells plus canonical CSV rows.

    Deterministic for a fixed ``master_seed`` regardless of ``threads``.
    """
    if cfg.design == "robustness-e1":
        return _run_robustness_e1(cfg)
    jobs: list[tuple[dict[str, Any], Callable[[], CellResult]]] = []

    if cfg.design == "univariate":
        param_names = ["q", "rho", "r2", "n"]
        estimators = cfg.estimators or ("ols", "tsls", "fuller:1", "fuller:4", "pulse")
        grid = [
            {"q": q, "rho": rho, "r2": r2, "n": n}
            for q in (cfg.q_values or UNIVARIATE_DECLARED["q"])
            for rho in (cfg.rho_values or UNIVARIATE_DECLARED["rho"])
            for r2 in (cfg.r2_values or UNIVARIATE_DECLARED["r2"])
            for n in (cfg.n_values or UNIVARIATE_DECLARED["n"])
        ]
        for idx, params in enumerate(grid):
            model = univariate_model(params["q"], params["rho"], params["r2"])
            jobs.append(
                (params, _cell_job(model, params["n"], np.array([1.0]), estimators, cfg, idx, params))
            )

    elif cfg.design == "mv-random":
        param_names = ["model_index", "rho_norm"]
        estimators = cfg.estimators or ("ols", "fuller:1", "fuller:4", "pulse")
        for idx in range(cfg.n_models):
            rng = _model_rng(cfg, idx)
            sigma_sq = tuple(rng.uniform(0.1, 1.0, size=2))
            xi = rng.uniform(-2.0, 2.0, size=(2, 2))
            delta = rng.uniform(-2.0, 2.0, size=(2, 2))
            mu = rng.uniform(-2.0, 2.0, size=2)
            model = mv_varying_model(xi, delta, mu, sigma_sq)
            params = {
                "model_index": idx,
                "rho_norm": rho_norm_multivariate(mu, delta, sigma_sq),
            }
            jobs.append(
                (params, _cell_job(model, cfg.sample_size, np.zeros(2), estimators, cfg, idx, params))
            )

    elif cfg.design == "mv-fixed":
        param_names = ["eta", "phi1", "phi2", "rho_norm", "model_index"]
        estimators = cfg.estimators or ("ols", "fuller:1", "fuller:4", "pulse")
        triples = cfg.noise_triples or FIXED_NOISE_DECLARED
        cell_index = 0
        for eta, phi1, phi2 in triples:
            rho_norm = float(
                np.sqrt((phi1**2 + phi2**2 - 2 * eta * phi1 * phi2) / (1.0 - eta**2))
            )
            for _ in range(cfg.n_models):
                rng = _model_rng(cfg, cell_index)
                xi = rng.uniform(-2.0, 2.0, size=(2, 2))
                model = mv_fixed_model(xi, eta, phi1, phi2)
                params = {
                    "eta": eta,
                    "phi1": phi1,
                    "phi2": phi2,
                    "rho_norm": rho_norm,
                    "model_index": cell_index,
                }
                jobs.append(
                    (params, _cell_job(model, cfg.sample_size, np.zeros(2), estimators, cfg, cell_index, params))
                )
                cell_index += 1

    elif cfg.design == "underid-e3":
        param_names = ["n"]
        estimators = cfg.estimators or ("pulse", "modified-tsls")
        target = np.array(population_pulse_underid(1.0, 1.0, 1.0))
        model = e3_model()
        for idx, n in enumerate(cfg.n_values or (100, 1000, 10000)):
            params = {"n": n}
            jobs.append((params, _cell_job(model, n, target, estimators, cfg, idx, params)))
    else:  # pragma: no cover - guarded by ExperimentConfig
        raise ValueError(f"unknown design {cfg.design!r}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(lambda job: job[1](), jobs))
    else:
        cells = [job[1]() for job in jobs]

    rows: list[dict[str, Any]] = []
    for cell in cells:
        rows.extend(_metric_rows(cell, param_names))
    columns = param_names + ["estimator", "metric", "value", "repetitions_used"]
    return ExperimentResult(cfg.design, cfg, cells, rows, columns)


def _cell_job(model, n, target, estimators, cfg, idx, params):
    def job() -> CellResult:
        return _run_cell(model, n, target, estimators, cfg, idx, params)

    return job


def _run_robustness_e1(cfg: ExperimentConfig) -> ExperimentResult:
    """Path study: K-class estimates of the benchmark model and their worst-case MSPE."""
    n = (cfg.n_values or (2000,))[0]
    kappas = (0.0, 0.75, 1.0)
    model = e1_model()
    rows: list[dict[str, Any]] = []
    for rep in range(cfg.repetitions):
        ds = sem_sample(model, n, cell_seed(cfg.master_seed, 0, rep))
        view = DesignView(ds)
        for kappa in kappas:
            est = float(view.kclass_solve(kappa)[0])
            wc = float(wcmspe_curve_e1(est, [ROBUSTNESS_REFERENCE_X])[0])
            rows.append({"rep": rep, "kappa": kappa, "estimate": est, "wcmspe": wc})
    columns = ["rep", "kappa", "estimate", "wcmspe"]
    return ExperimentResult(cfg.design, cfg, [], rows, columns)


def write_result(result: ExperimentResult, outdir: str | Path) -> tuple[Path, Path]:
    """Write ``<design>.csv`` and ``manifest.json``; returns both paths."""
    import csv as _csv

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    csv_path = outdir / f"{result.design}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=result.columns)
        writer.writeheader()
        for row in result.rows:
            writer.writerow({k: _fmt_cell(row.get(k)) for k in result.columns})
    manifest_path = outdir / "manifest.json"
    manifest_path.write_text(
        json.dumps(result.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return csv_path, manifest_path


def _fmt_cell(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value
