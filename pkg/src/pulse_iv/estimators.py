"""Closed-form and eigenvalue-based single-equation estimators.

OLS, TSLS, anchor regression, K-class, LIML, Fuller(a), and the modified TSLS
for under-identified systems.  Every routine consumes a shared immutable
:class:`~pulse_iv.data.DesignView` and is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from .data import RCOND_GRAM, DesignView, IdentificationClass, checked_solve, rcond_symmetric
from .exceptions import InfeasibleConstraint, SingularGram, UnderIdentified

_KINDS = ("ols", "tsls", "kclass", "anchor", "liml", "fuller", "modified-tsls", "pulse")


@dataclass(frozen=True)
class EstimatorSpec:
    """Named estimator with its hyperparameter, parseable from ``kind:value``."""

    kind: str
    kappa: float | None = None
    lam: float | None = None
    a: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}; valid: {_KINDS}")
        if self.kind == "kclass" and self.kappa is None:
            raise ValueError("kclass spec requires kappa")
        if self.kind == "anchor":
            if self.lam is None:
                raise ValueError("anchor spec requires lambda")
            if self.lam <= -1.0:
                raise ValueError(f"anchor requires lambda > -1, got {self.lam}")
        if self.kind == "fuller" and (self.a is None or self.a <= 0):
            raise ValueError("fuller spec requires a > 0")

    @staticmethod
    def ols() -> "EstimatorSpec":
        return EstimatorSpec("ols")

    @staticmethod
    def tsls() -> "EstimatorSpec":
        return EstimatorSpec("tsls")

    @staticmethod
    def kclass(kappa: float) -> "EstimatorSpec":
        return EstimatorSpec("kclass", kappa=float(kappa))

    @staticmethod
    def anchor(lam: float) -> "EstimatorSpec":
        return EstimatorSpec("anchor", lam=float(lam))

    @staticmethod
    def liml() -> "EstimatorSpec":
        return EstimatorSpec("liml")

    @staticmethod
    def fuller(a: float) -> "EstimatorSpec":
        return EstimatorSpec("fuller", a=float(a))

    @staticmethod
    def modified_tsls() -> "EstimatorSpec":
        return EstimatorSpec("modified-tsls")

    @staticmethod
    def parse(text: str) -> "EstimatorSpec":
        """Parse CLI syntax such as ``ols``, ``kclass:0.6`` or ``fuller:4``."""
        kind, _, value = text.strip().lower().partition(":")
        if kind == "kclass":
            return EstimatorSpec.kclass(float(value))
        if kind == "anchor":
            return EstimatorSpec.anchor(float(value))
        if kind == "fuller":
            return EstimatorSpec.fuller(float(value) if value else 4.0)
        if value:
            raise ValueError(f"estimator {kind!r} takes no parameter")
        return EstimatorSpec(kind)

    def label(self) -> str:
        if self.kind == "kclass":
            return f"kclass:{self.kappa:g}"
        if self.kind == "anchor":
            return f"anchor:{self.lam:g}"
        if self.kind == "fuller":
            return f"fuller:{self.a:g}"
        return self.kind


@dataclass
class EstimateResult:
    """Coefficient vector with the parameter that produced it and diagnostics.

    ``alpha`` is ordered ``[endogenous by input order, included exogenous by
    input order]``.  When both ``kappa_used`` and ``lambda_used`` are present
    they satisfy ``kappa = lambda / (1 + lambda)``.
    """

    alpha: np.ndarray
    kappa_used: float | None = None
    lambda_used: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("estimate contains non-finite coefficients")


def _base_diagnostics(view: DesignView) -> dict[str, Any]:
    return {
        "identification": view.identification.value,
        "identification_degree": view.identification_degree,
        "rcond_ztz": view.rcond_ztz,
        "rcond_ata": view.rcond_ata,
        "warnings": [],
    }


def kclass_estimate(view: DesignView, kappa: float) -> EstimateResult:
    """K-class estimator with parameter ``kappa``.

    For ``kappa`` in ``[0, 1)`` this is the unique minimizer of
    ``(1 - kappa) * l_OLS + kappa * l_IV``; at ``kappa = 1`` it is TSLS.
    Values outside ``[0, 1]`` are permitted but flagged in the diagnostics.
    """
    kappa = float(kappa)
    diag = _base_diagnostics(view)
    if not 0.0 <= kappa <= 1.0:
        diag["warnings"].append(f"kappa={kappa:g} outside [0, 1]; library guarantees void")
    alpha = view.kclass_solve(kappa)
    lam = kappa / (1.0 - kappa) if kappa < 1.0 else None
    return EstimateResult(alpha=alpha, kappa_used=kappa, lambda_used=lam, diagnostics=diag)


def anchor_estimate(view: DesignView, lam: float) -> EstimateResult:
    """Anchor regression estimator, the minimizer of ``l_OLS + lambda * l_IV``.

    Equals ``kclass_estimate(lambda / (1 + lambda))`` for ``lambda >= 0``.
    """
    lam = float(lam)
    if lam <= -1.0:
        raise ValueError(f"anchor regression requires lambda > -1, got {lam}")
    if view.rcond_ztz < RCOND_GRAM:
        raise SingularGram("Z^T Z", view.rcond_ztz)
    s, sy = view._iv_pieces()
    mat = view.ztz + lam * (s.T @ s)
    rhs = view.zty + lam * (s.T @ sy)
    alpha = checked_solve("Z^T (I + lambda P_A) Z", mat, rhs)
    return EstimateResult(
        alpha=alpha,
        kappa_used=lam / (1.0 + lam),
        lambda_used=lam,
        diagnostics=_base_diagnostics(view),
    )


def ols_estimate(view: DesignView) -> EstimateResult:
    return kclass_estimate(view, 0.0)


def tsls_estimate(view: DesignView) -> EstimateResult:
    """Two-stage least squares; requires a just- or over-identified setup."""
    if view.identification is IdentificationClass.UNDER:
        raise UnderIdentified(
            f"TSLS undefined with q2={view.q2} < d1={view.d1}; use modified_tsls"
        )
    alpha = view.kclass_solve(1.0)
    return EstimateResult(
        alpha=alpha, kappa_used=1.0, lambda_used=None, diagnostics=_base_diagnostics(view)
    )


def modified_tsls(view: DesignView) -> EstimateResult:
    """Loss-minimal point of the exact moment-condition solution space.

    Solves ``argmin l_OLS`` subject to ``A^T Z alpha = A^T y`` through the KKT
    system of the equality-constrained least-squares problem, falling back to
    the pseudo-inverse (minimum-norm tie-breaking) when the KKT block is
    rank-deficient at the standard threshold.
    """
    if view.identification is IdentificationClass.OVER:
        raise InfeasibleConstraint(
            f"exact moment condition infeasible with q2={view.q2} > d1={view.d1}"
        )
    k, q = view.k, view.q
    kkt = np.zeros((k + q, k + q))
    kkt[:k, :k] = view.ztz
    kkt[:k, k:] = view.atz.T
    kkt[k:, :k] = view.atz
    rhs = np.concatenate([view.zty, view.aty])
    if rcond_symmetric(kkt) >= RCOND_GRAM:
        sol = np.linalg.solve(kkt, rhs)
    else:
        sol = np.linalg.pinv(kkt, rcond=RCOND_GRAM) @ rhs
    alpha = sol[:k]
    moment_gap = float(np.linalg.norm(view.atz @ alpha - view.aty))
    diag = _base_diagnostics(view)
    diag["moment_gap"] = moment_gap
    return EstimateResult(alpha=alpha, kappa_used=None, lambda_used=None, diagnostics=diag)


def min_generalized_eigenvalue(w1: np.ndarray, w: np.ndarray) -> float:
    """Smallest eigenvalue of ``W1 W^{-1}`` via Cholesky of ``W``.

    Factors ``W = L L^T`` and returns the smallest eigenvalue of the
    symmetrized ``L^{-1} W1 L^{-T}``, avoiding the non-symmetric product.
    """
    try:
        low = scipy.linalg.cholesky(w, lower=True)
    except scipy.linalg.LinAlgError:
        raise SingularGram("W", rcond_symmetric(w)) from None
    inner = scipy.linalg.solve_triangular(low, w1, lower=True)
    inner = scipy.linalg.solve_triangular(low, inner.T, lower=True)
    inner = 0.5 * (inner + inner.T)
    return float(np.linalg.eigvalsh(inner)[0])


def _liml_blocks(view: DesignView) -> tuple[np.ndarray, np.ndarray]:
    """Cross-product matrices ``W`` and ``W1`` for the LIML eigenproblem."""
    m0 = np.column_stack([view.y, view.dataset.x[:, list(view.partition.included_endogenous)]])
    gram0 = m0.T @ m0

    def residual_gram(basis: np.ndarray) -> np.ndarray:
        if basis.shape[1] == 0:
            return gram0
        proj = basis @ np.linalg.lstsq(basis, m0, rcond=None)[0]
        return gram0 - proj.T @ proj

    a_star = (
        view.dataset.a[:, list(view.partition.included_exogenous)]
        if view.q1
        else np.empty((view.n, 0))
    )
    w = residual_gram(view.a)
    w1 = residual_gram(a_star)
    return w1, w


def liml_kappa(view: DesignView) -> float:
    """Data-driven ``kappa`` of the limited-information ML estimator.

    Smallest eigenvalue of ``W1 W^{-1}`` where ``W`` and ``W1`` are the
    cross products of ``[y X_*]`` after projecting out all exogenous
    variables and only the included ones, respectively.  Always ``>= 1`` up
    to roundoff.  With no included exogenous variables the ``W1`` projection
    is the identity.
    """
    if view.q2 < 1:
        raise ValueError("LIML requires at least one excluded instrument (q2 >= 1)")
    w1, w = _liml_blocks(view)
    if rcond_symmetric(w) < RCOND_GRAM:
        raise SingularGram("W", rcond_symmetric(w))
    return min_generalized_eigenvalue(w1, w)


def fuller_kappa(view: DesignView, a: float) -> float:
    """Fuller adjustment ``kappa_LIML - a / (n - q)``; requires ``n > q``."""
    if a <= 0:
        raise ValueError(f"fuller parameter must be positive, got {a}")
    if view.n <= view.q:
        raise ValueError(f"fuller requires n > q; got n={view.n}, q={view.q}")
    return liml_kappa(view) - a / (view.n - view.q)


def liml_estimate(view: DesignView) -> EstimateResult:
    kappa = liml_kappa(view)
    res = kclass_estimate(view, kappa)
    res.diagnostics["kappa_liml"] = kappa
    return res


def fuller_estimate(view: DesignView, a: float) -> EstimateResult:
    kappa = fuller_kappa(view, a)
    res = kclass_estimate(view, kappa)
    res.diagnostics["fuller_a"] = a
    return res


def estimate(view: DesignView, spec: EstimatorSpec) -> EstimateResult:
    """Dispatch on an :class:`EstimatorSpec` (PULSE lives in ``pulse_iv.pulse``)."""
    if spec.kind == "ols":
        return ols_estimate(view)
    if spec.kind == "tsls":
        return tsls_estimate(view)
    if spec.kind == "kclass":
        return kclass_estimate(view, spec.kappa)
    if spec.kind == "anchor":
        return anchor_estimate(view, spec.lam)
    if spec.kind == "liml":
        return liml_estimate(view)
    if spec.kind == "fuller":
        return fuller_estimate(view, spec.a)
    if spec.kind == "modified-tsls":
        return modified_tsls(view)
    raise ValueError(f"estimator kind {spec.kind!r} is not dispatched here")
