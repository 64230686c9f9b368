"""Uncorrelatedness test, chi-squared quantiles, and weak-instrument diagnostics.

The test statistic is ``T = c(n) * l_IV(alpha) / l_OLS(alpha)`` compared with
the ``1 - p_min`` quantile of a chi-squared with ``q`` degrees of freedom.
Two scaling schemes are supported: plain (``c(n) = n``) and the one that makes
the test equivalent to the asymptotic Anderson-Rubin test
(``c(n) = n - q + Q``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.special

from .data import DesignView, psd_inverse_sqrt, rcond_symmetric, RCOND_GRAM
from .exceptions import DegenerateResidual, SingularGram, ZeroResidual

PLAIN = "plain"
ANDERSON_RUBIN = "anderson-rubin"
_SCALINGS = (PLAIN, ANDERSON_RUBIN)

#: Conventional non-weak-instrument rule of thumb on the first-stage F.
WEAK_INSTRUMENT_RULE = 10.0


def chi2_quantile(q_dof: int, prob: float) -> float:
    """Quantile of the central chi-squared distribution.

    Computed by inverting the regularized lower incomplete gamma function, so
    ``cdf(chi2_quantile(q, p)) == p`` to high accuracy.

    Raises
    ------
    ValueError
        If ``prob`` is outside ``(0, 1)`` or ``q_dof`` is not positive.
    """
    if q_dof < 1:
        raise ValueError(f"degrees of freedom must be positive, got {q_dof}")
    if not 0.0 < prob < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {prob}")
    return float(2.0 * scipy.special.gammaincinv(q_dof / 2.0, prob))


def chi2_cdf(q_dof: int, value: float) -> float:
    return float(scipy.special.gammainc(q_dof / 2.0, value / 2.0))


@dataclass(frozen=True)
class TestConfig:
    """Level and scaling scheme of the uncorrelatedness test.

    ``q`` may pin the expected instrument count; when ``None`` it is taken
    from the design view at evaluation time.
    """

    p_min: float = 0.05
    scaling: str = ANDERSON_RUBIN
    q: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.p_min < 1.0:
            raise ValueError(f"p_min must lie in (0, 1), got {self.p_min}")
        if self.scaling not in _SCALINGS:
            raise ValueError(f"scaling must be one of {_SCALINGS}, got {self.scaling!r}")

    def resolve_q(self, view_q: int) -> int:
        if self.q is not None and self.q != view_q:
            raise ValueError(f"TestConfig.q={self.q} does not match the data (q={view_q})")
        return view_q

    def scale(self, n: int, q: int) -> float:
        """The factor ``c(n)``: ``n`` for plain, ``n - q + Q`` for Anderson-Rubin."""
        if self.scaling == PLAIN:
            return float(n)
        if n <= q:
            raise ValueError(f"Anderson-Rubin scaling requires n > q; got n={n}, q={q}")
        return float(n - q + self.threshold(q))

    def threshold(self, q: int) -> float:
        return chi2_quantile(q, 1.0 - self.p_min)


@dataclass
class TestResult:
    """Statistic, threshold and verdict; ``accepted`` iff statistic <= threshold."""

    statistic: float
    threshold: float
    accepted: bool
    p_value_bound: float | None = None


@dataclass
class WeakInstrumentReport:
    """First-stage concentration diagnostic ``G_n`` and the >10 rule of thumb."""

    g_matrix: np.ndarray
    min_eigenvalue: float
    rule_of_thumb_pass: bool
    details: dict[str, Any] | None = None


def test_statistic(view: DesignView, alpha: np.ndarray, cfg: TestConfig | None = None) -> TestResult:
    """Test the hypothesis that the exogenous variables are uncorrelated with
    the residual ``y - Z alpha``.

    Raises
    ------
    ZeroResidual
        If the OLS loss at ``alpha`` is numerically zero, making the ratio
        undefined.
    """
    cfg = cfg or TestConfig()
    q = cfg.resolve_q(view.q)
    denom = view.ols_loss(alpha)
    if denom <= 1e-14 * view.yty / view.n:
        raise ZeroResidual("l_OLS(alpha) is numerically zero; the test ratio is undefined")
    stat = cfg.scale(view.n, q) * view.iv_loss(alpha) / denom
    thr = cfg.threshold(q)
    return TestResult(
        statistic=float(stat),
        threshold=float(thr),
        accepted=bool(stat <= thr),
        p_value_bound=1.0 - chi2_cdf(q, stat),
    )


def ar_statistic(view: DesignView, alpha: np.ndarray) -> float:
    """Anderson-Rubin F-form statistic ``(n-q)/q * l_IV / (l_OLS - l_IV)``.

    Accepting ``ar_statistic(alpha) <= chi2_quantile(q, 1-p)/q`` is equivalent
    to accepting the scaled test with ``c(n) = n - q + chi2_quantile(q, 1-p)``.

    Raises
    ------
    DegenerateResidual
        If ``l_OLS - l_IV`` is not strictly positive, i.e. the residual lies
        entirely in the span of the exogenous variables.
    """
    lo = view.ols_loss(alpha)
    li = view.iv_loss(alpha)
    gap = lo - li
    if gap <= 1e-14 * max(lo, 1e-300):
        raise DegenerateResidual("residual lies in span(A); the F-form denominator vanishes")
    return float((view.n - view.q) / view.q * li / gap)


def weak_instrument_stat(view: DesignView) -> WeakInstrumentReport:
    """Multivariate first-stage F-statistic ``G_n`` for the included endogenous block.

    ``G_n = Sigma^{-1/2} X^T P_A X Sigma^{-1/2} / q`` with
    ``Sigma = (n - q)^{-1} X^T P_A^perp X``.  Instruments pass the rule of
    thumb when the smallest eigenvalue exceeds 10.
    """
    n, q, d1 = view.n, view.q, view.d1
    if n <= q:
        raise ValueError(f"G_n requires n > q; got n={n}, q={q}")
    s, _ = view._iv_pieces()
    s_x = s[:, :d1]
    xtx = view.ztz[:d1, :d1]
    x_pa_x = s_x.T @ s_x
    sigma = (xtx - x_pa_x) / (n - q)
    if rcond_symmetric(sigma) < RCOND_GRAM:
        raise SingularGram("X^T P_A^perp X", rcond_symmetric(sigma))
    isqrt = psd_inverse_sqrt("Sigma_UX", sigma)
    g = isqrt @ x_pa_x @ isqrt / q
    g = 0.5 * (g + g.T)
    min_eig = float(np.linalg.eigvalsh(g)[0])
    return WeakInstrumentReport(
        g_matrix=g,
        min_eigenvalue=min_eig,
        rule_of_thumb_pass=bool(min_eig > WEAK_INSTRUMENT_RULE),
        details={"trace": float(np.trace(g)), "n": n, "q": q},
    )
