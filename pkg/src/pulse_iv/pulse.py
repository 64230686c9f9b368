"""The PULSE estimator: dual binary search, fallback wrapper, and primal oracle.

PULSE minimizes the OLS loss over the acceptance region of the
uncorrelatedness test.  Along the K-class path the test statistic is monotone
in the penalty, so the smallest accepted penalty ``lambda*`` is found by
binary search; the estimate is the K-class solution at
``kappa = lambda* / (1 + lambda*)``.  The primal (constrained) formulation is
kept as an independent route for equivalence checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from .data import DesignView, IdentificationClass
from .estimators import EstimatorSpec, estimate, modified_tsls
from .exceptions import NonMonotoneDetected, OutOfDomain
from .inference import TestConfig, TestResult, test_statistic

#: Penalty cap for the doubling phase of the binary search.
LAMBDA_CAP = 1e30

_FALLBACK_KINDS = ("tsls", "liml", "fuller")


class PulseMessage(Enum):
    """User messages mirroring the estimation-algorithm branches."""

    NONE = "none"
    OLS_ACCEPTED = "ols_accepted"
    TSLS_REJECTED_FALLBACK = "tsls_rejected_fallback"


#: Human-readable warning strings emitted verbatim by the CLI.
MESSAGE_TEXT = {
    PulseMessage.OLS_ACCEPTED: "Warning: The OLS is accepted.",
    PulseMessage.TSLS_REJECTED_FALLBACK: "Warning: TSLS outside interior of acceptance region.",
}


@dataclass(frozen=True)
class PulseConfig:
    """Level, search precision ``1/N``, fallback estimator and test scaling."""

    p_min: float = 0.05
    precision_n: int = 2**20
    fallback: EstimatorSpec = field(default_factory=lambda: EstimatorSpec.fuller(4.0))
    test_cfg: TestConfig | None = None
    fast_init: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.p_min < 1.0:
            raise ValueError(f"p_min must lie in (0, 1), got {self.p_min}")
        if self.precision_n < 1:
            raise ValueError(f"precision_n must be >= 1, got {self.precision_n}")
        if self.fallback.kind not in _FALLBACK_KINDS:
            raise ValueError(
                f"fallback must be a consistent estimator kind {_FALLBACK_KINDS}, "
                f"got {self.fallback.kind!r}"
            )
        if self.test_cfg is None:
            object.__setattr__(self, "test_cfg", TestConfig(p_min=self.p_min))
        elif self.test_cfg.p_min != self.p_min:
            raise ValueError(
                f"test_cfg.p_min={self.test_cfg.p_min} disagrees with p_min={self.p_min}"
            )


@dataclass
class PulseResult:
    """PULSE estimate plus the penalty that produced it and the branch taken."""

    alpha: np.ndarray
    lambda_star: float
    kappa_star: float | None
    message: PulseMessage
    test_at_solution: TestResult
    fallback_used: bool
    diagnostics: dict[str, Any] = field(default_factory=dict)


def _path_statistic(view: DesignView, lam: float, cfg: TestConfig, scale: float) -> float:
    """Test statistic at the K-class solution with penalty ``lam``."""
    kappa = lam / (1.0 + lam)
    alpha = view.kclass_solve(kappa)
    return scale * view.iv_loss(alpha) / view.ols_loss(alpha)


def lambda_star_search(view: DesignView, cfg: PulseConfig | None = None) -> float:
    """Smallest penalty whose K-class solution passes the test, within ``1/N``.

    Returns ``math.inf`` when the setup is over-identified and even TSLS sits
    on or outside the acceptance region; in under- and just-identified setups
    the result is always finite.  Otherwise the returned value ``l`` satisfies
    ``l - lambda* in [0, 1/N]`` and the solution at ``l`` is accepted.

    Raises
    ------
    NonMonotoneDetected
        If the statistic still exceeds the threshold at the penalty cap,
        signalling numerical breakdown rather than infeasibility.
    """
    cfg = cfg or PulseConfig()
    tc = cfg.test_cfg
    q = tc.resolve_q(view.q)
    threshold = tc.threshold(q)
    scale = tc.scale(view.n, q)

    if view.identification is IdentificationClass.OVER:
        tsls_alpha = view.kclass_solve(1.0)
        stat_tsls = scale * view.iv_loss(tsls_alpha) / view.ols_loss(tsls_alpha)
        if stat_tsls >= threshold:
            return math.inf

    ols_alpha = view.kclass_solve(0.0)
    stat_ols = scale * view.iv_loss(ols_alpha) / view.ols_loss(ols_alpha)
    if stat_ols <= threshold:
        return 0.0

    l_min = 0.0
    if cfg.fast_init and view.identification is not IdentificationClass.OVER:
        # Any point with zero IV loss bounds lambda* in closed form, which
        # removes the doubling phase.
        tilde = modified_tsls(view).alpha
        l_max = view.n * view.ols_loss(tilde) / (view.ols_loss(ols_alpha) * threshold)
        if _path_statistic(view, l_max, tc, scale) > threshold:
            l_max = _grow_bracket(view, tc, scale, threshold)
    else:
        l_max = _grow_bracket(view, tc, scale, threshold)

    width = 1.0 / cfg.precision_n
    while l_max - l_min > width:
        mid = 0.5 * (l_min + l_max)
        if _path_statistic(view, mid, tc, scale) > threshold:
            l_min = mid
        else:
            l_max = mid
    return l_max


def _grow_bracket(view: DesignView, tc: TestConfig, scale: float, threshold: float) -> float:
    l_max = 2.0
    while _path_statistic(view, l_max, tc, scale) > threshold:
        if l_max >= LAMBDA_CAP:
            raise NonMonotoneDetected(
                f"statistic above threshold at lambda={l_max:g}; monotone descent broke down"
            )
        l_max = min(l_max * l_max, LAMBDA_CAP)
    return l_max


def pulse_estimate(view: DesignView, cfg: PulseConfig | None = None) -> PulseResult:
    """PULSE with fallback: total on every input satisfying the rank conditions.

    Branches: (i) over-identified with TSLS on or outside the acceptance
    region falls back to the configured consistent estimator; (ii) an accepted
    OLS returns exactly the OLS solution; (iii) otherwise the binary search
    determines the penalty and the closed-form K-class solution is returned.
    """
    cfg = cfg or PulseConfig()
    tc = cfg.test_cfg
    q = tc.resolve_q(view.q)
    threshold = tc.threshold(q)
    scale = tc.scale(view.n, q)

    if view.identification is IdentificationClass.OVER:
        tsls_alpha = view.kclass_solve(1.0)
        stat_tsls = scale * view.iv_loss(tsls_alpha) / view.ols_loss(tsls_alpha)
        if stat_tsls >= threshold:
            fb = estimate(view, cfg.fallback)
            return PulseResult(
                alpha=fb.alpha,
                lambda_star=math.inf,
                kappa_star=None,
                message=PulseMessage.TSLS_REJECTED_FALLBACK,
                test_at_solution=test_statistic(view, fb.alpha, tc),
                fallback_used=True,
                diagnostics={"fallback": cfg.fallback.label(), "tsls_statistic": stat_tsls},
            )

    ols_alpha = view.kclass_solve(0.0)
    stat_ols = scale * view.iv_loss(ols_alpha) / view.ols_loss(ols_alpha)
    if stat_ols <= threshold:
        return PulseResult(
            alpha=ols_alpha,
            lambda_star=0.0,
            kappa_star=0.0,
            message=PulseMessage.OLS_ACCEPTED,
            test_at_solution=test_statistic(view, ols_alpha, tc),
            fallback_used=False,
        )

    lam = lambda_star_search(view, cfg)
    kappa = lam / (1.0 + lam)
    alpha = view.kclass_solve(kappa)
    return PulseResult(
        alpha=alpha,
        lambda_star=lam,
        kappa_star=kappa,
        message=PulseMessage.NONE,
        test_at_solution=test_statistic(view, alpha, tc),
        fallback_used=False,
    )


def _domain(view: DesignView) -> tuple[float, float]:
    """Solvable constraint-bound domain ``(inf l_IV, l_IV(OLS)]``."""
    inf_iv = view.min_iv_loss()
    iv_at_ols = view.iv_loss(view.kclass_solve(0.0))
    return inf_iv, iv_at_ols


def primal_solve(view: DesignView, t: float) -> np.ndarray:
    """Unique minimizer of ``l_OLS`` subject to ``l_IV <= t``.

    Exploits monotonicity of ``l_IV`` along the K-class path: a bracketed
    bisection finds the penalty whose solution has IV loss ``t``, where the
    constraint is active.

    Raises
    ------
    OutOfDomain
        If ``t`` lies outside ``(inf l_IV, l_IV(OLS)]``.
    """
    t = float(t)
    inf_iv, iv_at_ols = _domain(view)
    if t <= inf_iv or t > iv_at_ols * (1.0 + 1e-12) + 1e-300:
        raise OutOfDomain(
            f"constraint bound t={t:g} outside ({inf_iv:g}, {iv_at_ols:g}]"
        )
    if t >= iv_at_ols * (1.0 - 1e-14):
        return view.kclass_solve(0.0)

    def iv_at(lam: float) -> float:
        return view.iv_loss(view.kclass_solve(lam / (1.0 + lam)))

    lo, hi = 0.0, 2.0
    while iv_at(hi) > t:
        if hi >= LAMBDA_CAP:
            raise NonMonotoneDetected(
                f"IV loss above bound t={t:g} at the lambda cap; cannot bracket"
            )
        hi = min(hi * hi, LAMBDA_CAP)
    for _ in range(200):
        if hi - lo <= 1e-13 * (1.0 + hi):
            break
        mid = 0.5 * (lo + hi)
        if iv_at(mid) > t:
            lo = mid
        else:
            hi = mid
    return view.kclass_solve(hi / (1.0 + hi))


def t_star(view: DesignView, cfg: PulseConfig | None = None) -> float:
    """Largest constraint bound whose primal solution still passes the test.

    Uses that the statistic is weakly increasing along the primal path.
    Returns ``-inf`` when no bound in the domain is accepted.  Used as an
    independent oracle for the dual search; 60 bisection steps.
    """
    cfg = cfg or PulseConfig()
    tc = cfg.test_cfg
    q = tc.resolve_q(view.q)
    threshold = tc.threshold(q)
    scale = tc.scale(view.n, q)
    inf_iv, iv_at_ols = _domain(view)

    ols_alpha = view.kclass_solve(0.0)
    if scale * view.iv_loss(ols_alpha) / view.ols_loss(ols_alpha) <= threshold:
        return iv_at_ols
    if view.identification is IdentificationClass.OVER:
        tsls_alpha = view.kclass_solve(1.0)
        if scale * view.iv_loss(tsls_alpha) / view.ols_loss(tsls_alpha) >= threshold:
            return -math.inf

    def accepted(t: float) -> bool:
        alpha = primal_solve(view, t)
        return scale * view.iv_loss(alpha) / view.ols_loss(alpha) <= threshold

    lo, hi = inf_iv, iv_at_ols
    feasible = None
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mid <= inf_iv or mid >= iv_at_ols:
            break
        if accepted(mid):
            lo = mid
            feasible = mid
        else:
            hi = mid
    if feasible is None:
        # The accepted bounds hug inf l_IV; return the best bracketed guess.
        return 0.5 * (inf_iv + hi)
    return lo
