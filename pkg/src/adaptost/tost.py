"""Single-endpoint two-stage adaptive TOST.

Stagewise one-sided p-values, per-hypothesis interim/final decisions, the
shifted p-value family, and decision-aligned confidence bounds obtained by
inverting the family {delta : overall shifted p >= alpha}.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from scipy.special import ndtr, ndtri, stdtr

from .combine import Boundaries, CombinationSpec, max_statistic, middle_prob_m
from .errors import DomainError, NumericError, StateError
from .statkit import bisect_indicator

__all__ = [
    "DesignSpec",
    "StageSummary",
    "HypState",
    "HypothesisOutcome",
    "TostState",
    "Side",
    "stage_p",
    "interim_decide",
    "finalize",
    "shifted_p",
    "shifted_bounds",
    "overall_shifted_p",
    "ci_bounds",
    "FamilyPath",
    "family_overall_p",
    "invert_family_bound",
    "Prop1Check",
    "check_prop1",
]

Side = Literal["minus", "plus"]

_P_GUARD = 1e-14  # internal clip keeping shifted p-values strictly inside (0, 1)


@dataclass(frozen=True)
class DesignSpec:
    """Margin, boundaries, combination weights and the stagewise CDF mode."""

    delta: float
    bounds: Boundaries
    comb: CombinationSpec
    use_t: bool = True
    df_rule: str = "pooled"

    def __post_init__(self):
        if not (self.delta > 0.0 and np.isfinite(self.delta)):
            raise DomainError("DesignSpec: delta must be a positive real")
        if self.df_rule != "pooled":
            raise DomainError(f"DesignSpec: unknown df_rule {self.df_rule!r}")

    @property
    def alpha(self) -> float:
        return self.bounds.alpha


@dataclass(frozen=True)
class StageSummary:
    """Sufficient statistics of one stage of a parallel-arm trial.

    n is the per-arm sample size; sigma_hat the pooled residual SD, so the
    standard error of theta_hat is sigma_hat * sqrt(2 / n).
    """

    theta_hat: float
    sigma_hat: float
    n: int
    stage: int = 1

    def __post_init__(self):
        if not (self.sigma_hat > 0.0):
            raise DomainError("StageSummary: sigma_hat must be positive")
        if self.n < 2:
            raise DomainError("StageSummary: n must be at least 2 per arm")
        if self.stage not in (1, 2):
            raise DomainError("StageSummary: stage must be 1 or 2")

    @property
    def se(self) -> float:
        return self.sigma_hat * np.sqrt(2.0 / self.n)

    @property
    def df(self) -> int:
        # pooled two-sample estimator with 1:1 randomization
        return 2 * self.n - 2


class HypState(enum.Enum):
    REJECTED_STAGE1 = "rejected-stage1"
    FUTILE_STAGE1 = "futile-stage1"
    CONTINUE = "continue"
    REJECTED_STAGE2 = "rejected-stage2"
    ACCEPTED_STAGE2 = "accepted-stage2"


_TERMINAL = frozenset({
    HypState.REJECTED_STAGE1,
    HypState.FUTILE_STAGE1,
    HypState.REJECTED_STAGE2,
    HypState.ACCEPTED_STAGE2,
})
_REJECTED = frozenset({HypState.REJECTED_STAGE1, HypState.REJECTED_STAGE2})


@dataclass(frozen=True)
class HypothesisOutcome:
    """Lifecycle of one one-sided null hypothesis."""

    state: HypState
    p1: float
    overall_p: float | None = None

    def __post_init__(self):
        if self.terminal != (self.overall_p is not None):
            raise StateError("HypothesisOutcome: overall_p present iff terminal")

    @property
    def terminal(self) -> bool:
        return self.state in _TERMINAL

    @property
    def rejected(self) -> bool:
        return self.state in _REJECTED


@dataclass(frozen=True)
class TostState:
    """Joint state of the two one-sided hypotheses."""

    minus: HypothesisOutcome
    plus: HypothesisOutcome
    bioequivalent: bool | None = None

    @property
    def continues_to_stage2(self) -> bool:
        return (self.minus.state is HypState.CONTINUE
                or self.plus.state is HypState.CONTINUE)


def _cdf(x, df: float | None):
    if df is None:
        return ndtr(x)
    return stdtr(df, x)


def stage_p(summary: StageSummary, design: DesignSpec, side: Side) -> float:
    """Stagewise one-sided p-value against the margin on the given side."""
    df = summary.df if design.use_t else None
    if side == "minus":
        stat = (summary.theta_hat + design.delta) / summary.se
    elif side == "plus":
        stat = (-summary.theta_hat + design.delta) / summary.se
    else:
        raise DomainError(f"side must be 'minus' or 'plus', got {side!r}")
    return float(1.0 - _cdf(stat, df))


def _interim_outcome(p1: float, bounds: Boundaries) -> HypothesisOutcome:
    if p1 < bounds.alpha1:
        return HypothesisOutcome(HypState.REJECTED_STAGE1, p1, overall_p=p1)
    if p1 >= bounds.alpha0:
        return HypothesisOutcome(HypState.FUTILE_STAGE1, p1, overall_p=p1)
    return HypothesisOutcome(HypState.CONTINUE, p1)


def interim_decide(p1_minus: float, p1_plus: float, bounds: Boundaries) -> TostState:
    """Stage-1 decision for each hypothesis; the trial proceeds to stage 2
    iff at least one hypothesis continues."""
    minus = _interim_outcome(float(p1_minus), bounds)
    plus = _interim_outcome(float(p1_plus), bounds)
    bioeq = None
    if minus.terminal and plus.terminal:
        bioeq = minus.rejected and plus.rejected
    return TostState(minus=minus, plus=plus, bioequivalent=bioeq)


def _finalize_outcome(outcome: HypothesisOutcome, p2: float | None,
                      design: DesignSpec) -> HypothesisOutcome:
    from .combine import overall_p as q_overall

    if outcome.state is not HypState.CONTINUE:
        if p2 is not None:
            raise StateError(
                "finalize: stage-2 p-value supplied for a hypothesis already "
                "settled at stage 1 (re-evaluation is not allowed)"
            )
        return outcome
    if p2 is None:
        raise StateError("finalize: stage-2 p-value missing for a continuing hypothesis")
    q = q_overall(outcome.p1, float(p2), design.bounds, design.comb)
    state = HypState.REJECTED_STAGE2 if q < design.alpha else HypState.ACCEPTED_STAGE2
    return replace(outcome, state=state, overall_p=q)


def finalize(state: TostState, p2_minus: float | None, p2_plus: float | None,
             design: DesignSpec) -> TostState:
    """Complete the trial: continuing hypotheses get their overall p-value."""
    minus = _finalize_outcome(state.minus, p2_minus, design)
    plus = _finalize_outcome(state.plus, p2_plus, design)
    return TostState(minus=minus, plus=plus,
                     bioequivalent=minus.rejected and plus.rejected)


def shifted_p(summary: StageSummary, design: DesignSpec, side: Side,
              shift: float) -> float:
    """p-value of the shifted hypothesis family at offset ``shift``.

    shift = -delta recovers stage_p on either side.
    """
    df = summary.df if design.use_t else None
    if side == "minus":
        return float(1.0 - _cdf((summary.theta_hat - shift) / summary.se, df))
    if side == "plus":
        return float(_cdf((summary.theta_hat + shift) / summary.se, df))
    raise DomainError(f"side must be 'minus' or 'plus', got {side!r}")


def shifted_bounds(shift: float, design: DesignSpec,
                   sigma_1n: float) -> tuple[float, float]:
    """Stage-1 efficacy/futility bounds transported to the shifted family."""
    if not (sigma_1n > 0.0):
        raise DomainError("shifted_bounds: sigma_1n must be positive")
    offset = (shift + design.delta) / sigma_1n
    a1 = float(1.0 - ndtr(ndtri(1.0 - design.bounds.alpha1) - offset))
    if design.bounds.alpha0 >= 1.0:
        a0 = 1.0
    else:
        a0 = float(1.0 - ndtr(ndtri(1.0 - design.bounds.alpha0) - offset))
    return a1, a0


@dataclass(frozen=True)
class FamilyPath:
    """Per-side (estimate, SE, df) data feeding the shifted p-value family.

    df of None means normal-mode stagewise p-values. Stage-2 entries are None
    when the hypothesis' realized path ended at stage 1. branch, when set,
    pins the Q branch to the hypothesis' realized stage-1 branch: with normal
    stagewise p-values the shifted branch comparison is exactly shift
    invariant, so pinning changes nothing; with t-based p-values it keeps the
    family well defined on trials whose data collection stopped at stage 1.
    """

    est1: float
    se1: float
    df1: float | None
    est2: float | None = None
    se2: float | None = None
    df2: float | None = None
    branch: Literal["early", "middle", "futility"] | None = None


def _path_p(shift: float, est: float, se: float, df: float | None,
            side: Side) -> float:
    if side == "minus":
        p = 1.0 - _cdf((est - shift) / se, df)
    else:
        p = _cdf((est + shift) / se, df)
    return float(min(max(p, _P_GUARD), 1.0 - _P_GUARD))


def family_overall_p(shift: float, path: FamilyPath, design: DesignSpec,
                     side: Side) -> float:
    """Overall shifted p-value Q(p1^d, p2^d, a1^d, a0^d) along one side's path."""
    p1 = _path_p(shift, path.est1, path.se1, path.df1, side)
    a1d, a0d = shifted_bounds(shift, design, path.se1)
    if path.branch is None:
        middle = a1d <= p1 < a0d
    else:
        middle = path.branch == "middle"
    if not middle:
        return p1
    if path.est2 is None:
        raise StateError(
            "overall shifted p: shifted stage-1 p-value falls in the middle "
            "branch but no stage-2 data is available"
        )
    p2 = _path_p(shift, path.est2, path.se2, path.df2, side)
    m = float(max_statistic(p1, p2, design.comb))
    return a1d + middle_prob_m(m, a1d, a0d, design.comb)


def classify_branch(p1: float, bounds: Boundaries) -> str:
    """Realized Q branch of a stage-1 p-value (ties per the Q convention)."""
    if p1 < bounds.alpha1:
        return "early"
    if p1 >= bounds.alpha0:
        return "futility"
    return "middle"


def _path_from_summaries(stage1: StageSummary, stage2: StageSummary | None,
                         design: DesignSpec, side: Side | None = None) -> FamilyPath:
    df1 = stage1.df if design.use_t else None
    branch = None
    if side is not None:
        branch = classify_branch(stage_p(stage1, design, side), design.bounds)
    if stage2 is None or branch in ("early", "futility"):
        return FamilyPath(stage1.theta_hat, stage1.se, df1, branch=branch)
    df2 = stage2.df if design.use_t else None
    return FamilyPath(stage1.theta_hat, stage1.se, df1,
                      stage2.theta_hat, stage2.se, df2, branch=branch)


def overall_shifted_p(shift: float, stage1: StageSummary,
                      stage2: StageSummary | None, design: DesignSpec,
                      side: Side) -> float:
    """Overall p-value of the shifted family built from stage summaries."""
    return family_overall_p(float(shift), _path_from_summaries(stage1, stage2, design),
                            design, side)


def invert_family_bound(path: FamilyPath, design: DesignSpec, side: Side,
                        tol: float = 1e-8) -> float:
    """Smallest shift with family_overall_p >= alpha (monotone nondecreasing).

    Geometric bracket expansion around the stage-1 estimate, then indicator
    bisection; branch invariance of the shifted family keeps the indicator
    monotone.
    """
    alpha = design.alpha

    def pred(delta: float) -> bool:
        return family_overall_p(delta, path, design, side) >= alpha

    center = path.est1
    span = max(path.se1, 1e-12)
    hi = center + span
    for _ in range(80):
        if pred(hi):
            break
        hi = center + 2.0 * (hi - center)
    else:
        raise NumericError("confidence bound: bracket expansion failed (upper)")
    lo = min(center - span, hi - span)
    for _ in range(80):
        if not pred(lo):
            break
        lo = center - 2.0 * (center - lo) if lo < center else lo - span
    else:
        raise NumericError("confidence bound: bracket expansion failed (lower)")
    return bisect_indicator(pred, lo, hi, tol=tol)


def ci_bounds(stage1: StageSummary, stage2: StageSummary | None,
              design: DesignSpec) -> tuple[float, float]:
    """Decision-aligned two-sided confidence bounds at level 1 - 2*alpha.

    lower is the smallest shift whose minus-family p reaches alpha; upper the
    negated smallest shift for the plus family. lower < -delta iff the
    realized minus-side overall p is >= alpha, and symmetrically for upper.
    """
    lower = invert_family_bound(
        _path_from_summaries(stage1, stage2, design, "minus"), design, "minus")
    upper = -invert_family_bound(
        _path_from_summaries(stage1, stage2, design, "plus"), design, "plus")
    return lower, upper


@dataclass(frozen=True)
class Prop1Check:
    """Sufficient conditions under which lower < upper is guaranteed."""

    futility_ok: bool           # alpha0 <= 0.5
    technical_ok: bool          # 2 z_{1-alpha} - z_{1-alpha1} > 0
    margin_ok: bool             # delta / sigma_1n > z_{1-alpha1} - z_{1-alpha}
    guaranteed: bool
    stage1_decisive: bool       # 2 delta / sigma_1n > z_{1-alpha1} + z_{1-alpha0}


def check_prop1(design: DesignSpec, sigma_1n: float) -> Prop1Check:
    """Evaluate the ordered-bounds guarantee conditions for one design."""
    if not (sigma_1n > 0.0):
        raise DomainError("check_prop1: sigma_1n must be positive")
    b = design.bounds
    za = float(ndtri(1.0 - b.alpha))
    za1 = float(ndtri(1.0 - b.alpha1))
    za0 = float(ndtri(1.0 - b.alpha0)) if b.alpha0 < 1.0 else -np.inf
    futility_ok = b.alpha0 <= 0.5
    technical_ok = 2.0 * za - za1 > 0.0
    margin_ok = design.delta / sigma_1n > za1 - za
    decisive = 2.0 * design.delta / sigma_1n > za1 + za0
    return Prop1Check(
        futility_ok=futility_ok,
        technical_ok=technical_ok,
        margin_ok=margin_ok,
        guaranteed=futility_ok and technical_ok and margin_ok,
        stage1_decisive=bool(decisive),
    )
