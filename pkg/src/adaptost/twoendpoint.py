"""Simultaneous bioequivalence for two endpoints via the min/max construction.

The smaller estimated effect is tested against the lower margin and the larger
against the upper margin, each with the standard error attached to the
endpoint that realized it. Also houses the ordered-bounds assumption check,
the intersection-union comparator, and the contrast mapping from the 4x4
within-subject covariance to the 2x2 covariance of the endpoint differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.special import ndtr, ndtri, stdtr

from .combine import Boundaries
from .errors import DomainError, NumericError
from .statkit import as_sym_matrix
from .tost import DesignSpec, FamilyPath, classify_branch, invert_family_bound

__all__ = [
    "CONTRAST",
    "EndpointPairSummary",
    "MinMaxQuantities",
    "EndpointCovariance",
    "minmax",
    "minmax_p",
    "minmax_shifted_p",
    "ci_minmax",
    "Prop2Check",
    "check_prop2",
    "iu_continue_required",
    "iu_comparator",
    "sigma_from_gamma",
]

# Maps (endpoint1 trt1, endpoint2 trt1, endpoint1 trt2, endpoint2 trt2) to the
# two per-subject treatment differences.
CONTRAST = np.array([[1.0, 0.0, -1.0, 0.0],
                     [0.0, 1.0, 0.0, -1.0]])


@dataclass(frozen=True)
class EndpointPairSummary:
    """Per-stage estimates and standard errors for the two endpoints.

    n (per-arm size) is optional; it is only needed for t-mode degrees of
    freedom (2n - 2 per endpoint).
    """

    theta_hat: tuple[float, float]
    se: tuple[float, float]
    stage: int = 1
    n: int | None = None

    def __post_init__(self):
        if len(self.theta_hat) != 2 or len(self.se) != 2:
            raise DomainError("EndpointPairSummary: needs exactly two endpoints")
        if not all(s > 0.0 for s in self.se):
            raise DomainError("EndpointPairSummary: standard errors must be positive")
        if self.stage not in (1, 2):
            raise DomainError("EndpointPairSummary: stage must be 1 or 2")

    @property
    def df(self) -> int | None:
        return None if self.n is None else 2 * self.n - 2


@dataclass(frozen=True)
class MinMaxQuantities:
    """Selector and the min/max estimators with their attached SEs."""

    selector: int               # 1 iff endpoint 1 realizes the minimum
    theta_min: float
    theta_max: float
    se_min: float
    se_max: float

    def __post_init__(self):
        if self.selector not in (0, 1):
            raise DomainError("MinMaxQuantities: selector must be 0 or 1")
        if self.theta_min > self.theta_max:
            raise DomainError("MinMaxQuantities: theta_min must not exceed theta_max")


@dataclass(frozen=True)
class EndpointCovariance:
    """4x4 within-subject log-measurement covariance plus the 2x4 contrast."""

    gamma: np.ndarray
    contrast: np.ndarray = None  # defaults to CONTRAST

    def __post_init__(self):
        gamma = as_sym_matrix(self.gamma)
        if gamma.shape != (4, 4):
            raise DomainError("EndpointCovariance: gamma must be 4x4")
        object.__setattr__(self, "gamma", gamma)
        contrast = CONTRAST if self.contrast is None else np.asarray(self.contrast, float)
        if contrast.shape != (2, 4):
            raise DomainError("EndpointCovariance: contrast must be 2x4")
        object.__setattr__(self, "contrast", contrast)


def minmax(summary: EndpointPairSummary) -> MinMaxQuantities:
    """Min/max estimators; ties select endpoint 1 as the minimum."""
    t1, t2 = summary.theta_hat
    s1, s2 = summary.se
    sel = 1 if t1 <= t2 else 0
    if sel:
        return MinMaxQuantities(1, t1, t2, s1, s2)
    return MinMaxQuantities(0, t2, t1, s2, s1)


def _cdf(x, df: float | None):
    return ndtr(x) if df is None else stdtr(df, x)


def minmax_p(q: MinMaxQuantities, delta: float,
             df: float | None = None) -> tuple[float, float]:
    """(p_min_minus, p_max_plus): the one-sided p-values of the min/max tests.

    Each equals the selected endpoint's ordinary stagewise p-value. df of None
    gives normal-mode p-values, otherwise Student-t with that df.
    """
    if not (delta > 0.0):
        raise DomainError("minmax_p: delta must be positive")
    z_min = (q.theta_min + delta) / q.se_min
    z_max = (-q.theta_max + delta) / q.se_max
    return float(1.0 - _cdf(z_min, df)), float(1.0 - _cdf(z_max, df))


def minmax_shifted_p(q: MinMaxQuantities, shift: float,
                     side: Literal["minus", "plus"],
                     df: float | None = None) -> float:
    """Shifted-family p-value of the min (minus) or max (plus) test."""
    if side == "minus":
        return float(1.0 - _cdf((q.theta_min - shift) / q.se_min, df))
    if side == "plus":
        return float(_cdf((q.theta_max + shift) / q.se_max, df))
    raise DomainError(f"side must be 'minus' or 'plus', got {side!r}")


def ci_minmax(stage1: EndpointPairSummary, stage2: EndpointPairSummary | None,
              design: DesignSpec) -> tuple[float, float]:
    """Lower bound for min(theta1, theta2) and upper bound for max(theta1, theta2).

    Same family inversion as the single-endpoint bounds, but the minus family
    runs on the min quantities and the plus family on the max quantities, each
    with its own stage-1 SE in the shifted boundaries.
    """
    q1 = minmax(stage1)
    df1 = stage1.df if design.use_t else None
    p1_min, p1_max = minmax_p(q1, design.delta, df=df1)
    br_min = classify_branch(p1_min, design.bounds)
    br_max = classify_branch(p1_max, design.bounds)
    if stage2 is None or br_min != "middle":
        lo_path = FamilyPath(q1.theta_min, q1.se_min, df1, branch=br_min)
    else:
        q2 = minmax(stage2)
        df2 = stage2.df if design.use_t else None
        lo_path = FamilyPath(q1.theta_min, q1.se_min, df1,
                             q2.theta_min, q2.se_min, df2, branch=br_min)
    if stage2 is None or br_max != "middle":
        hi_path = FamilyPath(q1.theta_max, q1.se_max, df1, branch=br_max)
    else:
        q2 = minmax(stage2)
        df2 = stage2.df if design.use_t else None
        hi_path = FamilyPath(q1.theta_max, q1.se_max, df1,
                             q2.theta_max, q2.se_max, df2, branch=br_max)
    lower = invert_family_bound(lo_path, design, "minus")
    upper = -invert_family_bound(hi_path, design, "plus")
    return lower, upper


@dataclass(frozen=True)
class Prop2Check:
    """Conditions under which l_min < u_max is guaranteed (with alpha0 <= 0.5)."""

    weights_ok: bool            # min{1+w, 1+1/w} z_{1-alpha} - z_{1-alpha1} > 0
    interval_ok: bool           # the two-Phi-sum inequality (> 2 alpha)
    sufficient_ok: bool         # closed-form sufficient condition for interval_ok
    interval_sum: float
    sufficient_value: float


def check_prop2(omega: float, kappa: float, alpha: float, alpha1: float) -> Prop2Check:
    """Evaluate the min/max ordered-bounds conditions at the given ratio/offset.

    omega is the ratio of the min-side to the max-side stage-1 SE; kappa is
    z_{1-alpha1} - 2*delta / (se_min + se_max). omega = 1 is handled by the
    analytic limit, where both inequalities reduce to kappa < z_{1-alpha}.
    """
    if not (omega > 0.0):
        raise DomainError("check_prop2: omega must be positive")
    if not (0.0 < alpha1 < alpha < 1.0):
        raise DomainError("check_prop2: need 0 < alpha1 < alpha < 1")
    za = float(ndtri(1.0 - alpha))
    za1 = float(ndtri(1.0 - alpha1))
    weights_ok = min(1.0 + omega, 1.0 + 1.0 / omega) * za - za1 > 0.0
    if abs(omega - 1.0) < 1e-9:
        # limit of both displayed expressions as omega -> 1
        interval_sum = min(1.0, 2.0 * float(ndtr(-kappa)))
        sufficient_value = 0.5 * (-kappa - abs(kappa))
    else:
        root = np.sqrt(kappa * kappa
                       + 2.0 * np.log(omega) * (omega - 1.0) / (omega + 1.0))
        arg1 = (-omega * kappa + root) / (omega - 1.0)
        arg2 = (kappa - omega * root) / (omega - 1.0)
        interval_sum = float(ndtr(arg1) + ndtr(arg2))
        sufficient_value = float((-kappa - root) / 2.0)
    return Prop2Check(
        weights_ok=bool(weights_ok),
        interval_ok=bool(interval_sum > 2.0 * alpha),
        sufficient_ok=bool(sufficient_value > -za),
        interval_sum=float(interval_sum),
        sufficient_value=float(sufficient_value),
    )


def iu_continue_required(p1_values: Sequence[float], bounds: Boundaries) -> bool:
    """Marginal per-endpoint testing continues unless all four stage-1
    p-values fall below the efficacy bound or at/above the futility bound."""
    if len(p1_values) != 4:
        raise DomainError("iu_continue_required: expected the four stage-1 p-values")
    return any(bounds.alpha1 <= p < bounds.alpha0 for p in p1_values)


def iu_comparator(overall_ps: Sequence[float], alpha: float) -> bool:
    """Intersection-union decision over the four per-endpoint overall p-values."""
    if len(overall_ps) != 4:
        raise DomainError("iu_comparator: expected four overall p-values")
    return all(q < alpha for q in overall_ps)


def sigma_from_gamma(cov: EndpointCovariance) -> np.ndarray:
    """2x2 covariance of the per-subject endpoint differences, A gamma A^T."""
    sigma = cov.contrast @ cov.gamma @ cov.contrast.T
    sigma = 0.5 * (sigma + sigma.T)
    if np.any(np.diag(sigma) <= 0.0) or np.linalg.det(sigma) < -1e-12:
        raise NumericError("sigma_from_gamma: contrast covariance is not PSD")
    return sigma
