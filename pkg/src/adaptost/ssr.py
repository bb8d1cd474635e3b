"""Stage-2 sample-size re-estimation.

All probability formulas plug the interim estimates in as the truth and work
on the normal scale. Sample sizes are handled in per-arm units internally
(1:1 randomization); SsrConfig expresses the floor/cap as TOTAL sizes across
both arms, matching how simulation reports count subjects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri, stdtr

from .combine import Boundaries, conditional_error, critical_c
from .errors import DegenerateDesignError, DomainError, StateError
from .statkit import psd_sqrt
from .tost import DesignSpec
from .twoendpoint import CONTRAST, EndpointPairSummary

__all__ = [
    "SsrConfig",
    "InterimEstimates",
    "N2Result",
    "SsrDecision",
    "stage1_power",
    "futility_free_prob",
    "required_cp",
    "conditional_power",
    "n2_for_cp",
    "ssr_bioequiv",
    "gamma_quantities",
    "ssr_single",
    "ssr_multi",
    "maurer_ssr_power",
    "maurer_n2",
]

# Scenario codes for the four-way conditional-power dispatch.
BOTH_REJECTED, MINUS_OPEN, PLUS_OPEN, BOTH_OPEN = 1, 2, 3, 4


@dataclass(frozen=True)
class SsrConfig:
    """Power targets and stage-2 size limits.

    n2_min / n2_max are TOTAL stage-2 sizes across both arms (the cap of 300
    corresponds to 150 per arm); inner_sims is the Monte Carlo size per
    candidate n2 in the simulation-based two-endpoint re-estimation.
    """

    target_power: float = 0.9
    gamma_target: float = 0.9
    n2_max: int = 300
    n2_min: int = 0
    inner_sims: int = 10000

    def __post_init__(self):
        if not (0.0 < self.target_power < 1.0):
            raise DomainError("SsrConfig: target_power must lie in (0, 1)")
        if not (0.0 < self.gamma_target < 1.0):
            raise DomainError("SsrConfig: gamma_target must lie in (0, 1)")
        if self.n2_min < 0 or self.n2_min > self.n2_max:
            raise DomainError("SsrConfig: need 0 <= n2_min <= n2_max")
        if self.inner_sims < 1:
            raise DomainError("SsrConfig: inner_sims must be positive")

    @property
    def arm_floor(self) -> int:
        return (self.n2_min + 1) // 2

    @property
    def arm_cap(self) -> int:
        return self.n2_max // 2


@dataclass(frozen=True)
class InterimEstimates:
    """Stage-1 ML estimates plugged in as the SSR alternative."""

    theta: float
    sigma: float
    n1: int

    def __post_init__(self):
        if not (self.sigma > 0.0):
            raise DomainError("InterimEstimates: sigma must be positive")
        if self.n1 < 2:
            raise DomainError("InterimEstimates: n1 must be at least 2 per arm")

    @property
    def se(self) -> float:
        return self.sigma * np.sqrt(2.0 / self.n1)


@dataclass(frozen=True)
class N2Result:
    n2: int                    # per-arm
    saturated: bool

    @property
    def n2_total(self) -> int:
        return 2 * self.n2


@dataclass(frozen=True)
class SsrDecision:
    n2: int                    # per-arm
    scenario: int
    required_cp: float
    achieved_cp: float
    saturated: bool

    @property
    def n2_total(self) -> int:
        return 2 * self.n2


def _interval_prob(lo: float, hi: float, mu: float) -> float:
    if hi <= lo:
        return 0.0
    return float(ndtr(hi - mu) - ndtr(lo - mu))


def stage1_power(est: InterimEstimates, design: DesignSpec) -> float:
    """P(both stage-1 p-values <= alpha1) under the interim estimates.

    The two stagewise statistics sum to 2*delta/se, so the joint event is a
    single interval for the minus-side statistic.
    """
    se = est.se
    mu = (est.theta + design.delta) / se
    z1 = float(ndtri(1.0 - design.bounds.alpha1))
    return _interval_prob(z1, 2.0 * design.delta / se - z1, mu)


def futility_free_prob(est: InterimEstimates, design: DesignSpec) -> float:
    """P(both stage-1 p-values < alpha0) under the interim estimates."""
    a0 = design.bounds.alpha0
    if a0 >= 1.0:
        return 1.0
    se = est.se
    mu = (est.theta + design.delta) / se
    z0 = float(ndtri(1.0 - a0))
    return _interval_prob(z0, 2.0 * design.delta / se - z0, mu)


def required_cp(beta: float, beta1: float, beta0: float) -> float:
    """Minimum conditional power (beta1 - beta) / (beta1 - beta0), clamped to [0, 1]."""
    if beta1 <= beta0:
        raise DegenerateDesignError(
            "required_cp: beta1 must exceed beta0 (no continuation region)")
    return float(min(1.0, max(0.0, (beta1 - beta) / (beta1 - beta0))))


def conditional_power(scenario: int, a_minus: float | None, a_plus: float | None,
                      est: InterimEstimates, n2: int, design: DesignSpec) -> float:
    """Probability of completing the remaining rejections with n2 per arm.

    Scenario 1: both hypotheses already rejected. Scenarios 2/3: one-sided
    tail under the drift of the open hypothesis. Scenario 4: single-interval
    probability from the stage-2 statistic degeneracy.
    """
    if scenario == BOTH_REJECTED:
        return 1.0
    if n2 < 1:
        return 0.0
    se2 = est.sigma * np.sqrt(2.0 / n2)
    if scenario == MINUS_OPEN:
        if a_minus is None:
            raise StateError("conditional_power: scenario 2 needs A(p1-)")
        return float(ndtr((design.delta + est.theta) / se2 - ndtri(1.0 - a_minus)))
    if scenario == PLUS_OPEN:
        if a_plus is None:
            raise StateError("conditional_power: scenario 3 needs A(p1+)")
        return float(ndtr((design.delta - est.theta) / se2 - ndtri(1.0 - a_plus)))
    if scenario == BOTH_OPEN:
        if a_minus is None or a_plus is None:
            raise StateError("conditional_power: scenario 4 needs both A values")
        mu = (est.theta + design.delta) / se2
        lo = float(ndtri(1.0 - a_minus))
        hi = 2.0 * design.delta / se2 - float(ndtri(1.0 - a_plus))
        return _interval_prob(lo, hi, mu)
    raise DomainError(f"conditional_power: unknown scenario {scenario!r}")


def n2_for_cp(cp: float, a: float, est: InterimEstimates, design: DesignSpec,
              side: str, cfg: SsrConfig) -> N2Result:
    """Per-arm stage-2 size achieving conditional power cp against error budget a."""
    if not (0.0 < a < 1.0):
        raise DomainError("n2_for_cp: conditional error must lie in (0, 1)")
    if cp >= 1.0:
        return N2Result(cfg.arm_cap, True)
    if cp <= 0.0:
        return N2Result(cfg.arm_floor, False)
    if side == "minus":
        drift = design.delta + est.theta
    elif side == "plus":
        drift = design.delta - est.theta
    else:
        raise DomainError(f"side must be 'minus' or 'plus', got {side!r}")
    diff = float(ndtri(1.0 - a) - ndtri(1.0 - cp))
    if diff <= 0.0:
        return N2Result(cfg.arm_floor, False)
    if drift == 0.0:
        # no information accrues against a zero drift; cap with a flag
        return N2Result(cfg.arm_cap, True)
    raw = int(np.ceil(2.0 * est.sigma ** 2 * diff * diff / (drift * drift)))
    if raw > cfg.arm_cap:
        return N2Result(cfg.arm_cap, True)
    return N2Result(max(raw, cfg.arm_floor), False)


def _classify(p: float, bounds: Boundaries) -> str:
    if p < bounds.alpha1:
        return "rej"
    if p >= bounds.alpha0:
        return "fut"
    return "mid"


def _search_smallest_n2(cp_fn, cp_req: float, lo: int, hi: int) -> tuple[int, bool]:
    """Smallest n in [lo, hi] with cp_fn(n) >= cp_req; (hi, True) if unreachable."""
    if cp_fn(hi) < cp_req:
        return hi, True
    if cp_fn(lo) >= cp_req:
        return lo, False
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cp_fn(mid) >= cp_req:
            hi = mid
        else:
            lo = mid
    return hi, False


def ssr_bioequiv(p1_minus: float, p1_plus: float, est: InterimEstimates,
                 design: DesignSpec, cfg: SsrConfig) -> SsrDecision:
    """Stage-2 size targeting overall bioequivalence power when neither
    hypothesis hit the futility bound at stage 1."""
    bounds = design.bounds
    cm, cp_ = _classify(p1_minus, bounds), _classify(p1_plus, bounds)
    if "fut" in (cm, cp_):
        raise StateError("ssr_bioequiv: applies only when both p-values are below alpha0")
    beta1 = 1.0 - stage1_power(est, design)
    beta0 = 1.0 - futility_free_prob(est, design)
    if cm == "rej" and cp_ == "rej":
        return SsrDecision(cfg.arm_floor, BOTH_REJECTED, 0.0, 1.0, False)
    cp_req = required_cp(1.0 - cfg.target_power, beta1, beta0)
    c = critical_c(bounds, design.comb)
    if cm == "mid" and cp_ == "rej":
        a = float(conditional_error(p1_minus, c, design.comb))
        res = n2_for_cp(cp_req, a, est, design, "minus", cfg)
        ach = conditional_power(MINUS_OPEN, a, None, est, res.n2, design)
        return SsrDecision(res.n2, MINUS_OPEN, cp_req, ach, res.saturated)
    if cm == "rej" and cp_ == "mid":
        a = float(conditional_error(p1_plus, c, design.comb))
        res = n2_for_cp(cp_req, a, est, design, "plus", cfg)
        ach = conditional_power(PLUS_OPEN, None, a, est, res.n2, design)
        return SsrDecision(res.n2, PLUS_OPEN, cp_req, ach, res.saturated)
    a_minus = float(conditional_error(p1_minus, c, design.comb))
    a_plus = float(conditional_error(p1_plus, c, design.comb))

    def cp_at(n2: int) -> float:
        return conditional_power(BOTH_OPEN, a_minus, a_plus, est, n2, design)

    lo = max(cfg.arm_floor, 1)
    n2, saturated = _search_smallest_n2(cp_at, cp_req, lo, cfg.arm_cap)
    return SsrDecision(n2, BOTH_OPEN, cp_req, cp_at(n2), saturated)


def gamma_quantities(est: InterimEstimates, design: DesignSpec) -> tuple[float, float]:
    """(gamma1, gamma0) for the futility-continuation power target.

    1 - gamma1 is the probability one hypothesis is rejected at stage 1 while
    the other hits futility; 1 - gamma0 the probability exactly one hits
    futility. Each term is a single normal tail via the statistic degeneracy.
    """
    bounds = design.bounds
    se = est.se
    mu = (est.theta + design.delta) / se
    b = 2.0 * design.delta / se
    z1 = float(ndtri(1.0 - bounds.alpha1))
    z0 = float(ndtri(1.0 - bounds.alpha0)) if bounds.alpha0 < 1.0 else -np.inf
    # minus rejected & plus futile: Z >= max(z1, b - z0); the mirror swaps tails
    one_m_g1 = (float(1.0 - ndtr(max(z1, b - z0) - mu))
                + float(ndtr(min(z0, b - z1) - mu)))
    one_m_g0 = (float(1.0 - ndtr(max(z0, b - z0) - mu))
                + float(ndtr(min(z0, b - z0) - mu)))
    return 1.0 - one_m_g1, 1.0 - one_m_g0


def ssr_single(continuing_side: str, p1: float, est: InterimEstimates,
               design: DesignSpec, cfg: SsrConfig) -> SsrDecision:
    """Stage-2 size when one hypothesis hit futility and the other continues."""
    bounds = design.bounds
    if _classify(p1, bounds) != "mid":
        raise StateError("ssr_single: the continuing p-value must lie in [alpha1, alpha0)")
    gamma1, gamma0 = gamma_quantities(est, design)
    if gamma1 <= gamma0:
        raise DegenerateDesignError("ssr_single: gamma1 must exceed gamma0")
    gamma = 1.0 - cfg.gamma_target
    cp_req = float(min(1.0, max(
        0.0, ((1.0 - gamma) * (1.0 - gamma0) - (1.0 - gamma1)) / (gamma1 - gamma0))))
    c = critical_c(bounds, design.comb)
    a = float(conditional_error(p1, c, design.comb))
    res = n2_for_cp(cp_req, a, est, design, continuing_side, cfg)
    scenario = MINUS_OPEN if continuing_side == "minus" else PLUS_OPEN
    ach = conditional_power(scenario, a if continuing_side == "minus" else None,
                            a if continuing_side == "plus" else None,
                            est, res.n2, design)
    return SsrDecision(res.n2, scenario, cp_req, ach, res.saturated)


# ---------------------------------------------------------------------------
# Simulation-based two-endpoint re-estimation
# ---------------------------------------------------------------------------


def _wishart2_batch(factor: np.ndarray, df: int, size: int,
                    rng: np.random.Generator) -> np.ndarray:
    """size Wishart_2(scale=factor factor^T, df) draws via Bartlett."""
    b = np.zeros((size, 2, 2))
    b[:, 0, 0] = np.sqrt(rng.chisquare(df, size))
    b[:, 1, 1] = np.sqrt(rng.chisquare(df - 1, size))
    b[:, 1, 0] = rng.standard_normal(size)
    m = np.einsum("ij,njk->nik", factor, b)
    return np.einsum("nik,njk->nij", m, m)


class _MinMaxSimulator:
    """Draws min/max stagewise p-values at a given per-arm size from the
    plug-in endpoint model (MVN means, per-arm Wishart dispersions)."""

    def __init__(self, theta_pair, gamma_hat, design: DesignSpec):
        gamma_hat = np.asarray(gamma_hat, dtype=float)
        if gamma_hat.shape != (4, 4):
            raise DomainError("ssr_multi: gamma_hat must be 4x4")
        self.theta = np.asarray(theta_pair, dtype=float)
        self.design = design
        sigma = CONTRAST @ gamma_hat @ CONTRAST.T
        self.sig_factor = psd_sqrt(sigma)
        self.fac_t = psd_sqrt(gamma_hat[:2, :2])
        self.fac_r = psd_sqrt(gamma_hat[2:, 2:])

    def draw_p(self, n_arm: int, sims: int, rng: np.random.Generator):
        z = rng.standard_normal((sims, 2))
        th = self.theta + (z @ self.sig_factor.T) / np.sqrt(n_arm)
        df = n_arm - 1
        st = _wishart2_batch(self.fac_t, df, sims, rng) / df
        sr = _wishart2_batch(self.fac_r, df, sims, rng) / df
        var = np.diagonal(st + sr, axis1=1, axis2=2) / n_arm
        se = np.sqrt(np.maximum(var, 1e-300))
        sel = th[:, 0] <= th[:, 1]
        th_min = np.where(sel, th[:, 0], th[:, 1])
        th_max = np.where(sel, th[:, 1], th[:, 0])
        se_min = np.where(sel, se[:, 0], se[:, 1])
        se_max = np.where(sel, se[:, 1], se[:, 0])
        delta = self.design.delta
        z_min = (th_min + delta) / se_min
        z_max = (delta - th_max) / se_max
        if self.design.use_t:
            dof = 2 * n_arm - 2
            p_min = 1.0 - stdtr(dof, z_min)
            p_max = 1.0 - stdtr(dof, z_max)
        else:
            p_min = 1.0 - ndtr(z_min)
            p_max = 1.0 - ndtr(z_max)
        return p_min, p_max


def ssr_multi(p1_min: float, p1_max: float, stage1: EndpointPairSummary,
              gamma_hat, n1: int, design: DesignSpec, cfg: SsrConfig,
              rng: np.random.Generator) -> SsrDecision:
    """Simulation-based stage-2 size for the two-endpoint min/max procedure.

    Stage-1 power/futility masses and conditional powers are estimated with
    cfg.inner_sims draws per candidate size; the smallest per-arm n2 whose
    estimated conditional power meets the requirement is returned.
    """
    bounds = design.bounds
    cm, cx = _classify(p1_min, bounds), _classify(p1_max, bounds)
    if cm == "fut" and cx == "fut":
        raise StateError("ssr_multi: both hypotheses hit futility; no stage 2")
    if cm == "rej" and cx == "rej":
        return SsrDecision(cfg.arm_floor, BOTH_REJECTED, 0.0, 1.0, False)
    sim = _MinMaxSimulator(stage1.theta_hat, gamma_hat, design)
    sims = cfg.inner_sims
    pm1, px1 = sim.draw_p(n1, sims, rng)
    a1, a0 = bounds.alpha1, bounds.alpha0
    if "fut" not in (cm, cx):
        beta1 = 1.0 - float(np.mean((pm1 <= a1) & (px1 <= a1)))
        beta0 = 1.0 - float(np.mean((pm1 < a0) & (px1 < a0)))
        if beta1 <= beta0:
            beta1 = min(beta0 + 1e-9, 1.0)
        cp_req = required_cp(1.0 - cfg.target_power, beta1, beta0)
    else:
        # one side futile: target the single-hypothesis continuation power
        one_m_g1 = float(np.mean(((pm1 < a1) & (px1 >= a0))
                                 | ((pm1 >= a0) & (px1 < a1))))
        one_m_g0 = float(np.mean(((pm1 < a0) & (px1 >= a0))
                                 | ((pm1 >= a0) & (px1 < a0))))
        g1, g0 = 1.0 - one_m_g1, 1.0 - one_m_g0
        if g1 <= g0:
            g1 = min(g0 + 1e-9, 1.0)
        gamma = 1.0 - cfg.gamma_target
        cp_req = float(min(1.0, max(
            0.0, ((1.0 - gamma) * (1.0 - g0) - (1.0 - g1)) / (g1 - g0))))
    c = critical_c(bounds, design.comb)
    a_min = float(conditional_error(p1_min, c, design.comb)) if cm == "mid" else None
    a_max = float(conditional_error(p1_max, c, design.comb)) if cx == "mid" else None
    scenario = (BOTH_OPEN if (cm == "mid" and cx == "mid")
                else (MINUS_OPEN if cm == "mid" else PLUS_OPEN))

    def cp_at(n_arm: int) -> float:
        pm2, px2 = sim.draw_p(n_arm, sims, rng)
        ok = np.ones(sims, dtype=bool)
        if a_min is not None:
            ok &= pm2 < a_min
        if a_max is not None:
            ok &= px2 < a_max
        return float(np.mean(ok))

    lo = max(cfg.arm_floor, 3)  # Wishart df must reach the dimension
    n2, saturated = _search_smallest_n2(cp_at, cp_req, lo, cfg.arm_cap)
    return SsrDecision(n2, scenario, cp_req, cp_at(n2), saturated)


# ---------------------------------------------------------------------------
# Comparator decision rule (both hypotheses re-evaluated at stage 2)
# ---------------------------------------------------------------------------


def maurer_n2(p1_minus, p1_plus, est: InterimEstimates, design: DesignSpec,
              cfg: SsrConfig):
    """Per-arm stage-2 sizes for the re-evaluate-both decision rule.

    Vectorized over stage-1 p-value arrays: the conditional power requires
    BOTH stage-2 p-values below their conditional error budgets, so the
    targeted probability is a single interval per draw; the smallest n2
    meeting the requirement is found by vector bisection.
    """
    p1m = np.atleast_1d(np.asarray(p1_minus, dtype=float))
    p1p = np.atleast_1d(np.asarray(p1_plus, dtype=float))
    beta1 = 1.0 - stage1_power(est, design)
    beta0 = 1.0 - futility_free_prob(est, design)
    cp_req = required_cp(1.0 - cfg.target_power, beta1, beta0)
    c = critical_c(design.bounds, design.comb)
    am = np.asarray(conditional_error(np.clip(p1m, 1e-14, 1 - 1e-14), c, design.comb))
    ap = np.asarray(conditional_error(np.clip(p1p, 1e-14, 1 - 1e-14), c, design.comb))
    z_am = ndtri(1.0 - np.clip(am, 1e-300, 1.0 - 1e-16))
    z_ap = ndtri(1.0 - np.clip(ap, 1e-300, 1.0 - 1e-16))

    def cp2(n_arm):
        se2 = est.sigma * np.sqrt(2.0 / n_arm)
        mu = (est.theta + design.delta) / se2
        hi = 2.0 * design.delta / se2 - z_ap
        return np.maximum(ndtr(hi - mu) - ndtr(z_am - mu), 0.0)

    floor = max(cfg.arm_floor, 1)
    cap = cfg.arm_cap
    lo = np.full(p1m.shape, floor, dtype=int)
    hi = np.full(p1m.shape, cap, dtype=int)
    sat = cp2(cap) < cp_req
    easy = cp2(floor) >= cp_req
    hi = np.where(easy, floor, hi)
    lo = np.where(easy, floor, lo)
    hi = np.where(sat, cap, hi)
    lo = np.where(sat, cap, lo)
    while np.max(hi - lo) > 1:
        mid = (lo + hi) // 2
        ok = cp2(mid) >= cp_req
        hi = np.where(ok, mid, hi)
        lo = np.where(ok | (mid == lo), lo, mid)
    n2 = hi
    return n2, sat, cp_req, cp2(n2)


def maurer_ssr_power(est: InterimEstimates, design: DesignSpec, cfg: SsrConfig,
                     rng: np.random.Generator) -> float:
    """Probability of declaring bioequivalence under the re-evaluate-both rule.

    Stage-1 mass where both p-values clear alpha1, plus the integrated
    two-sided conditional power over the continuation region, each draw using
    the n2 its own re-estimation would pick.
    """
    sims = cfg.inner_sims
    se = est.se
    mu = (est.theta + design.delta) / se
    z = rng.standard_normal(sims) + mu
    p1m = 1.0 - ndtr(z)
    p1p = 1.0 - ndtr(2.0 * design.delta / se - z)
    a1, a0 = design.bounds.alpha1, design.bounds.alpha0
    stage1_be = (p1m <= a1) & (p1p <= a1)
    cont = (~stage1_be) & (p1m < a0) & (p1p < a0)
    power = float(np.mean(stage1_be))
    if np.any(cont):
        _, _, _, cp2 = maurer_n2(p1m[cont], p1p[cont], est, design, cfg)
        power += float(np.sum(cp2)) / sims
    return power
