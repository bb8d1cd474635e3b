"""Max-combination test machinery for two-stage designs.

The combined evidence statistic is max{eps_w, eps_w*} with
eps_u(p1, p2) = u * z(p1) + sqrt(1 - u^2) * z(p2) and z(p) = Phi^-1(1 - p);
its null CDF F is the bivariate normal CDF evaluated on the diagonal at the
induced correlation r = w*w* + sqrt((1-w^2)(1-w*^2)). For w = w* everything
collapses to the inverse-normal combination test.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import CalibrationError, DomainError, StateError
from .statkit import bvn_cdf, find_root, integrate, norm_pdf

__all__ = [
    "CombinationSpec",
    "Boundaries",
    "comb_value",
    "middle_prob",
    "overall_p",
    "critical_c",
    "critical_m",
    "conditional_error",
    "calibrate_pocock",
]

# Integration variable, z-quantiles and the F-inverse bracket are clipped here;
# the normal mass beyond +-10 is ~7.6e-24, far below every tolerance in play.
Z_CLIP = 10.0


@dataclass(frozen=True)
class CombinationSpec:
    """Weights of the two inverse-normal components of the max combination."""

    w: float
    w_star: float

    def __post_init__(self):
        for name, val in (("w", self.w), ("w_star", self.w_star)):
            if not (0.0 < val <= 1.0):
                raise DomainError(f"CombinationSpec: {name} must lie in (0, 1]")
        if not (0.0 < self.correlation <= 1.0):
            raise DomainError("CombinationSpec: induced correlation outside (0, 1]")

    @property
    def correlation(self) -> float:
        w, ws = self.w, self.w_star
        return w * ws + np.sqrt((1.0 - w * w) * (1.0 - ws * ws))

    @property
    def is_inverse_normal(self) -> bool:
        return self.correlation >= 1.0 - 1e-12


@dataclass(frozen=True)
class Boundaries:
    """Overall one-sided level with stage-1 efficacy/futility bounds."""

    alpha: float
    alpha1: float
    alpha0: float

    def __post_init__(self):
        if not (0.0 < self.alpha1 <= self.alpha <= self.alpha0 <= 1.0):
            raise DomainError(
                "Boundaries: need 0 < alpha1 <= alpha <= alpha0 <= 1, got "
                f"({self.alpha1}, {self.alpha}, {self.alpha0})"
            )


def _z_of_p(p):
    return ndtri(1.0 - np.asarray(p, dtype=float))


def max_statistic(p1, p2, spec: CombinationSpec):
    """max{eps_w, eps_w*} on the Z scale for stagewise p-values p1, p2."""
    z1 = _z_of_p(p1)
    z2 = _z_of_p(p2)
    w, ws = spec.w, spec.w_star
    e1 = w * z1 + np.sqrt(1.0 - w * w) * z2
    e2 = ws * z1 + np.sqrt(1.0 - ws * ws) * z2
    return np.maximum(e1, e2)


def _joint_cdf(x, spec: CombinationSpec):
    """F(x) = P(eps_w <= x, eps_w* <= x) under independent uniform p-values."""
    if spec.is_inverse_normal:
        out = ndtr(np.asarray(x, dtype=float))
        return float(out) if np.ndim(out) == 0 else out
    return bvn_cdf(x, x, spec.correlation)


def _joint_quantile(q: float, spec: CombinationSpec) -> float:
    if spec.is_inverse_normal:
        return float(ndtri(q))
    if not (0.0 < q < 1.0):
        raise DomainError("joint quantile: q must lie in (0, 1)")
    return find_root(lambda x: _joint_cdf(x, spec) - q, -Z_CLIP, Z_CLIP, tol=1e-10)


def _check_p_open(name, value):
    arr = np.asarray(value, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError(f"{name} must lie strictly in (0, 1)")


def comb_value(p1, p2, spec: CombinationSpec):
    """Combination-test p-value 1 - F(max{eps_w, eps_w*}). Uniform under the null."""
    _check_p_open("p1", p1)
    _check_p_open("p2", p2)
    out = 1.0 - _joint_cdf(max_statistic(p1, p2, spec), spec)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def _thresholds(z1, m, spec: CombinationSpec):
    """Per-weight stage-2 z thresholds for the event max{eps} >= m given z1."""
    z1 = np.asarray(z1, dtype=float)
    out = np.full(z1.shape if z1.ndim else (1,), np.inf)
    for u in (spec.w, spec.w_star):
        cu = np.sqrt(max(1.0 - u * u, 0.0))
        if cu > 0.0:
            t = (m - u * z1) / cu
        else:
            t = np.where(z1 >= m, -np.inf, np.inf)
        out = np.minimum(out, t)
    return out if np.ndim(z1) else out[0]


def middle_prob_m(m: float, a1: float, a0: float, spec: CombinationSpec,
                  tol: float = 1e-9) -> float:
    """P(X in [a1, a0), max{eps_w(X,Y), eps_w*(X,Y)} >= m), X, Y iid uniform.

    One-dimensional reduction: integrate Phi(-t_min(z1; m)) against the normal
    density over z1 in [Phi^-1(1-a0), Phi^-1(1-a1)].
    """
    z_lo = float(ndtri(1.0 - a0)) if a0 < 1.0 else -np.inf
    z_hi = float(ndtri(1.0 - a1)) if a1 > 0.0 else np.inf
    z_lo = max(z_lo, -Z_CLIP)
    z_hi = min(z_hi, Z_CLIP)
    if z_hi <= z_lo:
        return 0.0
    if not np.isfinite(m):
        return 0.0 if m > 0 else float(ndtr(z_hi) - ndtr(z_lo))

    def integrand(z):
        return norm_pdf(z) * ndtr(-_thresholds(z, m, spec))

    return integrate(integrand, z_lo, z_hi, tol=tol)


def middle_prob(c, bounds: Boundaries, spec: CombinationSpec) -> float:
    """P(X in [alpha1, alpha0), C(X, Y) <= c) for independent uniform X, Y."""
    c = float(c)
    if not (0.0 < c < 1.0):
        raise DomainError("middle_prob: c must lie strictly in (0, 1)")
    m = _joint_quantile(1.0 - c, spec)
    return middle_prob_m(m, bounds.alpha1, bounds.alpha0, spec)


def overall_p(p1: float, p2: float | None, bounds: Boundaries,
              spec: CombinationSpec) -> float:
    """Overall p-value Q of the two-stage combination test.

    Early and futility branches pass p1 through (p1 on the efficacy bound goes
    to the middle branch; p1 on the futility bound to the futility branch);
    the middle branch returns alpha1 + middle_prob(C(p1, p2)).
    """
    p1 = float(p1)
    _check_p_open("p1", p1)
    if p1 < bounds.alpha1 or p1 >= bounds.alpha0:
        return p1
    if p2 is None:
        raise StateError("overall_p: stage-2 p-value required on the middle branch")
    _check_p_open("p2", p2)
    m = float(max_statistic(p1, p2, spec))
    return bounds.alpha1 + middle_prob_m(m, bounds.alpha1, bounds.alpha0, spec)


@lru_cache(maxsize=256)
def critical_m(bounds: Boundaries, spec: CombinationSpec) -> float:
    """Z-scale stage-2 critical value: alpha1 + middle_prob_m(m) = alpha.

    On the middle branch {Q < alpha} is exactly {max-statistic >= critical_m}.
    """
    alpha, a1, a0 = bounds.alpha, bounds.alpha1, bounds.alpha0
    if not (a1 < alpha):
        raise CalibrationError("critical_m: requires alpha1 < alpha")

    def g(m):
        return a1 + middle_prob_m(m, a1, a0, spec) - alpha

    # g is strictly decreasing in m; bracket on the clipped z-range.
    if g(-Z_CLIP) < 0.0 or g(Z_CLIP) > 0.0:
        raise CalibrationError("critical_m: no solution in the z-range")
    return find_root(g, -Z_CLIP, Z_CLIP, tol=1e-10)


def critical_c(bounds: Boundaries, spec: CombinationSpec) -> float:
    """C-scale critical value: stage-2 rejection {Q < alpha} <=> {C(p1,p2) <= c}."""
    return 1.0 - float(_joint_cdf(critical_m(bounds, spec), spec))


@lru_cache(maxsize=4096)
def _m_of_c(c: float, spec: CombinationSpec) -> float:
    return _joint_quantile(1.0 - c, spec)


def conditional_error(p1, c: float, spec: CombinationSpec):
    """Largest stage-2 p-value still combining to C <= c given stage-1 p1.

    Satisfies comb_value(p1, conditional_error(p1, c)) = c identically.
    """
    if not (0.0 < c < 1.0):
        raise DomainError("conditional_error: c must lie strictly in (0, 1)")
    _check_p_open("p1", p1)
    m = _m_of_c(float(c), spec)
    out = ndtr(-_thresholds(_z_of_p(p1), m, spec))
    return float(out) if np.ndim(out) == 0 else out


def calibrate_pocock(alpha: float, alpha0: float, spec: CombinationSpec) -> float:
    """Pocock-type efficacy bound: equal critical values at both stages.

    Solves alpha1 + P(X in [alpha1, alpha0), max-statistic >= Phi^-1(1-alpha1))
    = alpha, i.e. the stage-2 combined statistic is held to the same z-scale
    critical value as the stage-1 statistic. For w = w* this coincides with
    requiring the stage-2 C-scale critical value to equal alpha1.
    """
    if not (0.0 < alpha < alpha0 <= 1.0):
        raise DomainError("calibrate_pocock: need 0 < alpha < alpha0 <= 1")

    def g(a1):
        return a1 + middle_prob_m(float(ndtri(1.0 - a1)), a1, alpha0, spec) - alpha

    lo, hi = 1e-8, alpha * (1.0 - 1e-9)
    if g(lo) > 0.0 or g(hi) < 0.0:
        raise CalibrationError("calibrate_pocock: no root in (0, alpha)")
    return find_root(g, lo, hi, tol=1e-8)


def middle_prob_m_batch(m, a1: float, a0: float, spec: CombinationSpec,
                        nodes: int = 24, panels: int = 32) -> np.ndarray:
    """Vectorized middle_prob_m over an array of z-scale thresholds m.

    Fixed composite Gauss-Legendre panels over the z1 strip; used by bulk
    diagnostics (Q-validity sweeps, power integrals) where millions of
    evaluations are needed. Agreement with the adaptive path is covered by
    tests.
    """
    m = np.asarray(m, dtype=float)
    z_lo = float(ndtri(1.0 - a0)) if a0 < 1.0 else -Z_CLIP
    z_hi = float(ndtri(1.0 - a1)) if a1 > 0.0 else Z_CLIP
    z_lo = max(z_lo, -Z_CLIP)
    z_hi = min(z_hi, Z_CLIP)
    if z_hi <= z_lo:
        return np.zeros(m.shape)
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(z_lo, z_hi, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mids = 0.5 * (edges[1:] + edges[:-1])
    z = (mids[:, None] + half[:, None] * gx[None, :]).ravel()
    wts = (half[:, None] * gw[None, :]).ravel() * norm_pdf(z)
    w_, ws_ = spec.w, spec.w_star
    out = np.zeros(m.shape)
    # chunk over m to bound the (chunk, nodes*panels) work matrix
    step = max(1, int(2_000_000 / max(z.size, 1)))
    flat = m.ravel()
    res = np.empty(flat.shape)
    for start in range(0, flat.size, step):
        mm = flat[start:start + step, None]
        tmin = np.full((mm.shape[0], z.size), np.inf)
        for u in (w_, ws_):
            cu = np.sqrt(max(1.0 - u * u, 0.0))
            if cu > 0.0:
                t = (mm - u * z[None, :]) / cu
            else:
                t = np.where(z[None, :] >= mm, -np.inf, np.inf)
            tmin = np.minimum(tmin, t)
        res[start:start + step] = ndtr(-tmin) @ wts
    out = res.reshape(m.shape)
    return np.clip(out, 0.0, a0 - a1)
