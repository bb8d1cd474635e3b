"""Probability and numerics primitives used by every other module.

Scalar distribution functions are thin validating wrappers over
``scipy.special`` ufuncs (so they also broadcast over arrays); the bivariate
normal CDF is a vectorized port of the Genz/Drezner-Wesolowsky Gauss-Legendre
scheme; quadrature and root finding are self-contained.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr, ndtri, stdtr

from .errors import BracketError, DecompositionError, DomainError, NumericError

__all__ = [
    "RngStream",
    "norm_cdf",
    "norm_pdf",
    "norm_quantile",
    "t_cdf",
    "bvn_cdf",
    "integrate",
    "find_root",
    "bisect_indicator",
    "as_sym_matrix",
    "chol",
    "psd_sqrt",
    "mvn_sample",
    "wishart_sample",
]

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class RngStream:
    """Value object naming one reproducible random stream.

    Identical (seed, stream_id) pairs always yield identical draw sequences;
    distinct stream_ids give independent-quality streams (Philox keyed off a
    SeedSequence of the pair). The simulator uses stream_id = replicate index.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence((int(self.seed), int(self.stream_id)))
        return np.random.Generator(np.random.Philox(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise DomainError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def norm_cdf(x):
    """Standard normal CDF. Absolute error well below 1e-12."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x) | np.isinf(x)) or np.any(np.isnan(x)):
        raise DomainError("norm_cdf: non-finite input")
    out = ndtr(x)
    return float(out) if out.ndim == 0 else out


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


def norm_quantile(p):
    """Inverse standard normal CDF for p in (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise DomainError("norm_quantile: p must lie strictly in (0, 1)")
    out = ndtri(p)
    return float(out) if out.ndim == 0 else out


def t_cdf(x, df):
    """Student-t CDF with df > 0 degrees of freedom."""
    if not np.all(np.asarray(df) > 0):
        raise DomainError("t_cdf: df must be positive")
    out = stdtr(df, np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# Gauss-Legendre nodes/weights used by the Genz bivariate-normal scheme.
_GL_X = {
    6: np.array([0.9324695142031521, 0.6612093864662645, 0.2386191860831969]),
    12: np.array([0.9815606342467192, 0.9041172563704749, 0.7699026741943047,
                  0.5873179542866175, 0.3678314989981802, 0.1252334085114689]),
    20: np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154195, 0.2277858511416451,
                  0.07652652113349734]),
}
_GL_W = {
    6: np.array([0.1713244923791704, 0.3607615730481386, 0.4679139345726910]),
    12: np.array([0.04717533638651183, 0.1069393259953184, 0.1600783285433462,
                  0.2031674267230659, 0.2334925365383548, 0.2491470458134028]),
    20: np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410907,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183820, 0.1491729864726037,
                  0.1527533871307258]),
}


def _bvn_upper(dh, dk, r):
    """P(X > dh, Y > dk), standard bivariate normal, scalar correlation r.

    Vectorized over dh/dk. Genz's reformulation of Drezner-Wesolowsky:
    Gauss-Legendre in asin(r) for moderate correlation, and the |r| -> 1
    expansion otherwise. Absolute accuracy ~5e-16.
    """
    ar = abs(r)
    ng = 6 if ar < 0.3 else (12 if ar < 0.75 else 20)
    x, w = _GL_X[ng], _GL_W[ng]
    if ar < 0.925:
        hk = dh * dk
        bvn = np.zeros(np.broadcast(dh, dk).shape)
        if ar > 0:
            hs = (dh * dh + dk * dk) / 2.0
            asr = np.arcsin(r)
            for xi, wi in zip(x, w):
                for sgn in (-1.0, 1.0):
                    sn = np.sin(asr * (sgn * xi + 1.0) / 2.0)
                    bvn = bvn + wi * np.exp((sn * hk - hs) / (1.0 - sn * sn))
            bvn = bvn * asr / (4.0 * np.pi)
        return bvn + ndtr(-dh) * ndtr(-dk)

    h = np.asarray(dh, dtype=float)
    k = np.asarray(dk, dtype=float)
    if r < 0:
        k = -k
    hk = h * k
    as_ = (1.0 - r) * (1.0 + r)
    a = np.sqrt(as_)
    bs = (h - k) ** 2
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 16.0
    asr = -(bs / as_ + hk) / 2.0
    with np.errstate(over="ignore", under="ignore"):
        bvn = np.where(asr > -100.0,
                       a * np.exp(np.minimum(asr, 0.0))
                       * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0
                          + c * d * as_ * as_ / 5.0),
                       0.0)
        b = np.sqrt(bs)
        sp = _SQRT_2PI * ndtr(-b / a)
        term = np.exp(np.where(-hk < 100.0, -hk / 2.0, 0.0)) * sp * b \
            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        bvn = np.where(-hk < 100.0, bvn - term, bvn)
        a2 = a / 2.0
        for xi, wi in zip(x, w):
            for sgn in (-1.0, 1.0):
                xs = (a2 * (sgn * xi + 1.0)) ** 2
                rs = np.sqrt(1.0 - xs)
                asr2 = -(bs / xs + hk) / 2.0
                sp2 = 1.0 + c * xs * (1.0 + d * xs)
                ep = np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                bvn = np.where(asr2 > -100.0,
                               bvn + a2 * wi * np.exp(np.minimum(asr2, 0.0)) * (ep - sp2),
                               bvn)
    bvn = -bvn / (2.0 * np.pi)
    if r > 0:
        return bvn + ndtr(-np.maximum(h, k))
    bvn = -bvn
    return bvn + np.where(k > h, ndtr(k) - ndtr(h), 0.0)


def bvn_cdf(h, k, rho):
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation rho."""
    if not np.isfinite(rho) or abs(rho) > 1.0:
        raise DomainError("bvn_cdf: correlation must lie in [-1, 1]")
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    if np.any(np.isnan(h)) or np.any(np.isnan(k)):
        raise DomainError("bvn_cdf: NaN argument")
    if rho == 1.0:
        out = ndtr(np.minimum(h, k))
    elif rho == -1.0:
        out = np.maximum(0.0, ndtr(h) + ndtr(k) - 1.0)
    else:
        # Handle infinite arguments before the finite-core scheme.
        hf = np.clip(h, -37.0, 37.0)
        kf = np.clip(k, -37.0, 37.0)
        out = _bvn_upper(-hf, -kf, rho)
        out = np.where(h <= -37.0, 0.0, out)
        out = np.where(k <= -37.0, 0.0, out)
        out = np.where((h >= 37.0) & (k < 37.0), ndtr(k), out)
        out = np.where((k >= 37.0) & (h < 37.0), ndtr(h), out)
        out = np.where((h >= 37.0) & (k >= 37.0), 1.0, out)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _vectorized(f: Callable) -> Callable:
    """Return a callable mapping ndarray -> ndarray even if f is scalar-only."""

    def call(xs: np.ndarray) -> np.ndarray:
        try:
            out = np.asarray(f(xs), dtype=float)
            if out.shape == xs.shape:
                return out
        except (TypeError, ValueError):
            pass
        return np.array([float(f(float(v))) for v in xs])

    return call


def integrate(f: Callable, a: float, b: float, tol: float = 1e-9,
              max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature of f over [a, b] to absolute tolerance tol.

    The integrand is evaluated on arrays of abscissae (vectorized callables are
    used as-is; scalar callables are wrapped). Raises NumericError with the
    best running estimate if max_depth halvings do not converge.
    """
    a = float(a)
    b = float(b)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise DomainError("integrate: endpoints must be finite")
    if a > b:
        raise DomainError("integrate: requires a <= b")
    if a == b:
        return 0.0
    fv = _vectorized(f)
    mid0 = 0.5 * (a + b)
    f0 = fv(np.array([a, mid0, b]))
    lo = np.array([a])
    hi = np.array([b])
    flo = f0[[0]]
    fmid = f0[[1]]
    fhi = f0[[2]]
    s = (b - a) / 6.0 * (flo + 4.0 * fmid + fhi)
    tol_i = np.array([max(tol, 1e-300)])
    total = 0.0
    for depth in range(max_depth + 1):
        mid = 0.5 * (lo + hi)
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        fnew = fv(np.concatenate([lm, rm]))
        fl, fr = fnew[: lm.size], fnew[lm.size:]
        h12 = (hi - lo) / 12.0
        sl = h12 * (flo + 4.0 * fl + fmid)
        sr = h12 * (fmid + 4.0 * fr + fhi)
        s2 = sl + sr
        err = (s2 - s) / 15.0
        done = np.abs(err) <= tol_i
        total += float(np.sum(np.where(done, s2 + err, 0.0)))
        if done.all():
            return total
        if depth == max_depth:
            rest = float(np.sum(np.where(done, 0.0, s2 + err)))
            raise NumericError(
                f"integrate: no convergence after {max_depth} refinements",
                best_estimate=total + rest,
            )
        keep = ~done
        lo = np.concatenate([lo[keep], mid[keep]])
        hi = np.concatenate([mid[keep], hi[keep]])
        flo = np.concatenate([flo[keep], fmid[keep]])
        fhi = np.concatenate([fmid[keep], fhi[keep]])
        fmid = np.concatenate([fl[keep], fr[keep]])
        s = np.concatenate([sl[keep], sr[keep]])
        half = tol_i[keep] / 2.0
        tol_i = np.concatenate([half, half])
    raise AssertionError("unreachable")


def find_root(f: Callable, lo: float, hi: float, tol: float = 1e-9,
              max_iter: int = 200) -> float:
    """Root of f in [lo, hi] by bisection with secant acceleration.

    Requires a sign change over the bracket; the returned point lies in a
    bracket of width <= tol containing the sign change.
    """
    lo = float(lo)
    hi = float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise DomainError("find_root: invalid bracket")
    flo = float(f(lo))
    fhi = float(f(hi))
    if not (np.isfinite(flo) and np.isfinite(fhi)):
        raise DomainError("find_root: non-finite endpoint values")
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise BracketError(f"find_root: no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        if hi - lo <= tol:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        if fhi != flo:
            sec = hi - fhi * (hi - lo) / (fhi - flo)
            # accept the secant point only when it falls safely inside
            if lo + 0.01 * (hi - lo) < sec < hi - 0.01 * (hi - lo):
                mid = sec
        fm = float(f(mid))
        if fm == 0.0:
            return mid
        if flo * fm < 0.0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def bisect_indicator(pred: Callable[[float], bool], lo: float, hi: float,
                     tol: float = 1e-9, max_iter: int = 200) -> float:
    """Infimum of a monotone True-region: pred(lo) must be False, pred(hi) True."""
    lo = float(lo)
    hi = float(hi)
    if pred(lo):
        raise BracketError("bisect_indicator: predicate already true at lo")
    if not pred(hi):
        raise BracketError("bisect_indicator: predicate false at hi")
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def as_sym_matrix(m, rel_tol: float = 1e-12) -> np.ndarray:
    """Validate and return m as a symmetric square float matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError("expected a square matrix")
    scale = max(np.max(np.abs(m)), 1.0)
    if np.max(np.abs(m - m.T)) > rel_tol * scale:
        raise DomainError("matrix is not symmetric within tolerance")
    return 0.5 * (m + m.T)


def chol(m) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    m = as_sym_matrix(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"chol: matrix not positive definite ({exc})") from exc


def psd_sqrt(m) -> np.ndarray:
    """Square root A (with A Aᵀ = m) of a positive SEMI-definite matrix.

    Used where covariances may be exactly singular (perfectly correlated
    endpoints). Eigenvalues below -1e-10 * scale raise; tiny negatives clip to 0.
    """
    m = as_sym_matrix(m)
    vals, vecs = np.linalg.eigh(m)
    scale = max(np.max(np.abs(vals)), 1.0)
    if np.min(vals) < -1e-10 * scale:
        raise DecompositionError("psd_sqrt: matrix has a negative eigenvalue")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _cov_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return chol(cov)
    except DecompositionError:
        return psd_sqrt(cov)


def mvn_sample(mean, cov, rng, size: int | None = None) -> np.ndarray:
    """Multivariate normal draws with the given mean vector and covariance.

    Accepts an RngStream (materialized into a fresh generator) or a Generator
    (advanced in place). size=None gives one vector, otherwise (size, d).
    """
    mean = np.asarray(mean, dtype=float)
    if mean.ndim != 1:
        raise DomainError("mvn_sample: mean must be a vector")
    cov = as_sym_matrix(cov)
    if cov.shape[0] != mean.size:
        raise DomainError("mvn_sample: dimension mismatch between mean and cov")
    gen = _as_generator(rng)
    fac = _cov_factor(cov)
    if size is None:
        return mean + fac @ gen.standard_normal(mean.size)
    z = gen.standard_normal((int(size), mean.size))
    return mean + z @ fac.T


def wishart_sample(scale, df: float, rng) -> np.ndarray:
    """One Wishart draw via the Bartlett decomposition; E[draw] = df * scale."""
    scale = as_sym_matrix(scale)
    d = scale.shape[0]
    if df < d:
        raise DomainError("wishart_sample: df must be >= dimension")
    gen = _as_generator(rng)
    fac = _cov_factor(scale)
    bart = np.zeros((d, d))
    for i in range(d):
        bart[i, i] = np.sqrt(gen.chisquare(df - i))
        for j in range(i):
            bart[i, j] = gen.standard_normal()
    a = fac @ bart
    return a @ a.T
