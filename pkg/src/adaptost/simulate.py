"""Seeded Monte Carlo engine for the full adaptive pipeline.

Each replicate owns the stream (seed, replicate-id), so reports are invariant
to the worker count: workers return per-replicate records that are reduced in
replicate order. Sample sizes in reports are TOTALS across both arms.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import AdaptostError, ConfigError, DomainError, NumericError
from .ssr import (InterimEstimates, SsrConfig, maurer_n2, ssr_bioequiv,
                  ssr_multi, ssr_single)
from .statkit import RngStream
from .tost import (DesignSpec, HypState, StageSummary, TostState, ci_bounds,
                   finalize, interim_decide, stage_p)
from .twoendpoint import (EndpointPairSummary, ci_minmax, iu_comparator,
                          iu_continue_required, minmax, minmax_p)
from .combine import comb_value, critical_c, overall_p

__all__ = [
    "ScenarioConfig",
    "TrialResult",
    "SimulationReport",
    "ComparatorStudy",
    "simulate_trial",
    "run_study",
    "run_comparator_study",
    "report_row",
    "format_table",
    "CSV_COLUMNS",
]

COMPARATORS = ("none", "intersection-union", "maurer")

TWO_ENDPOINT_CI_NOTE = ("CI error columns read: upper = P(u_max < max theta), "
                        "lower = P(min theta < l_min)")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario: truth, design, SSR policy and run controls."""

    design: DesignSpec
    ssr: SsrConfig = field(default_factory=SsrConfig)
    theta: float | tuple[float, float] = 0.0
    sigma: float = 0.294
    endpoint_correlation: float | None = None
    n1: int = 40
    replications: int = 5000
    seed: int = 0
    comparator: str = "none"
    label: str = ""

    def __post_init__(self):
        if not (self.sigma > 0.0):
            raise DomainError("ScenarioConfig: sigma must be positive")
        if self.n1 < 2:
            raise DomainError("ScenarioConfig: n1 must be at least 2 per arm")
        if self.replications < 1:
            raise DomainError("ScenarioConfig: replications must be >= 1")
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"unknown comparator {self.comparator!r}")
        if self.two_endpoint:
            if self.endpoint_correlation is None:
                raise ConfigError("two-endpoint scenario needs endpoint_correlation")
            if abs(self.endpoint_correlation) > 1.0:
                raise DomainError("endpoint_correlation must lie in [-1, 1]")
        elif self.comparator == "intersection-union":
            raise ConfigError("the intersection-union comparator needs two endpoints")

    @property
    def two_endpoint(self) -> bool:
        return isinstance(self.theta, tuple)

    @property
    def theta_pair(self) -> tuple[float, float]:
        if self.two_endpoint:
            return self.theta
        return (float(self.theta), float(self.theta))


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one simulated trial; n2 is the TOTAL stage-2 size."""

    state: TostState
    n2: int
    ci: tuple[float, float]
    stage_reached: int

    def __post_init__(self):
        if (self.n2 == 0) != (self.stage_reached == 1):
            raise DomainError("TrialResult: n2 == 0 iff the trial stopped at stage 1")


@dataclass(frozen=True)
class SimulationReport:
    """Operating characteristics aggregated over one scenario."""

    label: str
    rule: str
    replications: int
    seed: int
    failures: int
    frac_upper_below_theta: float
    frac_theta_below_lower: float
    frac_upper_le_lower: float
    avg_n2: float
    avg_n2_given_positive: float
    overall_power: float
    stage1_power: float
    note: str = ""


@dataclass(frozen=True)
class ComparatorStudy:
    primary: SimulationReport
    comparator: SimulationReport
    meta: dict


# ---------------------------------------------------------------------------
# Data generation and summaries
# ---------------------------------------------------------------------------


def _summarize_arms(ref: np.ndarray, test: np.ndarray, stage: int) -> StageSummary:
    n = ref.size
    theta = float(test.mean() - ref.mean())
    ss = float(((ref - ref.mean()) ** 2).sum() + ((test - test.mean()) ** 2).sum())
    sigma = math.sqrt(ss / (2 * n - 2))
    return StageSummary(theta, sigma, n, stage)


def _draw_pair(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    z = rng.standard_normal((n, 2))
    e1 = z[:, 0]
    if abs(rho) >= 1.0:
        e2 = math.copysign(1.0, rho) * e1
    else:
        e2 = rho * e1 + math.sqrt(1.0 - rho * rho) * z[:, 1]
    return np.column_stack([e1, e2])


def _two_endpoint_stage(rng, cfg: ScenarioConfig, n: int, stage: int):
    """Returns (pair summary, per-endpoint StageSummary list, gamma_hat)."""
    rho = cfg.endpoint_correlation
    ref = cfg.sigma * _draw_pair(rng, n, rho)
    test = np.asarray(cfg.theta_pair) + cfg.sigma * _draw_pair(rng, n, rho)
    per_endpoint = [
        _summarize_arms(ref[:, k], test[:, k], stage) for k in range(2)
    ]
    pair = EndpointPairSummary(
        theta_hat=(per_endpoint[0].theta_hat, per_endpoint[1].theta_hat),
        se=(per_endpoint[0].se, per_endpoint[1].se),
        stage=stage,
        n=n,
    )
    gamma_hat = np.zeros((4, 4))
    gamma_hat[:2, :2] = np.cov(test, rowvar=False, ddof=1)
    gamma_hat[2:, 2:] = np.cov(ref, rowvar=False, ddof=1)
    return pair, per_endpoint, gamma_hat


# ---------------------------------------------------------------------------
# Single-endpoint pipeline
# ---------------------------------------------------------------------------


def _single_endpoint_ssr(state: TostState, s1: StageSummary,
                         design: DesignSpec, ssr_cfg: SsrConfig) -> int:
    """Per-arm stage-2 size for a continuing single-endpoint trial (floor 2)."""
    est = InterimEstimates(s1.theta_hat, s1.sigma_hat, s1.n)
    m, p = state.minus, state.plus
    if m.state is HypState.FUTILE_STAGE1:
        dec = ssr_single("plus", p.p1, est, design, ssr_cfg)
    elif p.state is HypState.FUTILE_STAGE1:
        dec = ssr_single("minus", m.p1, est, design, ssr_cfg)
    else:
        dec = ssr_bioequiv(m.p1, p.p1, est, design, ssr_cfg)
    return max(dec.n2, 2)


def _single_trial(cfg: ScenarioConfig, rng: np.random.Generator) -> TrialResult:
    design = cfg.design
    theta = float(cfg.theta)
    ref1 = rng.normal(0.0, cfg.sigma, cfg.n1)
    test1 = rng.normal(theta, cfg.sigma, cfg.n1)
    s1 = _summarize_arms(ref1, test1, 1)
    p1m = stage_p(s1, design, "minus")
    p1p = stage_p(s1, design, "plus")
    state = interim_decide(p1m, p1p, design.bounds)
    if not state.continues_to_stage2:
        return TrialResult(state, 0, ci_bounds(s1, None, design), 1)
    n_arm = _single_endpoint_ssr(state, s1, design, cfg.ssr)
    ref2 = rng.normal(0.0, cfg.sigma, n_arm)
    test2 = rng.normal(theta, cfg.sigma, n_arm)
    s2 = _summarize_arms(ref2, test2, 2)
    p2m = stage_p(s2, design, "minus") if state.minus.state is HypState.CONTINUE else None
    p2p = stage_p(s2, design, "plus") if state.plus.state is HypState.CONTINUE else None
    state = finalize(state, p2m, p2p, design)
    return TrialResult(state, 2 * n_arm, ci_bounds(s1, s2, design), 2)


# ---------------------------------------------------------------------------
# Two-endpoint pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _TwoEndpointTrial:
    result: TrialResult
    # intersection-union companions (None unless requested)
    iu_be: bool | None = None
    iu_stage1_be: bool | None = None
    iu_n2: int | None = None
    selectors_agree: bool | None = None
    minmax_qs: tuple[float, float] | None = None
    endpoint_qs: tuple[float, float, float, float] | None = None


def _endpoint_q(p1: float, p2: float | None, design: DesignSpec) -> float:
    """Per-endpoint overall p-value with stage-1 settlement passthrough."""
    b = design.bounds
    if p1 < b.alpha1 or p1 >= b.alpha0:
        return p1
    if p2 is None:
        raise NumericError("intersection-union path missing stage-2 p-value")
    return overall_p(p1, p2, b, design.comb)


def _two_endpoint_trial(cfg: ScenarioConfig, rng: np.random.Generator,
                        with_iu: bool) -> _TwoEndpointTrial:
    design = cfg.design
    pair1, per1, gamma_hat = _two_endpoint_stage(rng, cfg, cfg.n1, 1)
    q1 = minmax(pair1)
    df1 = pair1.df if design.use_t else None
    p1_min, p1_max = minmax_p(q1, design.delta, df=df1)
    state = interim_decide(p1_min, p1_max, design.bounds)
    iu_p1 = None
    iu_needs_stage2 = False
    if with_iu:
        iu_p1 = [stage_p(per1[k], design, side)
                 for k in range(2) for side in ("minus", "plus")]
        iu_needs_stage2 = iu_continue_required(iu_p1, design.bounds)

    go_stage2 = state.continues_to_stage2 or (with_iu and iu_needs_stage2)
    if not go_stage2:
        result = TrialResult(state, 0, ci_minmax(pair1, None, design), 1)
        extras = {}
        if with_iu:
            qs = tuple(iu_p1)
            extras = dict(
                iu_be=iu_comparator(qs, design.alpha),
                iu_stage1_be=all(p < design.bounds.alpha1 for p in iu_p1),
                iu_n2=0,
                selectors_agree=True,
                minmax_qs=(state.minus.overall_p, state.plus.overall_p),
                endpoint_qs=qs,
            )
        return _TwoEndpointTrial(result, **extras)

    if state.continues_to_stage2:
        dec = ssr_multi(p1_min, p1_max, pair1, gamma_hat, cfg.n1, design,
                        cfg.ssr, rng)
        n_arm = max(dec.n2, 3)
    else:
        # only the marginal per-endpoint testing continues; reuse the stage-1
        # size (no re-estimation target exists for the min/max procedure)
        n_arm = cfg.n1

    pair2, per2, _ = _two_endpoint_stage(rng, cfg, n_arm, 2)
    q2 = minmax(pair2)
    df2 = pair2.df if design.use_t else None
    p2_min, p2_max = minmax_p(q2, design.delta, df=df2)

    if state.continues_to_stage2:
        p2m = p2_min if state.minus.state is HypState.CONTINUE else None
        p2p = p2_max if state.plus.state is HypState.CONTINUE else None
        final = finalize(state, p2m, p2p, design)
        result = TrialResult(final, 2 * n_arm, ci_minmax(pair1, pair2, design), 2)
    else:
        final = state
        result = TrialResult(state, 0, ci_minmax(pair1, None, design), 1)

    extras = {}
    if with_iu:
        b = design.bounds
        qs = []
        for k in range(2):
            for side in ("minus", "plus"):
                p1 = stage_p(per1[k], design, side)
                p2 = stage_p(per2[k], design, side) if b.alpha1 <= p1 < b.alpha0 else None
                qs.append(_endpoint_q(p1, p2, design))
        qs = tuple(qs)
        extras = dict(
            iu_be=iu_comparator(qs, design.alpha),
            iu_stage1_be=all(p < b.alpha1 for p in iu_p1),
            iu_n2=2 * n_arm if iu_needs_stage2 else 0,
            selectors_agree=(q2.selector == q1.selector),
            minmax_qs=(final.minus.overall_p, final.plus.overall_p),
            endpoint_qs=qs,
        )
    return _TwoEndpointTrial(result, **extras)


# ---------------------------------------------------------------------------
# Re-evaluate-both comparator pipeline (shared stage-1 and stage-2 draws)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _PairedTrial:
    ours: TrialResult
    other_be: bool
    other_stage1_be: bool
    other_n2: int


def _maurer_paired_trial(cfg: ScenarioConfig, rng: np.random.Generator) -> _PairedTrial:
    design = cfg.design
    theta = float(cfg.theta)
    ref1 = rng.normal(0.0, cfg.sigma, cfg.n1)
    test1 = rng.normal(theta, cfg.sigma, cfg.n1)
    s1 = _summarize_arms(ref1, test1, 1)
    p1m = stage_p(s1, design, "minus")
    p1p = stage_p(s1, design, "plus")
    state = interim_decide(p1m, p1p, design.bounds)
    if not state.continues_to_stage2:
        ours = TrialResult(state, 0, ci_bounds(s1, None, design), 1)
        be = bool(ours.state.bioequivalent)
        return _PairedTrial(ours, be, be, 0)

    est = InterimEstimates(s1.theta_hat, s1.sigma_hat, s1.n)
    dec = ssr_bioequiv(p1m, p1p, est, design, cfg.ssr)
    n_ours = max(dec.n2, 2)
    n_mau_arr, _, _, _ = maurer_n2(p1m, p1p, est, design, cfg.ssr)
    n_mau = max(int(n_mau_arr[0]), n_ours)

    ref2 = rng.normal(0.0, cfg.sigma, n_mau)
    test2 = rng.normal(theta, cfg.sigma, n_mau)
    s2_ours = _summarize_arms(ref2[:n_ours], test2[:n_ours], 2)
    p2m = stage_p(s2_ours, design, "minus") if state.minus.state is HypState.CONTINUE else None
    p2p = stage_p(s2_ours, design, "plus") if state.plus.state is HypState.CONTINUE else None
    final = finalize(state, p2m, p2p, design)
    ours = TrialResult(final, 2 * n_ours, ci_bounds(s1, s2_ours, design), 2)

    s2_mau = _summarize_arms(ref2, test2, 2)
    c = critical_c(design.bounds, design.comb)
    cm = comb_value(p1m, stage_p(s2_mau, design, "minus"), design.comb)
    cp = comb_value(p1p, stage_p(s2_mau, design, "plus"), design.comb)
    other_be = bool(cm <= c and cp <= c)
    return _PairedTrial(ours, other_be, False, 2 * n_mau)


# ---------------------------------------------------------------------------
# Study driver
# ---------------------------------------------------------------------------


def simulate_trial(cfg: ScenarioConfig, rng) -> TrialResult:
    """Run one replicate of the configured scenario (ignoring comparators)."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if cfg.two_endpoint:
        return _two_endpoint_trial(cfg, gen, with_iu=False).result
    return _single_trial(cfg, gen)


def _coverage_flags(cfg: ScenarioConfig, res: TrialResult):
    lower, upper = res.ci
    if cfg.two_endpoint:
        t_lo = min(cfg.theta_pair)
        t_hi = max(cfg.theta_pair)
    else:
        t_lo = t_hi = float(cfg.theta)
    return upper < t_hi, t_lo < lower, upper <= lower


def _result_record(cfg: ScenarioConfig, rep: int, res: TrialResult):
    up, lo, crossed = _coverage_flags(cfg, res)
    stage1_be = (res.state.minus.state is HypState.REJECTED_STAGE1
                 and res.state.plus.state is HypState.REJECTED_STAGE1)
    return (rep, False, bool(res.state.bioequivalent), stage1_be, res.n2,
            bool(up), bool(lo), bool(crossed))


_FAILED = ("rep", True)


def _replicate_record(cfg: ScenarioConfig, rep: int):
    gen = RngStream(cfg.seed, rep).generator()
    try:
        if cfg.comparator == "maurer":
            paired = _maurer_paired_trial(cfg, gen)
            ours = _result_record(cfg, rep, paired.ours)
            other = (rep, False, paired.other_be, paired.other_stage1_be,
                     paired.other_n2, False, False, False)
            return ("ok", ours, other, None)
        if cfg.two_endpoint:
            trial = _two_endpoint_trial(cfg, gen,
                                        with_iu=cfg.comparator == "intersection-union")
            ours = _result_record(cfg, rep, trial.result)
            if cfg.comparator == "intersection-union":
                other = (rep, False, trial.iu_be, trial.iu_stage1_be,
                         trial.iu_n2, False, False, False)
                meta = (trial.selectors_agree, trial.iu_be,
                        bool(trial.result.state.bioequivalent))
                return ("ok", ours, other, meta)
            return ("ok", ours, None, None)
        res = _single_trial(cfg, gen)
        return ("ok", _result_record(cfg, rep, res), None, None)
    except AdaptostError:
        return ("failed", rep)


def _run_chunk(args):
    cfg, reps = args
    return [_replicate_record(cfg, rep) for rep in reps]


def _resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("ADAPTOST_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _collect(cfg: ScenarioConfig, workers: int | None):
    nw = _resolve_workers(workers)
    reps = list(range(cfg.replications))
    if nw <= 1 or cfg.replications < 32:
        raw = _run_chunk((cfg, reps))
    else:
        chunks = [(cfg, reps[i::nw]) for i in range(nw)]
        with multiprocessing.Pool(nw) as pool:
            raw = [rec for part in pool.map(_run_chunk, chunks) for rec in part]
    ok = sorted((r for r in raw if r[0] == "ok"), key=lambda r: r[1][0])
    failures = sum(1 for r in raw if r[0] == "failed")
    if failures > 0.001 * cfg.replications:
        raise NumericError(
            f"{failures} of {cfg.replications} replicates aborted (> 0.1% threshold)")
    return ok, failures


def _aggregate(records, cfg: ScenarioConfig, failures: int, rule: str,
               with_ci: bool, note: str = "") -> SimulationReport:
    n = len(records)
    if n == 0:
        raise NumericError("no successful replicates")
    be = sum(r[2] for r in records)
    s1 = sum(r[3] for r in records)
    n2_sum = sum(r[4] for r in records)
    n2_pos = [r[4] for r in records if r[4] > 0]
    up = sum(r[5] for r in records)
    lo = sum(r[6] for r in records)
    crossed = sum(r[7] for r in records)
    nan = float("nan")
    return SimulationReport(
        label=cfg.label,
        rule=rule,
        replications=cfg.replications,
        seed=cfg.seed,
        failures=failures,
        frac_upper_below_theta=up / n if with_ci else nan,
        frac_theta_below_lower=lo / n if with_ci else nan,
        frac_upper_le_lower=crossed / n if with_ci else nan,
        avg_n2=n2_sum / n,
        avg_n2_given_positive=(sum(n2_pos) / len(n2_pos)) if n2_pos else nan,
        overall_power=be / n,
        stage1_power=s1 / n,
        note=note,
    )


def run_study(cfg: ScenarioConfig, workers: int | None = None) -> SimulationReport:
    """Aggregate operating characteristics over cfg.replications trials."""
    ok, failures = _collect(cfg, workers)
    note = TWO_ENDPOINT_CI_NOTE if cfg.two_endpoint else ""
    return _aggregate([r[1] for r in ok], cfg, failures, "adaptive-tost",
                      with_ci=True, note=note)


def run_comparator_study(cfg: ScenarioConfig,
                         workers: int | None = None) -> ComparatorStudy:
    """Run the configured comparator on data shared with the primary rule."""
    if cfg.comparator == "none":
        raise ConfigError("run_comparator_study: scenario has comparator 'none'")
    if cfg.comparator == "maurer":
        if cfg.two_endpoint:
            raise ConfigError("the maurer comparator is single-endpoint")
        if cfg.design.bounds.alpha0 < 1.0:
            raise ConfigError(
                "the maurer comparator requires alpha0 = 1 (re-evaluating a "
                "hypothesis accepted at a binding futility bound is invalid)")
    ok, failures = _collect(cfg, workers)
    ours = _aggregate([r[1] for r in ok], cfg, failures, "adaptive-tost",
                      with_ci=True,
                      note=TWO_ENDPOINT_CI_NOTE if cfg.two_endpoint else "")
    other_rule = cfg.comparator
    other = _aggregate([r[2] for r in ok], cfg, failures, other_rule, with_ci=False)
    meta = {}
    if cfg.comparator == "intersection-union":
        agree = [r[3] for r in ok if r[3] is not None]
        meta["selectors_agree"] = sum(1 for a in agree if a[0])
        meta["dominance_violations"] = sum(
            1 for a in agree if a[0] and a[1] and not a[2])
    return ComparatorStudy(primary=ours, comparator=other, meta=meta)


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------

CSV_COLUMNS = [
    "label", "rule", "theta", "alpha1", "alpha0", "w", "w_star", "correlation",
    "upper CI<theta", "theta<lower CI", "upper CI<=lower CI",
    "Avg. n2", "Avg n2|n2>0", "Avg. power Overall", "Avg. power Stage 1",
    "replications", "failures", "seed", "note",
]


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return f"{x:.6g}"
    return str(x)


def report_row(cfg: ScenarioConfig, rep: SimulationReport) -> dict:
    theta = ("(" + ", ".join(f"{t:.6g}" for t in cfg.theta_pair) + ")"
             if cfg.two_endpoint else f"{float(cfg.theta):.6g}")
    corr = "" if cfg.endpoint_correlation is None else f"{cfg.endpoint_correlation:.6g}"
    return {
        "label": rep.label,
        "rule": rep.rule,
        "theta": theta,
        "alpha1": _fmt(cfg.design.bounds.alpha1),
        "alpha0": _fmt(cfg.design.bounds.alpha0),
        "w": _fmt(cfg.design.comb.w),
        "w_star": _fmt(cfg.design.comb.w_star),
        "correlation": corr,
        "upper CI<theta": _fmt(rep.frac_upper_below_theta),
        "theta<lower CI": _fmt(rep.frac_theta_below_lower),
        "upper CI<=lower CI": _fmt(rep.frac_upper_le_lower),
        "Avg. n2": _fmt(rep.avg_n2),
        "Avg n2|n2>0": _fmt(rep.avg_n2_given_positive),
        "Avg. power Overall": _fmt(rep.overall_power),
        "Avg. power Stage 1": _fmt(rep.stage1_power),
        "replications": str(rep.replications),
        "failures": str(rep.failures),
        "seed": str(rep.seed),
        "note": rep.note,
    }


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Human-readable aligned rendering of report rows."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    cols = [c for c in columns if any(row.get(c) for row in rows)]
    widths = {c: max(len(c), *(len(row.get(c, "")) for row in rows)) for c in cols}
    out = ["  ".join(c.ljust(widths[c]) for c in cols)]
    out.append("  ".join("-" * widths[c] for c in cols))
    for row in rows:
        out.append("  ".join(row.get(c, "").ljust(widths[c]) for c in cols))
    return "\n".join(out)
