"""Command-line entry point: calibrate, decide, ci, ssr, simulate."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

from . import __version__
from .combine import Boundaries, CombinationSpec, calibrate_pocock
from .config import (RunManifest, build_scenarios, build_ssr, build_design,
                     build_stages, load_config, parse_number)
from .errors import AdaptostError, ConfigError, NumericError
from .simulate import (ScenarioConfig, format_table, report_row, run_comparator_study,
                       run_study)
from .ssr import InterimEstimates, ssr_bioequiv, ssr_single
from .tost import DesignSpec, HypState, check_prop1, ci_bounds, interim_decide, \
    finalize, stage_p
from .twoendpoint import ci_minmax, minmax, minmax_p

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _write_csv(path: str, rows: list[dict], columns: list[str],
               manifest: RunManifest) -> None:
    buf = io.StringIO()
    buf.write(f"# adaptost manifest: {manifest.deterministic_json()}\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n",
                            extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def _emit(args, rows: list[dict], columns: list[str], manifest: RunManifest,
          stem: str) -> None:
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n",
                                extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        print(buf.getvalue(), end="")
    else:
        print(format_table(rows, columns))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, f"{stem}.csv"), rows, columns, manifest)
        with open(os.path.join(args.out, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(manifest.full_json() + "\n")


def cmd_calibrate(args) -> int:
    spec = CombinationSpec(w=parse_number(args.w), w_star=parse_number(args.wstar))
    alpha = parse_number(args.alpha)
    alpha0 = parse_number(args.alpha0)
    if not alpha < alpha0:
        raise ConfigError("calibrate: requires alpha < alpha0")
    alpha1 = calibrate_pocock(alpha, alpha0, spec)
    print(f"alpha1 = {alpha1:.6f}")
    print(f"bounds: alpha={alpha:g} alpha1={alpha1:.6f} alpha0={alpha0:g} "
          f"w={spec.w:.6f} w_star={spec.w_star:.6f}")
    if args.delta_over_se is not None:
        ratio = parse_number(args.delta_over_se)
        design = DesignSpec(delta=ratio, bounds=Boundaries(alpha, alpha1, alpha0),
                            comb=spec, use_t=False)
        chk = check_prop1(design, 1.0)
        print(f"ordered-bounds guarantee at delta/se = {ratio:g}:")
        print(f"  futility bound <= 0.5 : {chk.futility_ok}")
        print(f"  2 z(1-a) - z(1-a1) > 0: {chk.technical_ok}")
        print(f"  margin precision      : {chk.margin_ok}")
        print(f"  guaranteed l < u      : {chk.guaranteed}")
        print(f"  stage 1 decisive      : {chk.stage1_decisive}")
    return EXIT_OK


def _load_trial(args):
    sections = load_config(args.config)
    design = build_design(sections.get("design", {}))
    two_endpoint, stage1, stage2 = build_stages(sections)
    return sections, design, two_endpoint, stage1, stage2


def _decision_rows(design, two_endpoint, stage1, stage2):
    if two_endpoint:
        df1 = stage1.df if design.use_t else None
        p1m, p1p = minmax_p(minmax(stage1), design.delta, df=df1)
    else:
        p1m = stage_p(stage1, design, "minus")
        p1p = stage_p(stage1, design, "plus")
    state = interim_decide(p1m, p1p, design.bounds)
    if stage2 is not None and state.continues_to_stage2:
        if two_endpoint:
            df2 = stage2.df if design.use_t else None
            p2m, p2p = minmax_p(minmax(stage2), design.delta, df=df2)
        else:
            p2m = stage_p(stage2, design, "minus")
            p2p = stage_p(stage2, design, "plus")
        state = finalize(state,
                         p2m if state.minus.state is HypState.CONTINUE else None,
                         p2p if state.plus.state is HypState.CONTINUE else None,
                         design)
    rows = []
    for name, out in (("minus", state.minus), ("plus", state.plus)):
        rows.append({
            "hypothesis": name,
            "stage1_p": f"{out.p1:.8g}",
            "state": out.state.value,
            "overall_p": "" if out.overall_p is None else f"{out.overall_p:.8g}",
        })
    verdict = ("undecided" if state.bioequivalent is None
               else ("bioequivalent" if state.bioequivalent else "not bioequivalent"))
    rows.append({"hypothesis": "trial", "stage1_p": "", "state": verdict,
                 "overall_p": ""})
    return rows


def cmd_decide(args) -> int:
    sections, design, two_endpoint, stage1, stage2 = _load_trial(args)
    rows = _decision_rows(design, two_endpoint, stage1, stage2)
    manifest = RunManifest("decide", {"sections": sections}, None, __version__)
    _emit(args, rows, ["hypothesis", "stage1_p", "state", "overall_p"],
          manifest, "decision")
    return EXIT_OK


def cmd_ci(args) -> int:
    sections, design, two_endpoint, stage1, stage2 = _load_trial(args)
    if two_endpoint:
        lower, upper = ci_minmax(stage1, stage2, design)
        kind = "min/max"
    else:
        lower, upper = ci_bounds(stage1, stage2, design)
        kind = "single"
    level = 1.0 - 2.0 * design.alpha
    rows = [{
        "kind": kind,
        "confidence": f"{level:g}",
        "lower": f"{lower:.8g}",
        "upper": f"{upper:.8g}",
        "margin_lower": f"{-design.delta:.8g}",
        "margin_upper": f"{design.delta:.8g}",
    }]
    manifest = RunManifest("ci", {"sections": sections}, None, __version__)
    _emit(args, rows, ["kind", "confidence", "lower", "upper",
                       "margin_lower", "margin_upper"], manifest, "ci")
    return EXIT_OK


def cmd_ssr(args) -> int:
    sections = load_config(args.config)
    design = build_design(sections.get("design", {}))
    ssr_cfg = build_ssr(sections.get("ssr", {}))
    two_endpoint, stage1, _ = build_stages(sections)
    if two_endpoint:
        raise ConfigError("the ssr subcommand takes single-endpoint summaries")
    p1m = stage_p(stage1, design, "minus")
    p1p = stage_p(stage1, design, "plus")
    est = InterimEstimates(stage1.theta_hat, stage1.sigma_hat, stage1.n)
    b = design.bounds
    if p1m >= b.alpha0 and p1p >= b.alpha0:
        raise NumericError("both hypotheses hit the futility bound; no stage 2")
    if p1m >= b.alpha0:
        dec = ssr_single("plus", p1p, est, design, ssr_cfg)
    elif p1p >= b.alpha0:
        dec = ssr_single("minus", p1m, est, design, ssr_cfg)
    else:
        dec = ssr_bioequiv(p1m, p1p, est, design, ssr_cfg)
    rows = [{
        "stage1_p_minus": f"{p1m:.8g}",
        "stage1_p_plus": f"{p1p:.8g}",
        "scenario": str(dec.scenario),
        "required_cp": f"{dec.required_cp:.6g}",
        "achieved_cp": f"{dec.achieved_cp:.6g}",
        "n2_per_arm": str(dec.n2),
        "n2_total": str(dec.n2_total),
        "saturated": str(dec.saturated).lower(),
    }]
    manifest = RunManifest("ssr", {"sections": sections}, None, __version__)
    _emit(args, rows, list(rows[0]), manifest, "ssr")
    return EXIT_OK


def cmd_simulate(args) -> int:
    sections = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    scenarios = build_scenarios(sections, overrides)
    rows = []
    from .simulate import CSV_COLUMNS

    for cfg in scenarios:
        if cfg.comparator == "none":
            rows.append(report_row(cfg, run_study(cfg, workers=args.workers)))
        else:
            study = run_comparator_study(cfg, workers=args.workers)
            rows.append(report_row(cfg, study.primary))
            rows.append(report_row(cfg, study.comparator))
    manifest = RunManifest("simulate", {"sections": sections, "overrides": overrides},
                           args.seed, __version__)
    _emit(args, rows, CSV_COLUMNS, manifest, "report")
    if args.out:
        from .figures import render_report_figure

        render_report_figure(rows, os.path.join(args.out, "report.png"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptost",
        description="Two-stage adaptive TOST for average bioequivalence: "
                    "boundary calibration, trial decisions, confidence bounds, "
                    "sample-size re-estimation and operating-characteristic "
                    "simulation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="Pocock-type efficacy bound for a design")
    cal.add_argument("--alpha", required=True)
    cal.add_argument("--alpha0", required=True)
    cal.add_argument("--w", required=True)
    cal.add_argument("--wstar", required=True)
    cal.add_argument("--delta-over-se", default=None,
                     help="margin/SE ratio for ordered-bounds diagnostics")
    cal.set_defaults(func=cmd_calibrate)

    for name, func, help_text in (
            ("decide", cmd_decide, "interim/final decision from stage summaries"),
            ("ci", cmd_ci, "decision-aligned confidence bounds"),
            ("ssr", cmd_ssr, "stage-2 sample-size re-estimation"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("csv", "table"), default="table")
        p.set_defaults(func=func)

    sim = sub.add_parser("simulate", help="Monte Carlo operating characteristics")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--workers", type=int, default=None,
                     help="worker processes (default: ADAPTOST_WORKERS or CPU count)")
    sim.add_argument("--out", default=None)
    sim.add_argument("--format", choices=("csv", "table"), default="table")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AdaptostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
