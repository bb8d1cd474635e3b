"""INI-style configuration files and run manifests.

One file describes a design plus either stage summaries (decide/ci/ssr) or a
list of scenarios (simulate). Numeric values accept ``sqrt:x`` and ``log:x``
literals so irrational weights and margins never lose precision to decimal
truncation. Unknown keys are an error, never silently ignored.
"""

from __future__ import annotations

import configparser
import datetime
import json
import math
from dataclasses import dataclass

from .combine import Boundaries, CombinationSpec
from .errors import ConfigError
from .ssr import SsrConfig
from .simulate import ScenarioConfig
from .tost import DesignSpec, StageSummary
from .twoendpoint import EndpointPairSummary

__all__ = [
    "parse_number",
    "load_config",
    "build_design",
    "build_ssr",
    "build_scenarios",
    "build_stages",
    "RunManifest",
]

DESIGN_KEYS = {"delta", "alpha", "alpha1", "alpha0", "w", "w_star", "use_t"}
SSR_KEYS = {"target_power", "gamma_target", "n2_min", "n2_max", "inner_sims"}
SCENARIO_KEYS = {"theta", "sigma", "endpoint_correlation", "n1", "replications",
                 "seed", "comparator", "label"} | DESIGN_KEYS | SSR_KEYS
STAGE_KEYS = {"theta_hat", "sigma_hat", "n"}

DESIGN_DEFAULTS = {"alpha": "0.05", "use_t": "true"}
SSR_DEFAULTS = {"target_power": "0.9", "gamma_target": "0.9", "n2_min": "0",
                "n2_max": "300", "inner_sims": "10000"}


def parse_number(text: str) -> float:
    """Float with sqrt:/log: literals, e.g. sqrt:0.5 or log:1.25."""
    text = text.strip()
    try:
        if text.startswith("sqrt:"):
            return math.sqrt(float(text[5:]))
        if text.startswith("log:"):
            return math.log(float(text[4:]))
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse number {text!r}") from exc


def _parse_bool(text: str) -> bool:
    val = text.strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean {text!r}")


def _parse_int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer {text!r}") from exc


def load_config(path: str) -> dict[str, dict[str, str]]:
    """Read an INI file into {section: {key: raw-string}}."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def _check_keys(section: str, data: dict[str, str], allowed: set[str]) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown keys in [{section}]: {', '.join(unknown)} "
            f"(allowed: {', '.join(sorted(allowed))})")


def build_design(data: dict[str, str]) -> DesignSpec:
    merged = {**DESIGN_DEFAULTS, **data}
    missing = sorted(k for k in ("delta", "alpha1", "alpha0", "w", "w_star")
                     if k not in merged)
    if missing:
        raise ConfigError(f"missing design keys: {', '.join(missing)}")
    return DesignSpec(
        delta=parse_number(merged["delta"]),
        bounds=Boundaries(alpha=parse_number(merged["alpha"]),
                          alpha1=parse_number(merged["alpha1"]),
                          alpha0=parse_number(merged["alpha0"])),
        comb=CombinationSpec(w=parse_number(merged["w"]),
                             w_star=parse_number(merged["w_star"])),
        use_t=_parse_bool(merged["use_t"]),
    )


def build_ssr(data: dict[str, str]) -> SsrConfig:
    merged = {**SSR_DEFAULTS, **data}
    return SsrConfig(
        target_power=parse_number(merged["target_power"]),
        gamma_target=parse_number(merged["gamma_target"]),
        n2_min=_parse_int(merged["n2_min"]),
        n2_max=_parse_int(merged["n2_max"]),
        inner_sims=_parse_int(merged["inner_sims"]),
    )


def _parse_theta(text: str):
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) == 1:
        return parse_number(parts[0])
    if len(parts) == 2:
        return (parse_number(parts[0]), parse_number(parts[1]))
    raise ConfigError(f"theta must be one value or a pair, got {text!r}")


def build_scenarios(sections: dict[str, dict[str, str]],
                    overrides: dict[str, str] | None = None) -> list[ScenarioConfig]:
    """Assemble scenario configs from [design]/[ssr] plus [scenario*] sections.

    Scenario sections may override any shared design/ssr key; command-line
    overrides (e.g. --seed) apply last.
    """
    overrides = overrides or {}
    design_raw = sections.get("design", {})
    ssr_raw = sections.get("ssr", {})
    _check_keys("design", design_raw, DESIGN_KEYS)
    _check_keys("ssr", ssr_raw, SSR_KEYS)
    names = [s for s in sections if s.startswith("scenario")]
    if not names:
        raise ConfigError("no [scenario] section found")
    out = []
    for name in names:
        raw = dict(sections[name])
        _check_keys(name, raw, SCENARIO_KEYS)
        raw.update(overrides)
        design = build_design({**design_raw,
                               **{k: v for k, v in raw.items() if k in DESIGN_KEYS}})
        ssr = build_ssr({**ssr_raw,
                         **{k: v for k, v in raw.items() if k in SSR_KEYS}})
        corr = raw.get("endpoint_correlation")
        out.append(ScenarioConfig(
            design=design,
            ssr=ssr,
            theta=_parse_theta(raw.get("theta", "0")),
            sigma=parse_number(raw.get("sigma", "0.294")),
            endpoint_correlation=None if corr is None else parse_number(corr),
            n1=_parse_int(raw.get("n1", "40")),
            replications=_parse_int(raw.get("replications", "5000")),
            seed=_parse_int(raw.get("seed", "0")),
            comparator=raw.get("comparator", "none").strip(),
            label=raw.get("label", name).strip(),
        ))
    return out


def _parse_pair(text: str) -> tuple[float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise ConfigError(f"expected a pair of values, got {text!r}")
    return parse_number(parts[0]), parse_number(parts[1])


def build_stages(sections: dict[str, dict[str, str]]):
    """Stage summaries from [stage1] (+ optional [stage2]) sections.

    Pair-valued theta_hat/sigma_hat keys select the two-endpoint schema and
    yield EndpointPairSummary objects instead of StageSummary.
    """
    if "stage1" not in sections:
        raise ConfigError("missing [stage1] section")
    two_endpoint = "," in sections["stage1"].get("theta_hat", "")
    stages = []
    for idx, name in enumerate(("stage1", "stage2"), start=1):
        if name not in sections:
            stages.append(None)
            continue
        raw = sections[name]
        _check_keys(name, raw, STAGE_KEYS)
        missing = sorted(k for k in STAGE_KEYS if k not in raw)
        if missing:
            raise ConfigError(f"missing keys in [{name}]: {', '.join(missing)}")
        n = _parse_int(raw["n"])
        if two_endpoint:
            theta = _parse_pair(raw["theta_hat"])
            sig = _parse_pair(raw["sigma_hat"])
            se = tuple(s * math.sqrt(2.0 / n) for s in sig)
            stages.append(EndpointPairSummary(theta_hat=theta, se=se, stage=idx, n=n))
        else:
            stages.append(StageSummary(theta_hat=parse_number(raw["theta_hat"]),
                                       sigma_hat=parse_number(raw["sigma_hat"]),
                                       n=n, stage=idx))
    return two_endpoint, stages[0], stages[1]


@dataclass(frozen=True)
class RunManifest:
    """Provenance record for one CLI invocation.

    The deterministic part (everything except the timestamp) is embedded in
    CSV outputs as comment lines; the full manifest including the timestamp
    goes to manifest.json.
    """

    subcommand: str
    config: dict
    seed: int | None
    version: str

    def deterministic_json(self) -> str:
        return json.dumps(
            {"subcommand": self.subcommand, "version": self.version,
             "seed": self.seed, "config": self.config},
            sort_keys=True)

    def full_json(self) -> str:
        payload = json.loads(self.deterministic_json())
        payload["timestamp"] = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
        return json.dumps(payload, sort_keys=True, indent=2)
