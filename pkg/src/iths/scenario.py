"""Scenario files: one JSON object describing a run and the checks it must pass.

Keys are flat and named after the simulator and adversary fields::

    {
      "n": 4, "f": 1, "inputs": ["A", "A", "B", "B"],
      "delay_bound": 10, "min_delay": 1, "gst": 0, "seed": 7,
      "corrupt": [2], "strategy": "equivocating_primary", "net_policy": "random",
      "checks": {"agreement": true, "termination_by": 200}
    }

``n``, ``f`` and ``inputs`` are required.  Everything else falls back to a
documented default: ``min_delay`` equals ``delay_bound``, ``gst`` is 0,
``delay_bound`` is 10, ``seed`` is 0, no party is corrupt, the network is
eager, there are no crashes, and clock offsets are random.

Checks (all optional):

``agreement``
    honest parties never decide different values, nor send two done values.
``validity``
    with nobody corrupt and unanimous inputs, every decision is that input.
``termination_by``
    every honest party decides at or before this time.
``latency_bound``
    every honest party decides inside the first view that has an honest
    primary and starts at or after GST, within this many ticks of its start.
``word_bounds``
    the per-message and per-view per-peer word limits hold.
``persistent_size_bound``
    no persisted image exceeds this many words (turns on memory metering).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .adversary import AdversaryError, AdversarySpec
from .metrics import (
    Metrics,
    Violation,
    check_agreement,
    check_single_done,
    check_validity,
    decisions,
    first_good_view,
    meter,
)
from .protocol import ConfigurationError
from .sim import SimConfig, SimResult, run

CONFIG_KEYS = (
    "n", "f", "delay_bound", "min_delay", "gst", "max_time", "seed", "mutation",
    "first_view", "measure_memory",
)
ADVERSARY_KEYS = (
    "corrupt", "strategy", "net_policy", "victims", "crash_plan", "clock_offsets",
    "allow_excess_corruption",
)
CHECK_KEYS = (
    "agreement", "validity", "termination_by", "latency_bound", "word_bounds",
    "persistent_size_bound",
)
REQUIRED = ("n", "f", "inputs")
TOP_KEYS = CONFIG_KEYS + ADVERSARY_KEYS + ("inputs", "checks", "name")


class ScenarioError(ValueError):
    """A scenario that does not parse or is not well formed."""

    def __init__(self, message: str, line: int | None = None, source: str = "<scenario>"):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Scenario:
    config: SimConfig
    adversary: AdversarySpec
    inputs: tuple
    checks: dict = field(default_factory=dict)
    name: str = ""

    def run(self) -> SimResult:
        return run(self.config, self.adversary, list(self.inputs))

    def to_dict(self) -> dict:
        d = {"name": self.name} if self.name else {}
        cfg = self.config.to_dict()
        d.update({k: cfg[k] for k in CONFIG_KEYS})
        d.update(self.adversary.to_dict())
        d["inputs"] = list(self.inputs)
        d["checks"] = dict(self.checks)
        return d


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse(text: str, source: str = "<scenario>") -> Scenario:
    """Parse scenario text; every error carries the offending line when known."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, exc.lineno, source) from None
    if not isinstance(raw, dict):
        raise ScenarioError("top level must be a JSON object", 1, source)
    return from_dict(raw, text, source)


def from_dict(raw: dict, text: str = "", source: str = "<scenario>") -> Scenario:
    def fail(msg, key=None):
        raise ScenarioError(msg, _line_of(text, key) if key else None, source)

    for key in raw:
        if key not in TOP_KEYS:
            fail(f"unknown key {key!r}", key)
    for key in REQUIRED:
        if key not in raw:
            fail(f"missing required key {key!r}")
    for key in ("n", "f", "delay_bound", "min_delay", "gst", "max_time", "seed", "first_view"):
        val = raw.get(key)
        if val is not None and (not isinstance(val, int) or isinstance(val, bool)):
            fail(f"{key} must be an integer", key)
    inputs = raw["inputs"]
    if not isinstance(inputs, list):
        fail("inputs must be a list", "inputs")
    checks = raw.get("checks", {})
    if not isinstance(checks, dict):
        fail("checks must be an object", "checks")
    for key, val in checks.items():
        if key not in CHECK_KEYS:
            fail(f"unknown check {key!r}", key)
        if key in ("agreement", "validity", "word_bounds") and not isinstance(val, bool):
            fail(f"check {key} takes true or false", key)
        if key in ("termination_by", "latency_bound", "persistent_size_bound") and (
            not isinstance(val, int) or isinstance(val, bool) or val < 0
        ):
            fail(f"check {key} takes a non-negative integer", key)

    cfg_args = {k: raw[k] for k in CONFIG_KEYS if k in raw}
    if "persistent_size_bound" in checks:
        cfg_args["measure_memory"] = True
    try:
        config = SimConfig(**cfg_args)
    except (ConfigurationError, TypeError) as exc:
        fail(str(exc), next((k for k in ("n", "f", "min_delay", "gst") if k in raw), None))
    adv_args = {k: raw[k] for k in ADVERSARY_KEYS if k in raw}
    try:
        adversary = AdversarySpec.build(**adv_args)
        adversary.validate(config.n, config.f, config.delay_bound)
    except (AdversaryError, TypeError, ValueError) as exc:
        fail(str(exc), next((k for k in ADVERSARY_KEYS if k in raw), None))
    if len(inputs) != config.n:
        fail(f"inputs has {len(inputs)} entries, need n={config.n}", "inputs")
    return Scenario(config, adversary, tuple(inputs), dict(checks), str(raw.get("name", "")))


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(exc.strerror or str(exc), None, str(path)) from None
    return parse(text, str(path))


# -- checks ------------------------------------------------------------------


def _termination_by(res: SimResult, bound: int) -> list[Violation]:
    decs = decisions(res.trace, res.honest)
    out = []
    for p in res.honest:
        ev = decs.get(p)
        if ev is None:
            out.append(Violation("termination_by", f"party {p} never decided (bound {bound})"))
        elif ev.t > bound:
            out.append(Violation("termination_by", f"party {p} decided at {ev.t} > {bound}", (ev,)))
    return out


def _latency_bound(res: SimResult, bound: int) -> list[Violation]:
    decs = decisions(res.trace, res.honest)
    fg = first_good_view(res.meta(), res.trace)
    if fg is None:
        missing = [p for p in res.honest if p not in decs]
        if missing:
            return [Violation("latency_bound", f"no good view started and {missing} never decided")]
        return []
    v, t = fg
    out = []
    for p in res.honest:
        ev = decs.get(p)
        if ev is None:
            out.append(Violation("latency_bound", f"party {p} never decided (view {v} began at {t})"))
        elif ev.view > v or ev.t - t > bound:
            out.append(Violation(
                "latency_bound",
                f"party {p} decided in view {ev.view} at {ev.t}; view {v} began at {t}, bound {bound}",
                (ev,),
            ))
    return out


def evaluate(scenario: Scenario, res: SimResult, met: Metrics | None = None) -> list[Violation]:
    """Every violation of the scenario's declared checks."""
    checks = scenario.checks
    met = met or meter(res)
    out: list[Violation] = []
    if checks.get("agreement"):
        out += check_agreement(res) + check_single_done(res)
    if checks.get("validity"):
        out += check_validity(res)
    if "termination_by" in checks:
        out += _termination_by(res, checks["termination_by"])
    if "latency_bound" in checks:
        out += _latency_bound(res, checks["latency_bound"])
    if checks.get("word_bounds"):
        out += met.violations
    if "persistent_size_bound" in checks:
        bound = checks["persistent_size_bound"]
        if met.max_persistent_words is not None and met.max_persistent_words > bound:
            out.append(Violation("persistent_size_bound",
                                 f"persistent image of {met.max_persistent_words} words > {bound}"))
    return out


@dataclass
class Report:
    scenario: Scenario
    result: SimResult
    metrics: Metrics
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        return {
            "name": self.scenario.name,
            "status": self.result.status,
            "end_time": self.result.end_time,
            "decisions": {str(p): list(d) for p, d in sorted(self.result.decisions.items())},
            "checks": sorted(self.scenario.checks),
            "violations": [str(v) for v in self.violations],
            "ok": self.ok,
        }


def write_artifacts(out_dir, result: SimResult, met: Metrics, summary: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.write_trace(out / "trace.jsonl")
    (out / "metrics.json").write_text(met.to_json() + "\n")
    if summary is not None:
        (out / "report.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return out


def run_scenario(source, out_dir=None) -> Report:
    """Load (if given a path), simulate, check, and optionally write artifacts."""
    scenario = source if isinstance(source, Scenario) else load(source)
    res = scenario.run()
    met = meter(res)
    report = Report(scenario, res, met, evaluate(scenario, res, met))
    if out_dir is not None:
        write_artifacts(out_dir, res, met, report.summary())
    return report


def excerpt(violation: Violation, limit: int = 5) -> list[str]:
    return [json.dumps(ev.as_dict(), separators=(",", ":")) for ev in violation.excerpt[:limit]]
