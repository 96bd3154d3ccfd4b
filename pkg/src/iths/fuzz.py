"""Randomized batches of simulations with safety, timing and word checks.

A template is a scenario dict with any subset of keys fixed.  Missing keys
are drawn per case: the corrupt set (exactly ``f`` parties), the strategy,
the network policy and its victims, GST, the inputs and the simulator seed.
Two extra template keys steer the draw:

``gst_max``
    upper end for a drawn GST (default: five view timeouts).
``crashes``
    number of honest parties given one crash and reboot each (default 0).

Case ``i`` of ``fuzz(template, runs, seed)`` is built from case seed
``seed + i`` alone, so ``fuzz(template, 1, case_seed)`` replays it.
"""

from __future__ import annotations

import json
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .adversary import BUILTIN_STRATEGIES, NetPolicy
from .metrics import Violation, check_all, check_first_good_primary, meter
from .protocol import TIMEOUT_DELTAS
from .scenario import Scenario, ScenarioError, from_dict, write_artifacts

FUZZ_KEYS = ("gst_max", "crashes")
STRATEGIES = BUILTIN_STRATEGIES + ("chaos",)
SAFETY = {"agreement": True, "validity": True, "word_bounds": True}


def make_case(template: dict, case_seed: int) -> Scenario:
    """The scenario for one case; a pure function of the template and the seed."""
    rng = random.Random(f"fuzz:{case_seed}")
    d = {k: v for k, v in template.items() if k not in FUZZ_KEYS and k != "checks"}
    n, f = d["n"], d["f"]
    timeout = TIMEOUT_DELTAS * d.get("delay_bound", 10)
    # draw every field in a fixed order so fixing one key leaves the others unchanged
    corrupt = sorted(rng.sample(range(1, n + 1), f))
    strategy = rng.choice(STRATEGIES)
    policy = rng.choice(NetPolicy.NAMES)
    gst = rng.randint(0, template.get("gst_max", 5 * timeout))
    inputs = [rng.choice("AB") for _ in range(n)]
    seed = rng.randrange(2**31)
    d.setdefault("corrupt", corrupt)
    d.setdefault("strategy", strategy)
    d.setdefault("net_policy", policy)
    d.setdefault("gst", gst)
    d.setdefault("inputs", inputs)
    d.setdefault("seed", seed)
    honest = [p for p in range(1, n + 1) if p not in set(d["corrupt"])]
    victims = rng.sample(honest, max(1, len(honest) // 3))
    if d["net_policy"] == "targeted_stall":
        d.setdefault("victims", victims)
    crashes = template.get("crashes", 0)
    if crashes and "crash_plan" not in d:
        plan = []
        for p in rng.sample(honest, min(crashes, len(honest))):
            down = rng.randint(0, d["gst"] + 3 * timeout)
            plan.append([p, down, down + rng.randint(1, 2 * timeout)])
        d["crash_plan"] = plan
    d["checks"] = dict(SAFETY)
    return from_dict(d, source=f"case {case_seed}")


@dataclass
class Counterexample:
    case_seed: int
    scenario: Scenario
    violations: list
    trace: list  # JSON lines, meta header first

    def describe(self) -> str:
        lines = [f"case seed {self.case_seed}:"]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)


@dataclass
class FuzzSummary:
    runs: int = 0
    seed: int = 0
    counterexample: Counterexample | None = None
    latencies: list = field(default_factory=list)  # last honest decision minus GST, clipped at 0
    undecided: int = 0
    max_message_words: int = 0
    max_pair_words: int = 0
    max_fitted_c: float = 0.0
    by_strategy: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.counterexample is None

    def latency_stats(self) -> dict:
        lat = sorted(self.latencies)
        if not lat:
            return {}
        return {
            "min": lat[0],
            "median": statistics.median(lat),
            "p95": lat[min(len(lat) - 1, int(0.95 * len(lat)))],
            "max": lat[-1],
        }

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "seed": self.seed,
            "ok": self.ok,
            "counterexample": None if self.ok else {
                "case_seed": self.counterexample.case_seed,
                "violations": [str(v) for v in self.counterexample.violations],
            },
            "latency": self.latency_stats(),
            "undecided": self.undecided,
            "max_message_words": self.max_message_words,
            "max_pair_words": self.max_pair_words,
            "max_fitted_c": self.max_fitted_c,
            "by_strategy": dict(sorted(self.by_strategy.items())),
        }


def check_case(scenario: Scenario, res) -> list:
    """Safety, word bounds, eventual termination, and (on crash-free runs) the timing lemmas."""
    out = check_all(res)
    if not res.all_decided:
        missing = [p for p in res.honest if p not in res.decisions]
        out.append(Violation("termination", f"parties {missing} undecided at {res.end_time} ({res.status})"))
    if not scenario.adversary.crash_plan:
        out += check_first_good_primary(res)
    return out


def fuzz(template: dict, runs: int, seed: int = 0, out_dir=None) -> FuzzSummary:
    """Run ``runs`` random cases; halt at the first violation."""
    if isinstance(runs, bool) or not isinstance(runs, int) or runs < 1:
        raise ValueError("runs must be at least 1")
    for key in ("n", "f"):
        if key not in template:
            raise ScenarioError(f"template needs {key!r}")
    summary = FuzzSummary(seed=seed)
    for i in range(runs):
        case_seed = seed + i
        scenario = make_case(template, case_seed)
        res = scenario.run()
        met = meter(res)
        summary.runs += 1
        for name in set(scenario.adversary.strategy.values()) or {"none"}:
            summary.by_strategy[name] = summary.by_strategy.get(name, 0) + 1
        summary.max_message_words = max(summary.max_message_words, met.max_message_words)
        if not scenario.adversary.crash_plan:
            summary.max_pair_words = max(summary.max_pair_words, met.max_pair_words)
        summary.max_fitted_c = max(summary.max_fitted_c, met.fitted_c)
        if res.all_decided:
            last = max(t for t, _ in res.decisions.values())
            summary.latencies.append(max(0, last - scenario.config.gst))
        else:
            summary.undecided += 1
        bad = check_case(scenario, res)
        if bad:
            summary.counterexample = Counterexample(case_seed, scenario, bad, res.trace_lines())
            if out_dir is not None:
                write_artifacts(out_dir, res, met, {"case_seed": case_seed,
                                                    "violations": [str(v) for v in bad]})
            break
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "fuzz.json").write_text(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n")
    return summary
