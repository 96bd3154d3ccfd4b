import json

import pytest

from iths.fuzz import fuzz, make_case
from iths.sim import replay


def test_runs_must_be_positive():
    with pytest.raises(ValueError):
        fuzz({"n": 4, "f": 1}, 0)


def test_template_needs_system_size():
    with pytest.raises(ValueError):
        fuzz({"n": 4}, 1)


def test_cases_are_pure_functions_of_seed():
    a = make_case({"n": 4, "f": 1}, 17)
    b = make_case({"n": 4, "f": 1}, 17)
    assert a == b
    assert a.run().trace_text() == b.run().trace_text()


def test_fixed_keys_are_kept():
    sc = make_case({"n": 7, "f": 2, "strategy": "silent", "gst": 5}, 3)
    assert set(sc.adversary.strategy.values()) == {"silent"}
    assert sc.config.gst == 5 and len(sc.adversary.corrupt) == 2


def test_crash_plans_drawn_for_honest_parties():
    sc = make_case({"n": 7, "f": 2, "crashes": 3}, 9)
    assert len(sc.adversary.crash_plan) == 3
    assert not {p for p, _, _ in sc.adversary.crash_plan} & sc.adversary.corrupt


def test_clean_batch_summary(tmp_path):
    s = fuzz({"n": 4, "f": 1}, 40, seed=100, out_dir=tmp_path)
    assert s.ok and s.runs == 40 and s.undecided == 0
    assert s.max_message_words == 7 and s.max_pair_words <= 37
    assert sum(s.by_strategy.values()) == 40
    assert set(s.latency_stats()) == {"min", "median", "p95", "max"}
    assert json.loads((tmp_path / "fuzz.json").read_text())["runs"] == 40


def test_counterexample_halts_with_replayable_seed(tmp_path):
    template = {"n": 4, "f": 1, "corrupt": [1, 2], "allow_excess_corruption": True,
                "strategy": "equivocating_primary", "gst": 200, "net_policy": "random"}
    s = fuzz(template, 50, seed=0, out_dir=tmp_path)
    assert not s.ok
    ce = s.counterexample
    assert s.runs == ce.case_seed + 1  # halted at the first bad case
    assert "agreement" in {v.prop for v in ce.violations}
    again = fuzz(template, 1, seed=ce.case_seed)
    assert again.counterexample.trace == ce.trace
    assert replay(ce.trace).trace_lines() == ce.trace
    assert (tmp_path / "trace.jsonl").read_text().splitlines() == ce.trace
