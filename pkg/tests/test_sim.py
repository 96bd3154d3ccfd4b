from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iths import messages as m
from iths.adversary import BUILTIN_STRATEGIES, AdversarySpec, NetPolicy
from iths.protocol import ConfigurationError
from iths.sim import (
    STATUS_DECIDED,
    STATUS_HORIZON,
    ChannelRejected,
    SimConfig,
    Simulation,
    read_trace,
    replay,
    run,
)

from conftest import happy


@pytest.mark.parametrize("n", [4, 7, 10])
def test_happy_path_decides_at_nine_hops(n):
    # request, suggest, propose, echo, key1, key2, key3, lock, done: nine network hops
    res = happy(n, seed=1)
    assert res.status == STATUS_DECIDED
    assert {t for t, _ in res.decisions.values()} == {90}
    assert {v for _, v in res.decisions.values()} == {"A"}


def test_happy_path_with_small_delay():
    res = happy(4, min_delay=1, seed=1)
    assert {t for t, _ in res.decisions.values()} == {9}


@pytest.mark.parametrize(
    "kwargs",
    [dict(min_delay=11), dict(min_delay=0), dict(gst=-1), dict(delay_bound=0), dict(f=2)],
)
def test_config_validation(kwargs):
    args = dict(n=4, f=1)
    args.update(kwargs)
    with pytest.raises(ConfigurationError):
        SimConfig(**args)


def test_input_count_checked():
    with pytest.raises(ConfigurationError):
        run(SimConfig(4, 1), None, ["A"])


def test_min_delay_defaults_to_delay_bound():
    assert SimConfig(4, 1, delay_bound=7).delta == 7


def test_channel_authenticates_senders():
    sim = Simulation(SimConfig(4, 1), AdversarySpec.build(corrupt=[3]), ["A"] * 4)
    with pytest.raises(ChannelRejected):
        sim.submit(1, 2, m.done("X"))  # cannot author as an honest party
    with pytest.raises(ChannelRejected):
        sim.submit(3, 2, m.done("x" * 40))  # too wide for a word
    with pytest.raises(ChannelRejected):
        sim.submit(3, 9, m.done("X"))
    sim.submit(3, 2, m.done("X"))
    assert sim.trace[-1].dir == "send" and sim.trace[-1].sender == 3


def test_clock_offsets_collapse_at_gst():
    sim = Simulation(SimConfig(4, 1, gst=100), AdversarySpec.build(clock_offsets=[5, -10, 0, 10]))
    assert sim.clock_now(1, 50) == 55
    assert sim.clock_now(2, 50) == 40
    assert sim.clock_now(1, 150) == 150
    assert sim.clock_now(4, 50) - sim.clock_now(2, 50) == 20  # at most 2 delay bounds apart


def test_horizon_reported_distinctly():
    cfg = SimConfig(4, 1, gst=10_000, max_time=300)
    res = run(cfg, AdversarySpec.build(net_policy="max_delay", corrupt=[2]), ["A"] * 4)
    assert res.status == STATUS_HORIZON and not res.all_decided


def test_replay_is_byte_identical():
    spec = AdversarySpec.build(corrupt=[2], strategy="equivocating_primary", net_policy="random")
    res = run(SimConfig(4, 1, gst=150, seed=11), spec, ["A", "B", "A", "B"])
    again = replay(res.trace_lines())
    assert again.trace_text() == res.trace_text()


def test_trace_header_and_field_order():
    res = happy(4, seed=1)
    meta, events = read_trace(res.trace_lines())
    assert meta["config"]["n"] == 4
    assert list(events[0]) == ["t", "party", "dir", "kind", "view", "value", "sender", "to", "words", "mem"]


def test_trace_parse_error_has_line():
    with pytest.raises(ValueError, match="line 2"):
        read_trace(['{"dir":"meta"}', "{oops"])


def test_messages_to_crashed_party_are_lost():
    spec = AdversarySpec.build(crash_plan=[(3, 5, 200)])
    res = run(SimConfig(4, 1, seed=1), spec, ["A"] * 4)
    down = [ev for ev in res.trace if ev.party == 3 and ev.dir == "recv" and 5 <= ev.t < 200]
    assert down == []
    assert any(ev.dir == "reboot" for ev in res.trace)
    assert res.all_decided


def _delivery_pairs(res):
    sent = defaultdict(list)
    got = defaultdict(list)
    for ev in res.trace:
        key = (ev.sender, ev.to if ev.dir == "send" else ev.party, ev.kind, ev.view, str(ev.value))
        if ev.dir == "send":
            sent[key].append(ev.t)
        elif ev.dir == "recv":
            got[key].append(ev.t)
    return sent, got


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10**6),
    gst=st.integers(0, 400),
    policy=st.sampled_from(NetPolicy.NAMES),
    strategy=st.sampled_from(BUILTIN_STRATEGIES),
    min_delay=st.integers(1, 10),
)
def test_delivery_window(seed, gst, policy, strategy, min_delay):
    """Exactly once, never early, and never later than max(send, gst) + delay bound."""
    cfg = SimConfig(4, 1, delay_bound=10, min_delay=min_delay, gst=gst, seed=seed)
    spec = AdversarySpec.build(corrupt=[2], strategy=strategy, net_policy=policy, victims=[3])
    res = run(cfg, spec, ["A", "B", "B", "A"])
    sent, got = _delivery_pairs(res)
    for key, times in got.items():
        assert len(times) <= len(sent[key])
        if len(times) == len(sent[key]) == 1:
            (s,), (r,) = sent[key], times
            if key[0] == key[1]:
                assert r == s
            else:
                assert s + min(min_delay, max(s, gst) + 10 - s) <= r <= max(s, gst) + 10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), policy=st.sampled_from(NetPolicy.NAMES),
       strategy=st.sampled_from(BUILTIN_STRATEGIES))
def test_determinism(seed, policy, strategy):
    cfg = SimConfig(4, 1, gst=120, seed=seed)
    spec = AdversarySpec.build(corrupt=[1], strategy=strategy, net_policy=policy, victims=[4])
    a = run(cfg, spec, ["A", "B", "A", "B"])
    b = run(cfg, spec, ["A", "B", "A", "B"])
    assert a.trace_text() == b.trace_text()
