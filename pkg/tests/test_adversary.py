import random

import pytest

from iths.adversary import (
    BUILTIN_STRATEGIES,
    AdversaryError,
    AdversarySpec,
    InFlight,
    NetPolicy,
    choose_delivery,
    get_strategy,
)
from iths import messages as m
from iths.metrics import check_agreement, check_all
from iths.protocol import TIMEOUT_DELTAS
from iths.sim import SimConfig, run


def _inflight(send, gst=0, delta=1, bound=10, sender=1, to=2):
    return InFlight(m.done("A"), sender, to, send, send + delta, max(send, gst) + bound)


@pytest.mark.parametrize(
    "policy, inflight, expected",
    [
        (NetPolicy("eager"), _inflight(5), 6),
        (NetPolicy("max_delay"), _inflight(5, gst=100), 110),
        (NetPolicy("targeted_stall", frozenset({2})), _inflight(5, gst=100), 110),
        (NetPolicy("targeted_stall", frozenset({3})), _inflight(5, gst=100), 6),
    ],
)
def test_choose_delivery(policy, inflight, expected):
    assert choose_delivery(policy, inflight, random.Random(0)) == expected


def test_random_policy_is_seeded():
    fl = _inflight(5, gst=300)
    a = [choose_delivery(NetPolicy("random"), fl, random.Random(4)) for _ in range(3)]
    b = [choose_delivery(NetPolicy("random"), fl, random.Random(4)) for _ in range(3)]
    assert a == b
    assert all(fl.earliest <= t <= fl.deadline for t in a)


def test_unknown_names():
    with pytest.raises(AdversaryError):
        NetPolicy("teleport")
    with pytest.raises(AdversaryError):
        get_strategy("polite")


@pytest.mark.parametrize(
    "spec",
    [
        AdversarySpec.build(corrupt=[1, 2]),
        AdversarySpec.build(corrupt=[5]),
        AdversarySpec.build(corrupt=[1], crash_plan=[(1, 5, 10)]),
        AdversarySpec.build(crash_plan=[(2, 10, 5)]),
        AdversarySpec.build(clock_offsets=[0, 0, 0, 11]),
        AdversarySpec.build(clock_offsets=[0, 0]),
        AdversarySpec.build(corrupt=[1], strategy={1: "polite"}),
    ],
)
def test_invalid_specs(spec):
    with pytest.raises(AdversaryError):
        spec.validate(4, 1, 10)


def test_spec_dict_roundtrip():
    spec = AdversarySpec.build(corrupt=[2], strategy="stale_key", net_policy="targeted_stall",
                               victims=[3], crash_plan=[(1, 5, 40)], clock_offsets=[1, 2, 3, 4])
    assert AdversarySpec.from_dict(spec.to_dict()) == spec


def test_equivocating_primary_splits_honest_parties():
    spec = AdversarySpec.build(corrupt=[2], strategy="equivocating_primary")
    res = run(SimConfig(4, 1, seed=1), spec, ["A", "A", "A", "A"])
    proposals = {ev.to: ev.value for ev in res.trace
                 if ev.dir == "send" and ev.party == 2 and ev.kind == "propose" and ev.view == 1}
    assert proposals[1] == proposals[3] != proposals[4]
    assert not check_agreement(res)


def test_single_fabricated_done_never_amplified():
    spec = AdversarySpec.build(corrupt=[3], strategy="done_spammer")
    for seed in range(10):
        res = run(SimConfig(4, 1, seed=seed), spec, ["A"] * 4)
        honest_dones = {ev.value for ev in res.trace if ev.dir == "send" and ev.kind == "done" and ev.party != 3}
        assert honest_dones == {"A"}


def test_silent_primary_times_out_and_next_view_decides():
    spec = AdversarySpec.build(corrupt=[2], strategy="silent", clock_offsets="zero")
    res = run(SimConfig(4, 1, seed=1), spec, ["A"] * 4)
    timeout = TIMEOUT_DELTAS * 10
    aborts = [ev.t for ev in res.trace if ev.dir == "send" and ev.kind == "abort"]
    assert min(aborts) == timeout
    assert {ev.view for ev in res.trace if ev.dir == "decide"} == {2}


@pytest.mark.parametrize("strategy", BUILTIN_STRATEGIES + ("chaos",))
@pytest.mark.parametrize("policy", NetPolicy.NAMES)
def test_strategies_keep_safety(strategy, policy):
    for seed in range(8):
        spec = AdversarySpec.build(corrupt=[2], strategy=strategy, net_policy=policy, victims=[4])
        res = run(SimConfig(4, 1, gst=40 * seed, seed=seed), spec, ["A", "B", "A", "B"])
        assert check_all(res) == []
        assert res.all_decided


def test_excess_corruption_can_break_agreement():
    """With f+1 corrupt parties some run disagrees, so the safety checks are not vacuous."""
    spec = AdversarySpec.build(corrupt=[1, 2], strategy="equivocating_primary", net_policy="random",
                               allow_excess_corruption=True)
    broken = [seed for seed in range(20)
              if check_agreement(run(SimConfig(4, 1, gst=200, seed=seed), spec, ["A"] * 4))]
    assert broken
