import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iths import messages as m
from iths.explorer import is_inert
from iths.messages import Kind
from iths.protocol import (
    FIRST_VIEW,
    ConfigurationError,
    Decide,
    Delivered,
    Mutation,
    SetViewTimer,
    Terminate,
    ViewTimerFired,
    accept_key,
    handle_event,
    init_party,
    open_lock,
    primary_of,
    select_proposal,
    sends,
    step,
    well_formed,
)


@pytest.mark.parametrize("view, n, primary", [(1, 4, 2), (2, 4, 3), (3, 4, 4), (4, 4, 1), (1, 7, 2), (7, 7, 1)])
def test_primary_rotation(view, n, primary):
    assert primary_of(view, n) == primary


@pytest.mark.parametrize("n, f", [(3, 1), (6, 2), (0, 0), (4, -1)])
def test_resilience_bound_enforced(n, f):
    with pytest.raises(ConfigurationError):
        init_party(1, n, f, "A")


def test_bad_party_id():
    with pytest.raises(ConfigurationError):
        init_party(5, 4, 1, "A")


# -- pure helpers ------------------------------------------------------------


@pytest.mark.parametrize(
    "key, val, proofs, ok",
    [
        (0, "A", [], False),
        (2, "A", [(2, "A", 0), (3, "A", 1)], True),  # two matching keys at or above 2
        (2, "A", [(2, "B", 0), (3, "B", 1)], False),  # other value, pk below key
        (2, "A", [(5, "B", 2), (5, "B", 3)], True),  # previous keys at or above 2 cover any value
        (2, "A", [(2, "A", 0), (1, "A", 0)], False),  # one supporter is not f+1
    ],
)
def test_accept_key(key, val, proofs, ok):
    assert accept_key(key, val, proofs, f=1) is ok


@pytest.mark.parametrize(
    "lock, lock_val, proofs, ok",
    [
        (2, "A", [(2, "B", 0), (3, "B", 1)], True),  # another value moved past the lock
        (2, "A", [(2, "A", 0), (3, "A", 1)], False),  # same value does not open it
        (2, "A", [(3, "A", 2), (4, "A", 2)], True),  # pk at the lock opens it
        (2, "A", [(1, "B", 0), (1, "B", 0)], False),  # keys below the lock say nothing
    ],
)
def test_open_lock(lock, lock_val, proofs, ok):
    assert open_lock(lock, lock_val, proofs, f=1) is ok


def test_select_proposal_max_key_then_lowest_sender():
    assert select_proposal([(0, "A", 3), (2, "B", 4), (2, "C", 1), (1, "D", 2)]) == (2, "C")
    with pytest.raises(ValueError):
        select_proposal([])


# -- single-party behaviour --------------------------------------------------


def _deliver(state, sender, msg):
    return step(state, Delivered(sender, msg))


def test_start_of_first_view():
    stt, actions = init_party(1, 4, 1, "A")
    assert stt.view == FIRST_VIEW
    reqs = [a for a in sends(actions) if a.msg.kind is Kind.REQUEST]
    assert sorted(a.to for a in reqs) == [1, 2, 3, 4]
    assert SetViewTimer(FIRST_VIEW) in actions
    # nothing view-specific goes out before a peer has announced the view
    assert all(a.msg.kind is Kind.REQUEST for a in sends(actions))


def test_request_releases_messages_for_that_peer():
    stt, _ = init_party(1, 4, 1, "A")
    out = _deliver(stt, 2, m.request(1))
    kinds = sorted(a.msg.kind.name for a in sends(out))
    assert kinds == ["PROOF", "SUGGEST"]  # party 2 is the view-1 primary
    out = _deliver(stt, 3, m.request(1))
    assert [a.msg.kind for a in sends(out)] == [Kind.PROOF]


def test_done_amplification_and_decision():
    stt, _ = init_party(1, 4, 1, "A")
    assert _deliver(stt, 2, m.done("B")) == []
    out = _deliver(stt, 3, m.done("B"))
    assert sorted(a.to for a in sends(out)) == [1, 2, 3, 4]
    assert stt.done_sent == "B"
    out = _deliver(stt, 4, m.done("B"))
    assert Decide("B") in out and Terminate() in out
    assert stt.decided == "B" and stt.terminated


def test_terminated_party_only_answers_recover_queries():
    stt, _ = init_party(1, 4, 1, "A")
    for s in (2, 3, 4):
        _deliver(stt, s, m.done("A"))
    assert _deliver(stt, 2, m.abort(5)) == []
    out = _deliver(stt, 2, m.recover_query(1))
    reply = sends(out)[0].msg
    assert reply.kind is Kind.RECOVER_REPLY and reply.payload[2] == "A"


def test_timeout_sends_one_abort():
    stt, _ = init_party(1, 4, 1, "A")
    out = step(stt, ViewTimerFired(1))
    aborts = [a for a in sends(out) if a.msg.kind is Kind.ABORT]
    assert len(aborts) == 4 and aborts[0].msg.view == 1
    assert sends(step(stt, ViewTimerFired(1))) == []
    assert step(stt, ViewTimerFired(7)) == []  # stale timer


def test_abort_amplification_and_view_change():
    stt, _ = init_party(1, 4, 1, "A")
    assert _deliver(stt, 2, m.abort(1)) == []
    out = _deliver(stt, 3, m.abort(1))
    # f+1 aborts: join in; our own abort is the third of n-f, so the view moves on
    assert any(a.msg == m.abort(1) for a in sends(out))
    assert stt.view == 2
    assert any(a.msg == m.request(2) for a in sends(out))
    assert _deliver(stt, 4, m.abort(1)) == []


def test_other_view_messages_dropped():
    stt, _ = init_party(1, 4, 1, "A")
    before = stt.key()
    assert _deliver(stt, 2, m.vote(Kind.ECHO, "A", 3)) == []
    assert stt.key() == before


def test_propose_only_from_primary():
    stt, _ = init_party(1, 4, 1, "A")
    assert _deliver(stt, 3, m.propose(0, "A", 1)) == []
    _deliver(stt, 2, m.propose(0, "B", 1))
    assert Kind.ECHO in stt.pv.authored_kinds
    assert _deliver(stt, 2, m.propose(0, "A", 1)) == []  # only the first proposal counts


def test_key1_after_echo_quorum():
    stt, _ = init_party(1, 4, 1, "A")
    for s in (2, 3, 4):
        _deliver(stt, s, m.vote(Kind.ECHO, "B", 1))
    assert (stt.key1, stt.key1_val, stt.prev_key1) == (1, "B", 0)
    assert Kind.KEY1 in stt.pv.authored_kinds


def test_skip_key3_mutation_jumps_to_lock():
    stt, _ = init_party(1, 4, 1, "A", mutation=Mutation.SKIP_KEY3)
    for s in (2, 3, 4):
        _deliver(stt, s, m.vote(Kind.KEY2, "B", 1))
    assert stt.lock == 1 and stt.key3 == 0
    assert Kind.KEY3 not in stt.pv.authored_kinds


def test_handle_event_is_pure():
    stt, _ = init_party(1, 4, 1, "A")
    before = stt.key()
    new, out = handle_event(stt, Delivered(2, m.request(1)))
    assert stt.key() == before
    assert new.key() != before and out


@pytest.mark.parametrize(
    "msg",
    [
        m.Message(Kind.REQUEST, True, ()),
        m.Message(Kind.PROPOSE, 1, ("k", "A")),
        m.Message(Kind.ECHO, 1, ()),
        m.Message(99, 1, ()),
    ],
)
def test_ill_formed_messages_ignored(msg):
    stt, _ = init_party(1, 4, 1, "A")
    assert not well_formed(2, msg, 4)
    before = stt.key()
    assert step(stt, Delivered(2, msg)) == []
    assert stt.key() == before


# -- whole-system schedules --------------------------------------------------


def _fifo_run(n, f, inputs):
    parties = {}
    queue = []
    for p in range(1, n + 1):
        stt, out = init_party(p, n, f, inputs[p - 1])
        parties[p] = stt
        queue += [(p, a.to, a.msg) for a in sends(out)]
    while queue:
        s, to, msg = queue.pop(0)
        out = step(parties[to], Delivered(s, msg))
        queue += [(to, a.to, a.msg) for a in sends(out)]
    return parties


@pytest.mark.parametrize("n, f", [(4, 1), (7, 2), (10, 3)])
def test_fifo_schedule_decides_in_first_view(n, f):
    inputs = [chr(ord("A") + i % 3) for i in range(n)]
    parties = _fifo_run(n, f, inputs)
    decided = {stt.decided for stt in parties.values()}
    assert len(decided) == 1 and None not in decided
    assert all(stt.view == FIRST_VIEW for stt in parties.values())


MONOTONE = ("view", "key1", "key2", "key3", "lock", "prev_key1", "prev_key2")
N, F, BYZ = 4, 1, 2  # party 2 is the view-1 primary
values = st.sampled_from(["A", "B", "X"])
views = st.integers(1, 3)
keys = st.integers(0, 2)
byz_msgs = st.one_of(
    st.builds(m.request, views),
    st.builds(m.abort, views),
    st.builds(m.done, values),
    st.builds(m.vote, st.sampled_from(m.VOTE_KINDS), values, views),
    st.builds(m.suggest, keys, values, keys, values, keys, views),
    st.builds(m.proof, keys, values, keys, views),
    st.builds(m.propose, keys, values, views),
)
actions = st.lists(
    st.tuples(st.sampled_from(["deliver", "deliver", "deliver", "timeout", "inject"]),
              st.integers(0, 10**6), byz_msgs),
    max_size=250,
)


def _walk(inputs, schedule, byzantine, check):
    honest = [p for p in range(1, N + 1) if p != byzantine]
    parties = {}
    pending = []
    for p in honest:
        stt, out = init_party(p, N, F, inputs[p - 1])
        parties[p] = stt
        pending += [(p, a.to, a.msg) for a in sends(out) if a.to != byzantine]
    for action, idx, msg in schedule:
        if action == "deliver" and pending:
            s, to, msg = pending.pop(idx % len(pending))
        elif action == "timeout":
            to = honest[idx % len(honest)]
            s, msg = None, None
        elif action == "inject" and byzantine is not None:
            s, to = byzantine, honest[idx % len(honest)]
        else:
            continue
        stt = parties[to]
        check(stt, s, msg, pending)
        old = stt.clone()
        out = step(stt, ViewTimerFired(stt.view) if msg is None else Delivered(s, msg))
        pending += [(to, a.to, a.msg) for a in sends(out) if a.to != byzantine]
        for name in MONOTONE:
            assert getattr(stt, name) >= getattr(old, name), name
        for j in range(1, N + 1):
            assert stt.highest_request[j] >= old.highest_request[j]
            assert stt.highest_abort[j] >= old.highest_abort[j]
        if old.done_sent is not None:
            assert stt.done_sent == old.done_sent
        if old.decided is not None:
            assert stt.decided == old.decided
        for p in honest:
            q = parties[p]
            assert q.prev_key1 < q.key1 or (q.key1, q.prev_key1) == (0, -1)
            assert q.prev_key2 < q.key2 or (q.key2, q.prev_key2) == (0, -1)
            assert q.decided is None or q.decided == q.done_sent
        dones = {parties[p].done_sent for p in honest} - {None}
        assert len(dones) <= 1, f"two done values {dones}"
    return parties


@settings(max_examples=150, deadline=None)
@given(inputs=st.lists(st.sampled_from("AB"), min_size=N, max_size=N), schedule=actions,
       byzantine=st.sampled_from([None, BYZ, 1]))
def test_key_invariants_and_unique_done_under_any_schedule(inputs, schedule, byzantine):
    _walk(inputs, schedule, byzantine, lambda *a: None)


@settings(max_examples=100, deadline=None)
@given(inputs=st.lists(st.sampled_from("AB"), min_size=N, max_size=N), schedule=actions,
       byzantine=st.sampled_from([None, BYZ]))
def test_inert_messages_are_no_ops(inputs, schedule, byzantine):
    def check(stt, sender, msg, pending):
        for s, to, pm in pending:
            if to == stt.id and is_inert(stt, s, pm):
                probe = stt.clone()
                assert sends(step(probe, Delivered(s, pm))) == []
                assert probe.key() == stt.key(), pm
    _walk(inputs, schedule, byzantine, check)
