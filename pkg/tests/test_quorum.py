import pytest
from hypothesis import given
from hypothesis import strategies as st

from iths.messages import VOTE_KINDS, Kind
from iths.quorum import Level, Threshold, VoteLedger


@pytest.mark.parametrize("n, f, small, large", [(4, 1, 2, 3), (7, 2, 3, 5), (10, 3, 4, 7), (5, 1, 2, 4)])
def test_thresholds(n, f, small, large):
    t = Threshold.for_system(n, f)
    assert (t.small, t.large) == (small, large)


def test_lowered_mutation_uses_small_quorum():
    assert Threshold.for_system(4, 1, lowered=True) == Threshold(2, 2)


def test_vote_fires_once_at_large():
    led = VoteLedger(Threshold.for_system(4, 1))
    assert led.record_vote(Kind.ECHO, 1, "A") is None
    assert led.record_vote(Kind.ECHO, 2, "A") is None
    ev = led.record_vote(Kind.ECHO, 3, "A")
    assert ev == (Kind.ECHO, "A", Level.LARGE)
    assert led.record_vote(Kind.ECHO, 4, "A") is None


def test_only_first_vote_of_a_sender_counts():
    led = VoteLedger(Threshold.for_system(4, 1))
    led.record_vote(Kind.KEY1, 1, "A")
    led.record_vote(Kind.KEY1, 1, "B")
    led.record_vote(Kind.KEY1, 1, "A")
    assert led.count(Kind.KEY1, "A") == 1
    assert led.count(Kind.KEY1, "B") == 0


def test_done_fires_small_then_large():
    led = VoteLedger(Threshold.for_system(4, 1))
    assert led.record_vote(Kind.DONE, 1, "A") is None
    assert led.record_vote(Kind.DONE, 2, "A").level is Level.SMALL
    assert led.record_vote(Kind.DONE, 3, "A").level is Level.LARGE
    assert led.record_vote(Kind.DONE, 4, "A") is None


def test_done_crossing_both_levels_reports_large():
    led = VoteLedger(Threshold(small=1, large=1))
    assert led.record_vote(Kind.DONE, 1, "A").level is Level.LARGE


def test_reset_keeps_done():
    led = VoteLedger(Threshold.for_system(4, 1))
    led.record_vote(Kind.DONE, 1, "A")
    led.record_vote(Kind.LOCK, 1, "A")
    led.reset_for_view()
    assert led.count(Kind.LOCK, "A") == 0
    assert led.count(Kind.DONE, "A") == 1


def test_clone_is_independent():
    led = VoteLedger(Threshold.for_system(4, 1))
    led.record_vote(Kind.ECHO, 1, "A")
    c = led.clone()
    c.record_vote(Kind.ECHO, 2, "A")
    assert led.count(Kind.ECHO, "A") == 1
    assert c.key() != led.key()


systems = st.sampled_from([(4, 1), (5, 1), (7, 2), (10, 3)])


@given(
    system=systems,
    votes=st.lists(
        st.tuples(st.sampled_from(VOTE_KINDS + (Kind.DONE,)), st.integers(1, 10), st.sampled_from("ABC")),
        max_size=80,
    ),
)
def test_ledger_non_equivocation(system, votes):
    """Honest-sender counting: no kind ever has two values at the large threshold."""
    n, f = system
    t = Threshold.for_system(n, f)
    led = VoteLedger(t)
    fired: dict = {}
    for kind, sender, val in votes:
        if sender > n:
            continue
        ev = led.record_vote(kind, sender, val)
        if ev is not None:
            assert (ev.kind, ev.level) not in fired
            fired[(ev.kind, ev.level)] = ev.value
            assert led.count(kind, ev.value) >= (t.large if ev.level is Level.LARGE else t.small)
    for kind, counts in led.support.items():
        assert sum(c >= t.large for c in counts.values()) <= 1
        assert sum(counts.values()) == len(led.voters(kind)) <= n
    for kind in VOTE_KINDS:
        assert (kind, Level.SMALL) not in fired
