"""Bounded exhaustive exploration of small IT-HS systems.

Time is abstracted away: any pending message may be delivered next, and any
live party may time out its view at any moment.  At most one Byzantine party
acts by injecting messages from a finite menu straight into honest parties.

Reductions that apply in every mode, each keeping every reachable violation
reachable:

* Self-messages are delivered inside the step that sent them (the simulator
  does the same with zero delay).
* Messages addressed to the Byzantine party are dropped; it keeps no state,
  so nothing it receives can change what it may send.  Honest parties treat
  it as having joined every view, which only affects sends to it.
* A pending message whose delivery is a no-op now and forever (see
  ``is_inert``) is garbage collected, as is a proof that can no longer open
  a lock in its view.
* Parties that reach the view bound stop taking steps.  A stopped party
  looks to everyone else like one whose inbound messages are delayed forever.
* Requests are delivered first.  A request only raises a high-water mark and
  releases messages gated on it; it commutes with every other step.
* Byzantine votes and dones are injected only when they cross a threshold at
  the recipient.  An earlier copy would just sit in the tally until then.
* With a view bound of 1, timeouts and aborts are not explored: their only
  effect is to move parties to view 2, where they stop.

Single-view mode (view bound 1, the default properties, and thresholds
where two values cannot both reach n-f) adds a partial-order reduction.
Inside one view, deliveries to a party commute except for:

* a race between different values,
* the primary's choice among suggestions,
* the first proposal the Byzantine primary lands.

Different values can only race if two honest parties send different done
values.  That is checked on every state as ``unique_done``.  So each state
explores a single commuting step when one exists, and branches only over
the racing choices.  The search still reaches every terminal state, and
every checked property stays violated once violated.  In this mode a party
that decided keeps processing view messages.  That lets more happen than
in the protocol, never less, so a verdict of Verified carries over.
"""

from __future__ import annotations

import hashlib
import pickle
from dataclasses import dataclass, field
from typing import NamedTuple

from . import messages as m
from .messages import VOTE_KINDS, Kind, Message
from .protocol import (
    FIRST_VIEW,
    Delivered,
    LocalViewAdvance,
    Mutation,
    PartyState,
    Send,
    init_party,
    primary_of,
    step,
)
from .quorum import Level, Threshold

PROPERTIES = (
    "agreement",
    "validity",
    "unique_done",
    "key_invariants",
    "ledger",
    "causality",
)
# support lemmas relate several parties' intermediate states; checking them
# turns the single-view reduction off
EXTRA_PROPERTIES = ("key_support", "lock_open_support")
FABRICATED = "X"


class Transition(NamedTuple):
    action: str  # deliver | timeout | inject
    party: int  # recipient, or the party timing out
    sender: int | None = None
    msg: Message | None = None

    def __str__(self) -> str:
        if self.action == "timeout":
            return f"timeout party {self.party}"
        verb = "inject" if self.action == "inject" else "deliver"
        return f"{verb} {self.msg!r} {self.sender}->{self.party}"


@dataclass(frozen=True)
class Verified:
    states: int
    transitions: int
    reduced: bool = False
    verdict: str = "verified"
    exit_code: int = 0


@dataclass(frozen=True)
class Counterexample:
    prop: str
    detail: str
    path: tuple
    states: int
    verdict: str = "counterexample"
    exit_code: int = 1

    def describe(self) -> str:
        steps = "\n".join(f"  {i + 1:3d}. {t}" for i, t in enumerate(self.path))
        return f"{self.prop}: {self.detail}\n{steps}"


@dataclass(frozen=True)
class Inconclusive:
    reason: str
    states: int
    transitions: int
    verdict: str = "inconclusive"
    exit_code: int = 3


# -- inertness ---------------------------------------------------------------


def is_inert(st: PartyState, sender: int, msg: Message, *, live: bool = False) -> bool:
    """True if delivering ``msg`` to ``st`` does nothing now and can never matter later.

    Every branch relies on a monotone field or a first-message rule.  With
    ``live`` a terminated party is judged as if it were still running.
    """
    if st.terminated and not live:
        return msg.kind is not Kind.RECOVER_QUERY
    kind = msg.kind
    if kind is Kind.REQUEST:
        return msg.view <= st.highest_request[sender]
    if kind is Kind.ABORT:
        return msg.view <= st.highest_abort[sender]
    if kind is Kind.DONE:
        led = st.ledger
        return led.fired.get(Kind.DONE) is Level.LARGE or sender in led.voters(Kind.DONE)
    if kind in (Kind.RECOVER_QUERY, Kind.RECOVER_REPLY):
        return False
    if msg.view < st.view:
        return True
    if msg.view > st.view:
        return False
    pv = st.pv
    if kind in VOTE_KINDS:
        return kind in st.ledger.fired or sender in st.ledger.voters(kind)
    if kind is Kind.SUGGEST:
        return pv.primary != st.id or pv.proposed or sender in pv.suggest_seen
    if kind is Kind.PROOF:
        return sender in pv.proof_seen
    if kind is Kind.PROPOSE:
        return sender != pv.primary or pv.propose_seen
    return False


def _useless_proof(st: PartyState) -> bool:
    """No proof delivered to ``st`` in its current view can open a lock any more."""
    pv = st.pv
    if pv.propose_seen:
        return pv.pending_propose is None
    # any lock taken later in this view equals the view, which no proof opens
    return st.lock == 0 or st.lock >= st.view


# -- the world ---------------------------------------------------------------


def _pending_key(item) -> tuple:
    s, t, msg = item
    return (s, t, int(msg.kind), -1 if msg.view is None else msg.view, repr(msg.payload))


class World:
    """Honest party states plus the multiset of in-flight honest messages."""

    __slots__ = ("parties", "keys", "pending")

    def __init__(self, parties, keys, pending):
        self.parties = parties  # pid -> PartyState (shared until written)
        self.keys = keys  # pid -> canonical state key
        self.pending = pending  # tuple of (sender, to, msg), canonically sorted

    def digest(self) -> bytes:
        body = (tuple(sorted(self.keys.items())), tuple(_pending_key(i) for i in self.pending))
        return hashlib.blake2b(pickle.dumps(body, protocol=4), digest_size=16).digest()


@dataclass
class _Ctx:
    n: int
    f: int
    honest: tuple
    byz: int | None
    limit: int  # parties at or beyond this view are frozen
    values: tuple
    inputs: tuple
    props: frozenset
    mutation: str | None
    first_view: int
    timeouts: bool
    reduce: bool  # single-view mode: partial-order reduction, decided parties keep running
    threshold: Threshold
    menu_cache: dict = field(default_factory=dict)


def _frozen(ctx: _Ctx, st: PartyState) -> bool:
    return st.view >= ctx.limit


def _halted(ctx: _Ctx, st: PartyState) -> bool:
    return _frozen(ctx, st) or (st.terminated and not ctx.reduce)


def _dead(ctx: _Ctx, st: PartyState, sender: int, msg: Message) -> bool:
    if _frozen(ctx, st) or is_inert(st, sender, msg, live=ctx.reduce):
        return True
    return msg.kind is Kind.PROOF and msg.view == st.view and _useless_proof(st)


def _step(ctx: _Ctx, st: PartyState, event) -> list:
    if st.terminated and ctx.reduce:
        st.terminated = False
        try:
            return step(st, event)
        finally:
            st.terminated = True
    return step(st, event)


def _state_key(ctx: _Ctx, st: PartyState) -> tuple:
    """State key up to behaviour: what no future step can read is left out."""
    if _halted(ctx, st):
        return (st.id, st.terminated, st.lock, st.lock_val, st.key3, st.key3_val, st.key2,
                st.key2_val, st.prev_key2, st.key1, st.key1_val, st.prev_key1,
                st.done_sent, st.decided)
    full = st.key()
    led = st.ledger
    if led.fired:
        # votes of a kind that fired for good are dropped from now on, so who cast them is moot
        votes = tuple(
            (int(k), () if led.fired.get(k) is Level.LARGE or (k is not Kind.DONE and k in led.fired)
             else tuple(sorted(v.items())))
            for k, v in sorted(led.voted.items())
        )
        full = full[:18] + ((votes, full[18][1]),) + full[19:]
    if _useless_proof(st) and (st.pv.proofs or st.pv.proof_seen):
        pv = full[19]
        full = full[:19] + (pv[:8] + ((), ()) + pv[10:],) + full[20:]
    return full


_MONOTONE = ("view", "key1", "key2", "key3", "lock", "prev_key1", "prev_key2")


def _flush(ctx: _Ctx, st: PartyState, todo: list, pending: list) -> None:
    """Deliver self-sends at once; queue sends to other honest parties."""
    p = st.id
    i = 0
    while i < len(todo):
        a = todo[i]
        i += 1
        if type(a) is not Send:
            continue
        if a.to == p:
            if not _frozen(ctx, st):
                todo.extend(_step(ctx, st, Delivered(p, a.msg)))
        elif a.to in ctx.honest:
            pending.append((p, a.to, a.msg))


def _run(ctx: _Ctx, world: World, p: int, event, drop: tuple | None):
    """Apply ``event`` to party ``p``; returns (new world, violation or None)."""
    old = world.parties[p]
    st = old.clone()
    pending = list(world.pending)
    if drop is not None:
        pending.remove(drop)
    known = len(pending)
    _flush(ctx, st, _step(ctx, st, event), pending)
    parties = dict(world.parties)
    parties[p] = st
    keys = dict(world.keys)
    keys[p] = _state_key(ctx, st)
    kept = [it for it in pending[:known] if it[1] != p or not _dead(ctx, st, it[0], it[2])]
    kept += [it for it in pending[known:] if not _dead(ctx, parties[it[1]], it[0], it[2])]
    kept.sort(key=_pending_key)
    new = World(parties, keys, tuple(kept))
    return new, _check_transition(ctx, old, st) or _check_world(ctx, new)


def _check_transition(ctx: _Ctx, old: PartyState, new: PartyState):
    if "key_invariants" not in ctx.props:
        return None
    for name in _MONOTONE:
        if getattr(new, name) < getattr(old, name):
            return ("key_invariants",
                    f"party {new.id}: {name} decreased {getattr(old, name)} -> {getattr(new, name)}")
    for j in range(1, ctx.n + 1):
        if new.highest_request[j] < old.highest_request[j] or new.highest_abort[j] < old.highest_abort[j]:
            return ("key_invariants", f"party {new.id}: high-water mark for {j} decreased")
    if old.done_sent is not None and new.done_sent != old.done_sent:
        return ("key_invariants", f"party {new.id}: done value changed")
    if old.decided is not None and new.decided != old.decided:
        return ("key_invariants", f"party {new.id}: decision changed")
    return None


_CAUSE = (
    (Kind.KEY1, Kind.ECHO, "key1_val"),
    (Kind.KEY2, Kind.KEY1, "key2_val"),
    (Kind.KEY3, Kind.KEY2, "key3_val"),
    (Kind.LOCK, Kind.KEY3, "lock_val"),
)


def _supports_key(q: PartyState, key: int, val) -> bool:
    return q.prev_key2 >= key or (q.key2 >= key and q.key2_val == val)


def _supports_open(q: PartyState, lock: int, lock_val) -> bool:
    return q.prev_key1 >= lock or (q.key1 >= lock and q.key1_val != lock_val)


def _check_world(ctx: _Ctx, w: World):
    props = ctx.props
    parties = [w.parties[p] for p in ctx.honest]
    if "agreement" in props:
        vals = {st.decided for st in parties if st.decided is not None}
        if len(vals) > 1:
            return ("agreement", f"honest parties decided {sorted(map(str, vals))}")
    if "validity" in props and ctx.byz is None and len(set(ctx.inputs)) == 1:
        for st in parties:
            if st.decided is not None and st.decided != ctx.inputs[0]:
                return ("validity", f"party {st.id} decided {st.decided!r}")
    if "unique_done" in props:
        vals = {st.done_sent for st in parties if st.done_sent is not None}
        if len(vals) > 1:
            return ("unique_done", f"honest parties sent done for {sorted(map(str, vals))}")
    if "key_invariants" in props:
        for st in parties:
            if not (st.prev_key1 < st.key1 and st.prev_key2 < st.key2):
                return ("key_invariants", f"party {st.id}: prev_key >= key")
            if st.decided is not None and st.decided != st.done_sent:
                return ("key_invariants", f"party {st.id}: decided without matching done")
    big = ctx.threshold.large
    if "ledger" in props:
        for st in parties:
            for kind, counts in st.ledger.support.items():
                if sum(c >= big for c in counts.values()) > 1:
                    return ("ledger", f"party {st.id}: two values reached {big} {kind.name.lower()} votes")
    if "causality" in props:
        quorum = ctx.n - ctx.f
        for st in parties:
            if _halted(ctx, st):
                continue
            kinds = st.pv.authored_kinds
            for sent, cause, attr in _CAUSE:
                if sent in kinds:
                    val = getattr(st, attr)
                    have = st.ledger.count(cause, val)
                    if have < quorum and not (cause in st.ledger.fired and have >= big):
                        return ("causality", f"party {st.id} sent {sent.name.lower()}({val!r}) in view "
                                f"{st.view} with {have} {cause.name.lower()} votes")
    small = ctx.f + 1
    if "key_support" in props:
        for st in parties:
            if st.key3 > 0:
                k = sum(_supports_key(q, st.key3, st.key3_val) for q in parties)
                if k < small:
                    return ("key_support", f"party {st.id} key3=({st.key3},{st.key3_val!r}) has {k} supporters")
    if "lock_open_support" in props:
        for st in parties:
            if st.lock <= 0:
                continue
            lock, lv = st.lock, st.lock_val
            if any(q.prev_key2 >= lock or (q.key2 >= lock and q.key2_val != lv) for q in parties):
                k = sum(_supports_open(q, lock, lv) for q in parties)
                if k < small:
                    return ("lock_open_support", f"lock ({lock},{lv!r}) of party {st.id} has {k} openers")
    return None


# -- the Byzantine menu ------------------------------------------------------


def byzantine_menu(ctx: _Ctx, st: PartyState) -> list[Message]:
    """Everything the Byzantine party may send ``st`` in its current view.

    This is the message grammar up to guard classes: keys are drawn from
    every well-formed pair below the view plus one ill-formed
    representative, and values from the honest inputs plus one fabricated
    value.
    """
    view = st.view
    primary = primary_of(view, ctx.n)
    role = (view, primary == st.id, primary == ctx.byz)
    cached = ctx.menu_cache.get(role)
    if cached is not None:
        return cached
    vals = ctx.values
    out: list[Message] = []
    if ctx.timeouts:
        out.extend(m.abort(v) for v in range(ctx.first_view, ctx.limit))
    out.extend(m.done(x) for x in vals)
    for kind in VOTE_KINDS:
        out.extend(m.vote(kind, x, view) for x in vals)
    pairs = [(k, pk) for k in range(0, view) for pk in range(-1, k)] + [(view, -1)]
    out.extend(m.proof(k, x, pk, view) for k, pk in pairs for x in vals)
    if role[1]:
        for k3 in range(0, view + 1):
            for k2, pk2 in pairs:
                for x3 in vals:
                    for x2 in vals:
                        out.append(m.suggest(k3, x3, k2, x2, pk2, view))
    if role[2]:
        out.extend(m.propose(k, x, view) for k in range(0, view + 1) for x in vals)
    ctx.menu_cache[role] = out
    return out


def _crosses(st: PartyState, kind: Kind, value) -> bool:
    """Would one more vote for ``value`` fire a threshold of ``kind``?"""
    led = st.ledger
    count = led.count(kind, value) + 1
    th = led.threshold
    if count >= th.large:
        return True
    return kind is Kind.DONE and kind not in led.fired and count >= th.small


def _worth_injecting(ctx: _Ctx, st: PartyState, msg: Message) -> bool:
    kind = msg.kind
    if is_inert(st, ctx.byz, msg, live=ctx.reduce):
        return False
    if kind in VOTE_KINDS or kind is Kind.DONE:
        return _crosses(st, kind, msg.payload[0])
    if kind is Kind.PROOF:
        return not _useless_proof(st)
    if kind is Kind.PROPOSE:
        # the key is only read when the lock is older than the view and holds another value
        return msg.payload[0] == 0 or 0 < st.lock < st.view
    return True


def _injections(ctx: _Ctx, st: PartyState) -> list:
    b = ctx.byz
    return [
        (Transition("inject", st.id, b, msg), (st.id, Delivered(b, msg), None))
        for msg in byzantine_menu(ctx, st)
        if _worth_injecting(ctx, st, msg)
    ]


# -- search ------------------------------------------------------------------


def _deliver(item):
    s, t, msg = item
    return Transition("deliver", t, s, msg), (t, Delivered(s, msg), item)


def _successors(ctx: _Ctx, w: World) -> list:
    for item in w.pending:
        if item[2].kind is Kind.REQUEST:
            return [_deliver(item)]
    if ctx.reduce:
        return _reduced_successors(ctx, w)
    out = [_deliver(item) for item in w.pending]
    for p in ctx.honest:
        st = w.parties[p]
        if _halted(ctx, st):
            continue
        if ctx.timeouts and st.highest_abort[p] < st.view and st.last_abort_sent < st.view:
            out.append((Transition("timeout", p), (p, LocalViewAdvance(), None)))
        if ctx.byz is not None:
            out.extend(_injections(ctx, st))
    return out


def _reduced_successors(ctx: _Ctx, w: World) -> list:
    """A persistent set: one commuting step if any, else one party's racing choices."""
    for item in w.pending:
        if item[2].kind is not Kind.SUGGEST:
            return [_deliver(item)]
    by_party = {}
    if ctx.byz is not None:
        for p in ctx.honest:
            inj = _injections(ctx, w.parties[p])
            for label, arg in inj:
                if label.msg.kind in VOTE_KINDS or label.msg.kind is Kind.DONE:
                    return [(label, arg)]
            by_party[p] = inj
    for p in ctx.honest:
        # racing choices at one party: the proposal it gets, or its suggestions as primary
        inj = by_party.get(p, [])
        proposals = [x for x in inj if x[0].msg.kind is Kind.PROPOSE]
        if proposals:
            return proposals
        suggestions = [_deliver(it) for it in w.pending if it[1] == p]
        suggestions += [x for x in inj if x[0].msg.kind is Kind.SUGGEST]
        if suggestions:
            return suggestions
    return [x for inj in by_party.values() for x in inj]


def initial_world(ctx: _Ctx) -> World:
    parties, keys = {}, {}
    pending: list = []
    for p in ctx.honest:
        st, actions = init_party(p, ctx.n, ctx.f, ctx.inputs[p - 1],
                                 mutation=ctx.mutation, first_view=ctx.first_view)
        if ctx.byz is not None:
            # the Byzantine party is taken to have joined every view
            st.highest_request[ctx.byz] = 1 << 30
            st.pv.joined[ctx.byz] = True
        _flush(ctx, st, actions, pending)
        parties[p] = st
        keys[p] = _state_key(ctx, st)
    pending = [it for it in pending if not _dead(ctx, parties[it[1]], it[0], it[2])]
    pending.sort(key=_pending_key)
    return World(parties, keys, tuple(pending))


def _context(n, f, view_bound, byzantine, inputs, mutation, properties, first_view, reduce) -> _Ctx:
    if n > 5:
        raise ValueError("explorer supports n <= 5")
    if view_bound < 1:
        raise ValueError("view_bound must be positive")
    if byzantine == "primary":
        byzantine = primary_of(first_view, n) if f > 0 else None
    if byzantine is not None and not (1 <= byzantine <= n and f > 0):
        raise ValueError("the Byzantine party needs an id in 1..n and f >= 1")
    if inputs is None:
        inputs = tuple("AB"[i % 2] for i in range(n))
    inputs = tuple(inputs)
    if len(inputs) != n:
        raise ValueError(f"need {n} inputs")
    props = frozenset(properties)
    unknown = props - set(PROPERTIES) - set(EXTRA_PROPERTIES)
    if unknown:
        raise ValueError(f"unknown properties {sorted(unknown)}")
    honest = tuple(p for p in range(1, n + 1) if p != byzantine)
    values = tuple(sorted(set(inputs[p - 1] for p in honest))) + (FABRICATED,)
    threshold = Threshold.for_system(n, f, lowered=mutation == Mutation.LOWERED_QUORUM)
    single_view = view_bound == 1
    reduce = (
        reduce
        and single_view
        and 2 * threshold.large > n  # no two values can both reach a quorum
        and "unique_done" in props
        and not props & set(EXTRA_PROPERTIES)
    )
    return _Ctx(n, f, honest, byzantine, first_view + view_bound, values, inputs, props,
                mutation, first_view, not single_view, reduce, threshold)


def _search(ctx: _Ctx, depth_bound: int, max_states: int | None, visit=None):
    if depth_bound < 1:
        raise ValueError("depth_bound must be positive")
    root = initial_world(ctx)
    bad = _check_world(ctx, root)
    if bad:
        return Counterexample(bad[0], bad[1], (), 1)
    if visit:
        visit(root)
    visited = {root.digest()}
    path: list[Transition] = []
    stack = [iter(_successors(ctx, root))]
    worlds = [root]
    transitions = 0
    cut = False
    while stack:
        nxt = next(stack[-1], None)
        if nxt is None:
            stack.pop()
            worlds.pop()
            if path:
                path.pop()
            continue
        label, (p, event, drop) = nxt
        transitions += 1
        w, bad = _run(ctx, worlds[-1], p, event, drop)
        if bad:
            return Counterexample(bad[0], bad[1], tuple(path) + (label,), len(visited))
        d = w.digest()
        if d in visited:
            continue
        # a depth cut makes the verdict inconclusive anyway, so first visits suffice
        visited.add(d)
        if visit:
            visit(w)
        if max_states is not None and len(visited) > max_states:
            return Inconclusive(f"state bound {max_states} reached", len(visited), transitions)
        succ = _successors(ctx, w)
        if not succ:
            continue
        if len(path) + 1 >= depth_bound:
            cut = True
            continue
        path.append(label)
        worlds.append(w)
        stack.append(iter(succ))
    if cut:
        return Inconclusive(f"depth bound {depth_bound} reached", len(visited), transitions)
    return Verified(len(visited), transitions, ctx.reduce)


def explore(
    n: int = 4,
    f: int = 1,
    view_bound: int = 1,
    depth_bound: int = 10_000,
    *,
    byzantine: int | None | str = "primary",
    inputs=None,
    mutation: str | None = None,
    properties=PROPERTIES,
    max_states: int | None = None,
    first_view: int = FIRST_VIEW,
    reduce: bool = True,
):
    """Depth-first search over every schedule up to the bounds.

    ``byzantine`` is a party id, ``None`` for an honest-only system, or
    ``"primary"`` for the primary of the first view.  ``reduce=False``
    turns the single-view reduction off.  Returns Verified, Counterexample,
    or Inconclusive (a bound cut the search short).
    """
    ctx = _context(n, f, view_bound, byzantine, inputs, mutation, properties, first_view, reduce)
    return _search(ctx, depth_bound, max_states)


def reachable_facts(n: int, f: int, view_bound: int = 1, *, byzantine=None, inputs=None,
                    reduce: bool = True, max_states: int | None = None) -> set:
    """Stable per-party facts seen on explored states, with no property checked.

    A fact is ``(party, field, value)`` for the decision, the done value and
    each key or lock once set.  Each of these only ever moves forward, so a
    sound reduction must reach every fact the full search reaches.
    """
    ctx = _context(n, f, view_bound, byzantine, inputs, None, (), FIRST_VIEW, False)
    if reduce:
        # the reduction relies on unique_done, so check that one alone
        ctx = _context(n, f, view_bound, byzantine, inputs, None, ("unique_done",), FIRST_VIEW, True)
    facts: set = set()

    def visit(w: World) -> None:
        for p in ctx.honest:
            st = w.parties[p]
            facts.add((p, "decided", st.decided))
            facts.add((p, "done", st.done_sent))
            for name in ("key1", "key2", "key3", "lock"):
                k = getattr(st, name)
                if k > 0:
                    facts.add((p, name, (k, getattr(st, name + "_val"))))

    verdict = _search(ctx, 10_000, max_states, visit)
    if not isinstance(verdict, Verified):
        raise RuntimeError(f"search did not complete: {verdict}")
    return facts
