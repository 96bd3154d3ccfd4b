"""IT-HS party logic as a deterministic state machine.

Feed a party events (deliveries, timer expiries) and it returns actions
(sends, decisions, timer requests, persistence hints).  Nothing here reads a
clock or touches a network.  Blocking "wait until" clauses of the pseudocode
are pending conditions re-checked whenever the state they depend on grows.

Two entry styles are offered:

* ``handle_event(state, event)`` and the per-operation wrappers are pure:
  the input state is never modified; a fresh state is returned.
* ``step(state, event)`` mutates ``state`` in place and returns the actions.
  The simulator and explorer use it to avoid a copy per event.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Union

from . import messages as m
from .messages import NEXT_VOTE, VIEWLESS_HANDLING, VOTE_KINDS, Kind, Message, Value
from .quorum import Level, Threshold, VoteLedger

FIRST_VIEW = 1
TIMEOUT_DELTAS = 11


class ConfigurationError(ValueError):
    pass


class Mutation:
    """Deliberately broken protocol variants, used to show the checkers can fail."""

    LOWERED_QUORUM = "lowered_quorum"
    SKIP_KEY3 = "skip_key3"
    ALL = (LOWERED_QUORUM, SKIP_KEY3)


@dataclass(frozen=True)
class Params:
    n: int
    f: int
    mutation: str | None = None
    first_view: int = FIRST_VIEW

    def __post_init__(self):
        if self.f < 0 or self.n <= 3 * self.f:
            raise ConfigurationError(f"need n > 3f, got n={self.n}, f={self.f}")
        if self.mutation is not None and self.mutation not in Mutation.ALL:
            raise ConfigurationError(f"unknown mutation {self.mutation!r}")

    @property
    def threshold(self) -> Threshold:
        return Threshold.for_system(
            self.n, self.f, lowered=self.mutation == Mutation.LOWERED_QUORUM
        )


def primary_of(view: int, n: int) -> int:
    return (view % n) + 1


# -- events ------------------------------------------------------------------


class Delivered(NamedTuple):
    sender: int
    msg: Message


class ViewTimerFired(NamedTuple):
    view: int


class LocalViewAdvance(NamedTuple):
    """Untimed timeout of whatever view the party is in (explorer transition)."""


Event = Union[Delivered, ViewTimerFired, LocalViewAdvance]


# -- actions -----------------------------------------------------------------


class Send(NamedTuple):
    to: int
    msg: Message


class Decide(NamedTuple):
    value: Value


class SetViewTimer(NamedTuple):
    view: int


class PersistHint(NamedTuple):
    field: str


class Terminate(NamedTuple):
    pass


Action = Union[Send, Decide, SetViewTimer, PersistHint, Terminate]


# -- state -------------------------------------------------------------------


class PerViewState:
    """Transient bookkeeping of one view; dropped wholesale on view change."""

    __slots__ = (
        "cur_view",
        "primary",
        "authored",
        "authored_kinds",
        "joined",
        "suggestions",
        "key2_proofs",
        "pending_suggest",
        "suggest_seen",
        "proposed",
        "proofs",
        "proof_seen",
        "propose_seen",
        "pending_propose",
    )

    def __init__(self, cur_view: int, n: int):
        self.cur_view = cur_view
        self.primary = primary_of(cur_view, n)
        # (message, recipient or None for everyone), in authoring order
        self.authored: list[tuple[Message, int | None]] = []
        self.authored_kinds: set[Kind] = set()
        self.joined = [False] * (n + 1)
        self.suggestions: list[tuple[int, Value, int]] = []
        self.key2_proofs: dict[int, tuple] = {}
        self.pending_suggest: dict[int, tuple] = {}
        self.suggest_seen: set[int] = set()
        self.proposed = False
        self.proofs: dict[int, tuple] = {}
        self.proof_seen: set[int] = set()
        self.propose_seen = False
        self.pending_propose: tuple | None = None

    def clone(self) -> "PerViewState":
        c = PerViewState.__new__(PerViewState)
        c.cur_view = self.cur_view
        c.primary = self.primary
        c.authored = list(self.authored)
        c.authored_kinds = set(self.authored_kinds)
        c.joined = list(self.joined)
        c.suggestions = list(self.suggestions)
        c.key2_proofs = dict(self.key2_proofs)
        c.pending_suggest = dict(self.pending_suggest)
        c.suggest_seen = set(self.suggest_seen)
        c.proposed = self.proposed
        c.proofs = dict(self.proofs)
        c.proof_seen = set(self.proof_seen)
        c.propose_seen = self.propose_seen
        c.pending_propose = self.pending_propose
        return c

    def key(self) -> tuple:
        return (
            self.cur_view,
            tuple(self.authored),
            tuple(self.joined),
            tuple(self.suggestions),
            tuple(sorted(self.key2_proofs.items())),
            tuple(sorted(self.pending_suggest.items())),
            tuple(sorted(self.suggest_seen)),
            self.proposed,
            tuple(sorted(self.proofs.items())),
            tuple(sorted(self.proof_seen)),
            self.propose_seen,
            self.pending_propose,
        )

    def words(self) -> int:
        return (
            4
            + sum(len(msg) + 1 for msg, _ in self.authored)
            + len(self.joined)
            + 3 * len(self.suggestions)
            + 4 * len(self.key2_proofs)
            + 3 * len(self.pending_suggest)
            + len(self.suggest_seen)
            + 4 * len(self.proofs)
            + len(self.proof_seen)
            + 2
        )


class PartyState:
    __slots__ = (
        "params",
        "id",
        "input",
        "view",
        "lock",
        "lock_val",
        "key3",
        "key3_val",
        "key2",
        "key2_val",
        "prev_key2",
        "key1",
        "key1_val",
        "prev_key1",
        "highest_request",
        "highest_abort",
        "last_abort_sent",
        "done_sent",
        "decided",
        "terminated",
        "ledger",
        "pv",
        "awaiting_reply",
    )

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def f(self) -> int:
        return self.params.f

    @property
    def per_view(self) -> PerViewState:
        return self.pv

    def clone(self) -> "PartyState":
        c = PartyState.__new__(PartyState)
        for name in PartyState.__slots__:
            setattr(c, name, getattr(self, name))
        c.highest_request = list(self.highest_request)
        c.highest_abort = list(self.highest_abort)
        c.ledger = self.ledger.clone()
        c.pv = self.pv.clone()
        return c

    def key(self) -> tuple:
        """Hashable snapshot of the complete state."""
        return (
            self.id,
            self.view,
            self.lock,
            self.lock_val,
            self.key3,
            self.key3_val,
            self.key2,
            self.key2_val,
            self.prev_key2,
            self.key1,
            self.key1_val,
            self.prev_key1,
            tuple(self.highest_request),
            tuple(self.highest_abort),
            self.last_abort_sent,
            self.done_sent,
            self.decided,
            self.terminated,
            self.ledger.key(),
            self.pv.key(),
            tuple(sorted(self.awaiting_reply)),
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, PartyState) and self.key() == other.key()

    def __repr__(self) -> str:
        return (
            f"PartyState(id={self.id}, view={self.view}, lock=({self.lock},{self.lock_val!r}), "
            f"key3=({self.key3},{self.key3_val!r}), "
            f"key2=({self.key2},{self.key2_val!r},{self.prev_key2}), "
            f"key1=({self.key1},{self.key1_val!r},{self.prev_key1}), "
            f"done_sent={self.done_sent!r}, decided={self.decided!r})"
        )


def transient_words(state: PartyState) -> int:
    """Words of memory that a reboot may lose (two length-n arrays, ledger, per-view)."""
    return (
        len(state.highest_request)
        + len(state.highest_abort)
        + state.ledger.words()
        + state.pv.words()
        + len(state.awaiting_reply)
    )


# -- pure helpers ------------------------------------------------------------


def accept_key(key: int, value: Value, proofs: Iterable[tuple], f: int) -> bool:
    """True iff at least f+1 (k, v, pk) triples vouch that (key, value) is safe."""
    supporting = 0
    for k, v, pk in proofs:
        if key <= pk:
            supporting += 1
        elif key <= k and value == v:
            supporting += 1
    return supporting >= f + 1


def open_lock(lock: int, lock_val: Value, proofs: Iterable[tuple], f: int) -> bool:
    """True iff at least f+1 (k, v, pk) triples show another value moved past the lock."""
    supporting = 0
    for k, v, pk in proofs:
        if lock <= pk:
            supporting += 1
        elif lock <= k and v != lock_val:
            supporting += 1
    return supporting >= f + 1


def select_proposal(suggestions: Iterable[tuple]) -> tuple[int, Value]:
    """Pick a maximal-key suggestion; ties go to the lowest sender index.

    ``suggestions`` holds ``(key, val, sender)`` triples.
    """
    best = None
    for key, val, sender in suggestions:
        if best is None or key > best[0] or (key == best[0] and sender < best[2]):
            best = (key, val, sender)
    if best is None:
        raise ValueError("no suggestions")
    return best[0], best[1]


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def well_formed(sender: int, msg, n: int) -> bool:
    """Structural validity of an incoming message; malformed input is dropped."""
    if not _is_int(sender) or not 1 <= sender <= n:
        return False
    if not isinstance(msg, Message):
        return False
    try:
        m.encode(msg)
    except (m.EncodingError, ValueError, TypeError):
        return False
    kind, p = msg.kind, msg.payload
    if msg.view is not None and not _is_int(msg.view):
        return False
    if kind is Kind.SUGGEST:
        return _is_int(p[0]) and _is_int(p[2]) and _is_int(p[4])
    if kind is Kind.PROOF:
        return _is_int(p[0]) and _is_int(p[2])
    if kind is Kind.PROPOSE:
        return _is_int(p[0])
    if kind is Kind.RECOVER_REPLY:
        return _is_int(p[0]) and _is_int(p[1])
    return True


# -- in-place handlers -------------------------------------------------------


def _broadcast(st: PartyState, msg: Message, out: list) -> None:
    for j in range(1, st.params.n + 1):
        out.append(Send(j, msg))


def _author(st: PartyState, msg: Message, out: list, to: int | None = None) -> None:
    """Record a current-view message and send it to every joined recipient.

    Recipients that have not yet announced this view get it when their
    request arrives.
    """
    pv = st.pv
    pv.authored.append((msg, to))
    pv.authored_kinds.add(msg.kind)
    out.append(PersistHint("sent"))
    joined = pv.joined
    if to is None:
        for j in range(1, st.params.n + 1):
            if joined[j]:
                out.append(Send(j, msg))
    elif joined[to]:
        out.append(Send(to, msg))


def _join(st: PartyState, j: int, out: list) -> None:
    pv = st.pv
    if pv.joined[j] or st.highest_request[j] < pv.cur_view:
        return
    pv.joined[j] = True
    for msg, to in pv.authored:
        if to is None or to == j:
            out.append(Send(j, msg))


def _start_view(st: PartyState, v: int, out: list) -> None:
    n = st.params.n
    st.view = v
    st.ledger.reset_for_view()
    st.pv = pv = PerViewState(v, n)
    out.append(PersistHint("view"))
    _broadcast(st, m.request(v), out)
    out.append(SetViewTimer(v))
    _author(st, m.suggest(st.key3, st.key3_val, st.key2, st.key2_val, st.prev_key2, v), out, pv.primary)
    _author(st, m.proof(st.key1, st.key1_val, st.prev_key1, v), out)
    for j in range(1, n + 1):
        _join(st, j, out)


def _handle_request(st: PartyState, sender: int, v: int, out: list) -> None:
    if v > st.highest_request[sender]:
        st.highest_request[sender] = v
        _join(st, sender, out)


def _send_done(st: PartyState, val: Value, out: list) -> None:
    st.done_sent = val
    out.append(PersistHint("done"))
    _broadcast(st, m.done(val), out)


def _handle_done(st: PartyState, sender: int, val: Value, out: list) -> None:
    ev = st.ledger.record_vote(Kind.DONE, sender, val)
    if ev is None:
        return
    if st.done_sent is None:
        _send_done(st, ev.value, out)
    if ev.level is Level.LARGE:
        st.decided = ev.value
        st.terminated = True
        out.append(PersistHint("decided"))
        out.append(Decide(ev.value))
        out.append(Terminate())


def _kth_largest(values: list[int], k: int) -> int:
    return sorted(values, reverse=True)[k - 1]


def _handle_abort(st: PartyState, sender: int, v: int, out: list) -> None:
    ha = st.highest_abort
    if v <= ha[sender]:
        return
    ha[sender] = v
    n, f = st.params.n, st.params.f
    entries = ha[1:]
    u = _kth_largest(entries, f + 1)
    # an abort >= u already sent (our own copy may still be in flight) covers it
    if u > ha[st.id] and u > st.last_abort_sent:
        ha[st.id] = u
        st.last_abort_sent = u
        out.append(PersistHint("abort"))
        _broadcast(st, m.abort(u), out)
        entries = ha[1:]
    w = _kth_largest(entries, n - f)
    if w >= st.view:
        _start_view(st, w + 1, out)


def _on_view_timeout(st: PartyState, v: int, out: list) -> None:
    if st.view != v:
        return
    if st.awaiting_reply:
        # queries to peers that were down at the time were lost; ask again
        for j in sorted(st.awaiting_reply):
            out.append(Send(j, m.recover_query(v)))
        out.append(SetViewTimer(v))
    # an abort for this view (or later) already went out; a repeat adds nothing
    if st.highest_abort[st.id] >= v or st.last_abort_sent >= v:
        return
    st.last_abort_sent = v
    out.append(PersistHint("abort"))
    _broadcast(st, m.abort(v), out)


def _accept_pending_suggestions(st: PartyState, out: list) -> None:
    pv = st.pv
    if pv.proposed:
        return
    f = st.params.f
    if pv.pending_suggest:
        proofs = pv.key2_proofs.values()
        for s in sorted(pv.pending_suggest):
            k3, v3 = pv.pending_suggest[s]
            if accept_key(k3, v3, proofs, f):
                del pv.pending_suggest[s]
                pv.suggestions.append((k3, v3, s))
    if len(pv.suggestions) >= st.params.threshold.large:
        key, val = select_proposal(pv.suggestions)
        pv.proposed = True
        pv.pending_suggest.clear()
        _author(st, m.propose(key, val, pv.cur_view), out)


def _handle_suggest(st: PartyState, sender: int, msg: Message, out: list) -> None:
    pv = st.pv
    if pv.primary != st.id or pv.proposed or sender in pv.suggest_seen:
        return
    pv.suggest_seen.add(sender)
    k3, v3, k2, v2, pk2 = msg.payload
    view = pv.cur_view
    if pk2 < k2 < view:
        pv.key2_proofs[sender] = (k2, v2, pk2)
    if k3 == 0:
        pv.suggestions.append((k3, v3, sender))
    elif 0 < k3 < view:
        pv.pending_suggest[sender] = (k3, v3)
    _accept_pending_suggestions(st, out)


def _echo(st: PartyState, val: Value, out: list) -> None:
    if Kind.ECHO not in st.pv.authored_kinds:
        _author(st, m.vote(Kind.ECHO, val, st.pv.cur_view), out)


def _try_open_lock(st: PartyState, out: list) -> None:
    pv = st.pv
    if pv.pending_propose is None:
        return
    if open_lock(st.lock, st.lock_val, pv.proofs.values(), st.params.f):
        val = pv.pending_propose[1]
        pv.pending_propose = None
        _echo(st, val, out)


def _handle_proof(st: PartyState, sender: int, msg: Message, out: list) -> None:
    pv = st.pv
    if sender in pv.proof_seen:
        return
    pv.proof_seen.add(sender)
    k1, v1, pk1 = msg.payload
    if pv.cur_view > k1 > pk1:
        pv.proofs[sender] = (k1, v1, pk1)
        _try_open_lock(st, out)


def _handle_propose(st: PartyState, sender: int, msg: Message, out: list) -> None:
    pv = st.pv
    if sender != pv.primary or pv.propose_seen:
        return
    pv.propose_seen = True
    key, val = msg.payload
    if st.lock == 0 or val == st.lock_val:
        _echo(st, val, out)
    elif pv.cur_view > key >= st.lock:
        pv.pending_propose = (key, val)
        _try_open_lock(st, out)


def _advance(st: PartyState, kind: Kind, val: Value, out: list) -> None:
    """React to n-f same-value votes of ``kind`` in the current view."""
    view = st.pv.cur_view
    nxt = NEXT_VOTE[kind]
    if nxt is Kind.KEY3 and st.params.mutation == Mutation.SKIP_KEY3:
        nxt = Kind.LOCK
    if nxt is Kind.DONE:
        if st.done_sent is None:
            _send_done(st, val, out)
        return
    if nxt in st.pv.authored_kinds:
        return
    # persistent fields change before the message revealing them is released
    if nxt is Kind.KEY1:
        if st.key1_val != val:
            st.prev_key1 = st.key1
            st.key1_val = val
        st.key1 = view
        out.append(PersistHint("key1"))
    elif nxt is Kind.KEY2:
        if st.key2_val != val:
            st.prev_key2 = st.key2
            st.key2_val = val
        st.key2 = view
        out.append(PersistHint("key2"))
    elif nxt is Kind.KEY3:
        st.key3 = view
        st.key3_val = val
        out.append(PersistHint("key3"))
    elif nxt is Kind.LOCK:
        st.lock = view
        st.lock_val = val
        out.append(PersistHint("lock"))
    _author(st, m.vote(nxt, val, view), out)


def _handle_vote(st: PartyState, sender: int, msg: Message, out: list) -> None:
    ev = st.ledger.record_vote(msg.kind, sender, msg.payload[0])
    if ev is not None:
        _advance(st, msg.kind, ev.value, out)


_VIEW_HANDLERS = {
    Kind.SUGGEST: _handle_suggest,
    Kind.PROOF: _handle_proof,
    Kind.PROPOSE: _handle_propose,
}
for _k in VOTE_KINDS:
    _VIEW_HANDLERS[_k] = _handle_vote


def _deliver(st: PartyState, sender: int, msg: Message, out: list) -> None:
    kind = msg.kind
    if kind is Kind.RECOVER_QUERY:
        from .persistence import answer_recover_query

        answer_recover_query(st, sender, msg.view, out)
        return
    if st.terminated:
        return
    if kind in VIEWLESS_HANDLING:
        if kind is Kind.REQUEST:
            _handle_request(st, sender, msg.view, out)
        elif kind is Kind.ABORT:
            _handle_abort(st, sender, msg.view, out)
        elif kind is Kind.DONE:
            _handle_done(st, sender, msg.payload[0], out)
        else:
            if sender in st.awaiting_reply:
                st.awaiting_reply = st.awaiting_reply - {sender}
            req_view, abort_view = msg.payload[0], msg.payload[1]
            _handle_request(st, sender, req_view, out)
            _handle_abort(st, sender, abort_view, out)
            if len(msg.payload) == 3 and not st.terminated:
                _handle_done(st, sender, msg.payload[2], out)
        return
    if msg.view != st.view:
        return
    _VIEW_HANDLERS[kind](st, sender, msg, out)


def step(state: PartyState, event: Event) -> list:
    """Apply ``event`` to ``state`` in place; return the emitted actions."""
    out: list = []
    if type(event) is Delivered:
        if well_formed(event.sender, event.msg, state.params.n):
            _deliver(state, event.sender, event.msg, out)
    elif type(event) is ViewTimerFired:
        if not state.terminated:
            _on_view_timeout(state, event.view, out)
    elif type(event) is LocalViewAdvance:
        if not state.terminated:
            _on_view_timeout(state, state.view, out)
    else:
        raise TypeError(f"unknown event {event!r}")
    return out


# -- pure API ----------------------------------------------------------------


def new_state(pid: int, params: Params, value: Value) -> PartyState:
    """A party as it stands before its first view starts."""
    if not 1 <= pid <= params.n:
        raise ConfigurationError(f"party id {pid} outside 1..{params.n}")
    st = PartyState.__new__(PartyState)
    st.params = params
    st.id = pid
    st.input = value
    st.view = params.first_view - 1
    st.lock, st.lock_val = 0, value
    st.key3, st.key3_val = 0, value
    st.key2, st.key2_val, st.prev_key2 = 0, value, -1
    st.key1, st.key1_val, st.prev_key1 = 0, value, -1
    st.highest_request = [0] * (params.n + 1)
    st.highest_abort = [0] * (params.n + 1)
    st.last_abort_sent = 0
    st.done_sent = None
    st.decided = None
    st.terminated = False
    st.ledger = VoteLedger(params.threshold)
    st.pv = PerViewState(st.view, params.n)
    st.awaiting_reply = frozenset()
    return st


def init_party(
    pid: int, n: int, f: int, value: Value, *, mutation: str | None = None,
    first_view: int = FIRST_VIEW,
) -> tuple[PartyState, list]:
    params = Params(n, f, mutation, first_view)
    st = new_state(pid, params, value)
    out: list = []
    _start_view(st, params.first_view, out)
    return st, out


def handle_event(state: PartyState, event: Event) -> tuple[PartyState, list]:
    st = state.clone()
    return st, step(st, event)


def _pure(fn):
    def wrapper(state: PartyState, *args):
        st = state.clone()
        out: list = []
        fn(st, *args, out)
        return st, out

    wrapper.__name__ = fn.__name__.lstrip("_")
    wrapper.__doc__ = fn.__doc__
    return wrapper


start_view = _pure(_start_view)
handle_request = _pure(_handle_request)
handle_abort = _pure(_handle_abort)
handle_done = _pure(_handle_done)
on_view_timeout = _pure(_on_view_timeout)


def handle_suggest(state, sender, k3, v3, k2, v2, pk2):
    return handle_event(state, Delivered(sender, m.suggest(k3, v3, k2, v2, pk2, state.view)))


def handle_proof(state, sender, k1, v1, pk1):
    return handle_event(state, Delivered(sender, m.proof(k1, v1, pk1, state.view)))


def handle_propose(state, sender, key, val):
    return handle_event(state, Delivered(sender, m.propose(key, val, state.view)))


def handle_vote(state, sender, kind: Kind, val):
    return handle_event(state, Delivered(sender, m.vote(kind, val, state.view)))


def sends(actions: Iterable) -> list[Send]:
    return [a for a in actions if type(a) is Send]
