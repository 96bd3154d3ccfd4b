"""Protocol messages and their canonical word encoding.

Every message is a flat tuple of words: the kind tag, the view (omitted for
kinds that carry none), then the kind-specific payload.  A word is any int
or short str; the encoding never exceeds seven words.
"""

from __future__ import annotations

from enum import IntEnum
from typing import Hashable, NamedTuple

Value = Hashable

MAX_WORDS = 7
# one word holds up to 256 bits
MAX_VALUE_BYTES = 32


class Kind(IntEnum):
    REQUEST = 1
    SUGGEST = 2
    PROOF = 3
    PROPOSE = 4
    ECHO = 5
    KEY1 = 6
    KEY2 = 7
    KEY3 = 8
    LOCK = 9
    DONE = 10
    ABORT = 11
    RECOVER_QUERY = 12
    RECOVER_REPLY = 13


VOTE_KINDS = (Kind.ECHO, Kind.KEY1, Kind.KEY2, Kind.KEY3, Kind.LOCK)

# successor sent once n-f same-value votes of a kind are collected
NEXT_VOTE = {
    Kind.ECHO: Kind.KEY1,
    Kind.KEY1: Kind.KEY2,
    Kind.KEY2: Kind.KEY3,
    Kind.KEY3: Kind.LOCK,
    Kind.LOCK: Kind.DONE,
}

# kinds handled regardless of the receiver's current view
VIEWLESS_HANDLING = frozenset(
    {Kind.ABORT, Kind.DONE, Kind.REQUEST, Kind.RECOVER_QUERY, Kind.RECOVER_REPLY}
)

PAYLOAD_WIDTH = {
    Kind.REQUEST: 0,
    Kind.SUGGEST: 5,
    Kind.PROOF: 3,
    Kind.PROPOSE: 2,
    Kind.ECHO: 1,
    Kind.KEY1: 1,
    Kind.KEY2: 1,
    Kind.KEY3: 1,
    Kind.LOCK: 1,
    Kind.DONE: 1,
    Kind.ABORT: 0,
    Kind.RECOVER_QUERY: 0,
}

HAS_VIEW = frozenset(Kind) - {Kind.DONE, Kind.RECOVER_REPLY}


class EncodingError(ValueError):
    pass


class Message(NamedTuple):
    kind: Kind
    view: int | None
    payload: tuple = ()

    @property
    def value(self) -> Value | None:
        """The value a message speaks for, if any (used in traces)."""
        if self.kind in (Kind.REQUEST, Kind.ABORT, Kind.RECOVER_QUERY, Kind.RECOVER_REPLY):
            return None
        if self.kind is Kind.SUGGEST:
            return self.payload[1]
        if self.kind in (Kind.PROOF, Kind.PROPOSE):
            return self.payload[1]
        return self.payload[0]

    @property
    def words(self) -> int:
        return len(encode(self))

    def __repr__(self) -> str:
        parts = [self.kind.name.lower()]
        parts.extend(repr(p) for p in self.payload)
        if self.view is not None:
            parts.append(str(self.view))
        return "<" + ",".join(parts) + ">"


def request(view: int) -> Message:
    return Message(Kind.REQUEST, view)


def abort(view: int) -> Message:
    return Message(Kind.ABORT, view)


def done(val: Value) -> Message:
    return Message(Kind.DONE, None, (val,))


def vote(kind: Kind, val: Value, view: int) -> Message:
    return Message(kind, view, (val,))


def suggest(k3: int, v3: Value, k2: int, v2: Value, pk2: int, view: int) -> Message:
    return Message(Kind.SUGGEST, view, (k3, v3, k2, v2, pk2))


def proof(k1: int, v1: Value, pk1: int, view: int) -> Message:
    return Message(Kind.PROOF, view, (k1, v1, pk1))


def propose(key: int, val: Value, view: int) -> Message:
    return Message(Kind.PROPOSE, view, (key, val))


def recover_query(view: int) -> Message:
    return Message(Kind.RECOVER_QUERY, view)


def recover_reply(request_view: int, abort_view: int, done_val: Value | None) -> Message:
    if done_val is None:
        return Message(Kind.RECOVER_REPLY, None, (request_view, abort_view))
    return Message(Kind.RECOVER_REPLY, None, (request_view, abort_view, done_val))


def _check_word(w) -> None:
    if isinstance(w, int) and not isinstance(w, bool):
        if not -(2**255) <= w < 2**255:
            raise EncodingError(f"integer word out of range: {w}")
    elif isinstance(w, str):
        if len(w.encode()) > MAX_VALUE_BYTES:
            raise EncodingError(f"value too wide for one word: {w!r}")
    else:
        raise EncodingError(f"unsupported word type {type(w).__name__}")


def encode(msg: Message) -> tuple:
    """Flatten ``msg`` into its canonical word tuple."""
    kind = Kind(msg.kind)
    if kind is Kind.RECOVER_REPLY:
        if len(msg.payload) not in (2, 3):
            raise EncodingError("recover reply carries 2 or 3 payload words")
    elif len(msg.payload) != PAYLOAD_WIDTH[kind]:
        raise EncodingError(f"{kind.name} expects {PAYLOAD_WIDTH[kind]} payload words")
    if (kind in HAS_VIEW) != (msg.view is not None):
        raise EncodingError(f"{kind.name} view presence mismatch")
    head = (int(kind),) if msg.view is None else (int(kind), msg.view)
    words = head + tuple(msg.payload)
    for w in words:
        _check_word(w)
    if len(words) > MAX_WORDS:
        raise EncodingError(f"{kind.name} encodes to {len(words)} words")
    return words


def decode(words) -> Message:
    if not words:
        raise EncodingError("empty word sequence")
    kind = Kind(words[0])
    if kind in HAS_VIEW:
        if len(words) < 2:
            raise EncodingError("missing view word")
        msg = Message(kind, words[1], tuple(words[2:]))
    else:
        msg = Message(kind, None, tuple(words[1:]))
    encode(msg)
    return msg


def word_count(kind: Kind) -> int:
    """Fixed encoded width of a kind (recover replies: the with-done width)."""
    if kind is Kind.RECOVER_REPLY:
        return 4
    return 1 + (kind in HAS_VIEW) + PAYLOAD_WIDTH[kind]
