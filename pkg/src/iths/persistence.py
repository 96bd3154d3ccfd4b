"""Crash-surviving state, reboot, and the recovery handshake.

Only a constant number of fields survive a crash: the view, the lock and key
families, the last abort/done sent, the decision, and the handful of
messages authored in the current view.  Everything indexed by party
(request/abort high-water marks, vote ledgers, suggestions, proofs) is
transient and is rebuilt from peers' replies after a reboot.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from . import messages as m
from .messages import Kind, Message, Value
from .protocol import (
    FIRST_VIEW,
    Params,
    PartyState,
    PerViewState,
    Send,
    SetViewTimer,
    new_state,
)

IMAGE_TAG = 0x1A
# one slot per message kind a party can author in a view (request is implied by view)
SENT_SLOTS = (
    Kind.SUGGEST,
    Kind.PROOF,
    Kind.PROPOSE,
    Kind.ECHO,
    Kind.KEY1,
    Kind.KEY2,
    Kind.KEY3,
    Kind.LOCK,
)
_SCALARS = (
    "id", "view", "lock", "lock_val", "key3", "key3_val", "key2", "key2_val",
    "prev_key2", "key1", "key1_val", "prev_key1", "last_abort_sent",
)


@dataclass(frozen=True)
class PersistentImage:
    id: int
    view: int
    lock: int
    lock_val: Value
    key3: int
    key3_val: Value
    key2: int
    key2_val: Value
    prev_key2: int
    key1: int
    key1_val: Value
    prev_key1: int
    last_abort_sent: int
    done_sent: Value | None
    decided: Value | None
    sent: tuple  # ((Message, recipient or None), ...) authored in `view`

    def last_request(self) -> Message:
        return m.request(self.view)

    def last_abort(self) -> Message | None:
        return m.abort(self.last_abort_sent) if self.last_abort_sent > 0 else None

    def last_done(self) -> Message | None:
        return None if self.done_sent is None else m.done(self.done_sent)


def snapshot(state: PartyState) -> PersistentImage:
    return PersistentImage(
        id=state.id,
        view=state.view,
        lock=state.lock,
        lock_val=state.lock_val,
        key3=state.key3,
        key3_val=state.key3_val,
        key2=state.key2,
        key2_val=state.key2_val,
        prev_key2=state.prev_key2,
        key1=state.key1,
        key1_val=state.key1_val,
        prev_key1=state.prev_key1,
        last_abort_sent=state.last_abort_sent,
        done_sent=state.done_sent,
        decided=state.decided,
        sent=tuple(state.pv.authored),
    )


def image_words(image: PersistentImage) -> list:
    """Fixed-layout word encoding; its length does not depend on n or the view."""
    words: list = [IMAGE_TAG]
    words.extend(getattr(image, name) for name in _SCALARS)
    for opt in (image.done_sent, image.decided):
        words.extend((0, 0) if opt is None else (1, opt))
    by_kind = {msg.kind: (msg, to) for msg, to in image.sent}
    for kind in SENT_SLOTS:
        width = m.word_count(kind)
        if kind in by_kind:
            msg, to = by_kind[kind]
            words.extend((1, 0 if to is None else to))
            words.extend(m.encode(msg))
        else:
            words.extend((0, 0))
            words.extend([0] * width)
    return words


def image_from_words(words) -> PersistentImage:
    words = list(words)
    if not words or words[0] != IMAGE_TAG:
        raise ValueError("not a persistent image")
    pos = 1
    fields = {}
    for name in _SCALARS:
        fields[name] = words[pos]
        pos += 1
    for name in ("done_sent", "decided"):
        flag, val = words[pos], words[pos + 1]
        fields[name] = val if flag else None
        pos += 2
    sent = []
    for kind in SENT_SLOTS:
        width = m.word_count(kind)
        flag, to = words[pos], words[pos + 1]
        body = words[pos + 2 : pos + 2 + width]
        pos += 2 + width
        if flag:
            sent.append((m.decode(tuple(body)), to or None))
    return PersistentImage(sent=tuple(sent), **fields)


def image_size(image: PersistentImage) -> int:
    return len(image_words(image))


def dumps(image: PersistentImage) -> str:
    return json.dumps(image_words(image), separators=(",", ":"))


def loads(text: str) -> PersistentImage:
    return image_from_words(json.loads(text))


def restore(image: PersistentImage, params: Params) -> PartyState:
    """Rebuild a party from its image; all transient fields take defaults."""
    st = new_state(image.id, params, image.lock_val)
    st.input = None
    for name in _SCALARS:
        setattr(st, name, getattr(image, name))
    st.done_sent = image.done_sent
    st.decided = image.decided
    st.terminated = image.decided is not None
    st.highest_abort[st.id] = image.last_abort_sent
    if image.done_sent is not None:
        # our own done counts toward our quorum; the tally itself was transient
        st.ledger.record_vote(Kind.DONE, st.id, image.done_sent)
    pv = PerViewState(image.view, params.n)
    for msg, to in image.sent:
        pv.authored.append((msg, to))
        pv.authored_kinds.add(msg.kind)
    st.pv = pv
    return st


def reboot(
    image: PersistentImage, n: int, f: int, *, mutation: str | None = None,
    first_view: int = FIRST_VIEW,
) -> tuple[PartyState, list]:
    """Restart from ``image``: ask peers for their last messages and rejoin the view."""
    params = Params(n, f, mutation, first_view)
    st = restore(image, params)
    out: list = []
    if st.terminated:
        return st, out
    others = [j for j in range(1, n + 1) if j != st.id]
    st.awaiting_reply = frozenset(others)
    for j in others:
        out.append(Send(j, m.recover_query(st.view)))
    for j in range(1, n + 1):
        out.append(Send(j, m.request(st.view)))
    out.append(SetViewTimer(st.view))
    return st, out


def answer_recover_query(state: PartyState, requester: int, asked_view: int, out: list) -> None:
    out.append(
        Send(requester, m.recover_reply(state.view, state.last_abort_sent, state.done_sent))
    )
    if state.view == asked_view:
        for msg, to in state.pv.authored:
            if to is None or to == requester:
                out.append(Send(requester, msg))


def handle_recover_query(state: PartyState, requester: int, asked_view: int) -> list:
    """Reply with the last done/request/abort, plus current-view resends if views match."""
    out: list = []
    answer_recover_query(state, requester, asked_view, out)
    return out


def image_as_dict(image: PersistentImage) -> dict:
    d = asdict(image)
    d["sent"] = [[list(m.encode(msg)), to] for msg, to in image.sent]
    return d
