"""Byzantine behaviour, adversarial scheduling, and crash plans.

A corrupt party runs an honest "shadow" copy of the protocol so that it knows
which view it is in and what an honest party would send; its strategy then
rewrites, drops, or adds to those sends.  The adversary knows the corruption
set and the honest inputs, and it may split the honest parties however it
likes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import messages as m
from .messages import VOTE_KINDS, Kind, Message, Value
from .protocol import (
    Delivered,
    Send,
    SetViewTimer,
    init_party,
    primary_of,
    step,
)

FABRICATED = ("X", "Y")


class AdversaryError(ValueError):
    pass


# -- network scheduling ------------------------------------------------------


@dataclass(frozen=True)
class InFlight:
    msg: Message
    sender: int
    recipient: int
    send_time: int
    earliest: int  # send_time + min delay
    deadline: int  # max(send_time, gst) + delay bound


@dataclass(frozen=True)
class NetPolicy:
    """Delivery-time chooser: eager, max_delay, random, or targeted_stall."""

    name: str = "eager"
    victims: frozenset = frozenset()

    NAMES = ("eager", "max_delay", "random", "targeted_stall")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise AdversaryError(f"unknown net policy {self.name!r}")


def choose_delivery(policy: NetPolicy, inflight: InFlight, rng: random.Random) -> int:
    lo, hi = inflight.earliest, inflight.deadline
    name = policy.name
    if name == "eager":
        t = lo
    elif name == "max_delay":
        t = hi
    elif name == "random":
        t = rng.randint(lo, hi)
    else:
        touches = inflight.sender in policy.victims or inflight.recipient in policy.victims
        t = hi if touches else lo
    return min(max(t, lo), hi)


# -- corrupt parties ---------------------------------------------------------


class CorruptParty:
    """Adversary-side bookkeeping for one corrupt id."""

    def __init__(self, pid, n, f, value, *, honest, corrupt, inputs, rng, first_view=1):
        self.id = pid
        self.n = n
        self.f = f
        self.honest = sorted(honest)
        self.corrupt = frozenset(corrupt)
        self.rng = rng
        self.counter = 0
        self.blasted: set = set()
        distinct = []
        for v in list(inputs) + list(FABRICATED):
            if v not in distinct:
                distinct.append(v)
        self.values = distinct
        self.fabricated = next(v for v in FABRICATED if v not in set(inputs))
        self.shadow, self.start_actions = init_party(pid, n, f, value, first_view=first_view)

    def alt(self, val: Value) -> Value:
        return next(v for v in self.values if v != val)

    def split_value(self, to: int, val: Value) -> Value:
        """Lower half of the honest parties hears ``val``; the rest hear another value."""
        if to not in self.honest:
            return val
        half = (len(self.honest) + 1) // 2
        return val if self.honest.index(to) < half else self.alt(val)


def _passthrough(actions) -> list:
    return [a for a in actions if type(a) in (Send, SetViewTimer)]


class Strategy:
    name = "honest"

    def react(self, cp: CorruptParty, event, actions) -> list:
        return _passthrough(actions)


class Silent(Strategy):
    name = "silent"

    def react(self, cp, event, actions):
        return []


class EquivocatingPrimary(Strategy):
    """In views led by a corrupt primary, tell the two honest halves different values.

    Each honest party, as soon as its request shows it is in the view, gets
    the propose (from the primary) and every vote kind plus a done, all
    carrying its half's value.  Outside those views the party is honest.
    """

    name = "equivocating_primary"

    def react(self, cp, event, actions):
        view = cp.shadow.view
        if primary_of(view, cp.n) not in cp.corrupt:
            return _passthrough(actions)
        out = [a for a in actions if type(a) is SetViewTimer]
        base = cp.values[0]
        targets = []
        if event is None:
            targets = [j for j in cp.honest if cp.shadow.highest_request[j] >= view]
        elif type(event) is Delivered and event.msg.kind is Kind.REQUEST and event.msg.view == view:
            targets = [event.sender]
        for j in targets:
            if (j, view) in cp.blasted or j not in cp.honest:
                continue
            cp.blasted.add((j, view))
            val = cp.split_value(j, base)
            if cp.id == primary_of(view, cp.n):
                out.append(Send(j, m.propose(0, val, view)))
            for kind in VOTE_KINDS:
                out.append(Send(j, m.vote(kind, val, view)))
            out.append(Send(j, m.done(val)))
        for a in actions:
            if type(a) is Send and a.msg.kind in (Kind.REQUEST, Kind.ABORT):
                out.append(a)
        return out


class StaleKey(Strategy):
    """Suggest a fabricated value under a recent key it never earned."""

    name = "stale_key"

    def react(self, cp, event, actions):
        out = []
        for a in _passthrough(actions):
            if type(a) is Send and a.msg.kind is Kind.SUGGEST:
                v = a.msg.view
                if v >= 3:
                    x = cp.fabricated
                    a = Send(a.to, m.suggest(v - 1, x, v - 1, x, v - 2, v))
            out.append(a)
        return out


class LockBreaker(Strategy):
    """Send proofs that claim recent key1 history for a fabricated value, and key1 votes for it."""

    name = "lock_breaker"

    def react(self, cp, event, actions):
        out = []
        x = cp.fabricated
        for a in _passthrough(actions):
            if type(a) is Send:
                msg = a.msg
                if msg.kind is Kind.PROOF and msg.view >= 3:
                    a = Send(a.to, m.proof(msg.view - 1, x, msg.view - 2, msg.view))
                elif msg.kind in (Kind.KEY1, Kind.ECHO):
                    a = Send(a.to, m.vote(msg.kind, x, msg.view))
            out.append(a)
        return out


class DoneSpammer(Strategy):
    """Announce done for a fabricated value instead of anything honest."""

    name = "done_spammer"

    def react(self, cp, event, actions):
        out = []
        x = cp.fabricated
        new_view = False
        for a in _passthrough(actions):
            if type(a) is Send and a.msg.kind is Kind.DONE:
                continue
            if type(a) is Send and a.msg.kind is Kind.REQUEST:
                new_view = True
            out.append(a)
        if new_view and a_to_all_once(cp, "done", cp.shadow.view):
            out.extend(Send(j, m.done(x)) for j in range(1, cp.n + 1))
        return out


class AbortSpammer(Strategy):
    """Behave honestly but keep announcing aborts for ever-higher views."""

    name = "abort_spammer"

    def react(self, cp, event, actions):
        out = _passthrough(actions)
        if event is None or type(event) is not Delivered:
            cp.counter += 1
            target = cp.shadow.view + cp.counter
            out.extend(Send(j, m.abort(target)) for j in range(1, cp.n + 1))
        return out


class Chaos(Strategy):
    """Randomly drop, keep, or rewrite each outgoing message (fuzzing aid)."""

    name = "chaos"

    def react(self, cp, event, actions):
        out = []
        rng = cp.rng
        for a in _passthrough(actions):
            if type(a) is not Send:
                out.append(a)
                continue
            r = rng.random()
            if r < 0.15:
                continue
            msg = a.msg
            if r < 0.45 and msg.kind in VOTE_KINDS + (Kind.DONE,):
                msg = msg._replace(payload=(rng.choice(cp.values),))
            elif r < 0.55 and msg.kind is Kind.PROPOSE:
                msg = m.propose(msg.payload[0], rng.choice(cp.values), msg.view)
            out.append(Send(a.to, msg))
        return out


def a_to_all_once(cp: CorruptParty, tag: str, view: int) -> bool:
    key = (tag, view)
    if key in cp.blasted:
        return False
    cp.blasted.add(key)
    return True


STRATEGIES = {
    cls.name: cls
    for cls in (
        Strategy,
        Silent,
        EquivocatingPrimary,
        StaleKey,
        LockBreaker,
        DoneSpammer,
        AbortSpammer,
        Chaos,
    )
}
BUILTIN_STRATEGIES = (
    "silent",
    "equivocating_primary",
    "stale_key",
    "lock_breaker",
    "done_spammer",
    "abort_spammer",
)


def get_strategy(name: str) -> Strategy:
    try:
        return STRATEGIES[name]()
    except KeyError:
        raise AdversaryError(f"unknown strategy {name!r}") from None


def byzantine_step(strategy: Strategy, cp: CorruptParty, event) -> list:
    """Advance the corrupt party's shadow on ``event`` and return its chosen outputs.

    ``event=None`` asks for the party's opening moves.
    """
    if event is None:
        actions = cp.start_actions
    else:
        actions = step(cp.shadow, event)
    return strategy.react(cp, event, actions)


# -- the whole adversary -----------------------------------------------------


@dataclass(frozen=True)
class AdversarySpec:
    corrupt: frozenset = frozenset()
    strategy: dict = field(default_factory=dict)  # party -> strategy name
    net_policy: NetPolicy = NetPolicy()
    crash_plan: tuple = ()  # ((party, crash_time, reboot_time), ...)
    clock_offsets: str | tuple = "random"  # "random", "zero", or explicit per-party tuple
    allow_excess_corruption: bool = False  # test-only: permit f+1 corrupt

    @classmethod
    def build(
        cls,
        corrupt=(),
        strategy="silent",
        net_policy="eager",
        victims=(),
        crash_plan=(),
        clock_offsets="random",
        allow_excess_corruption=False,
    ) -> "AdversarySpec":
        corrupt = frozenset(int(c) for c in corrupt)
        if isinstance(strategy, str):
            strat = {c: strategy for c in corrupt}
        else:
            strat = {int(k): v for k, v in dict(strategy).items()}
        policy = net_policy if isinstance(net_policy, NetPolicy) else NetPolicy(
            net_policy, frozenset(int(v) for v in victims)
        )
        if not isinstance(clock_offsets, str):
            clock_offsets = tuple(int(o) for o in clock_offsets)
        plan = tuple((int(p), int(c), int(r)) for p, c, r in crash_plan)
        return cls(corrupt, strat, policy, plan, clock_offsets, bool(allow_excess_corruption))

    def validate(self, n: int, f: int, delay_bound: int) -> None:
        if len(self.corrupt) > f and not self.allow_excess_corruption:
            raise AdversaryError(f"{len(self.corrupt)} corrupt parties exceeds f={f}")
        for c in self.corrupt:
            if not 1 <= c <= n:
                raise AdversaryError(f"corrupt id {c} outside 1..{n}")
        for c in self.corrupt:
            get_strategy(self.strategy.get(c, "silent"))
        for p, crash, reboot in self.crash_plan:
            if p in self.corrupt:
                raise AdversaryError(f"crash plan names corrupt party {p}; crashes are for honest parties")
            if not 1 <= p <= n or not 0 <= crash < reboot:
                raise AdversaryError(f"bad crash plan entry {(p, crash, reboot)}")
        if not isinstance(self.clock_offsets, str):
            if len(self.clock_offsets) != n:
                raise AdversaryError("clock_offsets needs one entry per party")
            if any(abs(o) > delay_bound for o in self.clock_offsets):
                raise AdversaryError("clock offsets must lie within [-delay_bound, delay_bound]")
        elif self.clock_offsets not in ("random", "zero"):
            raise AdversaryError(f"unknown clock offset mode {self.clock_offsets!r}")

    def offsets(self, n: int, delay_bound: int, rng: random.Random) -> list[int]:
        if self.clock_offsets == "zero":
            return [0] * (n + 1)
        if self.clock_offsets == "random":
            return [0] + [rng.randint(-delay_bound, delay_bound) for _ in range(n)]
        return [0] + list(self.clock_offsets)

    def to_dict(self) -> dict:
        return {
            "corrupt": sorted(self.corrupt),
            "strategy": {str(k): v for k, v in sorted(self.strategy.items())},
            "net_policy": self.net_policy.name,
            "victims": sorted(self.net_policy.victims),
            "crash_plan": [list(c) for c in self.crash_plan],
            "clock_offsets": self.clock_offsets if isinstance(self.clock_offsets, str)
            else list(self.clock_offsets),
            "allow_excess_corruption": self.allow_excess_corruption,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdversarySpec":
        return cls.build(
            corrupt=d.get("corrupt", ()),
            strategy=d.get("strategy", "silent"),
            net_policy=d.get("net_policy", "eager"),
            victims=d.get("victims", ()),
            crash_plan=d.get("crash_plan", ()),
            clock_offsets=d.get("clock_offsets", "random"),
            allow_excess_corruption=d.get("allow_excess_corruption", False),
        )
