"""Seeded discrete-event simulation under partial synchrony.

Time is an integer number of ticks.  Before GST the adversary picks each
delivery time in ``[send + min_delay, max(send, gst) + delay_bound]`` and
clocks carry a fixed offset in ``[-delay_bound, delay_bound]``; from GST on
clocks agree and the same window applies, so backlog lands by
``gst + delay_bound``.  Self-messages are delivered at once.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

from . import messages as m
from .adversary import (
    AdversarySpec,
    CorruptParty,
    InFlight,
    byzantine_step,
    choose_delivery,
    get_strategy,
)
from .messages import Kind, Message
from .persistence import image_size, reboot, snapshot
from .protocol import (
    FIRST_VIEW,
    TIMEOUT_DELTAS,
    ConfigurationError,
    Decide,
    Delivered,
    Params,
    PersistHint,
    Send,
    SetViewTimer,
    ViewTimerFired,
    init_party,
    step,
    transient_words,
)


class ChannelRejected(Exception):
    """An adversary-authored message the authenticated channel refuses."""


@dataclass(frozen=True)
class SimConfig:
    n: int
    f: int
    delay_bound: int = 10  # Δ
    min_delay: int | None = None  # δ; defaults to Δ
    gst: int = 0
    max_time: int | None = None  # defaults to gst + 60 view timeouts
    seed: int = 0
    mutation: str | None = None
    first_view: int = FIRST_VIEW
    measure_memory: bool = False

    def __post_init__(self):
        Params(self.n, self.f, self.mutation, self.first_view)
        if self.delay_bound <= 0:
            raise ConfigurationError("delay_bound must be positive")
        if not 0 < self.delta <= self.delay_bound:
            raise ConfigurationError("need 0 < min_delay <= delay_bound")
        if self.gst < 0:
            raise ConfigurationError("gst must be >= 0")

    @property
    def delta(self) -> int:
        return self.delay_bound if self.min_delay is None else self.min_delay

    @property
    def horizon(self) -> int:
        if self.max_time is not None:
            return self.max_time
        return self.gst + 60 * TIMEOUT_DELTAS * self.delay_bound

    @property
    def timeout(self) -> int:
        return TIMEOUT_DELTAS * self.delay_bound

    def to_dict(self) -> dict:
        return asdict(self)


class TraceEvent(NamedTuple):
    t: int
    party: int
    dir: str  # send | recv | timer | decide | crash | reboot | persist
    kind: str | None = None
    view: int | None = None
    value: object = None
    sender: int | None = None
    to: int | None = None
    words: int | None = None
    mem: int | None = None

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "party": self.party,
            "dir": self.dir,
            "kind": self.kind,
            "view": self.view,
            "value": self.value,
            "sender": self.sender,
            "to": self.to,
            "words": self.words,
            "mem": self.mem,
        }


STATUS_DECIDED = "all_decided"
STATUS_QUIESCENT = "quiescent"
STATUS_HORIZON = "horizon"

_DELIVER, _TIMER, _CRASH, _REBOOT = 0, 1, 2, 3
_KIND_NAMES = {k: k.name.lower() for k in Kind}


@dataclass
class SimResult:
    config: SimConfig
    adversary: AdversarySpec
    inputs: list
    trace: list = field(default_factory=list)
    decisions: dict = field(default_factory=dict)  # party -> (time, value)
    status: str = STATUS_HORIZON
    end_time: int = 0
    rejected: int = 0

    @property
    def honest(self) -> list[int]:
        return [p for p in range(1, self.config.n + 1) if p not in self.adversary.corrupt]

    @property
    def all_decided(self) -> bool:
        return self.status == STATUS_DECIDED

    def meta(self) -> dict:
        return {
            "dir": "meta",
            "config": self.config.to_dict(),
            "adversary": self.adversary.to_dict(),
            "inputs": list(self.inputs),
        }

    def trace_lines(self) -> list[str]:
        lines = [json.dumps(self.meta(), separators=(",", ":"))]
        lines.extend(json.dumps(ev.as_dict(), separators=(",", ":")) for ev in self.trace)
        return lines

    def trace_text(self) -> str:
        return "\n".join(self.trace_lines()) + "\n"

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.trace_text())


class Simulation:
    def __init__(self, config: SimConfig, adversary: AdversarySpec | None = None, inputs=None):
        adversary = adversary or AdversarySpec()
        n, f = config.n, config.f
        if inputs is None:
            inputs = ["A"] * n
        inputs = list(inputs)
        if len(inputs) != n:
            raise ConfigurationError(f"need {n} inputs, got {len(inputs)}")
        for v in inputs:
            m.encode(m.done(v))
        adversary.validate(n, f, config.delay_bound)
        self.config = config
        self.adversary = adversary
        self.inputs = inputs
        self.n = n
        self.gst = config.gst
        self.bound = config.delay_bound
        self.delta = config.delta
        self.corrupt = adversary.corrupt
        self.policy = adversary.net_policy
        self.net_rng = random.Random(f"net:{config.seed}")
        self.offsets = adversary.offsets(n, self.bound, random.Random(f"clock:{config.seed}"))
        self.result = SimResult(config, adversary, inputs)
        self.trace = self.result.trace
        self.queue: list = []
        self.seq = 0
        self.now = 0
        self.states: list = [None] * (n + 1)
        self.up = [True] * (n + 1)
        self.epoch = [0] * (n + 1)
        self.images: list = [None] * (n + 1)
        self.crashing = {p for p, _, _ in adversary.crash_plan}
        self.measure = config.measure_memory
        self.corrupt_parties: dict[int, CorruptParty] = {}
        self.strategies = {}
        self.pending_honest = set(self.result.honest)

    # -- clocks --------------------------------------------------------------

    def clock_now(self, party: int, t: int | None = None) -> int:
        t = self.now if t is None else t
        return t if t >= self.gst else t + self.offsets[party]

    def timer_fire_time(self, party: int) -> int:
        target = self.clock_now(party) + self.config.timeout
        pre = target - self.offsets[party]
        if pre < self.gst:
            return max(pre, self.now)
        return max(target, self.gst, self.now)

    # -- queue ---------------------------------------------------------------

    def _push(self, t, prio, etype, a, b=None, c=None) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (t, prio, self.seq, etype, a, b, c))

    def _send(self, sender: int, to: int, msg: Message, words: int) -> None:
        now = self.now
        self.trace.append(
            TraceEvent(now, sender, "send", _KIND_NAMES[msg.kind], msg.view, msg.value, sender, to, words)
        )
        if to == sender:
            t = now
        else:
            deadline = max(now, self.gst) + self.bound
            earliest = min(now + self.delta, deadline)
            policy = self.policy
            if policy.name == "eager":
                t = earliest
            elif policy.name == "max_delay":
                t = deadline
            else:
                t = choose_delivery(
                    policy, InFlight(msg, sender, to, now, earliest, deadline), self.net_rng
                )
        self._push(t, 0 if to in self.corrupt else 1, _DELIVER, to, sender, msg)

    def submit(self, sender: int, to: int, msg: Message) -> None:
        """Channel entry for adversary-authored messages: authenticated and size-checked."""
        if sender not in self.corrupt:
            raise ChannelRejected(f"party {sender} is not corrupt; cannot author as it")
        if not 1 <= to <= self.n:
            raise ChannelRejected(f"no such recipient {to}")
        try:
            words = len(m.encode(msg))
        except (m.EncodingError, ValueError, TypeError, AttributeError) as exc:
            raise ChannelRejected(str(exc)) from None
        self._send(sender, to, msg, words)

    # -- honest parties ------------------------------------------------------

    def _apply(self, p: int, actions: list) -> None:
        st = self.states[p]
        persisted = False
        for a in actions:
            tp = type(a)
            if tp is Send:
                msg = a.msg
                self._send(p, a.to, msg, m.word_count(msg.kind) if msg.kind is not Kind.RECOVER_REPLY
                           else 1 + len(msg.payload))
            elif tp is PersistHint:
                persisted = True
            elif tp is SetViewTimer:
                self._push(self.timer_fire_time(p), 1, _TIMER, p, a.view, self.epoch[p])
            elif tp is Decide:
                self.trace.append(TraceEvent(self.now, p, "decide", None, st.view, a.value))
                self.result.decisions[p] = (self.now, a.value)
                self.pending_honest.discard(p)
        if persisted and (p in self.crashing or self.measure):
            # write-ahead: the image is taken with the same atomic step as the sends
            img = snapshot(st)
            self.images[p] = img
            if self.measure:
                self.trace.append(TraceEvent(self.now, p, "persist", None, st.view, None, None, None,
                                             image_size(img)))

    def _mem(self, p: int) -> int | None:
        return transient_words(self.states[p]) if self.measure else None

    # -- main loop -----------------------------------------------------------

    def _start(self) -> None:
        cfg = self.config
        for p in range(1, self.n + 1):
            if p in self.corrupt:
                cp = CorruptParty(
                    p, self.n, cfg.f, self.inputs[p - 1],
                    honest=self.result.honest, corrupt=self.corrupt, inputs=self.inputs,
                    rng=random.Random(f"byz:{cfg.seed}:{p}"), first_view=cfg.first_view,
                )
                self.corrupt_parties[p] = cp
                self.strategies[p] = get_strategy(self.adversary.strategy.get(p, "silent"))
                self.states[p] = cp.shadow
                continue
            st, actions = init_party(p, self.n, cfg.f, self.inputs[p - 1],
                                     mutation=cfg.mutation, first_view=cfg.first_view)
            self.states[p] = st
            if p in self.crashing:
                self.images[p] = snapshot(st)
            self._apply(p, actions)
        for p in sorted(self.corrupt_parties):
            self._byzantine(p, None)
        for p, crash, back in self.adversary.crash_plan:
            self._push(crash, 2, _CRASH, p)
            self._push(back, 2, _REBOOT, p)

    def _byzantine(self, p: int, event) -> None:
        cp = self.corrupt_parties[p]
        for a in byzantine_step(self.strategies[p], cp, event):
            if type(a) is Send:
                try:
                    self.submit(p, a.to, a.msg)
                except ChannelRejected:
                    self.result.rejected += 1
            elif type(a) is SetViewTimer:
                self._push(self.timer_fire_time(p), 1, _TIMER, p, a.view, self.epoch[p])

    def run(self) -> SimResult:
        self._start()
        horizon = self.config.horizon
        res = self.result
        queue = self.queue
        trace = self.trace
        corrupt = self.corrupt
        status = STATUS_QUIESCENT
        while queue:
            if not self.pending_honest:
                status = STATUS_DECIDED
                break
            t, _, _, etype, p, b, c = heapq.heappop(queue)
            if t > horizon:
                status = STATUS_HORIZON
                self.now = horizon
                break
            self.now = t
            if etype == _DELIVER:
                if not self.up[p]:
                    continue  # lost while the recipient is down
                msg = c
                rec = len(trace)
                trace.append(None)
                if p in corrupt:
                    trace[rec] = TraceEvent(t, p, "recv", _KIND_NAMES[msg.kind], msg.view,
                                            msg.value, b, p, None)
                    self._byzantine(p, Delivered(b, msg))
                    continue
                actions = step(self.states[p], Delivered(b, msg))
                self._apply(p, actions)
                trace[rec] = TraceEvent(t, p, "recv", _KIND_NAMES[msg.kind], msg.view, msg.value,
                                        b, p, None, self._mem(p))
            elif etype == _TIMER:
                if not self.up[p] or c != self.epoch[p]:
                    continue
                rec = len(trace)
                trace.append(None)
                if p in corrupt:
                    trace[rec] = TraceEvent(t, p, "timer", None, b)
                    self._byzantine(p, ViewTimerFired(b))
                    continue
                actions = step(self.states[p], ViewTimerFired(b))
                self._apply(p, actions)
                trace[rec] = TraceEvent(t, p, "timer", None, b, mem=self._mem(p))
            elif etype == _CRASH:
                if self.up[p]:
                    self.up[p] = False
                    self.epoch[p] += 1
                    self.states[p] = None
                    trace.append(TraceEvent(t, p, "crash"))
            else:
                if not self.up[p]:
                    self.up[p] = True
                    st, actions = reboot(self.images[p], self.n, self.config.f,
                                         mutation=self.config.mutation,
                                         first_view=self.config.first_view)
                    self.states[p] = st
                    trace.append(TraceEvent(t, p, "reboot", None, st.view))
                    self._apply(p, actions)
        else:
            status = STATUS_DECIDED if not self.pending_honest else STATUS_QUIESCENT
        res.status = status
        res.end_time = self.now
        return res


def run(config: SimConfig, adversary: AdversarySpec | None = None, inputs=None) -> SimResult:
    """Run one seeded simulation to all-decided, quiescence, or the horizon."""
    return Simulation(config, adversary, inputs).run()


def read_trace(path_or_lines) -> tuple[dict, list[dict]]:
    """Parse a JSON-lines trace; returns (meta header, event dicts)."""
    if isinstance(path_or_lines, (list, tuple)):
        lines = path_or_lines
    else:
        with open(path_or_lines) as fh:
            lines = fh.read().splitlines()
    meta = None
    events = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"trace line {lineno}: {exc.msg}") from None
        if rec.get("dir") == "meta":
            meta = rec
        else:
            events.append(rec)
    if meta is None:
        raise ValueError("trace has no meta header line")
    return meta, events


def config_from_meta(meta: dict) -> tuple[SimConfig, AdversarySpec, list]:
    return (
        SimConfig(**meta["config"]),
        AdversarySpec.from_dict(meta["adversary"]),
        list(meta["inputs"]),
    )


def replay(path_or_lines) -> SimResult:
    """Re-run the simulation recorded in a trace's header."""
    meta, _ = read_trace(path_or_lines)
    return run(*config_from_meta(meta))
