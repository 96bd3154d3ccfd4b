"""Trace metering and property checks.

Everything here is a fold over trace records, so a stored JSON-lines trace
yields the same report as the live run that produced it.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from .messages import MAX_WORDS, Kind, word_count
from .protocol import TIMEOUT_DELTAS, primary_of
from .sim import SimResult, TraceEvent, read_trace

# one message of every kind a party can send one peer in a view
PAIR_WORD_BOUND = sum(
    word_count(k)
    for k in (
        Kind.REQUEST, Kind.SUGGEST, Kind.PROOF, Kind.PROPOSE, Kind.ECHO, Kind.KEY1,
        Kind.KEY2, Kind.KEY3, Kind.LOCK, Kind.DONE, Kind.ABORT,
    )
)
_VIEWLESS = ("done", "recover_reply")


@dataclass(frozen=True)
class Violation:
    prop: str
    detail: str
    excerpt: tuple = ()

    def __str__(self) -> str:
        return f"{self.prop}: {self.detail}"


def load(source) -> tuple[dict, list[TraceEvent]]:
    """Normalize a SimResult, a trace path, trace lines, or a (meta, events) pair."""
    if isinstance(source, SimResult):
        return source.meta(), source.trace
    if isinstance(source, tuple) and len(source) == 2 and isinstance(source[0], dict):
        return source
    meta, records = read_trace(source)
    return meta, [TraceEvent(**r) for r in records]


def _honest(meta: dict) -> list[int]:
    corrupt = set(meta["adversary"]["corrupt"])
    return [p for p in range(1, meta["config"]["n"] + 1) if p not in corrupt]


def _crash_free(meta: dict) -> bool:
    return not meta["adversary"]["crash_plan"]


def _delay_bound(meta: dict) -> int:
    return meta["config"]["delay_bound"]


def view_starts(events, honest) -> dict[int, dict[int, int]]:
    """party -> {view: time first started}, read off request self-sends."""
    honest = set(honest)
    starts: dict[int, dict[int, int]] = {p: {} for p in honest}
    last = {p: -1 for p in honest}
    for ev in events:
        if ev.dir == "send" and ev.kind == "request" and ev.party in honest and ev.to == ev.party:
            if ev.view > last[ev.party]:
                last[ev.party] = ev.view
                starts[ev.party][ev.view] = ev.t
    return starts


def decisions(events, honest) -> dict[int, TraceEvent]:
    honest = set(honest)
    return {ev.party: ev for ev in events if ev.dir == "decide" and ev.party in honest}


@dataclass
class Metrics:
    n: int
    messages: int = 0
    max_message_words: int = 0
    words_by_kind: dict = field(default_factory=dict)
    max_pair_words: int = 0
    max_pair_at: list = field(default_factory=list)  # [view, sender, recipient]
    view_totals: dict = field(default_factory=dict)  # view -> words sent by honest parties
    fitted_c: float = 0.0
    decision_times: dict = field(default_factory=dict)
    decided_values: dict = field(default_factory=dict)
    views_entered: dict = field(default_factory=dict)
    max_persistent_words: int | None = None
    max_transient_words: int | None = None
    crash_free: bool = True
    violations: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        d["violations"] = [str(v) for v in self.violations]
        return json.dumps(d, sort_keys=True, indent=2)


def meter(source) -> Metrics:
    """Word, memory and timing metrics, plus the word-bound checks."""
    meta, events = load(source)
    n = meta["config"]["n"]
    honest = set(_honest(meta))
    crash_free = _crash_free(meta)
    met = Metrics(n=n, crash_free=crash_free)
    cur = {p: -1 for p in honest}
    pair: dict = defaultdict(int)
    totals: dict = defaultdict(int)
    by_kind: dict = {}
    for ev in events:
        if ev.dir == "persist":
            if met.max_persistent_words is None or ev.words > met.max_persistent_words:
                met.max_persistent_words = ev.words
            continue
        if ev.mem is not None and ev.party in honest:
            if met.max_transient_words is None or ev.mem > met.max_transient_words:
                met.max_transient_words = ev.mem
        if ev.dir != "send" or ev.party not in honest:
            continue
        p = ev.party
        if ev.kind == "request" and ev.view > cur[p]:
            cur[p] = ev.view
        met.messages += 1
        by_kind[ev.kind] = ev.words
        if ev.words > met.max_message_words:
            met.max_message_words = ev.words
        if ev.words > MAX_WORDS:
            met.violations.append(Violation(
                "message_words", f"{ev.kind} from {p} to {ev.to} has {ev.words} words", (ev,)))
        view = cur[p] if ev.kind in _VIEWLESS else ev.view
        pair[(view, p, ev.to)] += ev.words
        totals[view] += ev.words
    for (view, p, q), words in sorted(pair.items()):
        if words > met.max_pair_words:
            met.max_pair_words = words
            met.max_pair_at = [view, p, q]
        if crash_free and words > PAIR_WORD_BOUND:
            met.violations.append(Violation(
                "pair_words", f"view {view}: party {p} sent {q} {words} words > {PAIR_WORD_BOUND}"))
    met.words_by_kind = dict(sorted(by_kind.items()))
    met.view_totals = {str(v): w for v, w in sorted(totals.items())}
    met.fitted_c = max(totals.values(), default=0) / (n * n)
    for p, ev in sorted(decisions(events, honest).items()):
        met.decision_times[str(p)] = ev.t
        met.decided_values[str(p)] = ev.value
    for p, s in sorted(view_starts(events, honest).items()):
        met.views_entered[str(p)] = sorted(s)
    return met


# -- safety ------------------------------------------------------------------


def check_agreement(source) -> list[Violation]:
    meta, events = load(source)
    decs = decisions(events, _honest(meta))
    values = {ev.value for ev in decs.values()}
    if len(values) > 1:
        return [Violation("agreement", f"honest parties decided {sorted(map(str, values))}",
                          tuple(decs.values()))]
    return []


def check_validity(source) -> list[Violation]:
    """Only binding when nobody is corrupt and all inputs agree."""
    meta, events = load(source)
    inputs = meta["inputs"]
    if meta["adversary"]["corrupt"] or len(set(inputs)) != 1:
        return []
    want = inputs[0]
    bad = [ev for ev in decisions(events, _honest(meta)).values() if ev.value != want]
    if bad:
        return [Violation("validity", f"decided {bad[0].value!r} with unanimous input {want!r}",
                          tuple(bad))]
    return []


def check_single_done(source) -> list[Violation]:
    """Each honest party broadcasts at most one done value, and decides at most once."""
    meta, events = load(source)
    honest = set(_honest(meta))
    done_vals: dict = defaultdict(set)
    decides: dict = defaultdict(int)
    out = []
    for ev in events:
        if ev.party not in honest:
            continue
        if ev.dir == "send" and ev.kind == "done":
            done_vals[ev.party].add(ev.value)
        elif ev.dir == "decide":
            decides[ev.party] += 1
    for p, vals in done_vals.items():
        if len(vals) > 1:
            out.append(Violation("single_done", f"party {p} sent done for {sorted(map(str, vals))}"))
    for p, k in decides.items():
        if k > 1:
            out.append(Violation("single_decide", f"party {p} decided {k} times"))
    return out


# -- liveness timing ---------------------------------------------------------


def check_termination_propagation(source) -> list[Violation]:
    meta, events = load(source)
    if not _crash_free(meta):
        return []
    honest = _honest(meta)
    decs = decisions(events, honest)
    if not decs:
        return []
    first = min(ev.t for ev in decs.values())
    deadline = max(first, meta["config"]["gst"]) + 2 * _delay_bound(meta)
    late = [p for p in honest if p not in decs or decs[p].t > deadline]
    end = events[-1].t if events else 0
    late = [p for p in late if p in decs or end > deadline]
    if late:
        return [Violation("termination_propagation",
                          f"first decision at {first}; parties {late} not terminated by {deadline}")]
    return []


def check_abort_propagation(source) -> list[Violation]:
    meta, events = load(source)
    if not _crash_free(meta):
        return []
    honest = _honest(meta)
    gst = meta["config"]["gst"]
    bound = 2 * _delay_bound(meta)
    starts = view_starts(events, honest)
    decs = decisions(events, honest)
    end = events[-1].t if events else 0
    v_gst = max((v for s in starts.values() for v, t in s.items() if t <= gst), default=-1)
    first_start: dict[int, int] = {}
    for s in starts.values():
        for v, t in s.items():
            if t >= gst and v > v_gst and (v not in first_start or t < first_start[v]):
                first_start[v] = t
    out = []
    for v, t in sorted(first_start.items()):
        deadline = t + bound
        if deadline > end:
            continue  # run stopped (everyone decided) before the window closed
        for p in honest:
            started = starts[p].get(v)
            terminated = p in decs and decs[p].t <= deadline
            if terminated or (started is not None and started <= deadline):
                continue
            out.append(Violation(
                "abort_propagation",
                f"view {v} first started at {t}; party {p} neither started it nor terminated by {deadline}",
            ))
    return out


def first_good_view(meta, events) -> tuple[int, int] | None:
    """(v, t): the first view with an honest primary whose first honest start is at or after GST."""
    honest = _honest(meta)
    n = meta["config"]["n"]
    gst = meta["config"]["gst"]
    starts = view_starts(events, honest)
    reached: dict[int, int] = {}
    for s in starts.values():
        for v, t in s.items():
            if v not in reached or t < reached[v]:
                reached[v] = t
    # the first time someone has view >= v is the earliest start of any view >= v
    best = None
    for v in sorted(reached, reverse=True):
        t = reached[v] if best is None else min(reached[v], best)
        best = t
        reached[v] = t
    candidates = [
        (v, t) for v, t in sorted(reached.items())
        if t >= gst and primary_of(v, n) in honest
    ]
    return candidates[0] if candidates else None


def check_first_good_primary(source, delay: int | None = None) -> list[Violation]:
    """All honest parties decide within the first good view, ``11 * delay`` after it starts.

    ``delay`` defaults to the delay bound; pass the actual delay to check
    optimistic responsiveness.
    """
    meta, events = load(source)
    honest = _honest(meta)
    decs = decisions(events, honest)
    delay = _delay_bound(meta) if delay is None else delay
    fg = first_good_view(meta, events)
    if fg is None:
        if len(decs) == len(honest):
            return []
        return [Violation("first_good_primary", "no honest-primary view started after GST")]
    v, t = fg
    limit = t + TIMEOUT_DELTAS * delay
    out = []
    for p in honest:
        ev = decs.get(p)
        if ev is None:
            out.append(Violation("first_good_primary", f"party {p} never decided (view {v} began at {t})"))
        elif ev.view > v:
            out.append(Violation("first_good_primary", f"party {p} decided in view {ev.view} > {v}", (ev,)))
        elif ev.t > limit:
            out.append(Violation(
                "first_good_primary", f"party {p} decided at {ev.t} > {limit} (view {v} began at {t})", (ev,)))
    return out


SAFETY_CHECKS = (check_agreement, check_validity, check_single_done)
TIMING_CHECKS = (check_termination_propagation, check_abort_propagation)


def check_all(source, *, timing: bool = True) -> list[Violation]:
    loaded = load(source)
    out = []
    for chk in SAFETY_CHECKS + (TIMING_CHECKS if timing else ()):
        out.extend(chk(loaded))
    out.extend(meter(loaded).violations)
    return out
