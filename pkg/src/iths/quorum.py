"""Distinct-sender vote counting with exactly-once threshold firing."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

from .messages import VOTE_KINDS, Kind, Value


class Level(IntEnum):
    SMALL = 1  # f+1: at least one nonfaulty voter
    LARGE = 2  # n-f: at least f+1 nonfaulty voters


@dataclass(frozen=True)
class Threshold:
    small: int
    large: int

    @classmethod
    def for_system(cls, n: int, f: int, lowered: bool = False) -> "Threshold":
        # lowered=True is a test-only mutation: every n-f quorum becomes f+1
        return cls(small=f + 1, large=f + 1 if lowered else n - f)


class FiredEvent(NamedTuple):
    kind: Kind
    value: Value
    level: Level


class VoteLedger:
    """Per-kind sender sets keyed by value.

    A sender's first vote for a kind is the only one counted.  Vote kinds
    fire once at the large threshold; DONE fires once at each level, and a
    single delivery crossing both reports LARGE.  After a kind's final level
    fires, later votes for it are dropped.
    """

    __slots__ = ("threshold", "voted", "support", "fired")

    def __init__(self, threshold: Threshold):
        self.threshold = threshold
        self.voted: dict[Kind, dict[int, Value]] = {}
        self.support: dict[Kind, dict[Value, int]] = {}
        self.fired: dict[Kind, Level] = {}

    def record_vote(self, kind: Kind, sender: int, value: Value) -> FiredEvent | None:
        done_kind = kind is Kind.DONE
        fired = self.fired.get(kind)
        if fired is Level.LARGE or (fired is not None and not done_kind):
            return None
        voters = self.voted.setdefault(kind, {})
        if sender in voters:
            return None
        voters[sender] = value
        counts = self.support.setdefault(kind, {})
        count = counts.get(value, 0) + 1
        counts[value] = count
        if count >= self.threshold.large:
            self.fired[kind] = Level.LARGE
            return FiredEvent(kind, value, Level.LARGE)
        if done_kind and fired is None and count >= self.threshold.small:
            self.fired[kind] = Level.SMALL
            return FiredEvent(kind, value, Level.SMALL)
        return None

    def count(self, kind: Kind, value: Value) -> int:
        return self.support.get(kind, {}).get(value, 0)

    def voters(self, kind: Kind) -> dict[int, Value]:
        return self.voted.get(kind, {})

    def reset_for_view(self) -> "VoteLedger":
        for kind in VOTE_KINDS:
            self.voted.pop(kind, None)
            self.support.pop(kind, None)
            self.fired.pop(kind, None)
        return self

    def clone(self) -> "VoteLedger":
        c = VoteLedger.__new__(VoteLedger)
        c.threshold = self.threshold
        c.voted = {k: dict(v) for k, v in self.voted.items()}
        c.support = {k: dict(v) for k, v in self.support.items()}
        c.fired = dict(self.fired)
        return c

    def key(self) -> tuple:
        return (
            tuple(sorted((int(k), tuple(sorted(v.items()))) for k, v in self.voted.items())),
            tuple(sorted((int(k), int(lv)) for k, lv in self.fired.items())),
        )

    def words(self) -> int:
        """Transient footprint: one word per recorded vote plus per-value counters."""
        return sum(len(v) for v in self.voted.values()) + sum(
            len(c) for c in self.support.values()
        ) + len(self.fired)
