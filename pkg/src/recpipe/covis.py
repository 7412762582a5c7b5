"""Sparse co-visitation counters and per-item occurrence counts.

Four prev-item pair counters (cs, caxb, cab, cba), two next-item counters
(yaxb, yab), and item occurrence stats.  All counters are locale-pure by
construction: pairs only ever form within one session, and sessions are
locale-qualified.  Zero counts are never stored; an absent key reads as 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

from .corpus import FoldAssignment, ItemId, SessionRecord

__all__ = [
    "CounterKind",
    "CovisStore",
    "NextStore",
    "ItemStats",
    "build_covis",
    "build_next",
    "build_item_stats",
    "lookup",
    "merge_covis",
    "merge_next",
    "dump_covis",
    "load_covis",
]

_MAX_COUNT = 2**32 - 1

PairCounter = dict[tuple[ItemId, ItemId], int]


class CounterKind(enum.Enum):
    CS = "cs"
    CAXB = "caxb"
    CAB = "cab"
    CBA = "cba"
    YAXB = "yaxb"
    YAB = "yab"


@dataclass
class CovisStore:
    """Counters over prev_items pairs.  cs is kept symmetric."""

    cs: PairCounter = field(default_factory=dict)
    caxb: PairCounter = field(default_factory=dict)
    cab: PairCounter = field(default_factory=dict)
    cba: PairCounter = field(default_factory=dict)

    def counter(self, kind: CounterKind) -> PairCounter:
        try:
            return {
                CounterKind.CS: self.cs,
                CounterKind.CAXB: self.caxb,
                CounterKind.CAB: self.cab,
                CounterKind.CBA: self.cba,
            }[kind]
        except KeyError:
            raise ValueError(f"{kind} is not a CovisStore counter") from None


@dataclass
class NextStore:
    """Counters pairing prev_items with next_item.  ``fold_version`` records
    which fold was excluded at build time (None = built on everything)."""

    yaxb: PairCounter = field(default_factory=dict)
    yab: PairCounter = field(default_factory=dict)
    fold_version: Optional[int] = None

    def counter(self, kind: CounterKind) -> PairCounter:
        if kind is CounterKind.YAXB:
            return self.yaxb
        if kind is CounterKind.YAB:
            return self.yab
        raise ValueError(f"{kind} is not a NextStore counter")


@dataclass
class ItemStats:
    """Occurrence counts: inside prev_items (with multiplicity) and as
    next_item.  Fold exclusion applies to next_count only."""

    prev_count: dict[ItemId, int] = field(default_factory=dict)
    next_count: dict[ItemId, int] = field(default_factory=dict)
    fold_version: Optional[int] = None


def _bump(counter: PairCounter, a: ItemId, b: ItemId, by: int = 1) -> None:
    new = counter.get((a, b), 0) + by
    if new > _MAX_COUNT:
        raise OverflowError(f"counter overflow for pair ({a}, {b})")
    counter[(a, b)] = new


def build_covis(sessions: Sequence[SessionRecord]) -> CovisStore:
    """Count ordered index pairs (i < j) within each session's prev_items.

    Self-pairs (same item at both positions) are skipped for all four
    counters.  cs is incremented in both directions.
    """
    store = CovisStore()
    for sess in sessions:
        p = sess.prev_items
        for i in range(len(p)):
            a = p[i]
            for j in range(i + 1, len(p)):
                b = p[j]
                if a == b:
                    continue
                _bump(store.caxb, a, b)
                _bump(store.cs, a, b)
                _bump(store.cs, b, a)
                if j == i + 1:
                    _bump(store.cab, a, b)
                    _bump(store.cba, b, a)
    return store


def _excluded(sess: SessionRecord, exclude_fold: Optional[int], folds: Optional[FoldAssignment]) -> bool:
    if exclude_fold is None:
        return False
    if folds is None:
        raise ValueError("exclude_fold given without a FoldAssignment")
    return folds.fold_of[sess.session_id] == exclude_fold


def build_next(
    sessions: Sequence[SessionRecord],
    exclude_fold: Optional[int] = None,
    folds: Optional[FoldAssignment] = None,
) -> NextStore:
    """Count (prev item, next_item) interactions over non-excluded sessions.

    yaxb increments by the item's multiplicity in prev_items; yab pairs only
    the last prev_item with next_item.
    """
    store = NextStore(fold_version=exclude_fold)
    for sess in sessions:
        if sess.next_item is None or _excluded(sess, exclude_fold, folds):
            continue
        b = sess.next_item
        mult: dict[ItemId, int] = {}
        for a in sess.prev_items:
            mult[a] = mult.get(a, 0) + 1
        for a, m in mult.items():
            _bump(store.yaxb, a, b, m)
        _bump(store.yab, sess.prev_items[-1], b)
    return store


def build_item_stats(
    sessions: Sequence[SessionRecord],
    exclude_fold: Optional[int] = None,
    folds: Optional[FoldAssignment] = None,
) -> ItemStats:
    """prev_count over ALL sessions; next_count over non-excluded sessions.

    prev_items of any session are observable at inference time, so only the
    next_item-derived count can leak and is fold-excluded.
    """
    stats = ItemStats(fold_version=exclude_fold)
    for sess in sessions:
        for a in sess.prev_items:
            stats.prev_count[a] = stats.prev_count.get(a, 0) + 1
        if sess.next_item is not None and not _excluded(sess, exclude_fold, folds):
            b = sess.next_item
            stats.next_count[b] = stats.next_count.get(b, 0) + 1
    return stats


def lookup(store: CovisStore | NextStore, kind: CounterKind, a: ItemId, b: ItemId) -> int:
    """Stored count or 0.  Raises on kind/store family mismatch."""
    return store.counter(kind).get((a, b), 0)


def merge_covis(stores: Sequence[CovisStore]) -> CovisStore:
    """Additive merge; equals a build over the concatenated sessions."""
    out = CovisStore()
    for st in stores:
        for kind in (CounterKind.CS, CounterKind.CAXB, CounterKind.CAB, CounterKind.CBA):
            dst = out.counter(kind)
            for pair, c in st.counter(kind).items():
                _bump(dst, pair[0], pair[1], c)
    return out


def merge_next(stores: Sequence[NextStore]) -> NextStore:
    out = NextStore(fold_version=stores[0].fold_version if stores else None)
    for st in stores:
        for pair, c in st.yaxb.items():
            _bump(out.yaxb, pair[0], pair[1], c)
        for pair, c in st.yab.items():
            _bump(out.yab, pair[0], pair[1], c)
    return out


# ---------------------------------------------------------------------------
# Serialization: TSV `kind<TAB>locale:rawA<TAB>locale:rawB<TAB>count`, sorted.


_KIND_OF_STORE = {
    CovisStore: (CounterKind.CS, CounterKind.CAXB, CounterKind.CAB, CounterKind.CBA),
    NextStore: (CounterKind.YAXB, CounterKind.YAB),
}


def dump_covis(store: CovisStore | NextStore, stream: IO[str]) -> None:
    lines = []
    for kind in _KIND_OF_STORE[type(store)]:
        for (a, b), c in store.counter(kind).items():
            lines.append(f"{kind.value}\t{a}\t{b}\t{c}")
    lines.sort()
    for line in lines:
        stream.write(line + "\n")


def load_covis(stream: IO[str], family: type = CovisStore) -> CovisStore | NextStore:
    store = family()
    valid = {k.value: k for k in _KIND_OF_STORE[family]}
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"bad counter line {lineno}: expected 4 fields")
        kind_s, a_s, b_s, c_s = parts
        if kind_s not in valid:
            raise ValueError(f"bad counter kind {kind_s!r} at line {lineno}")
        store.counter(valid[kind_s])[(ItemId.parse(a_s), ItemId.parse(b_s))] = int(c_s)
    return store


def dump_item_stats(stats: ItemStats, stream: IO[str]) -> None:
    lines = [f"prev\t{item}\t{c}" for item, c in stats.prev_count.items()]
    lines += [f"next\t{item}\t{c}" for item, c in stats.next_count.items()]
    lines.sort()
    for line in lines:
        stream.write(line + "\n")


def load_item_stats(stream: IO[str]) -> ItemStats:
    stats = ItemStats()
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line:
            continue
        which, item_s, c_s = line.split("\t")
        target = {"prev": stats.prev_count, "next": stats.next_count}[which]
        target[ItemId.parse(item_s)] = int(c_s)
    return stats
