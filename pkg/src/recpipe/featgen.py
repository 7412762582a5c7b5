"""Fixed 94-column feature schema per (session, candidate) pair, with
out-of-fold versions of every label-derived input.

Null policy: a counter lookup that finds nothing is 0; null (NaN in the
dense matrix) is reserved for "undefined" — a position beyond the session
length, a missing embedding vector, or a candidate outside the skip-gram
neighbor list.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import IO, Mapping, Optional, Sequence

import numpy as np

from .candgen import CandidateSet
from .corpus import FoldAssignment, ItemId, SessionRecord
from .covis import (
    CovisStore,
    ItemStats,
    NextStore,
    build_item_stats,
    build_next,
)
from .embed import EmbeddingTable, Item2VecParams, train_item2vec

__all__ = [
    "FEATURE_SCHEMA",
    "N_LAST",
    "ITEM2VEC_TOP_M",
    "schema_fingerprint",
    "FeatureRow",
    "FeatureTable",
    "LeakSafeBundle",
    "build_bundle",
    "build_rows",
    "build_feature_table",
    "export_rows",
    "import_rows",
]

N_LAST = 10
ITEM2VEC_TOP_M = 300

_COUNTERS = ("cs", "caxb", "cab", "cba", "yaxb", "yab")


def _make_schema() -> list[str]:
    cols = []
    for p in range(1, N_LAST + 1):
        cols.extend(f"{c}_{p}" for c in _COUNTERS)
    cols += ["cand_prev_count", "cand_next_count"]
    for p in range(1, N_LAST + 1):
        cols += [f"last{p}_prev_count", f"last{p}_next_count"]
    cols += [f"use_sim_{p}" for p in range(1, N_LAST + 1)]
    cols += ["item2vec_similarity", "session_length"]
    return cols


FEATURE_SCHEMA: list[str] = _make_schema()
assert len(FEATURE_SCHEMA) == 94

_COL = {name: i for i, name in enumerate(FEATURE_SCHEMA)}
_USE_SIM_0 = _COL["use_sim_1"]
_CAND_PREV = _COL["cand_prev_count"]
_LAST_COUNT_0 = _COL["last1_prev_count"]
_I2V = _COL["item2vec_similarity"]
_SESSLEN = _COL["session_length"]


def schema_fingerprint(schema: Sequence[str] = FEATURE_SCHEMA) -> str:
    return hashlib.sha256(",".join(schema).encode()).hexdigest()[:16]


@dataclass
class FeatureRow:
    session_id: int
    candidate: ItemId
    values: list[Optional[float]]
    label: Optional[int] = None


@dataclass
class FeatureTable:
    """Dense row store: NaN encodes null.  labels is None for unlabeled
    (test-time) tables."""

    schema: list[str]
    session_ids: np.ndarray
    candidates: list[ItemId]
    values: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.candidates)

    def rows(self):
        for i in range(len(self.candidates)):
            vals = [None if np.isnan(v) else float(v) for v in self.values[i]]
            label = int(self.labels[i]) if self.labels is not None else None
            yield FeatureRow(int(self.session_ids[i]), self.candidates[i], vals, label)


# ---------------------------------------------------------------------------
# Leak-safe bundle


@dataclass
class LeakSafeBundle:
    """k fold-excluded versions plus one full-train version of every
    label-derived artifact (next counters, next_count, skip-gram tables)."""

    folds: FoldAssignment
    next_stores: dict[Optional[int], NextStore]
    item_stats: dict[Optional[int], ItemStats]
    item2vec: dict[tuple[Optional[int], str], EmbeddingTable] = field(default_factory=dict)
    _neighbor_cache: dict = field(default_factory=dict, repr=False)

    def next_store(self, fold: Optional[int]) -> NextStore:
        return self.next_stores[fold]

    def stats(self, fold: Optional[int]) -> ItemStats:
        return self.item_stats[fold]

    def item2vec_table(self, fold: Optional[int], locale: str) -> Optional[EmbeddingTable]:
        return self.item2vec.get((fold, locale))

    def item2vec_neighbors(
        self, fold: Optional[int], locale: str, query: ItemId
    ) -> Mapping[ItemId, float]:
        """Top-M cosine neighbors of the query in the fold's table, as a
        {item: cosine} map.  Empty when the query has no vector."""
        key = (fold, locale, query)
        hit = self._neighbor_cache.get(key)
        if hit is not None:
            return hit
        table = self.item2vec_table(fold, locale)
        result: dict[ItemId, float] = {}
        if table is not None and query in table.vectors:
            items, matrix = table.dense()
            q = table.vectors[query]
            qn = max(float(np.linalg.norm(q)), 1e-12)
            sims = (matrix @ q) / (np.maximum(np.linalg.norm(matrix, axis=1), 1e-12) * qn)
            order = np.argsort(-sims, kind="stable")[: ITEM2VEC_TOP_M + 1]
            for idx in order:
                it = items[int(idx)]
                if it == query:
                    continue
                if len(result) >= ITEM2VEC_TOP_M:
                    break
                result[it] = float(sims[int(idx)])
        self._neighbor_cache[key] = result
        return result


def build_bundle(
    sessions: Sequence[SessionRecord],
    folds: FoldAssignment,
    item2vec_params: Optional[Mapping[str, Item2VecParams]] = None,
) -> LeakSafeBundle:
    """Build k excluded versions + one full version of each leak-prone
    artifact.  ``item2vec_params`` maps locale -> params; omit a locale (or
    pass None) to skip embedding training, which turns the
    item2vec_similarity feature into all-null."""
    if any(s.next_item is None for s in sessions):
        raise ValueError("all bundle sessions must have next_item")
    versions: list[Optional[int]] = [None] + list(range(folds.k))
    for f in range(folds.k):
        if all(folds.fold_of[s.session_id] == f for s in sessions):
            raise ValueError(f"excluding fold {f} leaves no sessions")

    bundle = LeakSafeBundle(folds=folds, next_stores={}, item_stats={})
    for fold in versions:
        bundle.next_stores[fold] = build_next(sessions, exclude_fold=fold, folds=folds)
        bundle.item_stats[fold] = build_item_stats(sessions, exclude_fold=fold, folds=folds)

    if item2vec_params:
        by_locale: dict[str, list[SessionRecord]] = {}
        for s in sessions:
            by_locale.setdefault(s.locale, []).append(s)
        for locale, params in item2vec_params.items():
            locale_sessions = by_locale.get(locale, [])
            if not locale_sessions:
                continue
            for fold in versions:
                if fold is None:
                    subset = locale_sessions
                else:
                    subset = [
                        s for s in locale_sessions if folds.fold_of[s.session_id] != fold
                    ]
                if not subset:
                    continue
                bundle.item2vec[(fold, locale)] = train_item2vec(subset, params)
    return bundle


# ---------------------------------------------------------------------------
# Row building


def _fill_rows(
    session: SessionRecord,
    cand_items: Sequence[ItemId],
    covis: CovisStore,
    next_store: NextStore,
    stats: ItemStats,
    i2v_neighbors: Mapping[ItemId, float],
    text_table: Optional[EmbeddingTable],
    out: np.ndarray,
) -> None:
    prev = session.prev_items
    length = len(prev)
    lastp = [prev[-p] if p <= length else None for p in range(1, N_LAST + 1)]
    counters = (
        covis.cs, covis.caxb, covis.cab, covis.cba,
        next_store.yaxb, next_store.yab,
    )

    out[:] = np.nan
    for ci, b in enumerate(cand_items):
        row = out[ci]
        for p in range(N_LAST):
            a = lastp[p]
            if a is None:
                continue
            base = 6 * p
            for j, counter in enumerate(counters):
                row[base + j] = counter.get((a, b), 0)
        row[_CAND_PREV] = stats.prev_count.get(b, 0)
        row[_CAND_PREV + 1] = stats.next_count.get(b, 0)
        for p in range(N_LAST):
            a = lastp[p]
            if a is None:
                continue
            row[_LAST_COUNT_0 + 2 * p] = stats.prev_count.get(a, 0)
            row[_LAST_COUNT_0 + 2 * p + 1] = stats.next_count.get(a, 0)
        sim = i2v_neighbors.get(b)
        if sim is not None:
            row[_I2V] = sim
        row[_SESSLEN] = length

    if text_table is not None:
        dims = text_table.dims
        cand_vecs = np.zeros((len(cand_items), dims))
        cand_mask = np.zeros(len(cand_items), dtype=bool)
        for ci, b in enumerate(cand_items):
            v = text_table.vectors.get(b)
            if v is not None:
                cand_vecs[ci] = v
                cand_mask[ci] = True
        for p in range(N_LAST):
            a = lastp[p]
            if a is None:
                continue
            va = text_table.vectors.get(a)
            if va is None:
                continue
            sims = cand_vecs @ va
            col = _USE_SIM_0 + p
            out[cand_mask, col] = sims[cand_mask]


def build_rows(
    session: SessionRecord,
    cands: CandidateSet,
    covis: CovisStore,
    bundle: LeakSafeBundle,
    text_table: Optional[EmbeddingTable],
    fold: Optional[int] = None,
    schema: Sequence[str] = FEATURE_SCHEMA,
) -> list[FeatureRow]:
    """Rows for one session.  ``fold`` selects the leak-safe artifact
    version: the session's own fold for training sessions, None (full) at
    test time."""
    if list(schema) != FEATURE_SCHEMA:
        raise ValueError("schema mismatch")
    cand_items = cands.items()
    out = np.empty((len(cand_items), len(FEATURE_SCHEMA)))
    neighbors = bundle.item2vec_neighbors(fold, session.locale, session.prev_items[-1])
    _fill_rows(
        session, cand_items, covis, bundle.next_store(fold), bundle.stats(fold),
        neighbors, text_table, out,
    )
    rows = []
    for ci, b in enumerate(cand_items):
        vals = [None if np.isnan(v) else float(v) for v in out[ci]]
        label: Optional[int] = None
        if session.next_item is not None:
            label = 1 if b == session.next_item else 0
        rows.append(FeatureRow(session.session_id, b, vals, label))
    return rows


def build_feature_table(
    sessions: Sequence[SessionRecord],
    cand_sets: Sequence[CandidateSet],
    covis: CovisStore,
    bundle: LeakSafeBundle,
    text_table: Optional[EmbeddingTable],
    use_fold_versions: bool,
    max_negatives: Optional[int] = None,
) -> FeatureTable:
    """Batch row building.  With ``use_fold_versions`` each session reads
    the artifact version excluding its own fold; otherwise the full-train
    version.  ``max_negatives`` caps negative rows per labeled session,
    keeping the highest-priority candidates."""
    if len(sessions) != len(cand_sets):
        raise ValueError("sessions and candidate sets differ in length")
    labeled = all(s.next_item is not None for s in sessions)
    if not labeled and any(s.next_item is not None for s in sessions):
        raise ValueError("mixed labeled/unlabeled sessions in one table")

    sids, cand_list, blocks, label_list = [], [], [], []
    for sess, cands in zip(sessions, cand_sets):
        if sess.session_id != cands.session_id:
            raise ValueError("candidate set / session mismatch")
        cand_items = cands.items()
        if labeled and max_negatives is not None:
            kept, negs = [], 0
            for b in cand_items:
                if b == sess.next_item:
                    kept.append(b)
                elif negs < max_negatives:
                    kept.append(b)
                    negs += 1
            cand_items = kept
        if not cand_items:
            continue
        fold = bundle.folds.fold_of[sess.session_id] if use_fold_versions else None
        out = np.empty((len(cand_items), len(FEATURE_SCHEMA)))
        neighbors = bundle.item2vec_neighbors(fold, sess.locale, sess.prev_items[-1])
        _fill_rows(
            sess, cand_items, covis, bundle.next_store(fold), bundle.stats(fold),
            neighbors, text_table, out,
        )
        blocks.append(out)
        sids.extend([sess.session_id] * len(cand_items))
        cand_list.extend(cand_items)
        if labeled:
            label_list.extend(1 if b == sess.next_item else 0 for b in cand_items)

    values = np.vstack(blocks) if blocks else np.zeros((0, len(FEATURE_SCHEMA)))
    return FeatureTable(
        schema=list(FEATURE_SCHEMA),
        session_ids=np.array(sids, dtype=np.int64),
        candidates=cand_list,
        values=values,
        labels=np.array(label_list, dtype=np.int8) if labeled else None,
    )


# ---------------------------------------------------------------------------
# CSV round-trip (empty field = null)


def export_rows(table: FeatureTable, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    header = ["session_id", "candidate"] + table.schema
    if table.labels is not None:
        header.append("label")
    writer.writerow(header)
    for i in range(len(table)):
        row = [str(int(table.session_ids[i])), str(table.candidates[i])]
        for v in table.values[i]:
            row.append("" if np.isnan(v) else repr(float(v)))
        if table.labels is not None:
            row.append(str(int(table.labels[i])))
        writer.writerow(row)


def import_rows(stream: IO[str]) -> FeatureTable:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty feature file") from None
    has_label = header and header[-1] == "label"
    cols = header[2:-1] if has_label else header[2:]
    if header[:2] != ["session_id", "candidate"] or cols != FEATURE_SCHEMA:
        raise ValueError("feature file header does not match schema")

    sids, cands, rows, labels = [], [], [], []
    for line in reader:
        expected = 2 + len(FEATURE_SCHEMA) + (1 if has_label else 0)
        if len(line) != expected:
            raise ValueError(f"row has {len(line)} fields, expected {expected}")
        sids.append(int(line[0]))
        cands.append(ItemId.parse(line[1]))
        vals = line[2 : 2 + len(FEATURE_SCHEMA)]
        rows.append([np.nan if v == "" else float(v) for v in vals])
        if has_label:
            labels.append(int(line[-1]))
    return FeatureTable(
        schema=list(FEATURE_SCHEMA),
        session_ids=np.array(sids, dtype=np.int64),
        candidates=cands,
        values=np.array(rows) if rows else np.zeros((0, len(FEATURE_SCHEMA))),
        labels=np.array(labels, dtype=np.int8) if has_label else None,
    )
