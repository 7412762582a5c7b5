"""Candidate generation: co-visitation rule plus two-stage embedding backfill.

An item B is a candidate for a session if cs(A, B) > 0 or yab(A, B) > 0 for
some A in prev_items.  Candidates are ordered by the priority score
s(B) = sum over A of (cs(A, B) + yab(A, B)), ties by ascending ItemId, and
truncated to K.  Shortfalls are filled first from skip-gram neighbors of the
last item, then from text-similarity neighbors.

The per-session function is the readable reference; ``generate_candidates_bulk``
is the CSR/numba path used by the pipeline and must agree with it exactly.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np
from numba import njit

from .corpus import ItemId, ProductCatalog, SessionRecord
from .covis import CovisStore, NextStore
from .embed import EmbeddingTable, top_similar

__all__ = [
    "CandidateSource",
    "CandidateSet",
    "CandidateIndex",
    "generate_candidates",
    "generate_candidates_bulk",
    "backfill",
    "dump_candidates",
    "load_candidates",
]


class CandidateSource(enum.Enum):
    COVIS = "COVIS"
    ITEM2VEC_FILL = "ITEM2VEC_FILL"
    TEXT_FILL = "TEXT_FILL"


_SOURCE_RANK = {
    CandidateSource.COVIS: 0,
    CandidateSource.ITEM2VEC_FILL: 1,
    CandidateSource.TEXT_FILL: 2,
}


@dataclass
class CandidateSet:
    session_id: int
    entries: list[tuple[ItemId, CandidateSource]] = field(default_factory=list)

    def items(self) -> list[ItemId]:
        return [it for it, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class CandidateIndex:
    """Merged neighbor weights: A -> {B: cs(A,B) + yab(A,B)}."""

    neighbors: dict[ItemId, dict[ItemId, int]]

    @classmethod
    def from_stores(cls, covis: CovisStore, next_store: NextStore) -> "CandidateIndex":
        neighbors: dict[ItemId, dict[ItemId, int]] = {}
        for (a, b), c in covis.cs.items():
            neighbors.setdefault(a, {})[b] = c
        for (a, b), c in next_store.yab.items():
            row = neighbors.setdefault(a, {})
            row[b] = row.get(b, 0) + c
        return cls(neighbors=neighbors)


def generate_candidates(
    session: SessionRecord,
    covis: CovisStore,
    next_store: NextStore,
    k: int,
    index: Optional[CandidateIndex] = None,
) -> CandidateSet:
    """Reference per-session candidate rule.  Items already in prev_items
    stay eligible (a revisit is a plausible next_item)."""
    if index is None:
        index = CandidateIndex.from_stores(covis, next_store)
    scores: dict[ItemId, int] = {}
    for a in session.prev_items:
        for b, w in index.neighbors.get(a, {}).items():
            scores[b] = scores.get(b, 0) + w
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return CandidateSet(
        session_id=session.session_id,
        entries=[(b, CandidateSource.COVIS) for b, _ in ranked],
    )


# ---------------------------------------------------------------------------
# Bulk path: integer CSR index + numba scoring


@njit(cache=True)
def _score_kernel(indptr, indices, weights, sess_offsets, sess_tokens, k, n_items):
    n_sessions = len(sess_offsets) - 1
    out = np.full((n_sessions, k), -1, dtype=np.int64)
    scores = np.zeros(n_items, dtype=np.int64)
    touched = np.empty(n_items, dtype=np.int64)
    for s in range(n_sessions):
        n_touched = 0
        for t in range(sess_offsets[s], sess_offsets[s + 1]):
            a = sess_tokens[t]
            if a < 0:
                continue
            for p in range(indptr[a], indptr[a + 1]):
                b = indices[p]
                if scores[b] == 0:
                    touched[n_touched] = b
                    n_touched += 1
                scores[b] += weights[p]
        # pack (score desc, item asc) into one sortable int64 key
        keys = np.empty(n_touched, dtype=np.int64)
        for i in range(n_touched):
            b = touched[i]
            keys[i] = (scores[b] << 21) | (n_items - 1 - b)
        keys = np.sort(keys)
        n_out = k if n_touched > k else n_touched
        for i in range(n_out):
            out[s, i] = (n_items - 1) - (keys[n_touched - 1 - i] & 0x1FFFFF)
        for i in range(n_touched):
            scores[touched[i]] = 0
    return out


def generate_candidates_bulk(
    sessions: Sequence[SessionRecord],
    covis: CovisStore,
    next_store: NextStore,
    k: int,
) -> list[CandidateSet]:
    """Vectorized equivalent of mapping ``generate_candidates`` over sessions."""
    index = CandidateIndex.from_stores(covis, next_store)
    items = sorted(index.neighbors.keys() | {b for row in index.neighbors.values() for b in row})
    if len(items) >= (1 << 21):
        raise ValueError("item universe too large for packed candidate keys")
    item_of = {it: i for i, it in enumerate(items)}

    indptr = np.zeros(len(items) + 1, dtype=np.int64)
    rows = []
    for i, it in enumerate(items):
        row = sorted(index.neighbors.get(it, {}).items())
        rows.append(row)
        indptr[i + 1] = indptr[i] + len(row)
    indices = np.empty(indptr[-1], dtype=np.int64)
    weights = np.empty(indptr[-1], dtype=np.int64)
    pos = 0
    for row in rows:
        for b, w in row:
            indices[pos] = item_of[b]
            weights[pos] = w
            pos += 1

    sess_offsets = np.zeros(len(sessions) + 1, dtype=np.int64)
    toks = []
    for i, sess in enumerate(sessions):
        toks.extend(item_of.get(a, -1) for a in sess.prev_items)
        sess_offsets[i + 1] = len(toks)
    sess_tokens = np.array(toks, dtype=np.int64) if toks else np.empty(0, dtype=np.int64)

    picked = _score_kernel(indptr, indices, weights, sess_offsets, sess_tokens, k, len(items))
    out = []
    for i, sess in enumerate(sessions):
        entries = [
            (items[j], CandidateSource.COVIS) for j in picked[i] if j >= 0
        ]
        out.append(CandidateSet(session_id=sess.session_id, entries=entries))
    return out


# ---------------------------------------------------------------------------
# Backfill


def backfill(
    cands: CandidateSet,
    session: SessionRecord,
    item2vec: Optional[EmbeddingTable],
    text: Optional[EmbeddingTable],
    catalog: Optional[ProductCatalog],
    k: int,
) -> CandidateSet:
    """Fill up to k with skip-gram neighbors of the last item, then text
    neighbors.  Fills exclude existing candidates and prev_items, and stay
    within the session's locale."""
    if len(cands) >= k:
        return cands
    last = session.prev_items[-1]
    exclude = set(cands.items()) | set(session.prev_items)
    entries = list(cands.entries)

    for table, source in (
        (item2vec, CandidateSource.ITEM2VEC_FILL),
        (text, CandidateSource.TEXT_FILL),
    ):
        need = k - len(entries)
        if need <= 0 or table is None:
            continue
        for item, _score in top_similar(
            table, last, need, exclude=exclude, restrict_locale=session.locale
        ):
            entries.append((item, source))
            exclude.add(item)
    return CandidateSet(session_id=cands.session_id, entries=entries)


# ---------------------------------------------------------------------------
# Serialization: JSONL {"session_id": n, "candidates": [["locale:raw", "COVIS"], ...]}


def dump_candidates(sets: Sequence[CandidateSet], stream: IO[str]) -> None:
    for cs in sets:
        stream.write(
            json.dumps(
                {
                    "session_id": cs.session_id,
                    "candidates": [[str(it), src.value] for it, src in cs.entries],
                }
            )
            + "\n"
        )


def load_candidates(stream) -> list[CandidateSet]:
    out = []
    for line in stream:
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        out.append(
            CandidateSet(
                session_id=obj["session_id"],
                entries=[
                    (ItemId.parse(it), CandidateSource(src))
                    for it, src in obj["candidates"]
                ],
            )
        )
    return out
