"""Item embeddings: per-locale skip-gram training, text-embedding loading,
a deterministic hash embedder standing in for an external sentence encoder,
and similarity queries.

Text tables use the raw inner product; skip-gram tables use cosine, which
is stable across training scales.  A missing item never errors: similarity
simply returns None and becomes a null feature downstream.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from . import _sgns
from .corpus import ItemId, Product, SessionRecord

__all__ = [
    "Item2VecParams",
    "EmbeddingTable",
    "train_item2vec",
    "load_text_embeddings",
    "dump_embeddings",
    "hash_embed",
    "hash_embed_catalog",
    "similarity",
    "top_similar",
]

ITEM2VEC = "ITEM2VEC"
TEXT = "TEXT"


@dataclass(frozen=True)
class Item2VecParams:
    dims: int = 100
    subsample_threshold: float = 0.001
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    min_count: int = 5
    initial_lr: float = 0.025
    final_lr: float = 0.0001
    seed: int = 0

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError("dims must be >= 1")
        if not (0 < self.subsample_threshold <= 1):
            raise ValueError("subsample_threshold must be in (0, 1]")


# Per-locale tuned values for the six known locales; anything else falls
# back to dims=100 / threshold=0.001.
LOCALE_ITEM2VEC_PARAMS: dict[str, tuple[int, float]] = {
    "DE": (100, 0.001),
    "JP": (100, 0.0001),
    "UK": (100, 0.0001),
    "IT": (100, 0.001),
    "FR": (75, 0.001),
    "ES": (100, 0.0001),
}


def params_for_locale(locale: str, seed: int = 0, **overrides) -> Item2VecParams:
    dims, threshold = LOCALE_ITEM2VEC_PARAMS.get(locale, (100, 0.001))
    kwargs = dict(dims=dims, subsample_threshold=threshold, seed=seed)
    kwargs.update(overrides)
    return Item2VecParams(**kwargs)


@dataclass
class EmbeddingTable:
    dims: int
    kind: str
    vectors: dict[ItemId, np.ndarray] = field(default_factory=dict)
    _items: Optional[list[ItemId]] = field(default=None, repr=False)
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __contains__(self, item: ItemId) -> bool:
        return item in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def dense(self) -> tuple[list[ItemId], np.ndarray]:
        """Sorted item list plus row-aligned matrix (built once, cached)."""
        if self._matrix is None:
            self._items = sorted(self.vectors)
            self._matrix = (
                np.stack([self.vectors[i] for i in self._items])
                if self._items
                else np.zeros((0, self.dims))
            )
        return self._items, self._matrix


# ---------------------------------------------------------------------------
# Skip-gram training


def _sentences(sessions: Sequence[SessionRecord]) -> Iterable[tuple[ItemId, ...]]:
    for sess in sessions:
        if sess.next_item is not None:
            yield sess.prev_items + (sess.next_item,)
        else:
            yield sess.prev_items


def train_item2vec(
    sessions: Sequence[SessionRecord],
    params: Item2VecParams,
    probe_pairs: Optional[Sequence[tuple[ItemId, ItemId]]] = None,
) -> EmbeddingTable:
    """Train skip-gram/negative-sampling over sessions-as-sentences.

    Sessions must share one locale.  Sentences are prev_items followed by
    next_item when present.  Items below min_count are dropped; frequent
    items are subsampled with keep probability min(1, sqrt(t/f) + t/f).
    With ``probe_pairs`` the per-epoch held-out loss is recorded on the
    returned table as ``epoch_losses``.
    """
    locales = {s.locale for s in sessions}
    if len(locales) > 1:
        raise ValueError(f"sessions span multiple locales: {sorted(locales)}")

    counts: dict[ItemId, int] = {}
    sents = []
    for sent in _sentences(sessions):
        sents.append(sent)
        for it in sent:
            counts[it] = counts.get(it, 0) + 1
    vocab = sorted(it for it, c in counts.items() if c >= params.min_count)
    if not vocab:
        raise ValueError("empty corpus after min_count filtering")
    index = {it: i for i, it in enumerate(vocab)}

    freq = np.array([counts[it] for it in vocab], dtype=np.float64)
    frac = freq / freq.sum()
    t = params.subsample_threshold
    keep = np.minimum(1.0, np.sqrt(t / frac) + t / frac)

    flat: list[int] = []
    offsets = [0]
    for sent in sents:
        ids = [index[it] for it in sent if it in index]
        if len(ids) >= 2:
            flat.extend(ids)
            offsets.append(len(flat))
    tokens = np.array(flat, dtype=np.int64)
    offs = np.array(offsets, dtype=np.int64)

    noise = freq**0.75
    neg_cum = np.cumsum(noise / noise.sum())
    neg_cum[-1] = 1.0

    if probe_pairs:
        rng = np.random.default_rng(params.seed)
        pc, px = [], []
        for a, b in probe_pairs:
            if a in index and b in index:
                pc.append(index[a])
                px.append(index[b])
        probe_c = np.array(pc, dtype=np.int64)
        probe_x = np.array(px, dtype=np.int64)
        probe_n = rng.integers(0, len(vocab), size=(len(pc), params.negatives)).astype(np.int64)
    else:
        probe_c = np.empty(0, dtype=np.int64)
        probe_x = np.empty(0, dtype=np.int64)
        probe_n = np.empty((0, params.negatives), dtype=np.int64)

    syn0, _syn1, losses = _sgns.train_sgns(
        tokens,
        offs,
        keep,
        neg_cum,
        params.dims,
        params.window,
        params.negatives,
        params.epochs,
        params.initial_lr,
        params.final_lr,
        params.seed,
        probe_c,
        probe_x,
        probe_n,
    )
    table = EmbeddingTable(
        dims=params.dims,
        kind=ITEM2VEC,
        vectors={it: syn0[i].copy() for it, i in index.items()},
    )
    table.epoch_losses = losses if probe_pairs else None  # type: ignore[attr-defined]
    return table


# ---------------------------------------------------------------------------
# Text embeddings: external file or deterministic hash fallback


def load_text_embeddings(stream: IO[str] | Iterable[str]) -> EmbeddingTable:
    """Load `dims=<n>` header + `locale:raw<TAB>f1 f2 ...` lines.

    An optional `kind=<KIND>` line may precede the dims header (written by
    ``dump_embeddings`` for skip-gram tables).
    """
    it = iter(stream)
    kind = TEXT
    try:
        header = next(it).strip()
    except StopIteration:
        raise ValueError("empty embedding file") from None
    if header.startswith("kind="):
        kind = header[len("kind="):]
        header = next(it).strip()
    if not header.startswith("dims="):
        raise ValueError(f"expected dims= header, got {header!r}")
    dims = int(header[len("dims="):])
    table = EmbeddingTable(dims=dims, kind=kind)
    for lineno, line in enumerate(it, start=2):
        line = line.rstrip("\n")
        if not line:
            continue
        item_s, _, vec_s = line.partition("\t")
        try:
            vec = np.array(vec_s.split(), dtype=np.float64)
        except ValueError:
            raise ValueError(f"line {lineno}: unparseable float") from None
        if len(vec) != dims:
            raise ValueError(f"line {lineno}: expected {dims} floats, got {len(vec)}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"line {lineno}: non-finite value")
        table.vectors[ItemId.parse(item_s)] = vec
    return table


def dump_embeddings(table: EmbeddingTable, stream: IO[str]) -> None:
    if table.kind != TEXT:
        stream.write(f"kind={table.kind}\n")
    stream.write(f"dims={table.dims}\n")
    for item in sorted(table.vectors):
        vals = " ".join(repr(float(v)) for v in table.vectors[item])
        stream.write(f"{item}\t{vals}\n")


def _attribute_string(product: Product) -> str:
    parts = [product.title]
    if product.brand is not None:
        parts.append(product.brand)
    if product.price is not None:
        parts.append(f"{product.price}")
    parts.extend(v for _, v in product.extra)
    return ":".join(parts)


def hash_embed(product: Product, dims: int, seed: int = 0) -> np.ndarray:
    """Deterministic character-3-gram hashing embedder, L2-normalized.

    Stand-in for an external sentence encoder: near-identical attribute
    strings share most 3-grams and therefore land close in the hashed space.
    """
    if dims < 8:
        raise ValueError("dims must be >= 8")
    text = _attribute_string(product)
    vec = np.zeros(dims, dtype=np.float64)
    key = seed.to_bytes(8, "little")
    padded = f"\x02{text}\x03"
    for i in range(len(padded) - 2):
        gram = padded[i : i + 3].encode("utf-8")
        h = int.from_bytes(
            hashlib.blake2b(gram, digest_size=8, key=key).digest(), "little"
        )
        bucket = h % dims
        sign = 1.0 if (h >> 33) & 1 else -1.0
        vec[bucket] += sign
    norm = math.sqrt(float(vec @ vec))
    if norm < 1e-12:
        vec[:] = 0.0
        vec[0] = 1.0
        return vec
    return vec / norm


def hash_embed_catalog(catalog, dims: int = 64, seed: int = 0) -> EmbeddingTable:
    table = EmbeddingTable(dims=dims, kind=TEXT)
    for product in catalog:
        table.vectors[product.id] = hash_embed(product, dims, seed)
    return table


# ---------------------------------------------------------------------------
# Similarity queries


def similarity(table: EmbeddingTable, a: ItemId, b: ItemId) -> Optional[float]:
    """Inner product for TEXT tables, cosine for ITEM2VEC; None if either
    item is absent."""
    va = table.vectors.get(a)
    vb = table.vectors.get(b)
    if va is None or vb is None:
        return None
    dot = float(va @ vb)
    if table.kind == ITEM2VEC:
        na = math.sqrt(float(va @ va))
        nb = math.sqrt(float(vb @ vb))
        if na < 1e-12 or nb < 1e-12:
            return 0.0
        return dot / (na * nb)
    return dot


def top_similar(
    table: EmbeddingTable,
    query: ItemId,
    m: int,
    exclude: frozenset[ItemId] | set[ItemId] = frozenset(),
    restrict_locale: Optional[str] = None,
) -> list[tuple[ItemId, float]]:
    """m most similar items to the query, ties by ascending ItemId.

    The query itself is never returned.  Absent query -> empty list.
    """
    if m <= 0 or query not in table.vectors:
        return []
    items, matrix = table.dense()
    q = table.vectors[query]
    scores = matrix @ q
    if table.kind == ITEM2VEC:
        norms = np.linalg.norm(matrix, axis=1) * max(float(np.linalg.norm(q)), 1e-12)
        scores = scores / np.maximum(norms, 1e-12)
    ranked = sorted(
        (
            (items[i], float(scores[i]))
            for i in range(len(items))
            if items[i] != query
            and items[i] not in exclude
            and (restrict_locale is None or items[i].locale == restrict_locale)
        ),
        key=lambda kv: (-kv[1], kv[0]),
    )
    return ranked[:m]
