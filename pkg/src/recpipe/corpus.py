"""Session/product data model, JSONL ingestion, fold assignment, synthetic corpora.

Sessions are anonymous ordered item sequences (``prev_items``) with one
optional held-out ``next_item``.  Items are locale-qualified: the same raw
id in two locales is two distinct items.  File formats are JSON-lines
(UTF-8, LF), one object per line.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

__all__ = [
    "ItemId",
    "SessionRecord",
    "Product",
    "ProductCatalog",
    "FoldAssignment",
    "ParseError",
    "parse_sessions",
    "serialize_sessions",
    "parse_products",
    "serialize_products",
    "assign_folds",
    "synth_corpus",
]


class ParseError(ValueError):
    """Malformed input line; the message names the 1-based line number."""


class ItemId(NamedTuple):
    """Locale-qualified item identifier.  Tuple order gives the canonical
    ascending sort used everywhere ties are broken by item id."""

    locale: str
    raw: str

    def __str__(self) -> str:
        return f"{self.locale}:{self.raw}"

    @classmethod
    def parse(cls, text: str) -> "ItemId":
        locale, sep, raw = text.partition(":")
        if not sep or not locale or not raw:
            raise ValueError(f"malformed item id {text!r}, expected 'locale:raw'")
        return cls(locale, raw)


def _check_locale(locale: str) -> str:
    if not locale or ":" in locale or "\t" in locale:
        raise ValueError(f"invalid locale {locale!r}")
    return locale


@dataclass(frozen=True)
class SessionRecord:
    session_id: int
    locale: str
    prev_items: tuple[ItemId, ...]
    next_item: Optional[ItemId] = None

    def __post_init__(self):
        if len(self.prev_items) < 2:
            raise ValueError("prev_items length < 2")
        for it in self.prev_items:
            if it.locale != self.locale:
                raise ValueError("prev_items locale mismatch")
        if self.next_item is not None and self.next_item.locale != self.locale:
            raise ValueError("next_item locale mismatch")


@dataclass(frozen=True)
class Product:
    id: ItemId
    title: str
    brand: Optional[str] = None
    price: Optional[float] = None
    extra: tuple[tuple[str, str], ...] = ()


@dataclass
class ProductCatalog:
    products: dict[ItemId, Product] = field(default_factory=dict)

    def add(self, product: Product) -> None:
        if product.id in self.products:
            raise ValueError(f"duplicate product id {product.id}")
        self.products[product.id] = product

    def get(self, item: ItemId) -> Optional[Product]:
        return self.products.get(item)

    def items_of_locale(self, locale: str) -> list[ItemId]:
        return sorted(i for i in self.products if i.locale == locale)

    def __len__(self) -> int:
        return len(self.products)

    def __iter__(self):
        return iter(self.products.values())


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: Mapping[int, int]

    def sessions_in_fold(self, fold: int) -> list[int]:
        return sorted(s for s, f in self.fold_of.items() if f == fold)


# ---------------------------------------------------------------------------
# JSONL parsing / serialization


def parse_sessions(stream: IO[str] | Iterable[str]) -> list[SessionRecord]:
    """Parse a sessions.jsonl stream; session_id is the 0-based line index."""
    records: list[SessionRecord] = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON at line {lineno}: {exc}") from exc
        try:
            locale = _check_locale(str(obj["locale"]))
            prev = obj["prev_items"]
        except KeyError as exc:
            raise ParseError(f"missing key {exc} at line {lineno}") from exc
        if not isinstance(prev, list) or len(prev) < 2:
            raise ParseError(f"prev_items length < 2 at line {lineno}")
        if any(not isinstance(p, str) or not p for p in prev):
            raise ParseError(f"empty or non-string item at line {lineno}")
        nxt = obj.get("next_item")
        if nxt is not None and (not isinstance(nxt, str) or not nxt):
            raise ParseError(f"empty next_item at line {lineno}")
        records.append(
            SessionRecord(
                session_id=len(records),
                locale=locale,
                prev_items=tuple(ItemId(locale, p) for p in prev),
                next_item=ItemId(locale, nxt) if nxt is not None else None,
            )
        )
    return records


def serialize_sessions(records: Sequence[SessionRecord], stream: IO[str]) -> None:
    for rec in records:
        obj: dict = {
            "locale": rec.locale,
            "prev_items": [it.raw for it in rec.prev_items],
        }
        if rec.next_item is not None:
            obj["next_item"] = rec.next_item.raw
        stream.write(json.dumps(obj, ensure_ascii=False) + "\n")


def parse_products(stream: IO[str] | Iterable[str]) -> ProductCatalog:
    """Parse a products.jsonl stream into a catalog keyed by ItemId."""
    catalog = ProductCatalog()
    known_keys = {"id", "locale", "title", "brand", "price"}
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON at line {lineno}: {exc}") from exc
        for key in ("id", "locale", "title"):
            if key not in obj:
                raise ParseError(f"missing key '{key}' at line {lineno}")
        locale = _check_locale(str(obj["locale"]))
        item = ItemId(locale, str(obj["id"]))
        price = obj.get("price")
        extra = tuple(
            (k, str(v)) for k, v in obj.items() if k not in known_keys
        )
        product = Product(
            id=item,
            title=str(obj["title"]),
            brand=obj.get("brand"),
            price=float(price) if price is not None else None,
            extra=extra,
        )
        try:
            catalog.add(product)
        except ValueError as exc:
            raise ParseError(f"{exc} at line {lineno}") from exc
    return catalog


def serialize_products(catalog: ProductCatalog, stream: IO[str]) -> None:
    for product in sorted(catalog, key=lambda p: p.id):
        obj: dict = {
            "id": product.id.raw,
            "locale": product.id.locale,
            "title": product.title,
        }
        if product.brand is not None:
            obj["brand"] = product.brand
        if product.price is not None:
            obj["price"] = product.price
        for k, v in product.extra:
            obj[k] = v
        stream.write(json.dumps(obj, ensure_ascii=False) + "\n")


def write_predictions(stream: IO[str], rows: Iterable[tuple[int, Sequence[ItemId]]]) -> None:
    """Write predictions.jsonl: {"session_id": n, "predictions": [raw ids]}."""
    for session_id, items in rows:
        stream.write(
            json.dumps(
                {"session_id": session_id, "predictions": [it.raw for it in items]}
            )
            + "\n"
        )


# ---------------------------------------------------------------------------
# Fold assignment


def assign_folds(sessions: Sequence[SessionRecord], k: int = 5) -> FoldAssignment:
    """Contiguous sequential folds: fold = floor(rank * k / N) by session_id."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if not sessions:
        raise ValueError("no sessions to fold")
    n = len(sessions)
    if k > n:
        raise ValueError(f"k={k} exceeds number of sessions ({n})")
    ordered = sorted(s.session_id for s in sessions)
    fold_of = {sid: (rank * k) // n for rank, sid in enumerate(ordered)}
    return FoldAssignment(k=k, fold_of=fold_of)


# ---------------------------------------------------------------------------
# Synthetic corpus

_CATEGORY_WORDS = [
    "garden", "kitchen", "audio", "sports", "office", "toys",
    "tools", "books", "beauty", "grocery", "auto", "pets",
]
_BRANDS = ["Acme", "Nordwind", "Kappa", "Yotta", "Brio", "Lumen"]
_SYLLABLES = ["ka", "ro", "mi", "ta", "zu", "len", "var", "osh", "pel", "dun"]

# Walks follow a preferred successor with this probability and jump to a
# uniformly random item otherwise; keeps end-to-end MRR checks non-trivial.
_NOISE_PROB = 0.05


def _item_word(rng: np.random.Generator) -> str:
    return "".join(rng.choice(_SYLLABLES) for _ in range(3))


def synth_corpus(
    n_sessions: int | Mapping[str, int],
    n_items: int,
    locales: Sequence[str],
    transition_concentration: float,
    seed: int,
    shared_transitions: bool = False,
) -> tuple[list[SessionRecord], ProductCatalog]:
    """Generate a Markov-structured corpus.

    Each locale gets ``n_items`` items; every item has
    ``ceil(transition_concentration)`` preferred successors.  Sessions are
    random walks of length 3-12 whose final step is the next_item.  With
    ``shared_transitions`` all locales reuse one successor table, so
    feature/label structure transfers across locales.  Deterministic given
    the seed.
    """
    if n_items < 10:
        raise ValueError("n_items must be >= 10")
    if transition_concentration <= 0:
        raise ValueError("transition_concentration must be > 0")
    n_succ = math.ceil(transition_concentration)
    if isinstance(n_sessions, Mapping):
        per_locale = {loc: int(n_sessions[loc]) for loc in locales}
    else:
        per_locale = {loc: int(n_sessions) for loc in locales}

    shared_succ = None
    if shared_transitions:
        t_rng = np.random.default_rng([seed, 0])
        shared_succ = _draw_successors(t_rng, n_items, n_succ)

    sessions: list[SessionRecord] = []
    catalog = ProductCatalog()
    for li, locale in enumerate(locales):
        _check_locale(locale)
        rng = np.random.default_rng([seed, li + 1])
        succ = shared_succ if shared_succ is not None else _draw_successors(rng, n_items, n_succ)
        width = len(str(n_items - 1))
        items = [ItemId(locale, f"I{i:0{width}d}") for i in range(n_items)]

        for i, item in enumerate(items):
            category = _CATEGORY_WORDS[i % len(_CATEGORY_WORDS)]
            title = f"{category}: {_item_word(rng)}"
            brand = _BRANDS[int(rng.integers(len(_BRANDS)))] if rng.random() < 0.7 else None
            price = round(float(rng.uniform(1, 100)), 2) if rng.random() < 0.8 else None
            catalog.add(Product(id=item, title=title, brand=brand, price=price))

        for _ in range(per_locale[locale]):
            length = int(rng.integers(3, 13))
            walk = [int(rng.integers(n_items))]
            for _ in range(length - 1):
                cur = walk[-1]
                if rng.random() < _NOISE_PROB:
                    walk.append(int(rng.integers(n_items)))
                else:
                    walk.append(int(succ[cur][rng.integers(n_succ)]))
            sessions.append(
                SessionRecord(
                    session_id=len(sessions),
                    locale=locale,
                    prev_items=tuple(items[j] for j in walk[:-1]),
                    next_item=items[walk[-1]],
                )
            )
    return sessions, catalog


def preferred_successors(
    n_items: int, transition_concentration: float, seed: int,
    locale_index: int = 1, shared_transitions: bool = False,
) -> np.ndarray:
    """Successor table used by ``synth_corpus`` (oracle access for tests)."""
    n_succ = math.ceil(transition_concentration)
    if shared_transitions:
        rng = np.random.default_rng([seed, 0])
    else:
        rng = np.random.default_rng([seed, locale_index])
    return _draw_successors(rng, n_items, n_succ)


def _draw_successors(rng: np.random.Generator, n_items: int, n_succ: int) -> np.ndarray:
    succ = np.empty((n_items, n_succ), dtype=np.int64)
    for i in range(n_items):
        choices = rng.permutation(n_items)[: n_succ + 1]
        # an item is never its own preferred successor
        picked = [c for c in choices if c != i][:n_succ]
        succ[i] = picked
    return succ
