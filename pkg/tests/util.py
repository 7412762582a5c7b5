"""Shared test helpers: tiny corpus builders and independent oracles."""

import random

from recpipe.corpus import ItemId, SessionRecord


def make_session(sid, locale, prev, nxt=None):
    return SessionRecord(
        session_id=sid,
        locale=locale,
        prev_items=tuple(ItemId(locale, p) for p in prev),
        next_item=ItemId(locale, nxt) if nxt else None,
    )


def random_corpus(n_sessions, n_items, seed, locales=("UK", "DE"), max_len=12):
    rng = random.Random(seed)
    out = []
    for i in range(n_sessions):
        locale = rng.choice(locales)
        length = rng.randint(2, max_len)
        prev = [f"I{rng.randrange(n_items)}" for _ in range(length)]
        nxt = f"I{rng.randrange(n_items)}"
        out.append(make_session(i, locale, prev, nxt))
    return out


def brute_force_counters(sessions):
    """Oracle for all six counters: enumerate every index pair per session."""
    cs, caxb, cab, cba, yaxb, yab = {}, {}, {}, {}, {}, {}

    def add(d, a, b, by=1):
        d[(a, b)] = d.get((a, b), 0) + by

    for s in sessions:
        p = s.prev_items
        n = len(p)
        for i in range(n):
            for j in range(n):
                if i == j or p[i] == p[j]:
                    continue
                if i < j:
                    add(caxb, p[i], p[j])
                    add(cs, p[i], p[j])
                    add(cs, p[j], p[i])
                if j == i + 1:
                    add(cab, p[i], p[j])
                    add(cba, p[j], p[i])
        if s.next_item is not None:
            for a in set(p):
                add(yaxb, a, s.next_item, sum(1 for x in p if x == a))
            add(yab, p[-1], s.next_item)
    return cs, caxb, cab, cba, yaxb, yab
