import io

import numpy as np
import pytest

from recpipe.candgen import (
    CandidateIndex,
    CandidateSet,
    CandidateSource,
    backfill,
    dump_candidates,
    generate_candidates,
    generate_candidates_bulk,
    load_candidates,
)
from recpipe.corpus import ItemId, Product, ProductCatalog
from recpipe.covis import build_covis, build_next
from recpipe.embed import EmbeddingTable
from tests.util import make_session, random_corpus


def uk(raw):
    return ItemId("UK", raw)


def stores_from(sessions):
    return build_covis(sessions), build_next(sessions)


class TestWorkedExample:
    """Training corpus [A,B]->C and [A,C]->B, query session [A, B]."""

    def sessions(self):
        return [
            make_session(0, "UK", ["A", "B"], "C"),
            make_session(1, "UK", ["A", "C"], "B"),
        ]

    def test_candidates_and_order(self):
        covis, nstore = stores_from(self.sessions())
        query = make_session(9, "UK", ["A", "B"])
        cands = generate_candidates(query, covis, nstore, k=10)
        # by hand: cs rows give A<->B 1, A<->C 1; yab gives B->C 1, C->B 1
        # s(B) = cs(A,B)=1; s(C) = cs(A,C)+yab(B,C)=2; s(A) = cs(B,A)=1
        assert cands.items() == [uk("C"), uk("A"), uk("B")]
        assert all(src is CandidateSource.COVIS for _, src in cands.entries)

    def test_prev_items_not_excluded(self):
        covis, nstore = stores_from(self.sessions())
        query = make_session(9, "UK", ["A", "B"])
        cands = generate_candidates(query, covis, nstore, k=10)
        assert uk("A") in cands.items()
        assert uk("B") in cands.items()

    def test_truncation(self):
        covis, nstore = stores_from(self.sessions())
        query = make_session(9, "UK", ["A", "B"])
        cands = generate_candidates(query, covis, nstore, k=1)
        assert cands.items() == [uk("C")]


class TestScoring:
    def test_multiplicity_counts_each_occurrence(self):
        sessions = [make_session(0, "UK", ["A", "B"], "C")]
        covis, nstore = stores_from(sessions)
        single = generate_candidates(make_session(1, "UK", ["A", "X"]), covis, nstore, 10)
        double = generate_candidates(make_session(2, "UK", ["A", "A"]), covis, nstore, 10)
        idx = CandidateIndex.from_stores(covis, nstore)
        w = idx.neighbors[uk("A")][uk("B")]
        assert [b for b, _ in single.entries] == [b for b, _ in double.entries]
        # rebuild the scores by hand to check the doubling
        s1 = sum(idx.neighbors.get(a, {}).get(uk("B"), 0) for a in [uk("A"), uk("X")])
        s2 = sum(idx.neighbors.get(a, {}).get(uk("B"), 0) for a in [uk("A"), uk("A")])
        assert s2 == 2 * s1 == 2 * w

    def test_tie_break_ascending_id(self):
        sessions = [
            make_session(0, "UK", ["A", "Z"], None),
            make_session(1, "UK", ["A", "B"], None),
        ]
        covis, nstore = stores_from(sessions)
        cands = generate_candidates(make_session(2, "UK", ["A", "A"]), covis, nstore, 10)
        # B and Z both score cs(A,.)=1 from each A occurrence; tie -> B first
        assert cands.items() == [uk("B"), uk("Z")]

    def test_no_candidates_for_unseen_items(self):
        covis, nstore = stores_from([make_session(0, "UK", ["A", "B"], "C")])
        cands = generate_candidates(make_session(1, "UK", ["Q", "R"]), covis, nstore, 10)
        assert cands.items() == []

    def test_yab_only_pair_is_candidate(self):
        # C never co-occurs with A in prev_items, only as next after A
        covis, nstore = stores_from([make_session(0, "UK", ["B", "A"], "C")])
        cands = generate_candidates(make_session(1, "UK", ["A", "A"]), covis, nstore, 10)
        assert uk("C") in cands.items()


class TestBulkEquivalence:
    def test_matches_reference_on_random_corpus(self):
        train = random_corpus(400, 60, seed=11)
        queries = random_corpus(150, 60, seed=12)
        covis, nstore = stores_from(train)
        index = CandidateIndex.from_stores(covis, nstore)
        bulk = generate_candidates_bulk(queries, covis, nstore, k=20)
        for q, got in zip(queries, bulk):
            ref = generate_candidates(q, covis, nstore, k=20, index=index)
            assert got.session_id == ref.session_id
            assert got.entries == ref.entries

    def test_empty_session_list(self):
        covis, nstore = stores_from([make_session(0, "UK", ["A", "B"], "C")])
        assert generate_candidates_bulk([], covis, nstore, k=5) == []

    def test_queries_with_unknown_items(self):
        covis, nstore = stores_from([make_session(0, "UK", ["A", "B"], "C")])
        queries = [make_session(1, "UK", ["Z1", "A"]), make_session(2, "UK", ["Z1", "Z2"])]
        bulk = generate_candidates_bulk(queries, covis, nstore, k=5)
        for q, got in zip(queries, bulk):
            assert got.entries == generate_candidates(q, covis, nstore, k=5).entries


class TestBackfill:
    def embed_tables(self):
        i2v = EmbeddingTable(dims=2, kind="ITEM2VEC")
        i2v.vectors[uk("A")] = np.array([1.0, 0.0])
        i2v.vectors[uk("N1")] = np.array([0.9, 0.1])
        i2v.vectors[uk("N2")] = np.array([0.8, 0.2])
        text = EmbeddingTable(dims=2, kind="TEXT")
        text.vectors[uk("A")] = np.array([1.0, 0.0])
        text.vectors[uk("T1")] = np.array([0.7, 0.3])
        return i2v, text

    def test_no_fill_when_full(self):
        i2v, text = self.embed_tables()
        cands = CandidateSet(0, [(uk("C"), CandidateSource.COVIS)])
        out = backfill(cands, make_session(0, "UK", ["B", "A"]), i2v, text, None, k=1)
        assert out.entries == cands.entries

    def test_two_stage_fill_order_and_sources(self):
        i2v, text = self.embed_tables()
        cands = CandidateSet(0, [(uk("C"), CandidateSource.COVIS)])
        out = backfill(cands, make_session(0, "UK", ["B", "A"]), i2v, text, None, k=4)
        assert out.items() == [uk("C"), uk("N1"), uk("N2"), uk("T1")]
        assert [s for _, s in out.entries] == [
            CandidateSource.COVIS,
            CandidateSource.ITEM2VEC_FILL,
            CandidateSource.ITEM2VEC_FILL,
            CandidateSource.TEXT_FILL,
        ]

    def test_fill_excludes_prev_items_and_existing(self):
        i2v, text = self.embed_tables()
        cands = CandidateSet(0, [(uk("N1"), CandidateSource.COVIS)])
        out = backfill(cands, make_session(0, "UK", ["N2", "A"]), i2v, text, None, k=10)
        filled = out.items()[1:]
        assert uk("N1") not in filled
        assert uk("N2") not in filled

    def test_fill_respects_locale(self):
        i2v, _ = self.embed_tables()
        i2v.vectors[ItemId("DE", "M")] = np.array([0.95, 0.05])
        out = backfill(
            CandidateSet(0, []), make_session(0, "UK", ["B", "A"]), i2v, None, None, k=10
        )
        assert all(it.locale == "UK" for it in out.items())

    def test_missing_tables_is_noop(self):
        cands = CandidateSet(0, [(uk("C"), CandidateSource.COVIS)])
        out = backfill(cands, make_session(0, "UK", ["B", "A"]), None, None, None, k=5)
        assert out.entries == cands.entries


class TestSerialization:
    def test_round_trip(self):
        train = random_corpus(100, 20, seed=3)
        covis, nstore = stores_from(train)
        sets = generate_candidates_bulk(random_corpus(30, 20, seed=4), covis, nstore, k=8)
        sets[0] = backfill(
            sets[0],
            make_session(sets[0].session_id, "UK", ["I0", "I1"]),
            None,
            None,
            None,
            k=8,
        )
        buf = io.StringIO()
        dump_candidates(sets, buf)
        buf.seek(0)
        assert load_candidates(buf) == sets

    def test_source_tags_survive(self):
        sets = [
            CandidateSet(
                7,
                [
                    (uk("A"), CandidateSource.COVIS),
                    (uk("B"), CandidateSource.ITEM2VEC_FILL),
                    (uk("C"), CandidateSource.TEXT_FILL),
                ],
            )
        ]
        buf = io.StringIO()
        dump_candidates(sets, buf)
        buf.seek(0)
        assert load_candidates(buf) == sets
