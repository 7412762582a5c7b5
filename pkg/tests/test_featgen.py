import io
import math

import numpy as np
import pytest

from recpipe.candgen import CandidateSet, CandidateSource, generate_candidates
from recpipe.corpus import ItemId, assign_folds
from recpipe.covis import build_covis, build_next
from recpipe.embed import EmbeddingTable, Item2VecParams
from recpipe.featgen import (
    FEATURE_SCHEMA,
    build_bundle,
    build_feature_table,
    build_rows,
    export_rows,
    import_rows,
    schema_fingerprint,
)
from tests.util import make_session, random_corpus


def uk(raw):
    return ItemId("UK", raw)


def cand_set(sid, raws):
    return CandidateSet(sid, [(uk(r), CandidateSource.COVIS) for r in raws])


class TestSchema:
    def test_94_columns(self):
        assert len(FEATURE_SCHEMA) == 94

    def test_ordering(self):
        assert FEATURE_SCHEMA[0] == "cs_1"
        assert FEATURE_SCHEMA[5] == "yab_1"
        assert FEATURE_SCHEMA[6] == "cs_2"
        assert FEATURE_SCHEMA[59] == "yab_10"
        assert FEATURE_SCHEMA[60] == "cand_prev_count"
        assert FEATURE_SCHEMA[61] == "cand_next_count"
        assert FEATURE_SCHEMA[62] == "last1_prev_count"
        assert FEATURE_SCHEMA[81] == "last10_next_count"
        assert FEATURE_SCHEMA[82] == "use_sim_1"
        assert FEATURE_SCHEMA[91] == "use_sim_10"
        assert FEATURE_SCHEMA[92] == "item2vec_similarity"
        assert FEATURE_SCHEMA[93] == "session_length"

    def test_fingerprint_stable(self):
        assert schema_fingerprint() == schema_fingerprint(list(FEATURE_SCHEMA))
        assert schema_fingerprint(["a"]) != schema_fingerprint()


def two_session_fixture():
    sessions = [
        make_session(0, "UK", ["A", "B", "A", "C"], "D"),
        make_session(1, "UK", ["C", "A"], "B"),
    ]
    folds = assign_folds(sessions, 2)
    covis = build_covis(sessions)
    bundle = build_bundle(sessions, folds)
    return sessions, folds, covis, bundle


class TestWorkedExample:
    """Hand-computed features for prev=[A,B,A,C]->D plus [C,A]->B."""

    def test_candidate_d_counters(self):
        sessions, _, covis, bundle = two_session_fixture()
        rows = build_rows(sessions[0], cand_set(0, ["D"]), covis, bundle, None, fold=None)
        v = dict(zip(FEATURE_SCHEMA, rows[0].values))
        # last1=C, last2=A, last3=B, last4=A
        assert v["yaxb_1"] == 1 and v["yab_1"] == 1
        assert v["yaxb_2"] == 2 and v["yab_2"] == 0
        assert v["yaxb_3"] == 1 and v["yab_3"] == 0
        assert v["yaxb_4"] == 2
        assert v["cs_1"] == 0 and v["caxb_1"] == 0
        assert rows[0].label == 1

    def test_candidate_b_counters(self):
        sessions, _, covis, bundle = two_session_fixture()
        rows = build_rows(sessions[0], cand_set(0, ["B"]), covis, bundle, None, fold=None)
        v = dict(zip(FEATURE_SCHEMA, rows[0].values))
        assert v["cs_1"] == 1 and v["yaxb_1"] == 1 and v["yab_1"] == 0
        assert v["cs_2"] == 2 and v["caxb_2"] == 1 and v["cab_2"] == 1
        assert v["cba_2"] == 1 and v["yaxb_2"] == 1 and v["yab_2"] == 1
        # last3 is B itself: self pairs never counted
        assert v["cs_3"] == 0 and v["cab_3"] == 0
        assert rows[0].label == 0

    def test_count_features(self):
        sessions, _, covis, bundle = two_session_fixture()
        rows = build_rows(sessions[0], cand_set(0, ["D", "B"]), covis, bundle, None, fold=None)
        vd = dict(zip(FEATURE_SCHEMA, rows[0].values))
        vb = dict(zip(FEATURE_SCHEMA, rows[1].values))
        # prev occurrences: A=3, B=1, C=2; next: D=1, B=1
        assert vd["cand_prev_count"] == 0 and vd["cand_next_count"] == 1
        assert vb["cand_prev_count"] == 1 and vb["cand_next_count"] == 1
        assert vd["last1_prev_count"] == 2 and vd["last1_next_count"] == 0
        assert vd["last2_prev_count"] == 3 and vd["last2_next_count"] == 0
        assert vd["last3_prev_count"] == 1 and vd["last3_next_count"] == 1
        assert vd["session_length"] == 4

    def test_null_padding_beyond_session_length(self):
        sessions, _, covis, bundle = two_session_fixture()
        rows = build_rows(sessions[0], cand_set(0, ["D"]), covis, bundle, None, fold=None)
        v = dict(zip(FEATURE_SCHEMA, rows[0].values))
        for p in range(5, 11):
            assert v[f"cs_{p}"] is None
            assert v[f"yab_{p}"] is None
            assert v[f"last{p}_prev_count"] is None
        # counter misses are 0, never null
        assert v["cs_1"] == 0

    def test_no_embeddings_means_null_similarity(self):
        sessions, _, covis, bundle = two_session_fixture()
        rows = build_rows(sessions[0], cand_set(0, ["D"]), covis, bundle, None, fold=None)
        v = dict(zip(FEATURE_SCHEMA, rows[0].values))
        assert v["item2vec_similarity"] is None
        assert all(v[f"use_sim_{p}"] is None for p in range(1, 11))


class TestTextSimilarityFeatures:
    def test_use_sim_is_inner_product(self):
        sessions, _, covis, bundle = two_session_fixture()
        text = EmbeddingTable(dims=2, kind="TEXT")
        text.vectors[uk("C")] = np.array([1.0, 0.0])
        text.vectors[uk("A")] = np.array([0.0, 2.0])
        text.vectors[uk("D")] = np.array([0.5, 0.25])
        rows = build_rows(sessions[0], cand_set(0, ["D", "B"]), covis, bundle, text, fold=None)
        vd = dict(zip(FEATURE_SCHEMA, rows[0].values))
        vb = dict(zip(FEATURE_SCHEMA, rows[1].values))
        assert vd["use_sim_1"] == pytest.approx(0.5)  # C . D
        assert vd["use_sim_2"] == pytest.approx(0.5)  # A . D
        assert vd["use_sim_3"] is None  # B has no vector
        assert vb["use_sim_1"] is None  # candidate B has no vector


class TestItem2VecFeature:
    def test_similarity_matches_cosine(self):
        sessions = [
            make_session(i, "UK", ["A", "B", "C"], "D") for i in range(20)
        ] + [make_session(i, "UK", ["C", "D"], "A") for i in range(20, 40)]
        folds = assign_folds(sessions, 2)
        covis = build_covis(sessions)
        params = {"UK": Item2VecParams(dims=8, epochs=2, min_count=1, seed=5)}
        bundle = build_bundle(sessions, folds, params)
        rows = build_rows(sessions[0], cand_set(0, ["D", "ZZZ"]), covis, bundle, None, fold=None)
        table = bundle.item2vec_table(None, "UK")
        vc, vd = table.vectors[uk("C")], table.vectors[uk("D")]
        expect = float(vc @ vd) / (np.linalg.norm(vc) * np.linalg.norm(vd))
        got = dict(zip(FEATURE_SCHEMA, rows[0].values))["item2vec_similarity"]
        assert got == pytest.approx(expect, abs=1e-12)
        # out-of-vocabulary candidate is not a neighbor
        assert dict(zip(FEATURE_SCHEMA, rows[1].values))["item2vec_similarity"] is None


class TestLeakSafety:
    def test_fold_version_excludes_own_labels(self):
        sessions, folds, covis, bundle = two_session_fixture()
        # session 0 sits in fold 0; its fold-0 view must not see its own label
        full = build_rows(sessions[0], cand_set(0, ["D"]), covis, bundle, None, fold=None)
        oof = build_rows(sessions[0], cand_set(0, ["D"]), covis, bundle, None, fold=0)
        v_full = dict(zip(FEATURE_SCHEMA, full[0].values))
        v_oof = dict(zip(FEATURE_SCHEMA, oof[0].values))
        assert v_full["yab_1"] == 1 and v_oof["yab_1"] == 0
        assert v_full["cand_next_count"] == 1 and v_oof["cand_next_count"] == 0
        # prev counts are label-free and never excluded
        assert v_oof["last2_prev_count"] == v_full["last2_prev_count"] == 3

    def test_table_fold_versions_match_per_session_calls(self):
        sessions = random_corpus(60, 15, seed=21)
        folds = assign_folds(sessions, 3)
        covis = build_covis(sessions)
        bundle = build_bundle(sessions, folds)
        csets = [
            generate_candidates(s, covis, bundle.next_store(None), k=5) for s in sessions
        ]
        table = build_feature_table(sessions, csets, covis, bundle, None, use_fold_versions=True)
        by_sid = {}
        for s, cs in zip(sessions, csets):
            fold = folds.fold_of[s.session_id]
            by_sid[s.session_id] = build_rows(s, cs, covis, bundle, None, fold=fold)
        idx = {}
        for row in table.rows():
            ref = by_sid[row.session_id][idx.setdefault(row.session_id, 0)]
            idx[row.session_id] += 1
            assert row.candidate == ref.candidate
            assert row.values == ref.values
            assert row.label == ref.label


class TestBuildFeatureTable:
    def test_labels(self):
        sessions, folds, covis, bundle = two_session_fixture()
        csets = [cand_set(0, ["D", "B"]), cand_set(1, ["B", "D"])]
        table = build_feature_table(sessions, csets, covis, bundle, None, use_fold_versions=False)
        assert list(table.labels) == [1, 0, 1, 0]

    def test_max_negatives_keeps_positive(self):
        sessions, folds, covis, bundle = two_session_fixture()
        csets = [cand_set(0, ["X1", "X2", "X3", "D"]), cand_set(1, ["B", "X1"])]
        table = build_feature_table(
            sessions, csets, covis, bundle, None, use_fold_versions=False, max_negatives=1
        )
        got = {}
        for row in table.rows():
            got.setdefault(row.session_id, []).append((row.candidate.raw, row.label))
        assert got[0] == [("X1", 0), ("D", 1)]
        assert got[1] == [("B", 1), ("X1", 0)]

    def test_mismatched_candidate_set_rejected(self):
        sessions, folds, covis, bundle = two_session_fixture()
        with pytest.raises(ValueError):
            build_feature_table(
                sessions, [cand_set(5, ["D"]), cand_set(1, ["B"])], covis, bundle, None, False
            )


class TestCsvRoundTrip:
    def build_table(self):
        sessions = random_corpus(40, 12, seed=8)
        folds = assign_folds(sessions, 2)
        covis = build_covis(sessions)
        bundle = build_bundle(sessions, folds)
        csets = [
            generate_candidates(s, covis, bundle.next_store(None), k=6) for s in sessions
        ]
        return build_feature_table(sessions, csets, covis, bundle, None, use_fold_versions=True)

    def test_round_trip_preserves_nulls(self):
        table = self.build_table()
        buf = io.StringIO()
        export_rows(table, buf)
        buf.seek(0)
        again = import_rows(buf)
        assert len(again) == len(table)
        assert list(again.session_ids) == list(table.session_ids)
        assert again.candidates == table.candidates
        assert list(again.labels) == list(table.labels)
        # NaN stays NaN and 0 stays 0: no conflation
        same_nan = np.isnan(table.values) == np.isnan(again.values)
        assert same_nan.all()
        mask = ~np.isnan(table.values)
        assert (table.values[mask] == again.values[mask]).all()

    def test_header_mismatch_rejected(self):
        with pytest.raises(ValueError, match="header"):
            import_rows(io.StringIO("session_id,candidate,bogus\n"))

    def test_empty_file_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            import_rows(io.StringIO(""))

    def test_null_encoded_as_empty_field(self):
        table = self.build_table()
        buf = io.StringIO()
        export_rows(table, buf)
        body = buf.getvalue().splitlines()[1:]
        assert any(",," in line for line in body)
        assert "nan" not in buf.getvalue().lower().replace("candidate", "")
