"""End-to-end pipeline wiring: build artifacts, train, predict, evaluate.

Every stage exists in two forms: an in-memory function (used by tests and
notebook-style scripts) and a file-based wrapper working out of a config's
workdir (used by the CLI).  All randomness flows from the single config
seed, so fixed inputs give byte-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import candgen, covis, embed, evaluation, featgen, gbdt
from .corpus import (
    FoldAssignment,
    ItemId,
    ProductCatalog,
    SessionRecord,
    assign_folds,
    parse_products,
    parse_sessions,
    serialize_products,
    serialize_sessions,
    synth_corpus,
    write_predictions,
)

__all__ = [
    "PipelineConfig",
    "ConfigError",
    "StageError",
    "BuiltArtifacts",
    "build_artifacts",
    "train_model",
    "predict_rankings",
    "evaluate_predictions",
    "stage_synth",
    "stage_build",
    "stage_train",
    "stage_predict",
    "stage_eval",
    "stage_importance",
]


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 2."""


class StageError(RuntimeError):
    """Runtime failure, prefixed with the stage name."""


@dataclass
class PipelineConfig:
    sessions: Optional[str] = None
    products: Optional[str] = None
    test_sessions: Optional[str] = None
    embeddings: Optional[str] = None
    workdir: str = "work"
    k_folds: int = 5
    k: int = 100
    seed: int = 0
    train_locales: Optional[list[str]] = None
    eval_locales: Optional[list[str]] = None
    max_negatives: Optional[int] = None
    text_dims: int = 64
    item2vec_enabled: bool = True
    item2vec_epochs: int = 5
    item2vec_min_count: int = 5
    item2vec_window: int = 5
    item2vec_negatives: int = 5
    item2vec_dims: Optional[int] = None
    item2vec_threshold: Optional[float] = None
    gbdt: gbdt.GbdtParams = field(default_factory=gbdt.GbdtParams)
    synth: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("K must be >= 1")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        paths = [p for p in (self.sessions, self.products, self.test_sessions, self.embeddings) if p]
        if len(paths) != len(set(paths)):
            raise ConfigError("input paths must be distinct")

    @classmethod
    def from_file(cls, path: str, **overrides) -> "PipelineConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config JSON: {exc}") from exc
        return cls.from_dict(raw, **overrides)

    @classmethod
    def from_dict(cls, raw: dict, **overrides) -> "PipelineConfig":
        kwargs: dict = {}
        paths = raw.get("paths", {})
        for key in ("sessions", "products", "test_sessions", "embeddings", "workdir"):
            if key in paths:
                kwargs[key] = paths[key]
        for key in (
            "k_folds", "k", "seed", "train_locales", "eval_locales",
            "max_negatives", "text_dims", "synth",
        ):
            if key in raw:
                kwargs[key] = raw[key]
        for key, val in raw.get("item2vec", {}).items():
            attr = "item2vec_enabled" if key == "enabled" else f"item2vec_{key}"
            if not hasattr(cls, attr) and attr not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown item2vec option {key!r}")
            kwargs[attr] = val
        if "gbdt" in raw:
            try:
                kwargs["gbdt"] = gbdt.GbdtParams(**raw["gbdt"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad gbdt params: {exc}") from exc
        known = set(cls.__dataclass_fields__) | {"paths", "item2vec"}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def item2vec_params_by_locale(self) -> Optional[dict[str, embed.Item2VecParams]]:
        return None  # filled per corpus; see _i2v_params

    def workpath(self, name: str) -> Path:
        return Path(self.workdir) / name


def _i2v_params(cfg: PipelineConfig, locales: Sequence[str]) -> Optional[dict[str, embed.Item2VecParams]]:
    if not cfg.item2vec_enabled:
        return None
    out = {}
    for locale in locales:
        overrides: dict = dict(
            epochs=cfg.item2vec_epochs,
            min_count=cfg.item2vec_min_count,
            window=cfg.item2vec_window,
            negatives=cfg.item2vec_negatives,
        )
        if cfg.item2vec_dims is not None:
            overrides["dims"] = cfg.item2vec_dims
        if cfg.item2vec_threshold is not None:
            overrides["subsample_threshold"] = cfg.item2vec_threshold
        out[locale] = embed.params_for_locale(locale, seed=cfg.seed, **overrides)
    return out


# ---------------------------------------------------------------------------
# In-memory stages


@dataclass
class BuiltArtifacts:
    folds: FoldAssignment
    covis_store: covis.CovisStore
    bundle: featgen.LeakSafeBundle
    text_table: Optional[embed.EmbeddingTable]
    train_cands: list[candgen.CandidateSet]
    train_features: featgen.FeatureTable
    sessions: list[SessionRecord]
    catalog: ProductCatalog


def _train_candidates(
    sessions: Sequence[SessionRecord],
    store: covis.CovisStore,
    bundle: featgen.LeakSafeBundle,
    text_table,
    catalog,
    k: int,
) -> list[candgen.CandidateSet]:
    """Candidates for training sessions, using each session's fold-excluded
    y-store (the leak rule extends to candidate generation)."""
    by_fold: dict[int, list[SessionRecord]] = {}
    for s in sessions:
        by_fold.setdefault(bundle.folds.fold_of[s.session_id], []).append(s)
    out: dict[int, candgen.CandidateSet] = {}
    for fold, fold_sessions in sorted(by_fold.items()):
        sets = candgen.generate_candidates_bulk(
            fold_sessions, store, bundle.next_store(fold), k
        )
        for sess, cs in zip(fold_sessions, sets):
            cs = candgen.backfill(
                cs, sess,
                bundle.item2vec_table(fold, sess.locale),
                text_table, catalog, k,
            )
            out[sess.session_id] = cs
    return [out[s.session_id] for s in sessions]


def build_artifacts(
    sessions: Sequence[SessionRecord],
    catalog: ProductCatalog,
    cfg: PipelineConfig,
    text_table: Optional[embed.EmbeddingTable] = None,
) -> BuiltArtifacts:
    if any(s.next_item is None for s in sessions):
        raise StageError("build: every training session needs next_item")
    folds = assign_folds(sessions, cfg.k_folds)
    store = covis.build_covis(sessions)
    locales = sorted({s.locale for s in sessions})
    bundle = featgen.build_bundle(sessions, folds, _i2v_params(cfg, locales))
    if text_table is None:
        text_table = embed.hash_embed_catalog(catalog, dims=cfg.text_dims, seed=cfg.seed)
    cands = _train_candidates(sessions, store, bundle, text_table, catalog, cfg.k)
    features = featgen.build_feature_table(
        sessions, cands, store, bundle, text_table,
        use_fold_versions=True, max_negatives=cfg.max_negatives,
    )
    return BuiltArtifacts(
        folds=folds, covis_store=store, bundle=bundle, text_table=text_table,
        train_cands=cands, train_features=features,
        sessions=list(sessions), catalog=catalog,
    )


def train_model(
    artifacts: BuiltArtifacts,
    cfg: PipelineConfig,
    train_locales: Optional[Sequence[str]] = None,
) -> gbdt.GbdtModel:
    """Train the re-ranker; ``train_locales`` restricts which sessions' rows
    are used (the feature schema itself is locale-free)."""
    table = artifacts.train_features
    locales = train_locales if train_locales is not None else cfg.train_locales
    if locales is not None:
        wanted = set(locales)
        mask = np.array([c.locale in wanted for c in table.candidates])
        if not mask.any():
            raise StageError("train: no rows left after locale filtering")
        table = _subset(table, mask)
    return gbdt.train(table, replace(cfg.gbdt, seed=cfg.seed))


def _subset(table: featgen.FeatureTable, mask: np.ndarray) -> featgen.FeatureTable:
    idx = np.flatnonzero(mask)
    return featgen.FeatureTable(
        schema=table.schema,
        session_ids=table.session_ids[idx],
        candidates=[table.candidates[i] for i in idx],
        values=table.values[idx],
        labels=table.labels[idx] if table.labels is not None else None,
    )


def predict_rankings(
    model: gbdt.GbdtModel,
    test_sessions: Sequence[SessionRecord],
    artifacts: BuiltArtifacts,
    cfg: PipelineConfig,
    return_scores: bool = False,
):
    """Candidate generation + scoring + ranking for a test stream, using the
    full-train artifact versions."""
    store = artifacts.covis_store
    bundle = artifacts.bundle
    sets = candgen.generate_candidates_bulk(
        test_sessions, store, bundle.next_store(None), cfg.k
    )
    sets = [
        candgen.backfill(
            cs, sess,
            bundle.item2vec_table(None, sess.locale),
            artifacts.text_table, artifacts.catalog, cfg.k,
        )
        for sess, cs in zip(test_sessions, sets)
    ]
    stripped = [
        SessionRecord(s.session_id, s.locale, s.prev_items, None) for s in test_sessions
    ]
    features = featgen.build_feature_table(
        stripped, sets, store, bundle, artifacts.text_table, use_fold_versions=False
    )
    probs = gbdt.predict_table(model, features) if len(features) else np.empty(0)

    rankings = []
    score_maps = []
    pos = 0
    for sess, cs in zip(test_sessions, sets):
        n = len(cs)
        scored = [
            (item, float(probs[pos + i]), src)
            for i, (item, src) in enumerate(cs.entries)
        ]
        pos += n
        rankings.append(evaluation.rank(sess.session_id, scored, cfg.k))
        if return_scores:
            score_maps.append({item: p for item, p, _ in scored})
    if return_scores:
        return rankings, score_maps
    return rankings


def evaluate_predictions(
    rankings: Sequence[evaluation.RankedList],
    test_sessions: Sequence[SessionRecord],
    k: int,
    eval_locales: Optional[Sequence[str]] = None,
) -> evaluation.EvalReport:
    truth = {
        s.session_id: s.next_item for s in test_sessions if s.next_item is not None
    }
    wanted = set(eval_locales) if eval_locales else None
    kept = [
        r for r in rankings
        if r.session_id in truth
        and (wanted is None or truth[r.session_id].locale in wanted)
    ]
    return evaluation.mrr_at_k(kept, truth, k)


# ---------------------------------------------------------------------------
# File-based stages (CLI)


def _read_sessions(path: Optional[str], stage: str) -> list[SessionRecord]:
    if not path:
        raise ConfigError(f"{stage}: sessions path not configured")
    p = Path(path)
    if not p.exists():
        raise StageError(f"{stage}: sessions file not found: {p}")
    with open(p) as fh:
        return parse_sessions(fh)


def stage_synth(cfg: PipelineConfig) -> None:
    spec = cfg.synth
    for key in ("n_sessions", "n_items", "locales"):
        if key not in spec:
            raise ConfigError(f"synth: missing synth.{key}")
    sessions, catalog = synth_corpus(
        spec["n_sessions"], spec["n_items"], spec["locales"],
        spec.get("transition_concentration", 1.0), cfg.seed,
        shared_transitions=spec.get("shared_transitions", False),
    )
    if not cfg.sessions or not cfg.products:
        raise ConfigError("synth: paths.sessions and paths.products required")
    holdout = spec.get("holdout_fraction", 0.0)
    train, test = sessions, []
    if holdout > 0:
        by_locale: dict[str, list[SessionRecord]] = {}
        for s in sessions:
            by_locale.setdefault(s.locale, []).append(s)
        train, test = [], []
        for locale in sorted(by_locale):
            block = by_locale[locale]
            cut = int(len(block) * (1 - holdout))
            train.extend(block[:cut])
            test.extend(block[cut:])
        train = [replace(s, session_id=i) for i, s in enumerate(train)]
        test = [replace(s, session_id=i) for i, s in enumerate(test)]
    Path(cfg.sessions).parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.sessions, "w") as fh:
        serialize_sessions(train, fh)
    with open(cfg.products, "w") as fh:
        serialize_products(catalog, fh)
    if test:
        if not cfg.test_sessions:
            raise ConfigError("synth: holdout requested but paths.test_sessions unset")
        with open(cfg.test_sessions, "w") as fh:
            serialize_sessions(test, fh)


def stage_build(cfg: PipelineConfig) -> BuiltArtifacts:
    sessions = _read_sessions(cfg.sessions, "build")
    if not cfg.products or not Path(cfg.products).exists():
        raise StageError(f"build: products file not found: {cfg.products}")
    with open(cfg.products) as fh:
        catalog = parse_products(fh)
    text_table = None
    if cfg.embeddings:
        if not Path(cfg.embeddings).exists():
            raise StageError(f"build: embeddings file not found: {cfg.embeddings}")
        with open(cfg.embeddings) as fh:
            text_table = embed.load_text_embeddings(fh)
    artifacts = build_artifacts(sessions, catalog, cfg, text_table=text_table)

    work = Path(cfg.workdir)
    work.mkdir(parents=True, exist_ok=True)
    with open(work / "covis.tsv", "w") as fh:
        covis.dump_covis(artifacts.covis_store, fh)
    versions = [(None, "full")] + [(f, f"fold{f}") for f in range(cfg.k_folds)]
    for fold, tag in versions:
        with open(work / f"next_{tag}.tsv", "w") as fh:
            covis.dump_covis(artifacts.bundle.next_store(fold), fh)
        with open(work / f"item_stats_{tag}.tsv", "w") as fh:
            covis.dump_item_stats(artifacts.bundle.stats(fold), fh)
    for (fold, locale), table in sorted(
        artifacts.bundle.item2vec.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])
    ):
        tag = "full" if fold is None else f"fold{fold}"
        with open(work / f"item2vec_{locale}_{tag}.vec", "w") as fh:
            embed.dump_embeddings(table, fh)
    if artifacts.text_table is not None and not cfg.embeddings:
        with open(work / "text_embeddings.vec", "w") as fh:
            embed.dump_embeddings(artifacts.text_table, fh)
    with open(work / "candidates_train.jsonl", "w") as fh:
        candgen.dump_candidates(artifacts.train_cands, fh)
    with open(work / "features_train.csv", "w") as fh:
        featgen.export_rows(artifacts.train_features, fh)
    return artifacts


def _rebuild_artifacts(cfg: PipelineConfig) -> BuiltArtifacts:
    # predict/eval stages re-derive in-memory state from the input files;
    # the workdir holds the inspectable dumps
    return stage_build_in_memory(cfg)


def stage_build_in_memory(cfg: PipelineConfig) -> BuiltArtifacts:
    sessions = _read_sessions(cfg.sessions, "build")
    with open(cfg.products) as fh:
        catalog = parse_products(fh)
    text_table = None
    if cfg.embeddings:
        with open(cfg.embeddings) as fh:
            text_table = embed.load_text_embeddings(fh)
    return build_artifacts(sessions, catalog, cfg, text_table=text_table)


def stage_train(cfg: PipelineConfig, artifacts: Optional[BuiltArtifacts] = None) -> gbdt.GbdtModel:
    if artifacts is not None:
        model = train_model(artifacts, cfg)
    else:
        features_path = cfg.workpath("features_train.csv")
        if not features_path.exists():
            raise StageError(f"train: missing {features_path}; run build first")
        with open(features_path) as fh:
            table = featgen.import_rows(fh)
        if cfg.train_locales is not None:
            wanted = set(cfg.train_locales)
            mask = np.array([c.locale in wanted for c in table.candidates])
            if not mask.any():
                raise StageError("train: no rows left after locale filtering")
            table = _subset(table, mask)
        model = gbdt.train(table, replace(cfg.gbdt, seed=cfg.seed))
    cfg.workpath("model.json").parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.workpath("model.json"), "w") as fh:
        gbdt.save(model, fh)
    return model


def stage_predict(cfg: PipelineConfig, artifacts: Optional[BuiltArtifacts] = None) -> list[evaluation.RankedList]:
    model_path = cfg.workpath("model.json")
    if not model_path.exists():
        raise StageError(f"predict: missing {model_path}; run train first")
    with open(model_path) as fh:
        model = gbdt.load(fh)
    test_sessions = _read_sessions(cfg.test_sessions, "predict")
    if artifacts is None:
        artifacts = _rebuild_artifacts(cfg)
    rankings = predict_rankings(model, test_sessions, artifacts, cfg)
    with open(cfg.workpath("predictions.jsonl"), "w") as fh:
        write_predictions(fh, [(r.session_id, r.items) for r in rankings])
    return rankings


def stage_eval(cfg: PipelineConfig) -> evaluation.EvalReport:
    pred_path = cfg.workpath("predictions.jsonl")
    if not pred_path.exists():
        raise StageError(f"eval: missing {pred_path}; run predict first")
    test_sessions = _read_sessions(cfg.test_sessions, "eval")
    truth = {s.session_id: s.next_item for s in test_sessions if s.next_item}
    rankings = []
    with open(pred_path) as fh:
        for line in fh:
            obj = json.loads(line)
            sid = obj["session_id"]
            locale = truth[sid].locale if sid in truth else None
            rankings.append(
                evaluation.RankedList(
                    session_id=sid,
                    items=[ItemId(locale, raw) for raw in obj["predictions"]],
                )
            )
    report = evaluate_predictions(rankings, test_sessions, cfg.k, cfg.eval_locales)
    with open(cfg.workpath("report.json"), "w") as fh:
        evaluation.write_report(report, fh)
    return report


def stage_importance(cfg: PipelineConfig, top: int = 20) -> list[tuple[str, float]]:
    model_path = cfg.workpath("model.json")
    if not model_path.exists():
        raise StageError(f"importance: missing {model_path}; run train first")
    with open(model_path) as fh:
        model = gbdt.load(fh)
    ranked = gbdt.feature_importance(model, "GAIN")[:top]
    with open(cfg.workpath("importance.tsv"), "w") as fh:
        for i, (name, score) in enumerate(ranked, start=1):
            fh.write(f"{i}\t{name}\t{score}\n")
    return ranked
