"""Full pipeline on a synthetic corpus: candidates -> features -> GBDT ->
MRR@K, compared against a popularity baseline.

Mirrors what `recpipe synth/build/train/predict/eval` does from the command
line, but in memory and small enough to finish in seconds.
"""

from recpipe.corpus import synth_corpus
from recpipe.evaluation import mrr_at_k, popularity_ranking
from recpipe.pipeline import (
    PipelineConfig,
    build_artifacts,
    evaluate_predictions,
    predict_rankings,
    train_model,
)

cfg = PipelineConfig.from_dict(
    {
        "k": 50,
        "k_folds": 5,
        "seed": 7,
        "max_negatives": 8,
        "item2vec": {"enabled": True, "dims": 16, "epochs": 2, "min_count": 3},
        "gbdt": {"num_rounds": 20, "min_samples_leaf": 20},
    }
)

sessions, catalog = synth_corpus({"XA": 3000, "XB": 3000}, 120, ["XA", "XB"], 1.0, seed=7)
by_locale = {}
for s in sessions:
    by_locale.setdefault(s.locale, []).append(s)
train_sessions, test_sessions = [], []
for block in by_locale.values():
    cut = int(len(block) * 0.9)
    train_sessions.extend(block[:cut])
    test_sessions.extend(block[cut:])
print(f"{len(train_sessions)} train / {len(test_sessions)} test sessions, {len(catalog)} products")

artifacts = build_artifacts(train_sessions, catalog, cfg)
model = train_model(artifacts, cfg)
rankings = predict_rankings(model, test_sessions, artifacts, cfg)
report = evaluate_predictions(rankings, test_sessions, cfg.k)

print(f"\nmodel     MRR@{cfg.k} = {report.mrr:.4f}  (hit rate {report.hit_rate_at_k:.3f})")
for locale, block in report.per_locale.items():
    print(f"  {locale}: mrr={block['mrr']:.4f} over n={block['n']}")

truth = {s.session_id: s.next_item for s in test_sessions}
stats = artifacts.bundle.stats(None)
baseline = [
    popularity_ranking(stats, s.locale, cfg.k, session_id=s.session_id)
    for s in test_sessions
]
pop = mrr_at_k(baseline, truth, cfg.k)
print(f"popularity MRR@{cfg.k} = {pop.mrr:.4f}")
print(f"\nlift over popularity: {report.mrr / pop.mrr:.1f}x")
