#!/usr/bin/env python3
"""The evaluation harness: recall@K, exact numeric and soft text matching,
and stratified reports."""

import math

from litmine.evaluation import (
    FieldPrediction,
    ItemScore,
    MatchKind,
    MatchRule,
    MetricReport,
    StratifyAxis,
    evaluate_extraction,
    match_numeric,
    match_text,
    recall_at_k,
    stratify,
)
from litmine.gateway import mock_gateway

print("== recall@K ==")
ranked = ["a", "b", "c", "d", "e"]
truth = {"b", "e"}
for k in (1, 2, 5, "auto"):
    print(f"  recall@{k}: {recall_at_k(ranked, truth, k):.2f}")

print("\n== exact numeric matching normalizes first ==")
for pred, gold in (("1,250", 1250), (0.80, "0.8"), ("−0.8", -0.8), (45, 47)):
    print(f"  {pred!r:12} vs {gold!r:8} -> {match_numeric(pred, gold)}")

print("\n== soft text matching: cosine >= 0.75, boundary inclusive ==")
gw = mock_gateway(dimension=2)
gw.chat_backend.set_embedding("anchor", (1.0, 0.0))
for target in (0.74, 0.75, 0.76):
    probe = f"probe-{target}"
    gw.chat_backend.set_embedding(probe, (target, math.sqrt(1 - target**2)))
    outcome = match_text("anchor", probe, gw)
    print(f"  similarity {outcome.similarity:.2f} -> matched={outcome.matched}")

print("\n== extraction evaluation with mixed field kinds ==")
rules = {"enrollment": MatchRule(MatchKind.EXACT_NUMERIC),
         "study_type": MatchRule(MatchKind.SOFT_TEXT)}
predictions = [
    FieldPrediction("c1", "char", "enrollment", 250, 250),
    FieldPrediction("c1", "char", "study_type", "randomized", "randomized"),
    FieldPrediction("c2", "char", "enrollment", 10, 12),
]
report = evaluate_extraction(predictions, rules, mock_gateway())
print(f"  overall accuracy: {report.aggregate:.3f} over {report.count} fields")
for stratum in report.strata["value_kind"]:
    print(f"  {stratum.label:14s} mean {stratum.mean:.2f} (n={stratum.count})")

print("\n== stratification by ground-truth count bins ==")
items = [ItemScore(f"r{i}", value, {"truth_count_bin": count})
         for i, (count, value) in enumerate([(3, 0.9), (4, 0.8), (8, 0.7), (22, 0.5)])]
report = stratify(MetricReport("demo", "recall", items), StratifyAxis.TRUTH_COUNT_BIN)
for stratum in report.strata["truth_count_bin"]:
    print(f"  bin {stratum.label:6s} mean {stratum.mean:.2f} (n={stratum.count})")
