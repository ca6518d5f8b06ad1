"""Metrics and reports: recall@K, exact numeric match, soft text match,
per-task aggregation, stratification, and report emission.

Numeric fields require exact matching after normalization; text fields are
judged by embedding cosine similarity against a 0.75 threshold (inclusive;
a config flag flips to exclusive). Reports serialize deterministically so
golden runs are byte-comparable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .extraction import NOT_REPORTED, parse_number
from .gateway import LlmGateway

SOFT_MATCH_THRESHOLD = 0.75
DEFAULT_TRUTH_COUNT_EDGES = [0, 5, 10, 15, 20, 25]


class EvaluationError(Exception):
    pass


class EmptyGroundTruth(EvaluationError):
    pass


class UnparseableNumber(EvaluationError):
    pass


class AlignmentError(EvaluationError):
    pass


class MissingAxisMetadata(EvaluationError):
    pass


class MatchKind(str, Enum):
    EXACT_NUMERIC = "exact_numeric"
    SOFT_TEXT = "soft_text"


@dataclass(frozen=True)
class MatchRule:
    kind: MatchKind
    threshold: float = SOFT_MATCH_THRESHOLD
    exclusive: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")


# ---------------------------------------------------------------------------
# Core metrics
# ---------------------------------------------------------------------------


def recall_at_k(ranked_ids: Sequence[str], ground_truth: set[str], k) -> float:
    """Fraction of ground truth inside the top-k of a ranked/retrieved list.

    ``k="auto"`` means k = |ground truth| (the strict search convention).
    """
    if not ground_truth:
        raise EmptyGroundTruth("ground truth must be non-empty")
    if k == "auto":
        k = len(ground_truth)
    if not isinstance(k, int) or k < 1:
        raise ValueError(f"k must be a positive integer or 'auto', got {k!r}")
    return len(set(ranked_ids[:k]) & ground_truth) / len(ground_truth)


def match_numeric(pred, gold) -> bool:
    """Exact numeric equality after normalization.

    NOT_REPORTED matches only NOT_REPORTED; separators, unicode minus, and
    trailing zeros are normalized away before comparison.
    """
    pred_missing = pred == NOT_REPORTED
    gold_missing = gold == NOT_REPORTED
    if pred_missing or gold_missing:
        return pred_missing and gold_missing
    try:
        return parse_number(pred) == parse_number(gold)
    except (ValueError, TypeError) as exc:
        raise UnparseableNumber(f"cannot compare {pred!r} with {gold!r}: {exc}") from exc


@dataclass(frozen=True)
class TextMatch:
    matched: bool
    similarity: float


def match_text(
    pred: str,
    gold: str,
    gateway: LlmGateway,
    threshold: float = SOFT_MATCH_THRESHOLD,
    exclusive: bool = False,
) -> TextMatch:
    """Soft text match by embedding cosine similarity; symmetric in arguments."""
    if pred == NOT_REPORTED or gold == NOT_REPORTED:
        matched = pred == gold
        return TextMatch(matched=matched, similarity=1.0 if matched else 0.0)
    if not pred or not gold:
        raise ValueError("texts must be non-empty")
    vec_pred, vec_gold = gateway.embed([pred, gold])
    similarity = vec_pred.cosine(vec_gold)
    matched = similarity > threshold if exclusive else similarity >= threshold
    return TextMatch(matched=matched, similarity=similarity)


def match_field(pred, gold, rule: MatchRule, gateway: LlmGateway | None = None) -> bool:
    if rule.kind is MatchKind.EXACT_NUMERIC:
        return match_numeric(pred, gold)
    if gateway is None:
        raise ValueError("soft text matching needs a gateway for embeddings")
    if isinstance(pred, (list, tuple)) or isinstance(gold, (list, tuple)):
        pred_text = "; ".join(str(p) for p in pred) if isinstance(pred, (list, tuple)) else str(pred)
        gold_text = "; ".join(str(g) for g in gold) if isinstance(gold, (list, tuple)) else str(gold)
    else:
        pred_text, gold_text = str(pred), str(gold)
    return match_text(pred_text, gold_text, gateway, rule.threshold, rule.exclusive).matched


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ItemScore:
    item_id: str
    value: float
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Stratum:
    label: str
    mean: float
    count: int


@dataclass
class MetricReport:
    task_kind: str
    metric: str
    items: list[ItemScore]
    strata: dict[str, list[Stratum]] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.items)

    @property
    def aggregate(self) -> float:
        if not self.items:
            return 0.0
        return sum(i.value for i in self.items) / len(self.items)

    def to_json(self) -> dict:
        return {
            "task": self.task_kind,
            "metric": self.metric,
            "aggregate": self.aggregate,
            "count": self.count,
            "items": [
                {"id": i.item_id, "value": i.value, "metadata": i.metadata} for i in self.items
            ],
            "strata": {
                axis: [{"label": s.label, "mean": s.mean, "count": s.count} for s in strata]
                for axis, strata in self.strata.items()
            },
        }


class StratifyAxis(str, Enum):
    TOPIC = "topic"
    TRUTH_COUNT_BIN = "truth_count_bin"
    INPUT_LENGTH_BIN = "input_length_bin"


def _bin_label(value: float, edges: Sequence[float]) -> str:
    for low, high in zip(edges, edges[1:]):
        if low <= value < high:
            return f"{low:g}-{high:g}"
    return f"{edges[-1]:g}+"


def stratify(
    report: MetricReport,
    axis: StratifyAxis,
    bin_edges: Sequence[float] | None = None,
) -> MetricReport:
    """Group per-item scores along an axis; bins partition the items.

    Numeric axes use half-open bins [low, high) from ``bin_edges`` with a
    final open bin above the last edge; the topic axis groups by label.
    """
    edges = list(bin_edges) if bin_edges is not None else DEFAULT_TRUTH_COUNT_EDGES
    groups: dict[str, list[float]] = {}
    for item in report.items:
        if axis.value not in item.metadata:
            raise MissingAxisMetadata(f"item {item.item_id} lacks {axis.value!r} metadata")
        raw = item.metadata[axis.value]
        label = str(raw) if axis is StratifyAxis.TOPIC else _bin_label(float(raw), edges)
        groups.setdefault(label, []).append(item.value)
    strata = [
        Stratum(label=label, mean=sum(vals) / len(vals), count=len(vals))
        for label, vals in sorted(groups.items())
    ]
    report.strata[axis.value] = strata
    return report


# ---------------------------------------------------------------------------
# Extraction evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldPrediction:
    """One (citation, task, field) prediction/gold pair."""

    citation_id: str
    task: str
    field_name: str
    predicted: object
    gold: object


def evaluate_extraction(
    predictions: Sequence[FieldPrediction],
    rules: dict[str, MatchRule],
    gateway: LlmGateway | None = None,
    task_kind: str = "extraction",
) -> MetricReport:
    """Field-level correctness with separate text and numeric sub-aggregates.

    ``rules`` maps field_name -> MatchRule; every prediction's field must
    have a rule and every (citation, task, field) key must be unique.
    """
    if not predictions:
        raise AlignmentError("no predictions to evaluate")
    seen: set[tuple[str, str, str]] = set()
    items: list[ItemScore] = []
    for pred in predictions:
        key = (pred.citation_id, pred.task, pred.field_name)
        if key in seen:
            raise AlignmentError(f"duplicate prediction key {key}")
        seen.add(key)
        rule = rules.get(pred.field_name)
        if rule is None:
            raise AlignmentError(f"no match rule for field {pred.field_name!r}")
        try:
            correct = match_field(pred.predicted, pred.gold, rule, gateway)
        except UnparseableNumber:
            correct = False
        items.append(
            ItemScore(
                item_id=f"{pred.citation_id}/{pred.task}/{pred.field_name}",
                value=1.0 if correct else 0.0,
                metadata={"kind": rule.kind.value, "field": pred.field_name},
            )
        )
    report = MetricReport(task_kind=task_kind, metric="accuracy", items=items)
    by_kind: dict[str, list[float]] = {}
    for item in items:
        by_kind.setdefault(item.metadata["kind"], []).append(item.value)
    report.strata["value_kind"] = [
        Stratum(label=kind, mean=sum(vals) / len(vals), count=len(vals))
        for kind, vals in sorted(by_kind.items())
    ]
    return report


# ---------------------------------------------------------------------------
# Annotator verdicts (manual evaluation support)
# ---------------------------------------------------------------------------


def adjudicate_verdicts(verdicts: Sequence[dict]) -> dict[str, object]:
    """Majority-of-two adjudication; disagreements are flagged, not guessed.

    Each verdict is {"item_id", "annotator", "correct": bool}.
    """
    by_item: dict[str, list[bool]] = {}
    for verdict in verdicts:
        by_item.setdefault(verdict["item_id"], []).append(bool(verdict["correct"]))
    resolved: dict[str, object] = {}
    for item_id, votes in by_item.items():
        if all(votes):
            resolved[item_id] = True
        elif not any(votes):
            resolved[item_id] = False
        else:
            resolved[item_id] = "flagged"
    return resolved


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def write_report(report: MetricReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Emit reports/{task}.json and reports/{task}.csv, deterministically."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{report.task_kind}.json"
    csv_path = out_dir / f"{report.task_kind}.csv"
    json_path.write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "value"])
        for item in report.items:
            writer.writerow([item.item_id, f"{item.value:.6f}"])
        writer.writerow(["__aggregate__", f"{report.aggregate:.6f}"])
    return json_path, csv_path


def write_recall_curve(
    path: str | Path,
    ranked_by_review: dict[str, Sequence[str]],
    truth_by_review: dict[str, set[str]],
    ks: Sequence[int],
) -> None:
    """Plot-data file: mean recall at each K across reviews."""
    points = []
    for k in ks:
        recalls = [
            recall_at_k(ranked_by_review[rid], truth_by_review[rid], k)
            for rid in sorted(ranked_by_review)
        ]
        points.append({"k": k, "mean_recall": sum(recalls) / len(recalls)})
    Path(path).write_text(
        json.dumps({"points": points}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_topic_bars(path: str | Path, report: MetricReport) -> None:
    """Plot-data file: per-topic bar heights (mean and count) for one metric."""
    if "topic" not in report.strata:
        stratify(report, StratifyAxis.TOPIC)
    bars = [
        {"topic": s.label, "mean": s.mean, "count": s.count}
        for s in report.strata["topic"]
    ]
    Path(path).write_text(
        json.dumps({"metric": report.metric, "bars": bars}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
