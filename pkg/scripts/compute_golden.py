#!/usr/bin/env python3
"""Freeze golden numbers for the end-to-end fixture run.

Runs the pipeline once to materialize its artifacts, then recomputes every
headline metric with brute-force implementations written here (plain set
intersections and Decimal comparisons; soft text matches verified as
normalized string equality, which the fixture corpus is constructed to
satisfy). The frozen numbers go to tests/golden/expected.json; the
acceptance suite compares live pipeline output against them.
"""

from __future__ import annotations

import json
import sys
import tempfile
from decimal import Decimal, InvalidOperation
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from litmine.pipeline import run_fixture_pipeline  # noqa: E402

GOLDEN_PATH = ROOT / "tests" / "golden" / "expected.json"


def brute_recall(ids: list[str], truth: list[str], k: int) -> float:
    hits = 0
    truth_set = list(dict.fromkeys(truth))
    top = ids[:k]
    for t in truth_set:
        if t in top:
            hits += 1
    return hits / len(truth_set)


def brute_numeric_equal(a, b) -> bool:
    def norm(x):
        s = str(x).replace(",", "").replace("−", "-").replace(" ", "")
        return Decimal(s)

    try:
        return norm(a) == norm(b)
    except (InvalidOperation, ValueError):
        return False


def brute_text_equal(a, b) -> bool:
    def norm(x):
        if isinstance(x, (list, tuple)):
            x = "; ".join(str(v) for v in x)
        return " ".join(str(x).casefold().split())

    return norm(a) == norm(b)


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        result = run_fixture_pipeline(ROOT / "tests" / "fixtures", tmp)
        artifacts = Path(tmp) / "artifacts"
        retrieved = json.loads((artifacts / "search_retrieved.json").read_text())
        ranked = json.loads((artifacts / "screening_ranked.json").read_text())
        truth = json.loads((artifacts / "truth.json").read_text())
        pairs = json.loads((artifacts / "extraction_pairs.json").read_text())

        search_auto = [brute_recall(retrieved[r], truth[r], len(truth[r])) for r in sorted(truth)]
        search_3000 = [brute_recall(retrieved[r], truth[r], 3000) for r in sorted(truth)]
        screening_10 = [brute_recall(ranked[r], truth[r], 10) for r in sorted(truth)]
        screening_25 = [brute_recall(ranked[r], truth[r], 25) for r in sorted(truth)]

        correct = 0
        for pair in pairs:
            if pair["kind"] == "exact_numeric":
                ok = brute_numeric_equal(pair["predicted"], pair["gold"])
            else:
                ok = brute_text_equal(pair["predicted"], pair["gold"])
            correct += int(ok)
        extraction_accuracy = correct / len(pairs)

        golden = {
            "search_recall_auto": sum(search_auto) / len(search_auto),
            "search_recall_3000": sum(search_3000) / len(search_3000),
            "screening_recall_at_10": sum(screening_10) / len(screening_10),
            "screening_recall_at_25": sum(screening_25) / len(screening_25),
            "extraction_accuracy": extraction_accuracy,
            "extraction_pair_count": len(pairs),
            "corpus_counts": result.summary["corpus_counts"],
            "screening_filtered_negative_eligible": result.summary[
                "screening_filtered_negative_eligible"
            ],
        }

    mismatches = {
        key: (golden[key], result.summary[key])
        for key in ("search_recall_auto", "search_recall_3000", "screening_recall_at_10",
                    "screening_recall_at_25", "extraction_accuracy")
        if abs(golden[key] - result.summary[key]) > 1e-12
    }
    if mismatches:
        raise SystemExit(f"oracle disagrees with pipeline metrics: {mismatches}")

    GOLDEN_PATH.parent.mkdir(parents=True, exist_ok=True)
    GOLDEN_PATH.write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"froze golden numbers to {GOLDEN_PATH}")
    print(json.dumps(golden, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
