"""End-to-end offline pipeline over a fixture corpus.

Runs search, screening, extraction, evaluation, and the corpus build with
the deterministic offline model, writing reports, ranked sheets, and the
instruction corpus into an output directory. Two runs over the same
fixtures produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import corpus as corpus_mod
from .corpus import ReviewTopic, build_candidate_pool, split_dataset, write_corpus
from .evaluation import (
    FieldPrediction,
    ItemScore,
    MatchKind,
    MatchRule,
    MetricReport,
    StratifyAxis,
    evaluate_extraction,
    recall_at_k,
    stratify,
    write_recall_curve,
    write_report,
    write_topic_bars,
)
from .extraction import (
    DEFAULT_CHARACTERISTIC_FIELDS,
    GroupDef,
    extract_arm_design,
    extract_participant_statistics,
    extract_study_characteristics,
    extract_trial_results,
    prepare_document,
)
from .offline import offline_gateway
from .query import generate_search_query, serialize_query
from .registry import FixtureRegistryClient, FixtureStore
from .screening import Ranker, criteria_from_pico, rank_candidates, screen_candidates, write_ranked_sheet

GOLDEN_POOL_CAPACITY = 50
GOLDEN_SPLIT_SEED = 13
SCREENING_KS = [10, 25]
SEARCH_CURVE_KS = [1, 2, 5, 10, 25, 50]

EXTRACTION_RULES = {
    "conditions": MatchRule(MatchKind.SOFT_TEXT),
    "interventions": MatchRule(MatchKind.SOFT_TEXT),
    "study_type": MatchRule(MatchKind.SOFT_TEXT),
    "enrollment": MatchRule(MatchKind.EXACT_NUMERIC),
    "arm_type": MatchRule(MatchKind.SOFT_TEXT),
    "arm_interventions": MatchRule(MatchKind.SOFT_TEXT),
    "participant_value": MatchRule(MatchKind.EXACT_NUMERIC),
    "result_value": MatchRule(MatchKind.EXACT_NUMERIC),
}


def load_reviews(fixtures_dir: str | Path) -> list[ReviewTopic]:
    raw = json.loads((Path(fixtures_dir) / "reviews.json").read_text(encoding="utf-8"))
    return [ReviewTopic.from_json(r) for r in raw]


@dataclass
class PipelineResult:
    out_dir: Path
    summary: dict


def run_fixture_pipeline(
    fixtures_dir: str | Path,
    out_dir: str | Path,
    pool_capacity: int = GOLDEN_POOL_CAPACITY,
    split_seed: int = GOLDEN_SPLIT_SEED,
) -> PipelineResult:
    fixtures_dir = Path(fixtures_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports_dir = out_dir / "reports"
    sheets_dir = out_dir / "sheets"
    sheets_dir.mkdir(parents=True, exist_ok=True)

    store = FixtureStore.load(fixtures_dir)
    client = FixtureRegistryClient(store)
    reviews = sorted(load_reviews(fixtures_dir), key=lambda r: r.review_id)
    gateway = offline_gateway()

    # ---- search ----------------------------------------------------------
    search_items_auto: list[ItemScore] = []
    search_items_3000: list[ItemScore] = []
    retrieved_by_review: dict[str, list[str]] = {}
    truth_by_review: dict[str, set[str]] = {}
    for review in reviews:
        bundle = generate_search_query(review.pico, gateway)
        ids = client.search_publications(
            serialize_query(bundle.final_query), limit=3000, date_ceiling=review.publication_date
        )
        retrieved_by_review[review.review_id] = ids
        truth = review.included_study_ids
        truth_by_review[review.review_id] = truth
        metadata = {
            "topic": review.topic_area,
            "truth_count_bin": len(truth),
            "input_length_bin": len(review.pico.as_text()),
        }
        search_items_auto.append(
            ItemScore(review.review_id, recall_at_k(ids, truth, "auto"), metadata)
        )
        search_items_3000.append(
            ItemScore(review.review_id, recall_at_k(ids, truth, 3000), metadata)
        )
    search_report = MetricReport("search", "recall_at_auto", search_items_auto)
    stratify(search_report, StratifyAxis.TRUTH_COUNT_BIN)
    stratify(search_report, StratifyAxis.TOPIC)
    write_report(search_report, reports_dir)
    write_topic_bars(reports_dir / "search_topic_bars.json", search_report)
    search_3000_report = MetricReport("search_recall_3000", "recall_at_3000", search_items_3000)
    write_report(search_3000_report, reports_dir)
    write_recall_curve(
        reports_dir / "search_recall_curve.json", retrieved_by_review, truth_by_review, SEARCH_CURVE_KS
    )

    # ---- screening -------------------------------------------------------
    screening_items: dict[int, list[ItemScore]] = {k: [] for k in SCREENING_KS}
    ranked_by_review: dict[str, list[str]] = {}
    pools: dict[str, corpus_mod.CandidatePool] = {}
    for review in reviews:
        pool = build_candidate_pool(review, client, capacity=pool_capacity)
        pools[review.review_id] = pool
        fetch = client.fetch_citations(pool.citation_ids)
        candidates = list(fetch.citations)
        criteria = criteria_from_pico(review.pico)
        results, _failures = screen_candidates(criteria, candidates, gateway)
        ranked = rank_candidates(review, candidates, Ranker.CRITERION_LLM, gateway)
        ranked_by_review[review.review_id] = ranked.ids()
        write_ranked_sheet(sheets_dir / f"{review.review_id}.jsonl", ranked, results)
        truth = review.included_study_ids
        metadata = {"topic": review.topic_area, "truth_count_bin": len(truth)}
        for k in SCREENING_KS:
            screening_items[k].append(
                ItemScore(review.review_id, recall_at_k(ranked.ids(), truth, k), metadata)
            )
    screening_report = MetricReport("screening", f"recall_at_{SCREENING_KS[0]}",
                                    screening_items[SCREENING_KS[0]])
    stratify(screening_report, StratifyAxis.TRUTH_COUNT_BIN)
    stratify(screening_report, StratifyAxis.TOPIC)
    write_report(screening_report, reports_dir)
    write_topic_bars(reports_dir / "screening_topic_bars.json", screening_report)
    write_recall_curve(
        reports_dir / "screening_recall_curve.json",
        ranked_by_review,
        truth_by_review,
        [5, 10, 25, 50],
    )

    # ---- extraction ------------------------------------------------------
    linked = [
        (pub, store.trials[pub.linked_trial_id])
        for pub in sorted(store.publications.values(), key=lambda p: p.citation_id)
        if pub.linked_trial_id and pub.linked_trial_id in store.trials
    ]
    predictions: list[FieldPrediction] = []
    for pub, trial in linked:
        doc = prepare_document(pub)
        characteristics = extract_study_characteristics(doc, DEFAULT_CHARACTERISTIC_FIELDS, gateway)
        gold_values = {
            "conditions": trial.conditions,
            "interventions": trial.interventions,
            "enrollment": trial.enrollment,
            "study_type": trial.study_type,
        }
        for name, gold in gold_values.items():
            predictions.append(
                FieldPrediction(pub.citation_id, "char_extract", name,
                                characteristics.values[name], gold)
            )

        arm_design = extract_arm_design(doc, gateway)
        gold_arms = {a["label"]: a for a in trial.arms}
        for arm in arm_design.arms:
            gold_arm = gold_arms.get(arm.label)
            if gold_arm is None:
                continue
            predictions.append(
                FieldPrediction(pub.citation_id, "arm_extract", f"arm_type:{arm.label}",
                                arm.arm_type, gold_arm["arm_type"])
            )
            predictions.append(
                FieldPrediction(
                    pub.citation_id, "arm_extract", f"arm_interventions:{arm.label}",
                    "; ".join(arm.intervention_names),
                    "; ".join(gold_arm["intervention_names"]),
                )
            )

        flow = trial.participant_flow
        groups = [GroupDef(g["group_id"], g.get("definition", ""), g.get("unit", ""))
                  for g in flow["groups"]]
        measure = extract_participant_statistics(
            doc, flow["measure_definition"], flow["parameter_type"], flow["unit"], groups, gateway
        )
        gold_results = {r["group_id"]: r["value"] for r in flow["results"]}
        for result in measure.results:
            predictions.append(
                FieldPrediction(
                    pub.citation_id, "participant_extract",
                    f"participant_value:{result.group_id}",
                    result.value, gold_results.get(result.group_id),
                )
            )

        outcome_spec = trial.reported_results[0]
        outcome = extract_trial_results(
            doc,
            outcome_spec["outcome_definition"],
            outcome_spec["group_definition"],
            outcome_spec["parameter_type"],
            outcome_spec["unit"],
            outcome_spec["timeframe"],
            outcome_spec["denominator_unit"],
            outcome_spec["denominator_value"],
            gateway,
        )
        gold_outcome = {r["title"]: r["value"] for r in outcome_spec["results"]}
        for result in outcome.results:
            predictions.append(
                FieldPrediction(
                    pub.citation_id, "result_extract", f"result_value:{result.title}",
                    result.value, gold_outcome.get(result.title),
                )
            )

    rules = dict(EXTRACTION_RULES)
    for pred in predictions:
        base = pred.field_name.split(":", 1)[0]
        rules.setdefault(pred.field_name, EXTRACTION_RULES[base])
    extraction_report = evaluate_extraction(predictions, rules, gateway, task_kind="extraction")
    write_report(extraction_report, reports_dir)

    # ---- instruction corpus ----------------------------------------------
    search_data, search_stats = corpus_mod.build_search_instructions(reviews, gateway, client)
    screening_data: list = []
    screening_stats_total = corpus_mod.ScreeningBuildStats()
    for review in reviews:
        data, stats = corpus_mod.build_screening_instructions(review, pools[review.review_id],
                                                              gateway, client)
        screening_data.extend(data)
        screening_stats_total.generated += stats.generated
        screening_stats_total.retained += stats.retained
        screening_stats_total.filtered_negative_eligible += stats.filtered_negative_eligible
    extraction_data = corpus_mod.build_extraction_instructions(linked)

    citation_review = {
        cid: review.review_id for review in reviews for cid in review.included_study_ids
    }

    def review_of(datum) -> str:
        head = datum.provenance.split(":", 1)[0]
        return head if head.startswith("rev") else citation_review[head]

    split = split_dataset([r.review_id for r in reviews], seed=split_seed)
    all_data = search_data + screening_data + extraction_data
    write_corpus(
        out_dir / "corpus",
        all_data,
        split,
        review_of_datum=review_of,
        manifest_extra={
            "seed": split_seed,
            "search": {"generated": search_stats.generated, "retained": search_stats.retained,
                       "mean_recall": (sum(search_stats.recalls) / len(search_stats.recalls))
                       if search_stats.recalls else None},
            "screening": {
                "generated": screening_stats_total.generated,
                "retained": screening_stats_total.retained,
                "filtered_negative_eligible": screening_stats_total.filtered_negative_eligible,
            },
        },
    )

    artifacts_dir = out_dir / "artifacts"
    artifacts_dir.mkdir(parents=True, exist_ok=True)
    (artifacts_dir / "search_retrieved.json").write_text(
        json.dumps(retrieved_by_review, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (artifacts_dir / "screening_ranked.json").write_text(
        json.dumps(ranked_by_review, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (artifacts_dir / "truth.json").write_text(
        json.dumps({rid: sorted(t) for rid, t in truth_by_review.items()}, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    (artifacts_dir / "extraction_pairs.json").write_text(
        json.dumps(
            [
                {
                    "citation_id": p.citation_id,
                    "task": p.task,
                    "field": p.field_name,
                    "predicted": p.predicted,
                    "gold": p.gold,
                    "kind": rules[p.field_name].kind.value,
                }
                for p in predictions
            ],
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )

    summary = {
        "search_recall_auto": search_report.aggregate,
        "search_recall_3000": search_3000_report.aggregate,
        "screening_recall_at_10": (
            sum(i.value for i in screening_items[10]) / len(screening_items[10])
        ),
        "screening_recall_at_25": (
            sum(i.value for i in screening_items[25]) / len(screening_items[25])
        ),
        "extraction_accuracy": extraction_report.aggregate,
        "corpus_counts": {
            "search": len(search_data),
            "screening": len(screening_data),
            "extraction": len(extraction_data),
        },
        "screening_filtered_negative_eligible": screening_stats_total.filtered_negative_eligible,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return PipelineResult(out_dir=out_dir, summary=summary)
