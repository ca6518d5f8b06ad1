#!/usr/bin/env python3
"""Headless simulation of the two-arm user study: screening sessions with
and without AI reference sheets, decision capture, and the arm report."""

import json
import tempfile

from litmine.corpus import build_candidate_pool
from litmine.offline import offline_gateway
from litmine.pipeline import load_reviews
from litmine.registry import FixtureRegistryClient, FixtureStore
from litmine.screening import Ranker, criteria_from_pico, rank_candidates, screen_candidates
from litmine.workbench import StudyArm, WorkbenchService

FIXTURES = "tests/fixtures"
store = FixtureStore.load(FIXTURES)
client = FixtureRegistryClient(store)
reviews = load_reviews(FIXTURES)[:4]  # even count for balanced arms
gateway = offline_gateway()

clock_value = [10_000.0]
service_dir = tempfile.mkdtemp()
service = WorkbenchService(service_dir, clock=lambda: clock_value[0])

config_reviews = []
for review in reviews:
    pool = build_candidate_pool(review, client, capacity=30)
    candidates = client.fetch_citations(pool.citation_ids).citations
    config_reviews.append({
        "review_id": review.review_id,
        "included_study_ids": sorted(review.included_study_ids),
        "candidates": [
            {"citation_id": c.citation_id, "title": c.title, "abstract": c.abstract}
            for c in candidates
        ],
    })
service.create_project({"project_id": "pilot", "topic_area": "mixed",
                        "participants": ["dr-lee"], "reviews": config_reviews})
assignments = service.assign_arms("pilot", seed=42)["dr-lee"]
print("arm assignments:", json.dumps(assignments, indent=2, sort_keys=True))

# precompute AI sheets for the expert+AI reviews
for review in reviews:
    if assignments[review.review_id] != StudyArm.EXPERT_AI.value:
        continue
    candidates = client.fetch_citations(
        [c["citation_id"] for c in next(r for r in config_reviews
                                        if r["review_id"] == review.review_id)["candidates"]]
    ).citations
    criteria = criteria_from_pico(review.pico)
    results, _ = screen_candidates(criteria, candidates, gateway)
    ranked = rank_candidates(review, list(candidates), Ranker.CRITERION_LLM, gateway)
    sheet = [{
        "citation_id": e.citation_id, "score": e.score, "failed": e.failed,
        "assessments": [
            {"criterion_id": a.criterion_id, "label": a.label.value, "rationale": a.rationale}
            for a in results[e.citation_id].assessments
        ] if e.citation_id in results else [],
    } for e in ranked.entries]
    service.register_ai_sheet("pilot", review.review_id, sheet)

# run all four sessions; AI arm is faster in this simulation
for review in reviews:
    arm = assignments[review.review_id]
    view = service.open_screening_session("pilot", review.review_id, "dr-lee")
    truth = set(next(r for r in config_reviews
                     if r["review_id"] == review.review_id)["included_study_ids"])
    decisions = []
    budget = 10
    for card in view["candidates"]:
        include = card["citation_id"] in truth and budget > 0
        if include:
            budget -= 1
        decisions.append({"citation_id": card["citation_id"],
                          "verdict": "include" if include else "exclude"})
    clock_value[0] += 580.0 if arm == "expert_only" else 449.0
    metrics = service.submit_decisions("pilot", view["session_id"], decisions)
    print(f"{review.review_id} [{arm:11s}] recall={metrics['recall']:.2f}"
          f" time={metrics['elapsed_seconds']:.0f}s")

report = service.report_arm_comparison("pilot")
print("\n== arm comparison ==")
print(json.dumps({k: report[k] for k in ("screening", "screening_time_savings")},
                 indent=2, sort_keys=True))
print(f"\nrelative screening time savings: {report['screening_time_savings'] * 100:.1f}%")
