#!/usr/bin/env python3
"""Criterion-level eligibility screening and candidate ranking, with the
three baseline rankers for comparison."""

from litmine.corpus import build_candidate_pool
from litmine.evaluation import recall_at_k
from litmine.offline import offline_gateway
from litmine.pipeline import load_reviews
from litmine.registry import FixtureRegistryClient, FixtureStore
from litmine.screening import Ranker, assess_citation, criteria_from_pico, rank_candidates

FIXTURES = "tests/fixtures"

store = FixtureStore.load(FIXTURES)
client = FixtureRegistryClient(store)
review = load_reviews(FIXTURES)[2]
gateway = offline_gateway()

criteria = criteria_from_pico(review.pico)
print(f"review {review.review_id} screens against {len(criteria)} criteria:")
for criterion in criteria:
    print(f"  {criterion.criterion_id} [{criterion.category.value}] {criterion.text}")

pool = build_candidate_pool(review, client, capacity=50)
candidates = list(client.fetch_citations(pool.citation_ids).citations)
print(f"\ncandidate pool: {len(candidates)} citations, all dated <= {review.publication_date}")

one = candidates[0]
result = assess_citation(criteria, one, gateway)
print(f"\nexample assessment for {one.citation_id} (score {result.overall_score:+.3f}):")
for a in result.assessments:
    print(f"  {a.criterion_id}: {a.label.value:9s} {a.rationale}")

print("\n== ranker comparison (recall@10 on the pool) ==")
truth = review.included_study_ids
for ranker in (Ranker.CRITERION_LLM, Ranker.DENSE, Ranker.SIMPLE_SCORE, Ranker.TWO_STAGE):
    ranked = rank_candidates(review, candidates, ranker, gateway)
    recall = recall_at_k(ranked.ids(), truth, 10)
    print(f"  {ranker.value:14s} recall@10 = {recall:.2f}")
print("  (dense is noise here: the offline mock embeds by hash, so cosine"
      " similarity carries no signal; point it at a real embedding backend)")
