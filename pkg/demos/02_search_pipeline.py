#!/usr/bin/env python3
"""Search query generation against the fixture registry: single-pass recall,
the 0.2 recall filter for synthetic queries, and ensemble search."""

from litmine.offline import offline_gateway
from litmine.pipeline import load_reviews
from litmine.query import (
    Facet,
    assemble_ground_truth_query,
    ensemble_search,
    extract_study_terms,
    generate_search_query,
    serialize_query,
    validate_query,
)
from litmine.registry import FixtureRegistryClient, FixtureStore

FIXTURES = "tests/fixtures"

store = FixtureStore.load(FIXTURES)
client = FixtureRegistryClient(store)
reviews = load_reviews(FIXTURES)
gateway = offline_gateway()

review = reviews[0]
print(f"review {review.review_id}: {len(review.included_study_ids)} ground-truth studies")
print(f"  PICO population: {review.pico.population}")
print(f"  PICO intervention: {review.pico.intervention}")

print("\n== runtime path: model-generated query ==")
bundle = generate_search_query(review.pico, gateway)
text = serialize_query(bundle.final_query)
print(f"  {text}")
ids = client.search_publications(text, limit=3000, date_ceiling=review.publication_date)
hits = len(set(ids) & review.included_study_ids)
print(f"  retrieved {len(ids)} citations; {hits}/{len(review.included_study_ids)} ground truth")

print("\n== corpus path: synthetic ground-truth query with recall filter ==")
fetch = client.fetch_citations(sorted(review.included_study_ids))
p_sets = [extract_study_terms(s, Facet.POPULATION, gateway) for s in fetch.citations]
i_sets = [extract_study_terms(s, Facet.INTERVENTION, gateway) for s in fetch.citations]
synthetic = assemble_ground_truth_query(p_sets, i_sets)
verdict = validate_query(synthetic, review.included_study_ids, client)
print(f"  recall {verdict.recall:.2f} -> {'retained' if verdict.accepted else 'filtered out'}"
      f" (threshold 0.2, boundary inclusive)")

print("\n== ensemble search unions multiple sampled queries ==")
result = ensemble_search(review.pico, gateway, client, runs=5,
                         ground_truth=review.included_study_ids)
print(f"  per-run recall: {[round(r.recall, 2) for r in result.runs]}")
print(f"  union recall:   {result.union_recall:.2f} over {len(result.ids)} unique citations")
