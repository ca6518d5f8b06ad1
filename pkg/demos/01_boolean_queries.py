#!/usr/bin/env python3
"""Boolean query algebra: ASTs, dialect serialization, and the aggregation
of per-study term sets into one review-level search query.

Each study contributes an AND-block of its terms; studies are OR-ed within
the population and intervention facets, and the two facets are AND-ed into
the final query.
"""

from litmine.query import (
    And,
    Dialect,
    Facet,
    Or,
    Term,
    TermSet,
    assemble_ground_truth_query,
    parse_query,
    serialize_query,
)

print("== parsing honors precedence (AND over OR) ==")
ast = parse_query("aspirin AND stroke OR warfarin")
print(f'  "aspirin AND stroke OR warfarin"  ->  {ast}')

print("\n== serialization is fully parenthesized and round-trips ==")
query = And((Term("stroke"), Or((Term("aspirin"), Term("acetylsalicylic acid")))))
for dialect in Dialect:
    text = serialize_query(query, dialect)
    print(f"  {dialect.value:22s} {text}")
    assert parse_query(text, dialect) == query

print("\n== per-study term sets aggregate into the review query ==")
p_sets = [
    TermSet(Facet.POPULATION, ("adults", "recurrent glioma"), "study-1"),
    TermSet(Facet.POPULATION, ("elderly", "brain tumour"), "study-2"),
]
i_sets = [
    TermSet(Facet.INTERVENTION, ("zalvorin",), "study-1"),
    TermSet(Facet.INTERVENTION, ("zalvorin", "weekly infusion"), "study-2"),
]
bundle = assemble_ground_truth_query(p_sets, i_sets)
print("  population facet:", serialize_query(bundle.population_query))
print("  intervention facet:", serialize_query(bundle.intervention_query))
print("  final query:", serialize_query(bundle.final_query))
assert isinstance(bundle.final_query, And)
print("\nfinal query is always And(Or-of-study-blocks, Or-of-study-blocks)")
