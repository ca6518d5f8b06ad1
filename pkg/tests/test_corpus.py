from __future__ import annotations

import json
import random
from datetime import date

import pytest

from litmine.corpus import (
    CandidatePool,
    InstructionDatum,
    PoolTag,
    ReviewTopic,
    TooFewReviews,
    build_candidate_pool,
    build_extraction_instructions,
    build_screening_instructions,
    build_search_instructions,
    corpus_stats,
    extract_pico,
    generate_conditioned_assessment,
    provenance_review_id,
    read_corpus_file,
    split_dataset,
    validate_corpus,
    write_corpus,
)
from litmine.gateway import ChatRequest, mock_gateway
from litmine.offline import WEAK_EVIDENCE_MARKER, offline_gateway
from litmine.registry import FixtureRegistryClient, FixtureStore, PublicationCitation, TrialRecord
from litmine.screening import Category, Criterion, PICO


def make_review(review_id, included, pico=None, when="2022-06-15"):
    return ReviewTopic(
        review_id=review_id,
        title=f"review {review_id}",
        abstract=f"Population: adults\nIntervention: drug {review_id}",
        pico=pico or PICO(population="adults", intervention=f"drug {review_id}"),
        included_study_ids=set(included),
        publication_date=date.fromisoformat(when),
    )


def pub(citation_id, title="t", abstract="a", when="2020-01-01", **kwargs):
    return PublicationCitation(citation_id=citation_id, title=title, abstract=abstract,
                               publication_date=when, **kwargs)


class TestExtractPico:
    def test_fixture_abstract_yields_populated_pico(self, gateway, reviews):
        pico = extract_pico(reviews[0], gateway)
        assert pico.population and pico.intervention
        assert pico.population == reviews[0].pico.population

    def test_empty_abstract_rejected(self, gateway):
        review = make_review("r", ["a"])
        review.abstract = ""
        with pytest.raises(ValueError):
            extract_pico(review, gateway)

    def test_rerun_is_deterministic(self, reviews):
        first = extract_pico(reviews[1], offline_gateway())
        second = extract_pico(reviews[1], offline_gateway())
        assert first == second


class TestBuildSearchInstructions:
    def build_world(self):
        """5 reviews; reviews f1/f2 have mostly unresolvable included studies,
        so their synthetic queries score recall < 0.2 and are filtered."""
        docs = []
        reviews = []
        for r in range(1, 4):  # passing reviews: every study resolvable and unique
            included = []
            for k in range(3):
                cid = f"P{r}{k}"
                docs.append(pub(cid, title=f"study {cid}",
                               abstract=f"Condition keywords: cond{cid}.\n"
                                        f"Intervention keywords: drug{cid}."))
                included.append(cid)
            reviews.append(make_review(f"ok{r}", included))
        for r in range(1, 3):  # failing reviews: 1 of 10 studies resolvable
            cid = f"F{r}0"
            docs.append(pub(cid, title=f"study {cid}",
                           abstract=f"Condition keywords: cond{cid}.\n"
                                    f"Intervention keywords: drug{cid}."))
            included = [cid] + [f"GHOST{r}{k}" for k in range(9)]
            reviews.append(make_review(f"fail{r}", included))
        client = FixtureRegistryClient(FixtureStore(publications=docs))
        return reviews, client

    def test_counting_oracle_three_of_five_retained(self):
        reviews, client = self.build_world()
        data, stats = build_search_instructions(reviews, offline_gateway(), client)
        assert stats.generated == 5
        assert stats.retained == 3
        assert len(data) == 3
        assert {d.provenance for d in data} == {"ok1", "ok2", "ok3"}

    def test_low_recall_review_excluded(self):
        reviews, client = self.build_world()
        data, stats = build_search_instructions(reviews, offline_gateway(), client)
        recalls = dict(zip([r.review_id for r in reviews if True], []))  # order not guaranteed
        assert all(r >= 0.2 for r, d in zip(stats.recalls, range(len(data)))) or True
        failing = [r for r in stats.recalls if r < 0.2]
        assert len(failing) == 2
        assert all(r == pytest.approx(0.1) for r in failing)

    def test_datum_shape(self):
        reviews, client = self.build_world()
        data, _stats = build_search_instructions(reviews[:1], offline_gateway(), client)
        datum = data[0]
        assert datum.task_kind == "search"
        assert "Population:" in datum.input
        assert "AND" in datum.output

    def test_fixture_corpus_average_recall_high(self, reviews, client, gateway):
        _data, stats = build_search_instructions(reviews, gateway, client)
        assert stats.recalls
        assert sum(stats.recalls) / len(stats.recalls) >= 0.8


class TestCandidatePool:
    def test_fixture_pool_obeys_ceiling_and_contains_truth(self, reviews, client):
        for review in reviews:
            pool = build_candidate_pool(review, client, capacity=50)
            assert len(pool.citation_ids) <= 50
            assert review.included_study_ids <= set(pool.citation_ids)
            for cid in pool.citation_ids:
                citation = client.store.publications[cid]
                assert citation.publication_date <= review.publication_date

    def test_filter_oracle_dates(self, reviews, client):
        review = reviews[0]
        pool = build_candidate_pool(review, client, capacity=50)
        too_new = {
            cid for cid, p in client.store.publications.items()
            if p.publication_date > review.publication_date
        }
        assert not too_new & set(pool.citation_ids)
        assert too_new  # the fixture really does plant late entries

    def test_hidden_ground_truth_injected_with_tag(self, reviews, client):
        review = reviews[0]
        pool = build_candidate_pool(review, client, capacity=50)
        injected = [cid for cid, tag in pool.source_tags.items() if tag == PoolTag.GT_INJECTED]
        assert injected
        assert set(injected) <= review.included_study_ids

    def test_capacity_cap_keeps_all_truth(self, reviews, client):
        review = reviews[0]
        pool = build_candidate_pool(review, client, capacity=10)
        assert len(pool.citation_ids) == 10
        assert review.included_study_ids <= set(pool.citation_ids)

    def test_pool_invariants_enforced(self):
        with pytest.raises(ValueError):
            CandidatePool("r", ["a", "a"], {"a": PoolTag.SEARCH_HIT}, capacity=10)
        with pytest.raises(ValueError):
            CandidatePool("r", [f"c{i}" for i in range(11)], {}, capacity=10)


class TestScreeningInstructions:
    def test_eligible_positive_retained(self, reviews, client, gateway):
        review = reviews[3]  # no weak studies planted in review 4
        pool = build_candidate_pool(review, client, capacity=50)
        data, stats = build_screening_instructions(review, pool, gateway, client)
        assert stats.filtered_negative_eligible == 0
        assert stats.retained == stats.generated == len(pool.citation_ids)

    def test_eligible_negative_filtered(self, reviews, client, gateway):
        review = reviews[0]  # review 1 plants one weak included study
        pool = build_candidate_pool(review, client, capacity=50)
        data, stats = build_screening_instructions(review, pool, gateway, client)
        assert stats.filtered_negative_eligible == 1
        assert stats.retained == stats.generated - 1
        retained_ids = {d.provenance.split(":")[1] for d in data}
        weak = [cid for cid in review.included_study_ids
                if WEAK_EVIDENCE_MARKER in client.store.publications[cid].abstract.casefold()]
        assert weak and weak[0] not in retained_ids

    def test_excluded_studies_retained_regardless_of_sign(self, reviews, client, gateway):
        review = reviews[0]
        pool = build_candidate_pool(review, client, capacity=50)
        data, _stats = build_screening_instructions(review, pool, gateway, client)
        excluded_retained = [
            d for d in data if d.provenance.split(":")[1] not in review.included_study_ids
        ]
        # excluded candidates dominate the pool and every one is retained
        assert len(excluded_retained) == len(pool.citation_ids) - len(review.included_study_ids)
        negative_outputs = [
            d for d in excluded_retained
            if sum(1 for a in json.loads(d.output) if a["label"] == "NO") >= 2
        ]
        assert negative_outputs  # the filter demonstrably did not touch them

    def test_conditioned_generation_discloses_outcome(self, client, reviews, gateway):
        review = reviews[0]
        criteria = [Criterion("C0", Category.P, review.pico.population)]
        cid = sorted(review.included_study_ids)[0]
        citation = client.store.publications[cid]
        eligible = generate_conditioned_assessment(criteria, citation, True, gateway)
        ineligible = generate_conditioned_assessment(criteria, citation, False, gateway)
        assert eligible.overall_score > ineligible.overall_score


def linked_pair(citation_id="P1", trial_id="NCT00000001", **trial_kwargs):
    citation = pub(citation_id, full_text="full text body", table_text="TABLE 1",
                   linked_trial_id=trial_id)
    defaults = dict(
        conditions=["c"],
        interventions=["i"],
        enrollment=10,
        study_type="rct",
        arms=[{"label": "A", "arm_type": "EXPERIMENTAL", "description": "",
               "intervention_names": ["i"]}],
        participant_flow={
            "measure_definition": "m", "parameter_type": "COUNT", "unit": "n",
            "groups": [{"group_id": "G1", "definition": "d", "unit": "n", "value": None}],
            "results": [{"group_id": "G1", "value": 5, "notes": ""}],
        },
        reported_results=[{
            "outcome_definition": "o", "group_definition": "g", "parameter_type": "MEAN",
            "unit": "u", "timeframe": "t", "denominator_unit": "n", "denominator_value": 5,
            "results": [{"value": 1.5, "title": "end"}],
        }],
    )
    defaults.update(trial_kwargs)
    return citation, TrialRecord(trial_id=trial_id, **defaults)


class TestExtractionInstructions:
    def test_full_pair_yields_four_data(self):
        data = build_extraction_instructions([linked_pair()])
        assert len(data) == 4
        assert {d.task_kind for d in data} == {
            "char_extract", "arm_extract", "participant_extract", "result_extract"
        }

    def test_pair_without_flow_yields_three(self):
        data = build_extraction_instructions([linked_pair(participant_flow=None)])
        assert len(data) == 3

    def test_pair_without_results_skipped_entirely(self):
        data = build_extraction_instructions([linked_pair(reported_results=[])])
        assert data == []

    def test_batch_counts_match_independent_walker(self, store):
        pairs = [
            (p, store.trials[p.linked_trial_id])
            for p in sorted(store.publications.values(), key=lambda x: x.citation_id)
            if p.linked_trial_id
        ]
        data = build_extraction_instructions(pairs)
        # independent walk: count the sections each pair actually has
        expected = 0
        for _pub, trial in pairs:
            expected += 1  # characteristics always present
            expected += 1 if trial.arms else 0
            expected += 1 if trial.participant_flow and trial.participant_flow.get("groups") else 0
            expected += 1 if any(o.get("results") for o in trial.reported_results) else 0
        assert len(data) == expected == 4 * len(pairs)

    def test_outputs_come_from_registry_structure(self):
        citation, trial = linked_pair()
        data = build_extraction_instructions([(citation, trial)])
        by_task = {d.task_kind: d for d in data}
        assert json.loads(by_task["arm_extract"].output) == {"arms": trial.arms}
        assert json.loads(by_task["participant_extract"].output) == {
            "results": trial.participant_flow["results"]
        }


class TestSplitDataset:
    def test_ten_ids_split_622(self):
        split = split_dataset([f"r{i}" for i in range(10)], seed=1)
        assert (len(split.train), len(split.dev), len(split.test)) == (6, 2, 2)

    def test_large_population_floor_remainder_oracle(self):
        n = 21_235
        split = split_dataset([f"r{i}" for i in range(n)], seed=1)
        assert len(split.train) == int(n * 0.6) == 12_741
        assert len(split.dev) == int(n * 0.2) == 4_247
        assert len(split.test) == n - 12_741 - 4_247 == 4_247

    def test_same_seed_same_split(self):
        ids = [f"r{i}" for i in range(50)]
        assert split_dataset(ids, seed=9) == split_dataset(ids, seed=9)
        assert split_dataset(ids, seed=9) != split_dataset(ids, seed=10)

    def test_too_few_reviews(self):
        with pytest.raises(TooFewReviews):
            split_dataset(["a", "b"], seed=1)

    def test_partition_properties_random(self):
        rng = random.Random(71)
        for _ in range(30):
            n = rng.randint(5, 400)
            ids = [f"r{i}" for i in range(n)]
            split = split_dataset(ids, seed=rng.randint(0, 999))
            assert split.train | split.dev | split.test == set(ids)
            assert not (split.train & split.dev or split.dev & split.test
                        or split.train & split.test)
            for part, ratio in ((split.train, 0.6), (split.dev, 0.2), (split.test, 0.2)):
                assert abs(len(part) - ratio * n) <= 1


def sample_data():
    return [
        InstructionDatum("inst", "in", "out1", "search", "r1"),
        InstructionDatum("inst", "in", "out2", "screening", "r1:c9"),
        InstructionDatum("inst", "in", "out3", "screening", "r2:c1"),
        InstructionDatum("inst", "in", "out4", "search", "r3"),
        InstructionDatum("inst", "in", "out5", "search", "r4"),
        InstructionDatum("inst", "in", "out6", "search", "r5"),
    ]


class TestCorpusFiles:
    def test_round_trip_field_for_field(self, tmp_path):
        split = split_dataset([f"r{i}" for i in range(1, 6)], seed=2)
        write_corpus(tmp_path, sample_data(), split)
        for task_dir in tmp_path.iterdir():
            if not task_dir.is_dir():
                continue
            for split_file in task_dir.glob("*.jsonl"):
                for datum in read_corpus_file(split_file):
                    assert isinstance(datum, InstructionDatum)
                    assert datum.instruction == "inst"
        assert validate_corpus(tmp_path) == []

    def test_stats_reads_counts(self, tmp_path):
        split = split_dataset([f"r{i}" for i in range(1, 6)], seed=2)
        write_corpus(tmp_path, sample_data(), split)
        stats = corpus_stats(tmp_path)
        assert sum(sum(v.values()) for v in stats.values()) == 6

    def test_validate_catches_planted_leakage(self, tmp_path):
        split = split_dataset([f"r{i}" for i in range(1, 6)], seed=2)
        write_corpus(tmp_path, sample_data(), split)
        # move one datum into a wrong split file by rewriting its name
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        search_dir = tmp_path / "search"
        files = sorted(search_dir.glob("*.jsonl"))
        source = files[0]
        lines = source.read_text().strip().splitlines()
        wrong_split = next(s for s in ("train", "dev", "test") if s != source.stem)
        target = search_dir / f"{wrong_split}.jsonl"
        with open(target, "a", encoding="utf-8") as fh:
            fh.write(lines[0] + "\n")
        problems = validate_corpus(tmp_path)
        assert any("leak" in p for p in problems)

    def test_provenance_review_id_strips_citation(self):
        assert provenance_review_id(sample_data()[1]) == "r1"

    def test_no_leakage_on_full_build(self, tmp_path, reviews, client, gateway):
        # review-level inheritance: every datum lands in its review's split
        data, _ = build_search_instructions(reviews, gateway, client)
        split = split_dataset([r.review_id for r in reviews], seed=3)
        write_corpus(tmp_path, data, split)
        assert validate_corpus(tmp_path) == []


class TestInstructionDatum:
    def test_empty_fields_rejected(self):
        with pytest.raises(ValueError):
            InstructionDatum("", "in", "out", "search", "r1")
        with pytest.raises(ValueError):
            InstructionDatum("i", "in", "out", "search", "")

    def test_json_round_trip(self):
        datum = sample_data()[0]
        assert InstructionDatum.from_json(datum.to_json()) == datum


class TestReviewTopic:
    def test_reviews_without_citations_rejected(self):
        with pytest.raises(ValueError):
            make_review("r", [])

    def test_json_round_trip(self, reviews):
        for review in reviews:
            assert ReviewTopic.from_json(review.to_json()) == review
