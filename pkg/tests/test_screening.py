from __future__ import annotations

import json
import random

import numpy as np
import pytest

from litmine.gateway import ChatRequest, mock_gateway
from litmine.parsing import UnparseableModelOutput
from litmine.registry import PublicationCitation
from litmine.screening import (
    AllCandidatesFailed,
    Category,
    Criterion,
    CriterionAssessment,
    EMPTY_MARKER,
    EligibilityResult,
    EmptyAssessments,
    LABEL_SCORES,
    Label,
    MissingCriterion,
    PICO,
    Polarity,
    RankedList,
    Ranker,
    assess_citation,
    criteria_from_pico,
    dense_rank,
    format_criteria,
    generate_screening_criteria,
    normalize_simple_score,
    parse_label,
    parse_simple_score,
    rank_candidates,
    read_ranked_sheet,
    score_assessments,
    simple_score_rank,
    two_stage_rank,
    write_ranked_sheet,
)


def make_citation(citation_id, title="Title", abstract="Abstract"):
    return PublicationCitation(citation_id=citation_id, title=title, abstract=abstract,
                               publication_date="2020-01-01")


def assessment(label, cid="C1"):
    return CriterionAssessment(criterion_id=cid, label=label, rationale="because")


def assessments(*labels):
    return [assessment(label, cid=f"C{i}") for i, label in enumerate(labels)]


def labels_reply(criteria, labels):
    return json.dumps([
        {"criterion_id": c.criterion_id, "label": label, "rationale": "r"}
        for c, label in zip(criteria, labels)
    ])


def scripted_gateway(replies):
    queue = list(replies)

    def responder(request: ChatRequest):
        return queue.pop(0) if len(queue) > 1 else queue[0]

    return mock_gateway(responders=[responder])


FOUR_CRITERIA = [
    Criterion("C0", Category.P, "population"),
    Criterion("C1", Category.I, "intervention"),
    Criterion("C2", Category.C, "comparison"),
    Criterion("C3", Category.O, "outcome"),
]


class TestScoreAggregation:
    def test_paper_example_mixed_labels(self):
        result = score_assessments(assessments(Label.YES, Label.PARTIAL, Label.NO, Label.UNCERTAIN))
        assert result == (1 + 0.5 + (-1) + 0) / 4 == 0.125

    def test_all_no_is_minus_one(self):
        assert score_assessments(assessments(Label.NO, Label.NO)) == -1.0

    def test_yes_plus_uncertain(self):
        assert score_assessments(assessments(Label.YES, Label.UNCERTAIN)) == 0.5

    def test_all_yes_is_one(self):
        assert score_assessments(assessments(Label.YES, Label.YES, Label.YES)) == 1.0

    def test_empty_assessments_error(self):
        with pytest.raises(EmptyAssessments):
            score_assessments([])

    def test_random_vectors_match_fold_then_divide_oracle(self):
        rng = random.Random(17)
        label_values = list(Label)
        for _ in range(500):
            labels = [rng.choice(label_values) for _ in range(rng.randint(1, 12))]
            total = 0.0
            for label in labels:
                total += {Label.YES: 1.0, Label.PARTIAL: 0.5,
                          Label.UNCERTAIN: 0.0, Label.NO: -1.0}[label]
            assert score_assessments(assessments(*labels)) == total / len(labels)

    def test_bounds_and_extremes(self):
        rng = random.Random(4)
        for _ in range(200):
            labels = [rng.choice(list(Label)) for _ in range(rng.randint(1, 8))]
            score = score_assessments(assessments(*labels))
            assert -1.0 <= score <= 1.0
            assert (score == 1.0) == all(l is Label.YES for l in labels)
            assert (score == -1.0) == all(l is Label.NO for l in labels)

    def test_single_label_upgrade_never_decreases_score(self):
        order = [Label.NO, Label.UNCERTAIN, Label.PARTIAL, Label.YES]
        rng = random.Random(9)
        for _ in range(200):
            labels = [rng.choice(order) for _ in range(rng.randint(1, 8))]
            base = score_assessments(assessments(*labels))
            index = rng.randrange(len(labels))
            position = order.index(labels[index])
            if position == len(order) - 1:
                continue
            upgraded = labels[:]
            upgraded[index] = order[position + 1]
            assert score_assessments(assessments(*upgraded)) >= base


class TestLabelParsing:
    def test_partially_yes_alias(self):
        assert parse_label("Partially Yes") is Label.PARTIAL

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError):
            parse_label("MAYBE")


class TestAssessCitation:
    def test_one_assessment_per_criterion_with_mean_score(self):
        gw = scripted_gateway([labels_reply(FOUR_CRITERIA, ["YES", "PARTIAL", "NO", "UNCERTAIN"])])
        result = assess_citation(FOUR_CRITERIA, make_citation("X"), gw)
        assert [a.criterion_id for a in result.assessments] == ["C0", "C1", "C2", "C3"]
        assert result.overall_score == 0.125

    def test_unknown_label_unparseable_after_reprompt(self):
        gw = scripted_gateway([labels_reply(FOUR_CRITERIA, ["MAYBE", "YES", "YES", "YES"])])
        with pytest.raises(UnparseableModelOutput):
            assess_citation(FOUR_CRITERIA, make_citation("X"), gw)

    def test_skipped_criterion_reprompts_then_missing_criterion(self):
        reply = labels_reply(FOUR_CRITERIA[:3], ["YES", "YES", "YES"])
        gw = scripted_gateway([reply])
        with pytest.raises(MissingCriterion) as excinfo:
            assess_citation(FOUR_CRITERIA, make_citation("X"), gw)
        assert excinfo.value.criterion_id == "C3"
        assert gw.chat_backend.calls == 2  # exactly one reprompt

    def test_reprompt_recovers(self):
        good = labels_reply(FOUR_CRITERIA, ["YES"] * 4)
        gw = scripted_gateway(["garbage", good])
        result = assess_citation(FOUR_CRITERIA, make_citation("X"), gw)
        assert result.overall_score == 1.0

    def test_empty_criteria_rejected(self):
        with pytest.raises(ValueError):
            assess_citation([], make_citation("X"), scripted_gateway(["x"]))


class TestRankedList:
    def test_tie_broken_by_ascending_id(self):
        ranked = RankedList.from_scores("r", {"B": 0.5, "C": -1.0, "A": 0.5},
                                        Ranker.CRITERION_LLM)
        assert ranked.ids() == ["A", "B", "C"]

    def test_random_score_maps_equal_sort_oracle(self):
        rng = random.Random(31)
        for _ in range(200):
            scores = {f"c{i}": rng.choice([-1.0, -0.5, 0.0, 0.125, 0.5, 1.0])
                      for i in range(rng.randint(1, 30))}
            ranked = RankedList.from_scores("r", scores, Ranker.CRITERION_LLM)
            oracle = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
            assert [(e.citation_id, e.score) for e in ranked.entries] == oracle

    def test_duplicates_rejected(self):
        from litmine.screening import RankedEntry

        with pytest.raises(ValueError):
            RankedList("r", (RankedEntry("A", 1.0), RankedEntry("A", 0.5)),
                       Ranker.CRITERION_LLM)

    def test_unsorted_entries_rejected(self):
        from litmine.screening import RankedEntry

        with pytest.raises(ValueError):
            RankedList("r", (RankedEntry("A", 0.1), RankedEntry("B", 0.9)),
                       Ranker.CRITERION_LLM)


class TestRankCandidates:
    def test_permutation_invariance(self, gateway, client, reviews):
        review = reviews[0]
        fetch = client.fetch_citations(sorted(review.included_study_ids)[:3] + ["PM01010", "PM01011"])
        candidates = list(fetch.citations)
        ranked_a = rank_candidates(review, candidates, Ranker.CRITERION_LLM, gateway)
        rng = random.Random(1)
        shuffled = candidates[:]
        rng.shuffle(shuffled)
        ranked_b = rank_candidates(review, shuffled, Ranker.CRITERION_LLM, gateway)
        assert ranked_a == ranked_b

    def test_failed_candidate_scores_zero_with_flag(self):
        criteria = FOUR_CRITERIA

        def responder(request: ChatRequest):
            if "bad-study" in request.user_text:
                return "not json"
            return labels_reply(criteria, ["YES"] * 4)

        gw = mock_gateway(responders=[responder])
        review = type("R", (), {"review_id": "r", "pico": PICO(population="p", intervention="i")})()
        candidates = [make_citation("good", title="ok"),
                      make_citation("zbad", title="bad-study", abstract="bad-study")]
        ranked = rank_candidates(review, candidates, Ranker.CRITERION_LLM, gw, criteria=criteria)
        by_id = {e.citation_id: e for e in ranked.entries}
        assert by_id["good"].score == 1.0 and not by_id["good"].failed
        assert by_id["zbad"].score == 0.0 and by_id["zbad"].failed
        assert len(ranked.entries) == 2  # never dropped

    def test_all_failures_fatal(self):
        gw = mock_gateway(responders=[lambda r: "junk"])
        review = type("R", (), {"review_id": "r", "pico": PICO(population="p", intervention="i")})()
        with pytest.raises(AllCandidatesFailed):
            rank_candidates(review, [make_citation("a")], Ranker.CRITERION_LLM, gw,
                            criteria=FOUR_CRITERIA)

    def test_duplicate_candidates_rejected(self, gateway, reviews):
        with pytest.raises(ValueError):
            rank_candidates(reviews[0], [make_citation("a"), make_citation("a")],
                            Ranker.CRITERION_LLM, gateway)


class TestDenseRank:
    def test_identical_text_scores_one_and_ranks_first(self):
        gw = mock_gateway()
        pico = PICO(population="adults", intervention="aspirin")
        twin = make_citation("twin", title=pico.as_text(), abstract="")
        # candidate text is "title\nabstract"; pin its embedding to the pico's
        backend = gw.chat_backend
        pico_vec = backend.embed_batch([pico.as_text()])[0]
        backend.set_embedding(f"{twin.title}\n{twin.abstract}", pico_vec.values)
        other = make_citation("other", title="something else entirely")
        ranked = dense_rank(pico, [other, twin], gw, review_id="r")
        assert ranked.ids()[0] == "twin"
        assert ranked.entries[0].score == pytest.approx(1.0)

    def test_orthogonal_vectors_score_zero(self):
        gw = mock_gateway(dimension=4)
        backend = gw.chat_backend
        pico = PICO(population="p", intervention="i")
        candidate = make_citation("c", title="t", abstract="a")
        backend.set_embedding(pico.as_text(), (1.0, 0.0, 0.0, 0.0))
        backend.set_embedding("t\na", (0.0, 1.0, 0.0, 0.0))
        ranked = dense_rank(pico, [candidate], gw)
        assert ranked.entries[0].score == 0.0

    def test_random_corpus_equals_brute_force_cosine_sort(self):
        gw = mock_gateway()
        backend = gw.chat_backend
        pico = PICO(population="adults with migraine", intervention="neurastat")
        candidates = [make_citation(f"c{i}", title=f"study {i}", abstract=f"text {i}")
                      for i in range(20)]
        ranked = dense_rank(pico, candidates, gw)
        pico_vec = np.array(backend.embed_batch([pico.as_text()])[0].values)
        scores = {}
        for candidate in candidates:
            vec = np.array(backend.embed_batch([f"{candidate.title}\n{candidate.abstract}"])[0].values)
            cosine = float(pico_vec @ vec / (np.linalg.norm(pico_vec) * np.linalg.norm(vec)))
            scores[candidate.citation_id] = round(cosine, 9)
        oracle = [cid for cid, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]
        assert ranked.ids() == oracle


class TestSimpleScore:
    def test_seven_out_of_ten_normalizes(self):
        assert parse_simple_score("7/10") == 7
        assert normalize_simple_score(7) == pytest.approx((7 - 5.5) / 4.5)
        assert normalize_simple_score(7) == pytest.approx(0.3333333333)

    def test_score_word_rejected(self):
        with pytest.raises(ValueError):
            parse_simple_score("eleven")

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            parse_simple_score("11")
        with pytest.raises(ValueError):
            parse_simple_score("0")

    def test_unparseable_candidate_goes_neutral_with_flag(self):
        def responder(request: ChatRequest):
            return "eleven" if "weird" in request.user_text else "7"

        gw = mock_gateway(responders=[responder])
        pico = PICO(population="p", intervention="i")
        ranked = simple_score_rank(pico, [make_citation("a", title="fine"),
                                          make_citation("b", title="weird")], gw, review_id="r")
        by_id = {e.citation_id: e for e in ranked.entries}
        assert by_id["b"].score == 0.0 and by_id["b"].failed
        assert by_id["a"].score == pytest.approx(0.3333333333)

    def test_normalized_scores_stay_in_unit_interval(self):
        for value in range(1, 11):
            assert -1.0 <= normalize_simple_score(value) <= 1.0


class TestTwoStage:
    def test_generates_criteria_then_scores_each_candidate(self):
        calls = []

        def responder(request: ChatRequest):
            calls.append(request.user_text.split("\n", 1)[0])
            if request.user_text.startswith("Draft the selection criteria"):
                return "population is adults\nintervention is aspirin\noutcome is survival"
            data = [
                {"criterion_id": f"G{i + 1}", "label": "YES", "rationale": "r"}
                for i in range(3)
            ]
            return json.dumps(data)

        gw = mock_gateway(responders=[responder])
        pico = PICO(population="adults", intervention="aspirin")
        candidates = [make_citation("a"), make_citation("b")]
        ranked = two_stage_rank(pico, candidates, gw, review_id="r")
        assert len(ranked.entries) == 2
        # transcript: one criteria-generation call, then one scoring call per candidate
        assert calls[0].startswith("Draft the selection criteria")
        assert len(calls) == 3
        assert all(e.score == 1.0 for e in ranked.entries)

    def test_generated_criteria_count_matches_lines(self):
        gw = mock_gateway(responders=[lambda r: "one\ntwo\nthree\nfour\nfive"])
        criteria = generate_screening_criteria(PICO(population="p", intervention="i"), gw)
        assert len(criteria) == 5
        assert [c.criterion_id for c in criteria] == ["G1", "G2", "G3", "G4", "G5"]


class TestPicoAndCriteria:
    def test_empty_population_rejected(self):
        with pytest.raises(ValueError):
            PICO(population="", intervention="i")

    def test_empty_comparison_gets_marker(self):
        pico = PICO(population="p", intervention="i", comparison="")
        assert pico.comparison == EMPTY_MARKER

    def test_criteria_from_full_pico_covers_four_categories(self):
        pico = PICO(population="p", intervention="i", comparison="c", outcome="o")
        criteria = criteria_from_pico(pico)
        assert [c.category for c in criteria] == [Category.P, Category.I, Category.C, Category.O]

    def test_unspecified_elements_skipped(self):
        pico = PICO(population="p", intervention="i")
        assert len(criteria_from_pico(pico)) == 2

    def test_exclusion_criterion_phrased_for_uniform_score_map(self):
        criterion = Criterion("E1", Category.P, "pregnant participants",
                              polarity=Polarity.EXCLUSION)
        text = format_criteria([criterion])
        assert "does NOT meet this exclusion" in text


def test_ranked_sheet_round_trip(tmp_path):
    ranked = RankedList.from_scores("r", {"A": 1.0, "B": -0.5}, Ranker.CRITERION_LLM)
    results = {
        "A": EligibilityResult.from_assessments("A", assessments(Label.YES)),
        "B": EligibilityResult.from_assessments("B", assessments(Label.NO, Label.UNCERTAIN)),
    }
    path = tmp_path / "sheet.jsonl"
    write_ranked_sheet(path, ranked, results)
    records = read_ranked_sheet(path)
    assert [r["citation_id"] for r in records] == ["A", "B"]
    assert records[0]["score"] == 1.0
    assert records[1]["assessments"][0]["label"] == "NO"


def test_label_scores_table():
    assert LABEL_SCORES == {Label.YES: 1.0, Label.PARTIAL: 0.5,
                            Label.UNCERTAIN: 0.0, Label.NO: -1.0}
