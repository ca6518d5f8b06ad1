#!/usr/bin/env python3
"""Generate the committed fixture corpus under tests/fixtures/.

Five review topics, 52 on-topic publications each (ground truth, decoys,
two too-new entries violating the review date, one "hidden" included study
retrievable only by injection), ten trial-linked publications with full
text mirroring their registry records. Everything is hand-constructed and
deterministic; rerunning the script reproduces the same bytes.
"""

from __future__ import annotations

import json
import shutil
import sys
from datetime import date, timedelta
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from litmine.registry import FixtureStore, PublicationCitation, TrialRecord

OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

REVIEWS = [
    {
        "num": 1,
        "condition": "glioma",
        "drug": "zalvorin",
        "delivery": "weekly infusion",
        "population": "adults with recurrent glioma",
        "outcome": "progression free survival at week 24",
        "outcome_phrase": "progression free survival",
        "n_included": 4,
        "review_date": date(2022, 4, 15),
        "topic_area": "Oncology",
    },
    {
        "num": 2,
        "condition": "psoriasis",
        "drug": "dermacine",
        "delivery": "topical application",
        "population": "adults with moderate plaque psoriasis",
        "outcome": "skin clearance at week 16",
        "outcome_phrase": "skin clearance",
        "n_included": 5,
        "review_date": date(2022, 5, 15),
        "topic_area": "Dermatology",
    },
    {
        "num": 3,
        "condition": "hypertension",
        "drug": "cardiolex",
        "delivery": "daily tablet",
        "population": "adults with resistant hypertension",
        "outcome": "systolic blood pressure at week 12",
        "outcome_phrase": "systolic blood pressure",
        "n_included": 6,
        "review_date": date(2022, 6, 15),
        "topic_area": "Cardiology",
    },
    {
        "num": 4,
        "condition": "asthma",
        "drug": "bronchofen",
        "delivery": "inhaled dose",
        "population": "adolescents and adults with severe asthma",
        "outcome": "exacerbation rate at week 52",
        "outcome_phrase": "exacerbation rate",
        "n_included": 8,
        "review_date": date(2022, 7, 15),
        "topic_area": "Respiratory",
    },
    {
        "num": 5,
        "condition": "migraine",
        "drug": "neurastat",
        "delivery": "monthly injection",
        "population": "adults with chronic migraine",
        "outcome": "monthly headache days at week 12",
        "outcome_phrase": "monthly headache days",
        "n_included": 10,
        "review_date": date(2022, 8, 15),
        "topic_area": "Neurology",
    },
]

DOCS_PER_REVIEW = 52
HIDDEN_IDX = 2  # included study only reachable by ground-truth injection
WEAK_IDX = 3  # included study whose conditioned analysis comes out negative (reviews 1-3)
TRIAL_IDX = (1, 4)  # included studies with linked registry records and full text


def cid(review_num: int, idx: int) -> str:
    return f"PM{review_num:02d}{idx:03d}"


def doc_date(review_date: date, idx: int) -> date:
    return date(2015 + idx % 6, (idx * 7) % 12 + 1, (idx * 3) % 28 + 1)


def keyword_lines(condition_terms: str, intervention_terms: str) -> str:
    return f"Condition keywords: {condition_terms}.\nIntervention keywords: {intervention_terms}."


def included_abstract(spec: dict, idx: int, weak: bool) -> str:
    body = (
        f"Background: we enrolled {spec['population']} and randomized them to"
        f" {spec['drug']} {spec['delivery']} compared with placebo or standard care."
        f" Results: improved {spec['outcome_phrase']} at week {12 * (1 + spec['num'] % 2)}."
    )
    if weak:
        body += " This preliminary pilot report awaits confirmation."
    terms = keyword_lines(
        f"{spec['condition']}; pk{spec['num']:02d}{idx:03d}",
        f"{spec['drug']}; ik{spec['num']:02d}{idx:03d}",
    )
    return f"{body}\n{terms}"


def hidden_abstract(spec: dict, idx: int) -> str:
    body = (
        "Background: grown patients harbouring a relapsed cerebral affliction"
        " received the experimental schedule in a multicentre cohort."
        " Results: encouraging response rates were observed by day 168."
    )
    terms = keyword_lines(
        f"relapsed cerebral affliction; pk{spec['num']:02d}{idx:03d}",
        f"experimental schedule; ik{spec['num']:02d}{idx:03d}",
    )
    return f"{body}\n{terms}"


def excluded_abstract(spec: dict, idx: int) -> str:
    flavor = idx % 3
    if flavor == 0:
        body = (
            f"Background: children with newly diagnosed {spec['condition']} received"
            f" {spec['drug']} {spec['delivery']} compared with placebo."
            f" Results: inconclusive changes in {spec['outcome_phrase']}."
        )
    elif flavor == 1:
        body = (
            f"Background: {spec['population']} were treated with conventional therapy"
            f" alone, without {spec['drug']}, against standard care."
            f" Results: stable {spec['outcome_phrase']} over follow-up."
        )
    else:
        body = (
            f"Background: a single-arm case series of {spec['drug']} {spec['delivery']}"
            f" in elderly patients with longstanding {spec['condition']}."
            " Results: tolerability findings only."
        )
    terms = keyword_lines(
        f"{spec['condition']}; pk{spec['num']:02d}{idx:03d}",
        f"{spec['drug']}; ik{spec['num']:02d}{idx:03d}",
    )
    return f"{body}\n{terms}"


def trial_id(spec: dict, idx: int) -> str:
    return f"NCT10{spec['num']:02d}{idx:04d}"


def trial_values(spec: dict, idx: int) -> dict:
    num = spec["num"]
    return {
        "enrollment": 100 + 10 * num + idx,
        "g1": 50 + num + idx,
        "g2": 48 + num,
        "week12": float(f"-0.{num}"),
        "week24": float(f"-{(num + 5) // 10}.{(num + 5) % 10}"),
        "outcome_definition": f"Change in {spec['outcome_phrase']} score",
        "measure_definition": "Participants completing follow-up",
    }


def full_text(spec: dict, idx: int) -> tuple[str, str]:
    values = trial_values(spec, idx)
    drug = spec["drug"]
    main = "\n".join(
        [
            "INTRODUCTION",
            f"This trial evaluated {drug} {spec['delivery']} in {spec['population']}.",
            "",
            "METHODS",
            "Design: randomized controlled trial.",
            f"Enrollment: {values['enrollment']} participants.",
            f"Conditions: {spec['condition']}.",
            f"Interventions: {drug}.",
            "Arms:",
            f"- {drug.capitalize()} arm [EXPERIMENTAL]: {drug} {spec['delivery']}"
            f" | interventions: {drug}",
            f"- Control arm [PLACEBO_COMPARATOR]: matching placebo | interventions: placebo",
            "",
            "RESULTS",
            f"Participant measure: {values['measure_definition']} [COUNT, unit participants]",
            f"- G1 ({drug.capitalize()} arm): {values['g1']}",
            f"- G2 (Control arm): {values['g2']}",
            f"Outcome: {values['outcome_definition']} [MEAN, unit points, timeframe week 24]",
            f"- week 12: {values['week12']}",
            f"- week 24: {values['week24']}",
        ]
    )
    tables = (
        "TABLE 1. Baseline characteristics by arm.\n"
        f"TABLE 2. {values['outcome_definition']} over time."
    )
    return main, tables


def build_trial(spec: dict, idx: int) -> TrialRecord:
    values = trial_values(spec, idx)
    drug = spec["drug"]
    return TrialRecord(
        trial_id=trial_id(spec, idx),
        conditions=[spec["condition"]],
        interventions=[drug],
        enrollment=values["enrollment"],
        study_type="randomized controlled trial",
        arms=[
            {
                "label": f"{drug.capitalize()} arm",
                "arm_type": "EXPERIMENTAL",
                "description": f"{drug} {spec['delivery']}",
                "intervention_names": [drug],
            },
            {
                "label": "Control arm",
                "arm_type": "PLACEBO_COMPARATOR",
                "description": "matching placebo",
                "intervention_names": ["placebo"],
            },
        ],
        participant_flow={
            "measure_definition": values["measure_definition"],
            "parameter_type": "COUNT",
            "unit": "participants",
            "groups": [
                {"group_id": "G1", "definition": f"{drug.capitalize()} arm",
                 "unit": "participants", "value": None},
                {"group_id": "G2", "definition": "Control arm",
                 "unit": "participants", "value": None},
            ],
            "results": [
                {"group_id": "G1", "value": values["g1"], "notes": ""},
                {"group_id": "G2", "value": values["g2"], "notes": ""},
            ],
        },
        reported_results=[
            {
                "outcome_definition": values["outcome_definition"],
                "group_definition": f"{drug.capitalize()} arm",
                "parameter_type": "MEAN",
                "unit": "points",
                "timeframe": "week 24",
                "denominator_unit": "participants",
                "denominator_value": values["g1"],
                "results": [
                    {"value": values["week12"], "title": "week 12"},
                    {"value": values["week24"], "title": "week 24"},
                ],
            }
        ],
    )


def build_corpus() -> tuple[list[PublicationCitation], list[TrialRecord], list[dict]]:
    publications: list[PublicationCitation] = []
    trials: list[TrialRecord] = []
    reviews: list[dict] = []

    for spec in REVIEWS:
        num = spec["num"]
        n_inc = spec["n_included"]
        included_ids = []
        for idx in range(1, DOCS_PER_REVIEW + 1):
            is_included = idx <= n_inc
            is_hidden = is_included and idx == HIDDEN_IDX
            is_weak = is_included and idx == WEAK_IDX and num <= 3
            is_trial_linked = is_included and idx in TRIAL_IDX
            is_too_new = idx > DOCS_PER_REVIEW - 2

            if is_hidden:
                title = (
                    "A multicentre cohort under an experimental schedule for a"
                    f" relapsed cerebral affliction (registry {num:02d}{idx:03d})"
                )
                abstract = hidden_abstract(spec, idx)
            elif is_included:
                title = (
                    f"{spec['drug'].capitalize()} {spec['delivery']} for"
                    f" {spec['population']}: randomized trial {num:02d}{idx:03d}"
                )
                abstract = included_abstract(spec, idx, weak=is_weak)
            else:
                title = (
                    f"Observations on {spec['condition']} management"
                    f" ({num:02d}{idx:03d})"
                )
                abstract = excluded_abstract(spec, idx)

            published = (
                spec["review_date"] + timedelta(days=30 + idx)
                if is_too_new
                else doc_date(spec["review_date"], idx)
            )
            linked = None
            body = tables = None
            if is_trial_linked:
                linked = trial_id(spec, idx)
                body, tables = full_text(spec, idx)
                trials.append(build_trial(spec, idx))
            publications.append(
                PublicationCitation(
                    citation_id=cid(num, idx),
                    title=title,
                    abstract=abstract,
                    publication_date=published,
                    linked_trial_id=linked,
                    full_text=body,
                    table_text=tables,
                )
            )
            if is_included:
                included_ids.append(cid(num, idx))

        reviews.append(
            {
                "review_id": f"rev{num:02d}",
                "title": f"Systematic review of {spec['drug']} for {spec['condition']}",
                "abstract": "\n".join(
                    [
                        f"We synthesized randomized evidence on {spec['drug']}"
                        f" for {spec['condition']}.",
                        f"Population: {spec['population']}",
                        f"Intervention: {spec['drug']} {spec['delivery']}",
                        "Comparison: placebo or standard care",
                        f"Outcome: {spec['outcome']}",
                        "Searches covered reports published before the review date.",
                    ]
                ),
                "pico": {
                    "population": spec["population"],
                    "intervention": f"{spec['drug']} {spec['delivery']}",
                    "comparison": "placebo or standard care",
                    "outcome": spec["outcome"],
                },
                "included_study_ids": sorted(included_ids),
                "publication_date": spec["review_date"].isoformat(),
                "topic_area": spec["topic_area"],
            }
        )
    return publications, trials, reviews


def main() -> None:
    publications, trials, reviews = build_corpus()
    if OUT_DIR.exists():
        shutil.rmtree(OUT_DIR)
    store = FixtureStore(publications=publications, trials=trials)
    store.save(OUT_DIR)
    (OUT_DIR / "reviews.json").write_text(
        json.dumps(reviews, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(publications)} publications, {len(trials)} trials, "
          f"{len(reviews)} reviews to {OUT_DIR}")


if __name__ == "__main__":
    main()
