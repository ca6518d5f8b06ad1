"""Criterion-level eligibility assessment, score aggregation, and ranking.

Each candidate citation is judged against every selection criterion with a
four-way label; labels map to scores {YES: 1, PARTIAL: 0.5, UNCERTAIN: 0,
NO: -1} and the overall eligibility score is their unweighted mean. Three
baseline rankers ship alongside the criterion-level one: dense-embedding
cosine similarity, a single 1-10 relevance score, and a two-stage prompt
that drafts criteria before scoring against them.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .gateway import ChatRequest, LlmGateway, TaskKind, load_template, render_prompt
from .parsing import FORMAT_REMINDER, UnparseableModelOutput, extract_json

EMPTY_MARKER = "unspecified"


class ScreeningError(Exception):
    pass


class EmptyAssessments(ScreeningError):
    pass


class MissingCriterion(ScreeningError):
    """Model skipped a criterion even after one reprompt."""

    def __init__(self, criterion_id: str):
        super().__init__(f"model output missing criterion {criterion_id!r}")
        self.criterion_id = criterion_id


class AllCandidatesFailed(ScreeningError):
    pass


@dataclass(frozen=True)
class PICO:
    """A review's research question. Comparison/outcome may be unspecified."""

    population: str
    intervention: str
    comparison: str = EMPTY_MARKER
    outcome: str = EMPTY_MARKER

    def __post_init__(self) -> None:
        if not self.population or not self.intervention:
            raise ValueError("population and intervention must be non-empty")
        for name in ("comparison", "outcome"):
            if not getattr(self, name):
                object.__setattr__(self, name, EMPTY_MARKER)

    def as_text(self) -> str:
        return (
            f"Population: {self.population}\n"
            f"Intervention: {self.intervention}\n"
            f"Comparison: {self.comparison}\n"
            f"Outcome: {self.outcome}"
        )


class Category(str, Enum):
    P = "P"
    I = "I"
    C = "C"
    O = "O"


class Polarity(str, Enum):
    INCLUSION = "inclusion"
    EXCLUSION = "exclusion"


@dataclass(frozen=True)
class Criterion:
    criterion_id: str
    category: Category
    text: str
    polarity: Polarity = Polarity.INCLUSION

    def __post_init__(self) -> None:
        if not self.criterion_id or not self.text:
            raise ValueError("criterion needs an id and non-empty text")


class Label(str, Enum):
    YES = "YES"
    PARTIAL = "PARTIAL"
    UNCERTAIN = "UNCERTAIN"
    NO = "NO"


LABEL_SCORES: dict[Label, float] = {
    Label.YES: 1.0,
    Label.PARTIAL: 0.5,
    Label.UNCERTAIN: 0.0,
    Label.NO: -1.0,
}

# "Partially Yes" in prose and "PARTIAL" in output format are the same label.
_LABEL_ALIASES = {
    "YES": Label.YES,
    "PARTIAL": Label.PARTIAL,
    "PARTIALLY YES": Label.PARTIAL,
    "UNCERTAIN": Label.UNCERTAIN,
    "NO": Label.NO,
}


def parse_label(raw: str) -> Label:
    key = raw.strip().upper()
    if key not in _LABEL_ALIASES:
        raise ValueError(f"unknown eligibility label: {raw!r}")
    return _LABEL_ALIASES[key]


@dataclass(frozen=True)
class CriterionAssessment:
    criterion_id: str
    label: Label
    rationale: str

    def __post_init__(self) -> None:
        if not self.rationale:
            raise ValueError("rationale must be non-empty")


@dataclass(frozen=True)
class EligibilityResult:
    citation_id: str
    assessments: tuple[CriterionAssessment, ...]
    overall_score: float

    def __post_init__(self) -> None:
        expected = score_assessments(self.assessments)
        if abs(self.overall_score - expected) > 1e-9:
            raise ValueError(
                f"overall_score {self.overall_score} is not the mean of the label scores"
            )

    @classmethod
    def from_assessments(
        cls, citation_id: str, assessments: Sequence[CriterionAssessment]
    ) -> "EligibilityResult":
        return cls(
            citation_id=citation_id,
            assessments=tuple(assessments),
            overall_score=score_assessments(assessments),
        )


def score_assessments(assessments: Sequence[CriterionAssessment]) -> float:
    """Overall eligibility score: unweighted mean of the per-criterion scores."""
    if not assessments:
        raise EmptyAssessments("cannot score an empty assessment list")
    return sum(LABEL_SCORES[a.label] for a in assessments) / len(assessments)


class Ranker(str, Enum):
    CRITERION_LLM = "criterion_llm"
    DENSE = "dense"
    SIMPLE_SCORE = "simple_score"
    TWO_STAGE = "two_stage"


@dataclass(frozen=True)
class RankedEntry:
    citation_id: str
    score: float
    failed: bool = False


@dataclass(frozen=True)
class RankedList:
    """Candidates sorted by score descending, ties broken by ascending id."""

    review_id: str
    entries: tuple[RankedEntry, ...]
    ranker: Ranker

    def __post_init__(self) -> None:
        ids = [e.citation_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("ranked list has duplicate citation ids")
        keys = [(-e.score, e.citation_id) for e in self.entries]
        if keys != sorted(keys):
            raise ValueError("ranked list violates the (score desc, id asc) order")

    @classmethod
    def from_scores(
        cls,
        review_id: str,
        scores: dict[str, float],
        ranker: Ranker,
        failed: set[str] | None = None,
    ) -> "RankedList":
        failed = failed or set()
        entries = tuple(
            RankedEntry(citation_id=cid, score=score, failed=cid in failed)
            for cid, score in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        )
        return cls(review_id=review_id, entries=entries, ranker=ranker)

    def ids(self) -> list[str]:
        return [e.citation_id for e in self.entries]


# ---------------------------------------------------------------------------
# Criterion-level assessment
# ---------------------------------------------------------------------------


def criteria_from_pico(pico: PICO) -> list[Criterion]:
    """One inclusion criterion per populated PICO element."""
    criteria = [
        Criterion("P1", Category.P, f"Study population matches: {pico.population}"),
        Criterion("I1", Category.I, f"Study evaluates the intervention: {pico.intervention}"),
    ]
    if pico.comparison != EMPTY_MARKER:
        criteria.append(Criterion("C1", Category.C, f"Study uses the comparison: {pico.comparison}"))
    if pico.outcome != EMPTY_MARKER:
        criteria.append(Criterion("O1", Category.O, f"Study reports the outcome: {pico.outcome}"))
    return criteria


def format_criteria(criteria: Sequence[Criterion]) -> str:
    """Render criteria for prompting.

    Exclusion criteria are rephrased so YES always means "satisfies the
    inclusion intent" (the study does NOT hit the exclusion); the score map
    then stays uniform across polarities.
    """
    lines = []
    for c in criteria:
        if c.polarity is Polarity.EXCLUSION:
            lines.append(
                f"{c.criterion_id} [{c.category.value}] The study does NOT meet this"
                f" exclusion: {c.text}"
            )
        else:
            lines.append(f"{c.criterion_id} [{c.category.value}] {c.text}")
    return "\n".join(lines)


def _parse_assessments(text: str, criteria: Sequence[Criterion]) -> list[CriterionAssessment]:
    data = extract_json(text)
    if isinstance(data, dict) and "assessments" in data:
        data = data["assessments"]
    if not isinstance(data, list):
        raise ValueError("expected a JSON array of assessments")
    by_id: dict[str, CriterionAssessment] = {}
    for item in data:
        if not isinstance(item, dict):
            raise ValueError("assessment entries must be objects")
        cid = str(item.get("criterion_id", "")).strip()
        label = parse_label(str(item.get("label", "")))
        rationale = str(item.get("rationale", "")).strip() or "(no rationale given)"
        by_id[cid] = CriterionAssessment(criterion_id=cid, label=label, rationale=rationale)
    ordered: list[CriterionAssessment] = []
    for criterion in criteria:
        if criterion.criterion_id not in by_id:
            raise _SkippedCriterion(criterion.criterion_id)
        ordered.append(by_id[criterion.criterion_id])
    return ordered


class _SkippedCriterion(ValueError):
    def __init__(self, criterion_id: str):
        super().__init__(f"missing criterion {criterion_id}")
        self.criterion_id = criterion_id


def assess_citation(
    criteria: Sequence[Criterion],
    citation,
    gateway: LlmGateway,
    template: "object | None" = None,
) -> EligibilityResult:
    """Assess one citation against every criterion; exactly one label each.

    Unparseable output and skipped criteria each get exactly one
    format-reminder reprompt before erroring.
    """
    if not criteria:
        raise ValueError("criteria must be non-empty")
    if not citation.title or not citation.abstract:
        raise ValueError("citation needs title and abstract for screening")
    tpl = template or load_template(TaskKind.SCREENING)
    prompt = render_prompt(
        tpl,
        {
            "criteria": format_criteria(criteria),
            "title": citation.title,
            "abstract": citation.abstract,
        },
    )
    request = ChatRequest(user_text=prompt, temperature=0.0)
    last_error: Exception | None = None
    for attempt in range(2):
        response = gateway.complete(request)
        try:
            assessments = _parse_assessments(response.text, criteria)
            return EligibilityResult.from_assessments(citation.citation_id, assessments)
        except _SkippedCriterion as exc:
            last_error = MissingCriterion(exc.criterion_id)
        except (ValueError, KeyError, TypeError) as exc:
            last_error = UnparseableModelOutput(
                f"eligibility assessment for {citation.citation_id}: {exc}",
                raw_output=response.text,
            )
        request = ChatRequest(user_text=prompt + FORMAT_REMINDER, temperature=0.0)
    raise last_error


def screen_candidates(
    criteria: Sequence[Criterion],
    candidates: Sequence,
    gateway: LlmGateway,
    template=None,
) -> tuple[dict[str, EligibilityResult], dict[str, str]]:
    """Assess every candidate; failures are collected, never dropped."""
    results: dict[str, EligibilityResult] = {}
    failures: dict[str, str] = {}
    for citation in candidates:
        try:
            results[citation.citation_id] = assess_citation(criteria, citation, gateway, template)
        except Exception as exc:
            failures[citation.citation_id] = str(exc)
    return results, failures


# ---------------------------------------------------------------------------
# Rankers
# ---------------------------------------------------------------------------


def rank_candidates(
    review,
    candidates: Sequence,
    ranker: Ranker,
    gateway: LlmGateway,
    criteria: Sequence[Criterion] | None = None,
) -> RankedList:
    """Score and rank deduplicated candidates under the chosen ranker.

    A candidate whose assessment fails scores 0 (UNCERTAIN-equivalent) and
    carries a failure flag; only a 100% failure rate is fatal.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    ids = [c.citation_id for c in candidates]
    if len(set(ids)) != len(ids):
        raise ValueError("candidates must be deduplicated")

    if ranker is Ranker.DENSE:
        return dense_rank(review.pico, candidates, gateway, review_id=review.review_id)
    if ranker is Ranker.SIMPLE_SCORE:
        return simple_score_rank(review.pico, candidates, gateway, review_id=review.review_id)
    if ranker is Ranker.TWO_STAGE:
        return two_stage_rank(review.pico, candidates, gateway, review_id=review.review_id)

    crits = list(criteria) if criteria is not None else criteria_from_pico(review.pico)
    results, failures = screen_candidates(crits, candidates, gateway)
    if not results:
        raise AllCandidatesFailed(f"all {len(candidates)} candidates failed assessment")
    scores = {cid: r.overall_score for cid, r in results.items()}
    for cid in failures:
        scores[cid] = 0.0
    return RankedList.from_scores(review.review_id, scores, Ranker.CRITERION_LLM, failed=set(failures))


def dense_rank(
    review_pico: PICO, candidates: Sequence, gateway: LlmGateway, review_id: str = ""
) -> RankedList:
    """Rank by cosine similarity between the PICO embedding and each citation."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    texts = [review_pico.as_text()] + [f"{c.title}\n{c.abstract}" for c in candidates]
    vectors = gateway.embed(texts)
    pico_vec = vectors[0]
    scores = {
        c.citation_id: pico_vec.cosine(v) for c, v in zip(candidates, vectors[1:])
    }
    return RankedList.from_scores(review_id, scores, Ranker.DENSE)


_SCORE_RE = re.compile(r"^\s*(?:score\s*[:=]?\s*)?(\d{1,2})\s*(?:/\s*10)?\s*$", re.IGNORECASE)


def parse_simple_score(text: str) -> int:
    """Strictly parse an integer 1-10 from a short score reply."""
    for line in text.strip().splitlines():
        if not line.strip():
            continue
        match = _SCORE_RE.match(line)
        if not match:
            break
        value = int(match.group(1))
        if 1 <= value <= 10:
            return value
        break
    raise ValueError(f"not a 1-10 score: {text!r}")


def normalize_simple_score(value: int) -> float:
    """Affine map from 1..10 to [-1, 1] for cross-ranker comparability."""
    return (value - 5.5) / 4.5


def simple_score_rank(
    pico: PICO, candidates: Sequence, gateway: LlmGateway, review_id: str = ""
) -> RankedList:
    """One 1-10 relevance prompt per candidate; unparseable scores go neutral."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    template = load_template(TaskKind.SIMPLE_SCORE)
    scores: dict[str, float] = {}
    failed: set[str] = set()
    for citation in candidates:
        prompt = render_prompt(
            template,
            {
                "population": pico.population,
                "intervention": pico.intervention,
                "comparison": pico.comparison,
                "outcome": pico.outcome,
                "title": citation.title,
                "abstract": citation.abstract,
            },
        )
        try:
            response = gateway.complete(ChatRequest(user_text=prompt, temperature=0.0))
            scores[citation.citation_id] = normalize_simple_score(parse_simple_score(response.text))
        except Exception:
            scores[citation.citation_id] = 0.0
            failed.add(citation.citation_id)
    if len(failed) == len(candidates):
        raise AllCandidatesFailed("every candidate failed simple scoring")
    return RankedList.from_scores(review_id, scores, Ranker.SIMPLE_SCORE, failed=failed)


def generate_screening_criteria(pico: PICO, gateway: LlmGateway) -> list[Criterion]:
    """Stage one of the two-stage ranker: draft criteria from the PICO."""
    template = load_template(TaskKind.TWO_STAGE_SCORE, name="two_stage_criteria")
    prompt = render_prompt(
        template,
        {
            "population": pico.population,
            "intervention": pico.intervention,
            "comparison": pico.comparison,
            "outcome": pico.outcome,
        },
    )
    response = gateway.complete(ChatRequest(user_text=prompt, temperature=0.0))
    lines = [ln.strip("-* \t") for ln in response.text.strip().splitlines() if ln.strip()]
    if not lines:
        raise UnparseableModelOutput("two-stage criteria generation produced nothing",
                                     raw_output=response.text)
    categories = [Category.P, Category.I, Category.C, Category.O]
    return [
        Criterion(f"G{i + 1}", categories[min(i, 3)], line)
        for i, line in enumerate(lines)
    ]


def two_stage_rank(
    pico: PICO, candidates: Sequence, gateway: LlmGateway, review_id: str = ""
) -> RankedList:
    """Draft criteria from the PICO, then score every candidate against them."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    criteria = generate_screening_criteria(pico, gateway)
    template = load_template(TaskKind.TWO_STAGE_SCORE)
    results, failures = screen_candidates(criteria, candidates, gateway, template=template)
    if not results:
        raise AllCandidatesFailed("every candidate failed two-stage scoring")
    scores = {cid: r.overall_score for cid, r in results.items()}
    for cid in failures:
        scores[cid] = 0.0
    return RankedList.from_scores(review_id, scores, Ranker.TWO_STAGE, failed=set(failures))


# ---------------------------------------------------------------------------
# Ranked sheet files
# ---------------------------------------------------------------------------


def write_ranked_sheet(path, ranked: RankedList, results: dict[str, EligibilityResult]) -> None:
    """One JSON record per candidate (score, labels, rationales), rank order.

    This file is the machine form of the AI reference sheet the workbench
    serves to reviewers.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for entry in ranked.entries:
            result = results.get(entry.citation_id)
            record = {
                "citation_id": entry.citation_id,
                "score": entry.score,
                "failed": entry.failed,
                "assessments": [
                    {
                        "criterion_id": a.criterion_id,
                        "label": a.label.value,
                        "rationale": a.rationale,
                    }
                    for a in (result.assessments if result else ())
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_ranked_sheet(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
