"""Instruction-corpus construction from linked reviews, citations, and trials.

Six instruction families: PICO extraction feeds the other builders; search
data pair a review's PICO with its validated synthetic ground-truth query;
screening data pair criteria+study with a ground-truth-conditioned
criterion analysis; the four extraction families take their target
structures straight from the linked trial registry record. Splits are made
at the review level (6:2:2) so no datum leaks across splits.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

from .gateway import ChatRequest, LlmGateway, TaskKind, load_template, render_prompt
from .parsing import UnparseableModelOutput, complete_parsed, extract_json
from .query import (
    Facet,
    RECALL_FILTER_THRESHOLD,
    Or,
    Term,
    TermSet,
    assemble_ground_truth_query,
    extract_study_terms,
    serialize_query,
    validate_query,
)
from .registry import PublicationCitation, TrialRecord
from .screening import (
    EMPTY_MARKER,
    Criterion,
    EligibilityResult,
    PICO,
    criteria_from_pico,
    format_criteria,
    _parse_assessments,
)

logger = logging.getLogger(__name__)

POOL_CAPACITY = 2000
SPLIT_RATIO = (0.6, 0.2, 0.2)
MIN_REVIEWS_FOR_SPLIT = 5


class CorpusError(Exception):
    pass


class TooFewReviews(CorpusError):
    pass


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class ReviewTopic:
    """A systematic-review research question with its ground-truth study set."""

    review_id: str
    title: str
    abstract: str
    pico: PICO
    included_study_ids: set[str]
    publication_date: date
    topic_area: str = ""

    def __post_init__(self) -> None:
        if not self.included_study_ids:
            raise ValueError("reviews without associated citations are removed upstream")
        if isinstance(self.publication_date, str):
            self.publication_date = date.fromisoformat(self.publication_date)
        if isinstance(self.included_study_ids, list):
            self.included_study_ids = set(self.included_study_ids)

    def to_json(self) -> dict:
        return {
            "review_id": self.review_id,
            "title": self.title,
            "abstract": self.abstract,
            "pico": {
                "population": self.pico.population,
                "intervention": self.pico.intervention,
                "comparison": self.pico.comparison,
                "outcome": self.pico.outcome,
            },
            "included_study_ids": sorted(self.included_study_ids),
            "publication_date": self.publication_date.isoformat(),
            "topic_area": self.topic_area,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ReviewTopic":
        return cls(
            review_id=data["review_id"],
            title=data["title"],
            abstract=data["abstract"],
            pico=PICO(**data["pico"]),
            included_study_ids=set(data["included_study_ids"]),
            publication_date=date.fromisoformat(data["publication_date"]),
            topic_area=data.get("topic_area", ""),
        )


@dataclass(frozen=True)
class InstructionDatum:
    instruction: str
    input: str
    output: str
    task_kind: str
    provenance: str

    def __post_init__(self) -> None:
        if not self.instruction or not self.input or not self.output:
            raise ValueError("instruction, input, and output must all be non-empty")
        if not self.provenance:
            raise ValueError("provenance must resolve to a review or citation id")

    def to_json(self) -> dict:
        return {
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
            "task": self.task_kind,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, data: dict) -> "InstructionDatum":
        return cls(
            instruction=data["instruction"],
            input=data["input"],
            output=data["output"],
            task_kind=data["task"],
            provenance=data["provenance"],
        )


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset[str]
    dev: frozenset[str]
    test: frozenset[str]

    def __post_init__(self) -> None:
        if self.train & self.dev or self.train & self.test or self.dev & self.test:
            raise ValueError("splits must be pairwise disjoint")

    def split_of(self, review_id: str) -> str:
        if review_id in self.train:
            return "train"
        if review_id in self.dev:
            return "dev"
        if review_id in self.test:
            return "test"
        raise KeyError(review_id)


class PoolTag:
    SEARCH_HIT = "search_hit"
    PICO_FILL = "pico_fill"
    GT_INJECTED = "gt_injected"


@dataclass
class CandidatePool:
    """The bounded, date-constrained set a review must screen."""

    review_id: str
    citation_ids: list[str]
    source_tags: dict[str, str]
    capacity: int = POOL_CAPACITY

    def __post_init__(self) -> None:
        if len(self.citation_ids) > self.capacity:
            raise ValueError(f"pool exceeds capacity {self.capacity}")
        if len(set(self.citation_ids)) != len(self.citation_ids):
            raise ValueError("pool must be deduplicated")


# ---------------------------------------------------------------------------
# PICO extraction
# ---------------------------------------------------------------------------


def extract_pico(review: ReviewTopic, gateway: LlmGateway) -> PICO:
    """Model-extract the four PICO elements from a review abstract."""
    if not review.abstract:
        raise ValueError("review abstract must be non-empty")
    template = load_template(TaskKind.PICO_EXTRACT)
    prompt = render_prompt(template, {"title": review.title, "abstract": review.abstract})

    def parse(text: str) -> PICO:
        data = extract_json(text)
        if not isinstance(data, dict):
            raise ValueError("expected a JSON object")
        return PICO(
            population=str(data.get("population", "")).strip(),
            intervention=str(data.get("intervention", "")).strip(),
            comparison=str(data.get("comparison", "")).strip() or EMPTY_MARKER,
            outcome=str(data.get("outcome", "")).strip() or EMPTY_MARKER,
        )

    return complete_parsed(
        gateway,
        ChatRequest(user_text=prompt, temperature=0.0),
        parse,
        error_context=f"PICO extraction for {review.review_id}",
    )


# ---------------------------------------------------------------------------
# Search instructions
# ---------------------------------------------------------------------------

SEARCH_INSTRUCTION = (
    "Generate a boolean literature search query that retrieves the studies"
    " relevant to this research question. Combine population keywords and"
    " intervention keywords with AND."
)


@dataclass
class SearchBuildStats:
    generated: int = 0
    retained: int = 0
    recalls: list[float] = field(default_factory=list)


def build_search_instructions(
    reviews: Sequence[ReviewTopic],
    gateway: LlmGateway,
    searcher,
    threshold: float = RECALL_FILTER_THRESHOLD,
) -> tuple[list[InstructionDatum], SearchBuildStats]:
    """Per review: extract per-study terms, assemble the aggregate query,
    validate its recall, and keep only accepted bundles.

    Per-review failures are logged and skipped; they never abort the batch.
    """
    data: list[InstructionDatum] = []
    stats = SearchBuildStats()
    for review in reviews:
        try:
            fetch = searcher.fetch_citations(sorted(review.included_study_ids))
            if fetch.unresolved:
                logger.warning("review %s: unresolved studies %s", review.review_id, fetch.unresolved)
            studies = list(fetch.citations)
            if not studies:
                raise CorpusError("no resolvable included studies")
            p_sets = [extract_study_terms(s, Facet.POPULATION, gateway) for s in studies]
            i_sets = [extract_study_terms(s, Facet.INTERVENTION, gateway) for s in studies]
            bundle = assemble_ground_truth_query(p_sets, i_sets)
            stats.generated += 1
            verdict = validate_query(bundle, review.included_study_ids, searcher, threshold=threshold)
            stats.recalls.append(verdict.recall)
            if not verdict.accepted:
                logger.info(
                    "review %s: synthetic query filtered out (recall %.3f)",
                    review.review_id,
                    verdict.recall,
                )
                continue
            stats.retained += 1
            data.append(
                InstructionDatum(
                    instruction=SEARCH_INSTRUCTION,
                    input=review.pico.as_text(),
                    output=serialize_query(bundle.final_query),
                    task_kind="search",
                    provenance=review.review_id,
                )
            )
        except Exception as exc:
            logger.warning("review %s: search build failed: %s", review.review_id, exc)
    return data, stats


# ---------------------------------------------------------------------------
# Candidate pools
# ---------------------------------------------------------------------------


def _facet_or_query(text: str) -> str | None:
    """A permissive OR query over a facet's salient words (pool filling)."""
    words = [w for w in _tokenize_facet(text) if len(w) > 2]
    if not words:
        return None
    return serialize_query(Or(tuple(Term(w) for w in words)))


def _tokenize_facet(text: str) -> list[str]:
    import re as _re

    return _re.findall(r"[a-z0-9]+", text.casefold())


def build_candidate_pool(
    review: ReviewTopic,
    searcher,
    capacity: int = POOL_CAPACITY,
) -> CandidatePool:
    """Assemble a review's screening pool.

    Primary hits (population AND intervention words) come first; while the
    pool is short, alternate-facet searches fill it. Every entry predates
    the review; every ground-truth study is present, injected with a tag
    when the searches missed it.
    """
    ceiling = review.publication_date
    ids: list[str] = []
    tags: dict[str, str] = {}

    population = _facet_or_query(review.pico.population)
    intervention = _facet_or_query(review.pico.intervention)
    if population and intervention:
        primary = f"({population} AND {intervention})"
        for cid in searcher.search_publications(primary, limit=capacity, date_ceiling=ceiling):
            if cid not in tags:
                ids.append(cid)
                tags[cid] = PoolTag.SEARCH_HIT

    for facet_text in (review.pico.comparison, review.pico.outcome, review.pico.population):
        if len(ids) >= capacity:
            break
        if not facet_text or facet_text == EMPTY_MARKER:
            continue
        fill_query = _facet_or_query(facet_text)
        if not fill_query:
            continue
        for cid in searcher.search_publications(fill_query, limit=capacity, date_ceiling=ceiling):
            if len(ids) >= capacity:
                break
            if cid not in tags:
                ids.append(cid)
                tags[cid] = PoolTag.PICO_FILL

    # ground truth must be present: inject misses, tagged; never evict truth
    missing = sorted(review.included_study_ids - set(ids))
    for cid in missing:
        if len(ids) >= capacity:
            for i in range(len(ids) - 1, -1, -1):
                if ids[i] not in review.included_study_ids:
                    removed = ids.pop(i)
                    tags.pop(removed)
                    break
        ids.append(cid)
        tags[cid] = PoolTag.GT_INJECTED

    if len(ids) > capacity:
        keep = ids[:capacity]
        dropped_truth = review.included_study_ids - set(keep)
        if dropped_truth:
            raise CorpusError(f"capacity too small to hold ground truth: {sorted(dropped_truth)}")
        for cid in ids[capacity:]:
            tags.pop(cid)
        ids = keep

    return CandidatePool(review_id=review.review_id, citation_ids=ids, source_tags=tags, capacity=capacity)


# ---------------------------------------------------------------------------
# Screening instructions
# ---------------------------------------------------------------------------

SCREENING_INSTRUCTION = (
    "Assess this study against each selection criterion. For every criterion"
    " answer YES, PARTIAL, UNCERTAIN, or NO with a one-sentence rationale,"
    " as a JSON array."
)


@dataclass
class ScreeningBuildStats:
    generated: int = 0
    retained: int = 0
    filtered_negative_eligible: int = 0


def generate_conditioned_assessment(
    criteria: Sequence[Criterion],
    citation: PublicationCitation,
    eligible: bool,
    gateway: LlmGateway,
) -> EligibilityResult:
    """Generate a criterion analysis with the eligibility outcome disclosed."""
    template = load_template(TaskKind.RATIONALE_GEN)
    prompt = render_prompt(
        template,
        {
            "eligibility": "INCLUDED in" if eligible else "NOT INCLUDED in",
            "criteria": format_criteria(criteria),
            "title": citation.title,
            "abstract": citation.abstract,
        },
    )

    def parse(text: str):
        return _parse_assessments(text, criteria)

    assessments = complete_parsed(
        gateway,
        ChatRequest(user_text=prompt, temperature=0.0),
        parse,
        error_context=f"conditioned assessment for {citation.citation_id}",
    )
    return EligibilityResult.from_assessments(citation.citation_id, assessments)


def build_screening_instructions(
    review: ReviewTopic,
    pool: CandidatePool,
    gateway: LlmGateway,
    searcher,
    criteria: Sequence[Criterion] | None = None,
) -> tuple[list[InstructionDatum], ScreeningBuildStats]:
    """One datum per pool candidate, ground-truth conditioned.

    Data where the citation is ground-truth-included but the generated
    analysis scores negative are dropped; the filter never touches excluded
    studies.
    """
    crits = list(criteria) if criteria is not None else criteria_from_pico(review.pico)
    fetch = searcher.fetch_citations(pool.citation_ids)
    citations = {c.citation_id: c for c in fetch.citations}
    data: list[InstructionDatum] = []
    stats = ScreeningBuildStats()
    for cid in pool.citation_ids:
        citation = citations.get(cid)
        if citation is None:
            logger.warning("pool %s: candidate %s unresolved, skipped", review.review_id, cid)
            continue
        eligible = cid in review.included_study_ids
        try:
            result = generate_conditioned_assessment(crits, citation, eligible, gateway)
        except UnparseableModelOutput as exc:
            logger.warning("candidate %s: unparseable analysis, skipped: %s", cid, exc)
            continue
        stats.generated += 1
        if eligible and result.overall_score < 0:
            stats.filtered_negative_eligible += 1
            continue
        stats.retained += 1
        output = json.dumps(
            [
                {"criterion_id": a.criterion_id, "label": a.label.value, "rationale": a.rationale}
                for a in result.assessments
            ],
            sort_keys=True,
        )
        data.append(
            InstructionDatum(
                instruction=SCREENING_INSTRUCTION,
                input=(
                    f"CRITERIA:\n{format_criteria(crits)}\n\n"
                    f"TITLE: {citation.title}\nABSTRACT: {citation.abstract}"
                ),
                output=output,
                task_kind="screening",
                provenance=f"{review.review_id}:{cid}",
            )
        )
    return data, stats


# ---------------------------------------------------------------------------
# Extraction instructions
# ---------------------------------------------------------------------------

EXTRACTION_INSTRUCTIONS = {
    "char_extract": "Extract the requested study characteristic fields from the document as JSON.",
    "arm_extract": "Extract the intervention arm design from the document as JSON.",
    "participant_extract": "Extract the defined participant statistic for each group from the document as JSON.",
    "result_extract": "Extract the defined trial result values from the document as JSON.",
}


def build_extraction_instructions(
    linked_pairs: Sequence[tuple[PublicationCitation, TrialRecord]],
) -> list[InstructionDatum]:
    """Up to four data per (publication, trial) pair, straight from registry structure.

    The registry's structured sections are the outputs; fields that define
    them are the inputs. Pairs missing a section yield fewer data, logged.
    """
    data: list[InstructionDatum] = []
    for citation, trial in linked_pairs:
        if not citation.full_text or not trial.has_results:
            logger.warning("pair %s/%s lacks full text or results, skipped",
                           citation.citation_id, trial.trial_id)
            continue
        document = citation.full_text
        if citation.table_text:
            document = f"{document}\n\nTABLES:\n{citation.table_text}"

        characteristics = {
            "conditions": trial.conditions,
            "interventions": trial.interventions,
            "enrollment": trial.enrollment,
            "study_type": trial.study_type,
        }
        data.append(
            InstructionDatum(
                instruction=EXTRACTION_INSTRUCTIONS["char_extract"],
                input=f"FIELDS: conditions; interventions; enrollment; study_type\n\nDOCUMENT:\n{document}",
                output=json.dumps(characteristics, sort_keys=True),
                task_kind="char_extract",
                provenance=citation.citation_id,
            )
        )

        if trial.arms:
            data.append(
                InstructionDatum(
                    instruction=EXTRACTION_INSTRUCTIONS["arm_extract"],
                    input=f"DOCUMENT:\n{document}",
                    output=json.dumps({"arms": trial.arms}, sort_keys=True),
                    task_kind="arm_extract",
                    provenance=citation.citation_id,
                )
            )
        else:
            logger.info("pair %s: no arms section", citation.citation_id)

        flow = trial.participant_flow
        if flow and flow.get("groups"):
            input_spec = {
                "measure_definition": flow.get("measure_definition", ""),
                "parameter_type": flow.get("parameter_type", ""),
                "unit": flow.get("unit", ""),
                "groups": flow.get("groups", []),
            }
            data.append(
                InstructionDatum(
                    instruction=EXTRACTION_INSTRUCTIONS["participant_extract"],
                    input=json.dumps(input_spec, sort_keys=True) + f"\n\nDOCUMENT:\n{document}",
                    output=json.dumps({"results": flow.get("results", [])}, sort_keys=True),
                    task_kind="participant_extract",
                    provenance=citation.citation_id,
                )
            )
        else:
            logger.info("pair %s: no participant flow section", citation.citation_id)

        emitted_result = False
        for outcome in trial.reported_results:
            if not outcome.get("results"):
                continue
            input_spec = {
                key: outcome.get(key, "")
                for key in (
                    "outcome_definition",
                    "group_definition",
                    "parameter_type",
                    "unit",
                    "timeframe",
                    "denominator_unit",
                    "denominator_value",
                )
            }
            data.append(
                InstructionDatum(
                    instruction=EXTRACTION_INSTRUCTIONS["result_extract"],
                    input=json.dumps(input_spec, sort_keys=True) + f"\n\nDOCUMENT:\n{document}",
                    output=json.dumps({"results": outcome["results"]}, sort_keys=True),
                    task_kind="result_extract",
                    provenance=citation.citation_id,
                )
            )
            emitted_result = True
            break  # one result datum per pair keeps per-pair counts bounded at four
        if not emitted_result:
            logger.info("pair %s: no reportable outcome", citation.citation_id)
    return data


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def split_dataset(review_ids: Iterable[str], seed: int) -> DatasetSplit:
    """Seeded shuffle then 6:2:2 partition; sizes within one of ratio x total."""
    ids = sorted(set(review_ids))
    if len(ids) < MIN_REVIEWS_FOR_SPLIT:
        raise TooFewReviews(f"need at least {MIN_REVIEWS_FOR_SPLIT} reviews, got {len(ids)}")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    # rounding (not floor) keeps every split within one of ratio * total
    n_train = round(n * SPLIT_RATIO[0])
    n_dev = round(n * SPLIT_RATIO[1])
    return DatasetSplit(
        train=frozenset(ids[:n_train]),
        dev=frozenset(ids[n_train : n_train + n_dev]),
        test=frozenset(ids[n_train + n_dev :]),
    )


def provenance_review_id(datum: InstructionDatum) -> str:
    """The review id a datum inherits its split from (citation data use their review prefix)."""
    return datum.provenance.split(":", 1)[0]


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------


def write_corpus(
    out_dir: str | Path,
    data: Sequence[InstructionDatum],
    split: DatasetSplit,
    review_of_datum=provenance_review_id,
    manifest_extra: dict | None = None,
) -> Path:
    """Write corpus/{task}/{split}.jsonl plus manifest.json.

    The writer sorts deterministically by (task, provenance, output) so two
    builds of the same inputs are byte-identical.
    """
    out_dir = Path(out_dir)
    grouped: dict[tuple[str, str], list[InstructionDatum]] = {}
    counts: dict[str, dict[str, int]] = {}
    split_members = split.train | split.dev | split.test
    citation_reviews: dict[str, str] = {}
    for datum in sorted(data, key=lambda d: (d.task_kind, d.provenance, d.output)):
        review_id = review_of_datum(datum)
        split_name = split.split_of(review_id)
        head = datum.provenance.split(":", 1)[0]
        if head not in split_members:
            citation_reviews[head] = review_id
        grouped.setdefault((datum.task_kind, split_name), []).append(datum)
        counts.setdefault(datum.task_kind, {}).setdefault(split_name, 0)
        counts[datum.task_kind][split_name] += 1
    for (task, split_name), items in sorted(grouped.items()):
        task_dir = out_dir / task
        task_dir.mkdir(parents=True, exist_ok=True)
        path = task_dir / f"{split_name}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for datum in items:
                fh.write(json.dumps(datum.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
    manifest = {
        "counts": counts,
        "splits": {
            "train": sorted(split.train),
            "dev": sorted(split.dev),
            "test": sorted(split.test),
        },
        "citation_reviews": dict(sorted(citation_reviews.items())),
        "recall_filter_threshold": RECALL_FILTER_THRESHOLD,
        "pool_capacity": POOL_CAPACITY,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def read_corpus_file(path: str | Path) -> list[InstructionDatum]:
    with open(path, encoding="utf-8") as fh:
        return [InstructionDatum.from_json(json.loads(line)) for line in fh if line.strip()]


def corpus_stats(corpus_dir: str | Path) -> dict:
    """Raw and per-split datum counts per task, straight from the files."""
    corpus_dir = Path(corpus_dir)
    stats: dict[str, dict[str, int]] = {}
    for task_dir in sorted(p for p in corpus_dir.iterdir() if p.is_dir()):
        for split_file in sorted(task_dir.glob("*.jsonl")):
            count = sum(1 for line in split_file.read_text(encoding="utf-8").splitlines() if line.strip())
            stats.setdefault(task_dir.name, {})[split_file.stem] = count
    return stats


def validate_corpus(corpus_dir: str | Path) -> list[str]:
    """Round-trip and leakage checks; returns a list of problems (empty = valid)."""
    corpus_dir = Path(corpus_dir)
    problems: list[str] = []
    manifest_path = corpus_dir / "manifest.json"
    if not manifest_path.exists():
        return ["missing manifest.json"]
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    membership: dict[str, str] = {}
    for split_name in ("train", "dev", "test"):
        for review_id in manifest["splits"][split_name]:
            if review_id in membership:
                problems.append(f"review {review_id} in both {membership[review_id]} and {split_name}")
            membership[review_id] = split_name
    # citation-provenance data inherit their owning review's split
    for citation_id, review_id in manifest.get("citation_reviews", {}).items():
        if review_id in membership:
            membership.setdefault(citation_id, membership[review_id])
        else:
            problems.append(f"citation {citation_id} maps to unknown review {review_id}")
    for task_dir in sorted(p for p in corpus_dir.iterdir() if p.is_dir()):
        for split_file in sorted(task_dir.glob("*.jsonl")):
            split_name = split_file.stem
            for i, line in enumerate(split_file.read_text(encoding="utf-8").splitlines()):
                if not line.strip():
                    continue
                datum = InstructionDatum.from_json(json.loads(line))
                if json.dumps(datum.to_json(), sort_keys=True, ensure_ascii=False) != json.dumps(
                    json.loads(line), sort_keys=True, ensure_ascii=False
                ):
                    problems.append(f"{split_file}:{i + 1} does not round-trip")
                review_id = provenance_review_id(datum)
                expected = membership.get(review_id)
                if expected is None:
                    problems.append(f"{split_file}:{i + 1} provenance {review_id} not in any split")
                elif expected != split_name:
                    problems.append(
                        f"{split_file}:{i + 1} leaks: review {review_id} belongs to {expected}"
                    )
    return problems
