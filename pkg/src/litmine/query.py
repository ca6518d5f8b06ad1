"""Boolean query algebra and the two query-production paths.

A query is an AST of AND/OR over keyword terms. Queries are produced either
at runtime from a review's PICO definition via the model, or synthetically
for the instruction corpus by aggregating per-study term sets: each study's
terms are AND-ed, studies are OR-ed within a facet, and the population and
intervention facets are AND-ed into the final query. Synthetic queries are
validated by executing them and filtering out any with recall below 0.2.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence, Union

from .gateway import ChatRequest, LlmGateway, TaskKind, load_template, render_prompt
from .parsing import UnparseableModelOutput, complete_parsed, extract_json, parse_term_list

MAX_TERMS_PER_STUDY = 10
RECALL_FILTER_THRESHOLD = 0.2
DEFAULT_SEARCH_LIMIT = 3000
ENSEMBLE_RUNS = 10


class QueryError(Exception):
    """Base class for query-engine failures."""


class EmptyExtraction(QueryError):
    """Model produced no usable terms for a study."""


class MisalignedStudySets(QueryError):
    """Population and intervention term sets do not pair up by study."""


class AllRunsFailed(QueryError):
    """Every run of an ensemble search errored."""


class UnsupportedDialect(QueryError):
    pass


class QuerySyntaxError(QueryError):
    """Query text failed to parse; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Term:
    text: str

    def __post_init__(self) -> None:
        if not self.text or self.text != self.text.strip():
            raise ValueError(f"term text must be non-empty and trimmed: {self.text!r}")


@dataclass(frozen=True)
class And:
    children: tuple["BooleanQuery", ...]

    def __post_init__(self) -> None:
        if len(self.children) < 1:
            raise ValueError("And requires arity >= 1")


@dataclass(frozen=True)
class Or:
    children: tuple["BooleanQuery", ...]

    def __post_init__(self) -> None:
        if len(self.children) < 1:
            raise ValueError("Or requires arity >= 1")


BooleanQuery = Union[Term, And, Or]


def normalize_term(text: str) -> str:
    """Case-fold, trim, and collapse internal whitespace (the dedup key)."""
    return re.sub(r"\s+", " ", text.strip()).casefold()


def query_terms(query: BooleanQuery) -> Iterator[str]:
    """Yield every term text in the AST, left to right."""
    if isinstance(query, Term):
        yield query.text
    else:
        for child in query.children:
            yield from query_terms(child)


def normalize(query: BooleanQuery) -> BooleanQuery:
    """Collapse arity-1 And/Or nodes; the form parse_query always returns."""
    if isinstance(query, Term):
        return query
    children = tuple(normalize(c) for c in query.children)
    if len(children) == 1:
        return children[0]
    return type(query)(children)


def evaluate(query: BooleanQuery, term_matches) -> bool:
    """Evaluate the AST against one document via a term predicate.

    ``term_matches(term_text) -> bool`` decides whether a single term hits
    the document; this is the document-by-document oracle counterpart of the
    registry's postings-set execution.
    """
    if isinstance(query, Term):
        return bool(term_matches(query.text))
    if isinstance(query, And):
        return all(evaluate(c, term_matches) for c in query.children)
    return any(evaluate(c, term_matches) for c in query.children)


# ---------------------------------------------------------------------------
# Serialization / parsing
# ---------------------------------------------------------------------------


class Dialect(str, Enum):
    PUBLICATION_REGISTRY = "publication_registry"
    TRIAL_REGISTRY = "trial_registry"
    FIXTURE = "fixture"


# Field tag appended to each quoted term, per dialect; configurable at call site.
DEFAULT_FIELD_TAGS = {
    Dialect.PUBLICATION_REGISTRY: "[tiab]",
    Dialect.TRIAL_REGISTRY: "",
    Dialect.FIXTURE: "",
}


def serialize_query(
    query: BooleanQuery, dialect: Dialect = Dialect.FIXTURE, field_tag: str | None = None
) -> str:
    """Render a fully parenthesized, dialect-legal query string.

    Terms are double-quoted with embedded quotes backslash-escaped; an
    arity-1 And/Or serializes as its parenthesized child with no operator.
    Round-trips through parse_query to the normalized AST.
    """
    if not isinstance(dialect, Dialect):
        raise UnsupportedDialect(f"unknown dialect: {dialect!r}")
    tag = DEFAULT_FIELD_TAGS[dialect] if field_tag is None else field_tag

    def render(node: BooleanQuery) -> str:
        if isinstance(node, Term):
            escaped = node.text.replace("\\", "\\\\").replace('"', '\\"')
            return f'"{escaped}"{tag}'
        op = " AND " if isinstance(node, And) else " OR "
        return "(" + op.join(render(c) for c in node.children) + ")"

    return render(query)


_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<lparen>\()
      | (?P<rparen>\))
      | (?P<and>AND\b)
      | (?P<or>OR\b)
      | "(?P<quoted>(?:[^"\\]|\\.)*)"
      | (?P<word>[^\s()"]+)
    )""",
    re.VERBOSE,
)


def _tokenize(text: str, field_tag: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if match.group("lparen"):
            tokens.append(("lparen", "(", match.start()))
        elif match.group("rparen"):
            tokens.append(("rparen", ")", match.start()))
        elif match.group("and"):
            tokens.append(("and", "AND", match.start()))
        elif match.group("or"):
            tokens.append(("or", "OR", match.start()))
        elif match.group("quoted") is not None:
            term = match.group("quoted").replace('\\"', '"').replace("\\\\", "\\")
            tokens.append(("term", term, match.start()))
        else:
            word = match.group("word")
            if field_tag and word.endswith(field_tag):
                word = word[: -len(field_tag)]
            tokens.append(("term", word, match.start()))
        pos = match.end()
    return tokens


def parse_query(
    text: str, dialect: Dialect = Dialect.FIXTURE, field_tag: str | None = None
) -> BooleanQuery:
    """Parse a query string into a normalized AST.

    Precedence: AND binds tighter than OR; parentheses override. Field tags
    trailing a quoted term (e.g. ``"aspirin"[tiab]``) are stripped.
    """
    if not text or not text.strip():
        raise QuerySyntaxError("empty query", 0)
    if not isinstance(dialect, Dialect):
        raise UnsupportedDialect(f"unknown dialect: {dialect!r}")
    tag = DEFAULT_FIELD_TAGS[dialect] if field_tag is None else field_tag

    # strip field tags that trail a closing quote before tokenizing
    if tag:
        text = text.replace(f'"{tag}', '"')
    tokens = _tokenize(text, tag)
    index = 0

    def peek() -> tuple[str, str, int] | None:
        return tokens[index] if index < len(tokens) else None

    def advance() -> tuple[str, str, int]:
        nonlocal index
        token = tokens[index]
        index += 1
        return token

    def parse_or() -> BooleanQuery:
        parts = [parse_and()]
        while peek() and peek()[0] == "or":
            advance()
            parts.append(parse_and())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def parse_and() -> BooleanQuery:
        parts = [parse_atom()]
        while peek() and peek()[0] == "and":
            advance()
            parts.append(parse_atom())
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def parse_atom() -> BooleanQuery:
        token = peek()
        if token is None:
            raise QuerySyntaxError("unexpected end of query", len(text))
        kind, value, position = advance()
        if kind == "lparen":
            inner = parse_or()
            closing = peek()
            if closing is None or closing[0] != "rparen":
                raise QuerySyntaxError("unbalanced parenthesis", position)
            advance()
            return inner
        if kind == "term":
            stripped = value.strip()
            if not stripped:
                raise QuerySyntaxError("empty term", position)
            return Term(stripped)
        raise QuerySyntaxError(f"unexpected token {value!r}", position)

    result = parse_or()
    trailing = peek()
    if trailing is not None:
        raise QuerySyntaxError(f"trailing input {trailing[1]!r}", trailing[2])
    return result


# ---------------------------------------------------------------------------
# Term sets and bundles
# ---------------------------------------------------------------------------


class Facet(str, Enum):
    POPULATION = "population"
    INTERVENTION = "intervention"


class Provenance(str, Enum):
    LLM_GENERATED = "llm_generated"
    SYNTHETIC_GROUND_TRUTH = "synthetic_ground_truth"


@dataclass(frozen=True)
class TermSet:
    """Per-study search terms for one facet; at most ten terms."""

    facet: Facet
    terms: tuple[str, ...]
    study_id: str

    def __post_init__(self) -> None:
        if not 1 <= len(self.terms) <= MAX_TERMS_PER_STUDY:
            raise ValueError(f"term set must hold 1..{MAX_TERMS_PER_STUDY} terms, got {len(self.terms)}")


@dataclass(frozen=True)
class QueryBundle:
    """A facet pair with its AND-combined final query."""

    population_query: BooleanQuery
    intervention_query: BooleanQuery
    final_query: BooleanQuery
    provenance: Provenance

    def __post_init__(self) -> None:
        expected = And((self.population_query, self.intervention_query))
        if self.final_query != expected:
            raise ValueError("final_query must be And(population_query, intervention_query)")

    @classmethod
    def from_facets(
        cls, population: BooleanQuery, intervention: BooleanQuery, provenance: Provenance
    ) -> "QueryBundle":
        return cls(
            population_query=population,
            intervention_query=intervention,
            final_query=And((population, intervention)),
            provenance=provenance,
        )


def dedupe_terms(terms: Iterable[str]) -> list[str]:
    """Trim and deduplicate terms, preserving first-seen order."""
    seen: set[str] = set()
    result: list[str] = []
    for term in terms:
        cleaned = re.sub(r"\s+", " ", term.strip())
        key = cleaned.casefold()
        if cleaned and key not in seen:
            seen.add(key)
            result.append(cleaned)
    return result


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def extract_study_terms(study, facet: Facet, gateway: LlmGateway, max_terms: int = MAX_TERMS_PER_STUDY) -> TermSet:
    """Model-extract up to ``max_terms`` facet terms for one study.

    Longer extractions are truncated to the cap; an empty extraction is an
    error, never an empty set.
    """
    if not study.title or not study.abstract:
        raise ValueError("study needs both title and abstract for term extraction")
    template = load_template(TaskKind.TERM_EXTRACT)
    prompt = render_prompt(
        template,
        {
            "facet": facet.value,
            "title": study.title,
            "abstract": study.abstract,
            "max_terms": str(max_terms),
        },
    )

    def parse(text: str) -> list[str]:
        terms = dedupe_terms(parse_term_list(text))
        if not terms:
            raise ValueError("no terms in output")
        return terms

    try:
        terms = complete_parsed(
            gateway,
            ChatRequest(user_text=prompt),
            parse,
            error_context=f"term extraction for {study.citation_id}",
        )
    except UnparseableModelOutput as exc:
        if not exc.raw_output.strip():
            raise EmptyExtraction(f"model extracted no {facet.value} terms for {study.citation_id}") from exc
        raise
    return TermSet(facet=facet, terms=tuple(terms[:max_terms]), study_id=study.citation_id)


def assemble_ground_truth_query(
    p_sets: Sequence[TermSet], i_sets: Sequence[TermSet]
) -> QueryBundle:
    """Aggregate per-study term sets into the synthetic ground-truth query.

    Per facet: OR over studies of (AND over that study's terms); the final
    query ANDs the two facets. Term order is preserved from extraction. An
    arity-1 OR (single study) stays in the AST and only collapses when
    serialized.
    """
    if len(p_sets) != len(i_sets) or not p_sets:
        raise MisalignedStudySets(
            f"need equal, non-empty facet lists (got {len(p_sets)} population, {len(i_sets)} intervention)"
        )
    for p, i in zip(p_sets, i_sets):
        if p.study_id != i.study_id:
            raise MisalignedStudySets(f"study ids diverge: {p.study_id} vs {i.study_id}")
        if p.facet is not Facet.POPULATION or i.facet is not Facet.INTERVENTION:
            raise MisalignedStudySets("facet lists swapped or mislabeled")

    population = Or(tuple(And(tuple(Term(t) for t in s.terms)) for s in p_sets))
    intervention = Or(tuple(And(tuple(Term(t) for t in s.terms)) for s in i_sets))
    return QueryBundle.from_facets(population, intervention, Provenance.SYNTHETIC_GROUND_TRUTH)


@dataclass(frozen=True)
class ValidationResult:
    accepted: bool
    recall: float
    retrieved: int


def compute_recall(retrieved_ids: Iterable[str], ground_truth: set[str]) -> float:
    if not ground_truth:
        raise ValueError("ground truth must be non-empty")
    return len(set(retrieved_ids) & ground_truth) / len(ground_truth)


def validate_query(
    bundle: QueryBundle,
    ground_truth: set[str],
    searcher,
    threshold: float = RECALL_FILTER_THRESHOLD,
    limit: int = DEFAULT_SEARCH_LIMIT,
) -> ValidationResult:
    """Execute the bundle and accept iff recall >= threshold (boundary inclusive)."""
    if not ground_truth:
        raise ValueError("ground truth must be non-empty")
    dialect = getattr(searcher, "dialect", Dialect.FIXTURE)
    ids = searcher.search_publications(serialize_query(bundle.final_query, dialect), limit=limit)
    recall = compute_recall(ids, ground_truth)
    return ValidationResult(accepted=recall >= threshold, recall=recall, retrieved=len(ids))


def generate_search_query(pico, gateway: LlmGateway, temperature: float = 0.7) -> QueryBundle:
    """Model-generate a query from PICO: OR of keywords per facet, facets AND-ed.

    Sampling temperature defaults to 0.7 because this path is also used for
    ensemble sampling, where output diversity is the point.
    """
    if not pico.population or not pico.intervention:
        raise ValueError("PICO needs non-empty population and intervention")
    template = load_template(TaskKind.SEARCH)
    prompt = render_prompt(
        template,
        {
            "population": pico.population,
            "intervention": pico.intervention,
            "comparison": pico.comparison,
            "outcome": pico.outcome,
        },
    )

    def parse(text: str) -> tuple[list[str], list[str]]:
        data = extract_json(text)
        if not isinstance(data, dict):
            raise ValueError("expected a JSON object")
        population = dedupe_terms(str(t) for t in data.get("population", []))
        intervention = dedupe_terms(str(t) for t in data.get("intervention", []))
        if not population or not intervention:
            raise ValueError("both keyword lists must be non-empty")
        return population, intervention

    population_terms, intervention_terms = complete_parsed(
        gateway,
        ChatRequest(user_text=prompt, temperature=temperature),
        parse,
        error_context="search query generation",
    )
    population = Or(tuple(Term(t) for t in population_terms))
    intervention = Or(tuple(Term(t) for t in intervention_terms))
    return QueryBundle.from_facets(population, intervention, Provenance.LLM_GENERATED)


@dataclass(frozen=True)
class RunOutcome:
    run_index: int
    ids: tuple[str, ...]
    recall: float | None
    error: str | None = None


@dataclass(frozen=True)
class EnsembleResult:
    ids: tuple[str, ...]
    runs: tuple[RunOutcome, ...]
    union_recall: float | None

    @property
    def failed_runs(self) -> int:
        return sum(1 for r in self.runs if r.error is not None)


def ensemble_search(
    pico,
    gateway: LlmGateway,
    searcher,
    runs: int = ENSEMBLE_RUNS,
    ground_truth: set[str] | None = None,
    limit: int = DEFAULT_SEARCH_LIMIT,
) -> EnsembleResult:
    """Sample ``runs`` queries, execute each, and union the results.

    The union is deduplicated preserving first-seen order (by run index,
    then rank within the run). Partial run failures are tolerated and
    reported; AllRunsFailed only when every run errored.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    dialect = getattr(searcher, "dialect", Dialect.FIXTURE)
    outcomes: list[RunOutcome] = []
    union: list[str] = []
    seen: set[str] = set()
    for run_index in range(runs):
        try:
            bundle = generate_search_query(pico, gateway)
            ids = searcher.search_publications(serialize_query(bundle.final_query, dialect), limit=limit)
        except Exception as exc:  # per-run failures must not abort the ensemble
            outcomes.append(RunOutcome(run_index=run_index, ids=(), recall=None, error=str(exc)))
            continue
        recall = compute_recall(ids, ground_truth) if ground_truth else None
        outcomes.append(RunOutcome(run_index=run_index, ids=tuple(ids), recall=recall))
        for id_ in ids:
            if id_ not in seen:
                seen.add(id_)
                union.append(id_)
    if all(o.error is not None for o in outcomes):
        raise AllRunsFailed(f"all {runs} ensemble runs failed; last: {outcomes[-1].error}")
    union_recall = compute_recall(union, ground_truth) if ground_truth else None
    return EnsembleResult(ids=tuple(union), runs=tuple(outcomes), union_recall=union_recall)


# ---------------------------------------------------------------------------
# Query files
# ---------------------------------------------------------------------------


def write_query_file(path, bundles: Sequence[QueryBundle], dialect: Dialect = Dialect.FIXTURE) -> None:
    """One serialized query per line, with provenance header comments."""
    lines = []
    for bundle in bundles:
        lines.append(f"# provenance: {bundle.provenance.value}")
        lines.append(serialize_query(bundle.final_query, dialect))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_query_file(path, dialect: Dialect = Dialect.FIXTURE) -> list[tuple[str, BooleanQuery]]:
    """Read (provenance, query) pairs written by write_query_file."""
    entries: list[tuple[str, BooleanQuery]] = []
    provenance = "unknown"
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "provenance:" in line:
                    provenance = line.split("provenance:", 1)[1].strip()
                continue
            entries.append((provenance, parse_query(line, dialect)))
            provenance = "unknown"
    return entries
