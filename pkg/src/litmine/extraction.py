"""Schema-driven extraction of structured records from full-text studies.

Four tasks: study characteristics (caller-defined fields), arm design,
participant statistics, and trial results. The model must answer with a
fenced JSON object; records are validated against their schema before they
escape, missing information is a distinguished NOT_REPORTED marker, and
nothing a record contains may be absent from the raw model response.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .gateway import ChatRequest, LlmGateway, TaskKind, estimate_tokens, load_template, render_prompt
from .parsing import UnparseableModelOutput, complete_parsed, extract_json

# Distinguished absence marker: not the empty string, not zero.
NOT_REPORTED = "NOT_REPORTED"

DEFAULT_TOKEN_CAP = 30_000


class ExtractionError(Exception):
    pass


class SchemaViolation(ExtractionError):
    pass


class DuplicateArmLabel(ExtractionError):
    pass


class UnknownGroupId(ExtractionError):
    pass


class UnitMismatch(ExtractionError):
    pass


class NoTextAvailable(ExtractionError):
    pass


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyDocument:
    citation_id: str
    main_text: str
    table_text: str = ""
    token_estimate: int = 0
    truncated: bool = False

    def __post_init__(self) -> None:
        if not self.main_text:
            raise ValueError("main_text must be non-empty")
        if self.token_estimate <= 0:
            object.__setattr__(
                self, "token_estimate", estimate_tokens(self.main_text + self.table_text)
            )

    def full_content(self) -> str:
        if self.table_text:
            return f"{self.main_text}\n\nTABLES:\n{self.table_text}"
        return self.main_text


class ValueKind(str, Enum):
    TEXT = "text"
    NUMBER = "number"
    LIST_OF_TEXT = "list_of_text"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    value_kind: ValueKind
    description: str = ""


DEFAULT_CHARACTERISTIC_FIELDS = [
    FieldSpec("conditions", ValueKind.LIST_OF_TEXT, "conditions studied"),
    FieldSpec("interventions", ValueKind.LIST_OF_TEXT, "interventions evaluated"),
    FieldSpec("enrollment", ValueKind.NUMBER, "number of participants enrolled"),
    FieldSpec("study_type", ValueKind.TEXT, "study design type"),
]


@dataclass(frozen=True)
class StudyCharacteristics:
    citation_id: str
    values: dict[str, object]


@dataclass(frozen=True)
class Arm:
    label: str
    arm_type: str
    description: str = ""
    intervention_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.label or not self.arm_type:
            raise ValueError("arm needs a label and an arm_type")


@dataclass(frozen=True)
class ArmDesign:
    citation_id: str
    arms: tuple[Arm, ...]

    def __post_init__(self) -> None:
        labels = [a.label for a in self.arms]
        if len(set(labels)) != len(labels):
            raise DuplicateArmLabel(f"duplicate arm labels in {labels}")
        if not self.arms:
            raise ValueError("arm design needs at least one arm")


@dataclass(frozen=True)
class GroupDef:
    group_id: str
    definition: str = ""
    unit: str = ""
    value: object = None


@dataclass(frozen=True)
class GroupResult:
    group_id: str
    value: object
    notes: str = ""


@dataclass(frozen=True)
class ParticipantMeasure:
    citation_id: str
    measure_definition: str
    parameter_type: str
    unit: str
    groups: tuple[GroupDef, ...]
    results: tuple[GroupResult, ...]

    def __post_init__(self) -> None:
        known = {g.group_id for g in self.groups}
        for result in self.results:
            if result.group_id not in known:
                raise UnknownGroupId(f"result references unknown group {result.group_id!r}")
            if isinstance(result.value, float) and not math.isfinite(result.value):
                raise ValueError("numeric result values must be finite")


@dataclass(frozen=True)
class ResultValue:
    value: object
    title: str = ""


@dataclass(frozen=True)
class OutcomeResult:
    citation_id: str
    outcome_definition: str
    group_definition: str
    parameter_type: str
    unit: str
    timeframe: str
    denominator_unit: str
    denominator_value: float | None
    results: tuple[ResultValue, ...]

    def __post_init__(self) -> None:
        if self.denominator_value is not None and self.denominator_value < 0:
            raise ValueError("denominator_value must be >= 0")
        if not self.results:
            raise ValueError("a successful extraction carries at least one result")


# ---------------------------------------------------------------------------
# Numeric normalization
# ---------------------------------------------------------------------------

_NUMBER_CLEAN_RE = re.compile(r"[,\s ]")


def parse_number(raw: object) -> float:
    """Parse a number, tolerating thousands separators and unicode minus."""
    if isinstance(raw, bool):
        raise ValueError("booleans are not numbers")
    if isinstance(raw, (int, float)):
        if isinstance(raw, float) and not math.isfinite(raw):
            raise ValueError("number must be finite")
        return float(raw)
    text = _NUMBER_CLEAN_RE.sub("", str(raw)).replace("−", "-").replace("–", "-")
    if not text:
        raise ValueError("empty numeric value")
    return float(text)


def coerce_value(raw: object, kind: ValueKind) -> object:
    """Coerce a parsed JSON value to its FieldSpec kind; NOT_REPORTED passes through."""
    if isinstance(raw, str) and raw.strip() == NOT_REPORTED:
        return NOT_REPORTED
    if kind is ValueKind.NUMBER:
        try:
            value = parse_number(raw)
        except (ValueError, TypeError) as exc:
            raise SchemaViolation(f"expected a number, got {raw!r}") from exc
        return int(value) if value.is_integer() else value
    if kind is ValueKind.TEXT:
        if isinstance(raw, (dict, list)):
            raise SchemaViolation(f"expected text, got {type(raw).__name__}")
        return str(raw)
    if kind is ValueKind.LIST_OF_TEXT:
        if isinstance(raw, str):
            return [part.strip() for part in raw.split(";") if part.strip()]
        if isinstance(raw, list):
            return [str(item).strip() for item in raw]
        raise SchemaViolation(f"expected a list of text, got {raw!r}")
    raise SchemaViolation(f"unknown value kind {kind!r}")


# ---------------------------------------------------------------------------
# Document preparation
# ---------------------------------------------------------------------------


def prepare_document(citation, max_tokens: int = DEFAULT_TOKEN_CAP) -> StudyDocument:
    """Assemble the extraction input from a citation's text.

    When the estimate exceeds the cap, the tail of the full-text segment is
    cut first; the abstract head and the whole table_text are always kept
    (tables concentrate the participant and result data).
    """
    abstract = citation.abstract or ""
    body = citation.full_text or ""
    table_text = citation.table_text or ""
    if not abstract and not body:
        raise NoTextAvailable(f"citation {citation.citation_id} has no usable text")

    head = abstract
    if body:
        head = f"{abstract}\n\n{body}" if abstract else body
    total = estimate_tokens(head + table_text)
    truncated = False
    if total > max_tokens:
        reserved = estimate_tokens(table_text) + estimate_tokens(abstract)
        budget_chars = max(0, (max_tokens - reserved) * 4)
        kept_body = body[:budget_chars]
        head = f"{abstract}\n\n{kept_body}" if abstract else kept_body
        if not head.strip():
            head = abstract or body[: max_tokens * 4]
        truncated = True
    return StudyDocument(
        citation_id=citation.citation_id,
        main_text=head,
        table_text=table_text,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Extraction operations
# ---------------------------------------------------------------------------


def extract_study_characteristics(
    doc: StudyDocument,
    fields: Sequence[FieldSpec],
    gateway: LlmGateway,
) -> StudyCharacteristics:
    """Extract caller-defined fields; absent information becomes NOT_REPORTED."""
    if not fields:
        raise ValueError("fields must be non-empty")
    names = [f.name for f in fields]
    if len(set(names)) != len(names):
        raise ValueError("field names must be unique")
    template = load_template(TaskKind.CHAR_EXTRACT)
    field_lines = "\n".join(
        f"- {f.name} ({f.value_kind.value}): {f.description or f.name}" for f in fields
    )
    prompt = render_prompt(template, {"fields": field_lines, "document": doc.full_content()})

    def parse(text: str) -> dict:
        data = extract_json(text)
        if not isinstance(data, dict):
            raise ValueError("expected a JSON object of field values")
        return data

    # missing fields get one reprompt before settling to NOT_REPORTED
    from .parsing import FORMAT_REMINDER

    request = ChatRequest(user_text=prompt, temperature=0.0)
    data: dict | None = None
    last_text = ""
    for attempt in range(2):
        response = gateway.complete(request)
        last_text = response.text
        try:
            data = parse(response.text)
        except (ValueError, KeyError, TypeError):
            data = None
        if data is not None and all(f.name in data for f in fields):
            break
        request = ChatRequest(user_text=prompt + FORMAT_REMINDER, temperature=0.0)
    if data is None:
        raise UnparseableModelOutput(
            f"characteristics extraction for {doc.citation_id}", raw_output=last_text
        )
    values: dict[str, object] = {}
    for spec in fields:
        if spec.name not in data or data[spec.name] is None:
            values[spec.name] = NOT_REPORTED
        else:
            values[spec.name] = coerce_value(data[spec.name], spec.value_kind)
    return StudyCharacteristics(citation_id=doc.citation_id, values=values)


def extract_arm_design(doc: StudyDocument, gateway: LlmGateway) -> ArmDesign:
    """Extract the intervention arms; duplicate labels are rejected at parse."""
    template = load_template(TaskKind.ARM_EXTRACT)
    prompt = render_prompt(template, {"document": doc.full_content()})

    def parse(text: str) -> list[dict]:
        data = extract_json(text)
        if isinstance(data, dict):
            data = data.get("arms")
        if not isinstance(data, list) or not data:
            raise ValueError("expected a non-empty JSON list of arms")
        return data

    raw_arms = complete_parsed(
        gateway,
        ChatRequest(user_text=prompt, temperature=0.0),
        parse,
        error_context=f"arm extraction for {doc.citation_id}",
    )
    arms = tuple(
        Arm(
            label=str(a.get("label", "")).strip(),
            arm_type=str(a.get("arm_type", "")).strip(),
            description=str(a.get("description", "")).strip(),
            intervention_names=tuple(str(n).strip() for n in a.get("intervention_names", [])),
        )
        for a in raw_arms
    )
    return ArmDesign(citation_id=doc.citation_id, arms=arms)


def extract_participant_statistics(
    doc: StudyDocument,
    measure_definition: str,
    parameter_type: str,
    unit: str,
    groups: Sequence[GroupDef],
    gateway: LlmGateway,
) -> ParticipantMeasure:
    """Extract one statistic per defined group; unreported groups carry NOT_REPORTED."""
    if not groups:
        raise ValueError("groups must be non-empty")
    ids = [g.group_id for g in groups]
    if len(set(ids)) != len(ids):
        raise ValueError("group ids must be unique")
    template = load_template(TaskKind.PARTICIPANT_EXTRACT)
    group_lines = "\n".join(f"- {g.group_id}: {g.definition}" for g in groups)
    prompt = render_prompt(
        template,
        {
            "measure_definition": measure_definition,
            "parameter_type": parameter_type,
            "unit": unit,
            "groups": group_lines,
            "document": doc.full_content(),
        },
    )

    def parse(text: str) -> list[dict]:
        data = extract_json(text)
        if isinstance(data, dict):
            data = data.get("results")
        if not isinstance(data, list):
            raise ValueError("expected a JSON list of group results")
        return data

    raw_results = complete_parsed(
        gateway,
        ChatRequest(user_text=prompt, temperature=0.0),
        parse,
        error_context=f"participant extraction for {doc.citation_id}",
    )
    known = {g.group_id for g in groups}
    reported: dict[str, GroupResult] = {}
    for item in raw_results:
        gid = str(item.get("group_id", "")).strip()
        if gid not in known:
            raise UnknownGroupId(f"model reported unknown group {gid!r}")
        value = item.get("value", NOT_REPORTED)
        if isinstance(value, str) and value.strip() != NOT_REPORTED:
            try:
                value = parse_number(value)
            except ValueError:
                value = value.strip()
        reported[gid] = GroupResult(group_id=gid, value=value, notes=str(item.get("notes", "")))
    results = []
    for group in groups:
        if group.group_id in reported:
            results.append(reported[group.group_id])
        else:
            results.append(
                GroupResult(group_id=group.group_id, value=NOT_REPORTED, notes="not reported")
            )
    return ParticipantMeasure(
        citation_id=doc.citation_id,
        measure_definition=measure_definition,
        parameter_type=parameter_type,
        unit=unit,
        groups=tuple(groups),
        results=tuple(results),
    )


_PERCENT_HINT_RE = re.compile(r"%|percent", re.IGNORECASE)


def extract_trial_results(
    doc: StudyDocument,
    outcome_definition: str,
    group_definition: str,
    parameter_type: str,
    unit: str,
    timeframe: str,
    denominator_unit: str,
    denominator_value: float | None,
    gateway: LlmGateway,
) -> OutcomeResult:
    """Extract the outcome values for one (outcome, group) specification."""
    if not outcome_definition or not group_definition:
        raise ValueError("outcome_definition and group_definition must be non-empty")
    template = load_template(TaskKind.RESULT_EXTRACT)
    prompt = render_prompt(
        template,
        {
            "outcome_definition": outcome_definition,
            "group_definition": group_definition,
            "parameter_type": parameter_type,
            "unit": unit,
            "timeframe": timeframe,
            "denominator_unit": denominator_unit,
            "denominator_value": "" if denominator_value is None else str(denominator_value),
            "document": doc.full_content(),
        },
    )

    def parse(text: str) -> list[dict]:
        data = extract_json(text)
        if isinstance(data, dict):
            data = data.get("results")
        if not isinstance(data, list) or not data:
            raise ValueError("expected a non-empty JSON list of results")
        return data

    raw_results = complete_parsed(
        gateway,
        ChatRequest(user_text=prompt, temperature=0.0),
        parse,
        error_context=f"result extraction for {doc.citation_id}",
    )
    results = []
    for item in raw_results:
        value = item.get("value", NOT_REPORTED)
        stated_unit = str(item.get("unit", "")).strip()
        if stated_unit and unit and stated_unit.casefold() != unit.casefold():
            raise UnitMismatch(
                f"model states unit {stated_unit!r} but the specification says {unit!r}"
            )
        if isinstance(value, str) and value.strip() != NOT_REPORTED:
            if _PERCENT_HINT_RE.search(value) and unit and not _PERCENT_HINT_RE.search(unit):
                raise UnitMismatch(f"model reports a percentage {value!r} for unit {unit!r}")
            try:
                value = parse_number(value)
            except ValueError:
                value = value.strip()
        results.append(ResultValue(value=value, title=str(item.get("title", ""))))
    return OutcomeResult(
        citation_id=doc.citation_id,
        outcome_definition=outcome_definition,
        group_definition=group_definition,
        parameter_type=parameter_type,
        unit=unit,
        timeframe=timeframe,
        denominator_unit=denominator_unit,
        denominator_value=denominator_value,
        results=tuple(results),
    )


# ---------------------------------------------------------------------------
# Fabrication audit
# ---------------------------------------------------------------------------


def _normalize_for_audit(text: str) -> str:
    text = text.casefold().replace("−", "-")
    text = _NUMBER_CLEAN_RE.sub("", text)
    return text


def value_in_response(value: object, raw_response: str) -> bool:
    """True iff the value (normalized) appears as a substring of the response.

    NOT_REPORTED is always allowed: absence is the one thing a model may
    assert without quoting the document.
    """
    if value == NOT_REPORTED or value is None:
        return True
    normalized_response = _normalize_for_audit(raw_response)
    if isinstance(value, (list, tuple)):
        return all(value_in_response(v, raw_response) for v in value)
    if isinstance(value, float) and value.is_integer():
        candidates = [str(int(value)), str(value)]
    else:
        candidates = [str(value)]
    return any(_normalize_for_audit(c) in normalized_response for c in candidates)


def audit_record_values(values: Sequence[object], raw_response: str) -> list[object]:
    """Return the values that do NOT appear in the raw response (fabrications)."""
    return [v for v in values if not value_in_response(v, raw_response)]
