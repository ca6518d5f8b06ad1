"""Deterministic rule-based stand-in model for offline runs.

A responder for MockBackend that answers every pipeline prompt by lexical
rules over the content embedded in the prompt itself: keyword lines are
echoed back, table rows are read off the document, criterion judgments come
from token overlap between criterion text and the study record. Identical
prompts always produce identical answers, which makes full pipeline runs
byte-reproducible.

Document conventions the rules rely on (the fixture corpus follows them):

* study abstracts may carry ``Condition keywords: ...`` and
  ``Intervention keywords: ...`` lines (semicolon-separated);
* full texts carry ``Design:``, ``Enrollment:``, ``Conditions:``,
  ``Interventions:`` lines, an ``Arms:`` list, a ``Participant measure:``
  block, and ``Outcome:`` blocks;
* review abstracts carry ``Population:`` / ``Intervention:`` /
  ``Comparison:`` / ``Outcome:`` lines.
"""

from __future__ import annotations

import hashlib
import json
import re

from .gateway import ChatRequest, LlmGateway, mock_gateway

_STOPWORDS = frozenset(
    "a an and are as at be by for from in into is it of on or that the this to was were with".split()
)

# An abstract carrying this phrase makes the ground-truth-conditioned
# analysis come out negative even for an included study; fixture corpora
# plant it to exercise the negative-score filter.
WEAK_EVIDENCE_MARKER = "preliminary pilot report"


def _salient(text: str, limit: int = 6) -> list[str]:
    words = []
    for word in re.findall(r"[a-z0-9]+", text.casefold()):
        if len(word) > 2 and word not in _STOPWORDS and word not in words:
            words.append(word)
    return words[:limit]


_PROMPT_HEADERS = (
    "TITLE|ABSTRACT|STUDY TITLE|STUDY ABSTRACT|CRITERIA|DOCUMENT|FIELDS|GROUPS|"
    "MEASURE|PARAMETER TYPE|UNIT|TIMEFRAME|DENOMINATOR|OUTCOME|GROUP|REMINDER"
)
_BLOCK_END = rf"(?=^(?:{_PROMPT_HEADERS}):|^Answer|^Respond|^For every|\Z)"


def _block(prompt: str, header: str) -> str:
    """Text following ``header`` up to the next known prompt header or epilogue."""
    pattern = re.compile(
        rf"^{re.escape(header)}\s*(.*?){_BLOCK_END}",
        re.MULTILINE | re.DOTALL,
    )
    match = pattern.search(prompt)
    return match.group(1).strip() if match else ""


def _line(text: str, label: str) -> str:
    match = re.search(rf"^{re.escape(label)}\s*(.+)$", text, re.MULTILINE)
    return match.group(1).strip() if match else ""


def _criteria_lines(prompt: str) -> list[tuple[str, str]]:
    block = _block(prompt, "CRITERIA:")
    criteria = []
    for line in block.splitlines():
        match = re.match(r"^(\S+)\s+\[[PICO]\]\s+(.*)$", line.strip())
        if match:
            text = match.group(2)
            criteria.append((match.group(1), text.split(":", 1)[-1].strip() or text))
    return criteria


def _overlap(criterion_text: str, record_text: str) -> float:
    wanted = set(_salient(criterion_text, limit=12))
    if not wanted:
        return 0.0
    have = set(re.findall(r"[a-z0-9]+", record_text.casefold()))
    return len(wanted & have) / len(wanted)


def _overlap_label(ratio: float) -> str:
    if ratio >= 0.6:
        return "YES"
    if ratio >= 0.3:
        return "PARTIAL"
    if ratio > 0.0:
        return "UNCERTAIN"
    return "NO"


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")


class OfflineModel:
    """Callable responder: ChatRequest -> text, or None when unrecognized."""

    def __call__(self, request: ChatRequest) -> str | None:
        prompt = request.user_text
        if prompt.startswith("You are helping build a literature search strategy"):
            return self._search(prompt)
        if "extract the population search terms" in prompt or "extract the intervention search terms" in prompt:
            return self._term_extract(prompt)
        if prompt.startswith("You assess whether a study matches") or prompt.startswith(
            "Score this study against each screening criterion"
        ):
            return self._screen(prompt)
        if prompt.startswith("You are writing criterion-level eligibility analyses"):
            return self._conditioned_screen(prompt)
        if prompt.startswith("Extract the PICO elements"):
            return self._pico(prompt)
        if prompt.startswith("Extract the requested fields"):
            return self._characteristics(prompt)
        if prompt.startswith("List the intervention arms"):
            return self._arms(prompt)
        if prompt.startswith("Extract the participant statistic"):
            return self._participants(prompt)
        if prompt.startswith("Extract the trial result"):
            return self._results(prompt)
        if prompt.startswith("Rate how relevant this study is"):
            return self._simple_score(prompt)
        if prompt.startswith("Draft the selection criteria"):
            return self._draft_criteria(prompt)
        return None

    # -- search -------------------------------------------------------------

    def _search(self, prompt: str) -> str:
        population = _salient(_line(prompt, "Population:"), limit=4)
        intervention = _salient(_line(prompt, "Intervention:"), limit=4)
        return json.dumps({"population": population, "intervention": intervention})

    def _term_extract(self, prompt: str) -> str:
        facet = "population" if "population search terms" in prompt else "intervention"
        abstract = _block(prompt, "ABSTRACT:")
        label = "Condition keywords:" if facet == "population" else "Intervention keywords:"
        keywords = _line(abstract, label)
        if keywords:
            return keywords.rstrip(".")
        title = _block(prompt, "TITLE:") or _line(prompt, "TITLE:")
        return "; ".join(_salient(title, limit=3))

    # -- screening ------------------------------------------------------------

    def _screen(self, prompt: str) -> str:
        record = _block(prompt, "STUDY TITLE:") + " " + _block(prompt, "STUDY ABSTRACT:")
        items = []
        for cid, text in _criteria_lines(prompt):
            ratio = _overlap(text, record)
            items.append(
                {
                    "criterion_id": cid,
                    "label": _overlap_label(ratio),
                    "rationale": f"Criterion term overlap with the record is {ratio:.2f}.",
                }
            )
        return json.dumps(items)

    def _conditioned_screen(self, prompt: str) -> str:
        eligible = "NOT INCLUDED in" not in prompt and "INCLUDED in" in prompt
        record = _block(prompt, "STUDY TITLE:") + " " + _block(prompt, "STUDY ABSTRACT:")
        weak = WEAK_EVIDENCE_MARKER in record.casefold()
        items = []
        for index, (cid, text) in enumerate(_criteria_lines(prompt)):
            if eligible and weak:
                label = "NO" if index % 2 == 0 else "UNCERTAIN"
                rationale = "The record reads as preliminary; the criterion looks unmet."
            elif eligible:
                label = "YES" if index % 3 != 2 else "PARTIAL"
                rationale = "Consistent with the inclusion decision and the record."
            else:
                spin = _stable_int(f"{cid}|{record[:80]}") % 3
                label = ("NO", "UNCERTAIN", "NO")[spin]
                rationale = "The record does not support this criterion."
            items.append({"criterion_id": cid, "label": label, "rationale": rationale})
        return json.dumps(items)

    def _simple_score(self, prompt: str) -> str:
        pico_text = " ".join(
            _line(prompt, label)
            for label in ("Population:", "Intervention:", "Comparison:", "Outcome:")
        )
        record = _block(prompt, "STUDY TITLE:") + " " + _block(prompt, "STUDY ABSTRACT:")
        ratio = _overlap(pico_text, record)
        return str(1 + round(9 * ratio))

    def _draft_criteria(self, prompt: str) -> str:
        lines = []
        for label in ("Population:", "Intervention:", "Comparison:", "Outcome:"):
            value = _line(prompt, label)
            if value and value != "unspecified":
                lines.append(f"Study {label.lower().rstrip(':')} should match: {value}")
        return "\n".join(lines)

    # -- review PICO ----------------------------------------------------------

    def _pico(self, prompt: str) -> str:
        abstract = _block(prompt, "ABSTRACT:")
        return json.dumps(
            {
                "population": _line(abstract, "Population:") or "unspecified",
                "intervention": _line(abstract, "Intervention:") or "unspecified",
                "comparison": _line(abstract, "Comparison:") or "unspecified",
                "outcome": _line(abstract, "Outcome:") or "unspecified",
            }
        )

    # -- extraction -------------------------------------------------------------

    def _characteristics(self, prompt: str) -> str:
        document = _block(prompt, "DOCUMENT:")
        requested = re.findall(r"^- (\w+) \((\w+)\)", _block(prompt, "FIELDS:"), re.MULTILINE)
        values: dict[str, object] = {}
        for name, _kind in requested:
            if name == "enrollment":
                raw = re.search(r"^Enrollment:\s*([\d,]+)", document, re.MULTILINE)
                if raw:
                    values[name] = raw.group(1)
            elif name == "study_type":
                raw = re.search(r"^Design:\s*(.+?)\.?$", document, re.MULTILINE)
                if raw:
                    values[name] = raw.group(1).strip()
            elif name == "conditions":
                raw = re.search(r"^Conditions:\s*(.+?)\.?$", document, re.MULTILINE)
                if raw:
                    values[name] = [p.strip() for p in raw.group(1).split(";")]
            elif name == "interventions":
                raw = re.search(r"^Interventions:\s*(.+?)\.?$", document, re.MULTILINE)
                if raw:
                    values[name] = [p.strip() for p in raw.group(1).split(";")]
            else:
                raw = re.search(rf"^{re.escape(name)}:\s*(.+?)\.?$", document, re.MULTILINE | re.IGNORECASE)
                if raw:
                    values[name] = raw.group(1).strip()
        return json.dumps(values)

    def _arms(self, prompt: str) -> str:
        document = _block(prompt, "DOCUMENT:")
        arms = []
        for match in re.finditer(
            r"^- (?P<label>[^\[\n]+?) \[(?P<type>[A-Z_]+)\]: (?P<desc>[^|\n]+?)"
            r" \| interventions: (?P<names>.+)$",
            document,
            re.MULTILINE,
        ):
            arms.append(
                {
                    "label": match.group("label").strip(),
                    "arm_type": match.group("type"),
                    "description": match.group("desc").strip(),
                    "intervention_names": [n.strip().rstrip(".") for n in match.group("names").split(";")],
                }
            )
        return json.dumps({"arms": arms})

    def _participants(self, prompt: str) -> str:
        document = _block(prompt, "DOCUMENT:")
        group_ids = re.findall(r"^- (\S+):", _block(prompt, "GROUPS:"), re.MULTILINE)
        section = document.split("Participant measure:", 1)
        rows = section[1] if len(section) > 1 else document
        results = []
        for gid in group_ids:
            match = re.search(rf"^- {re.escape(gid)} \([^)]*\): (\S+)", rows, re.MULTILINE)
            if match:
                results.append(
                    {"group_id": gid, "value": match.group(1).rstrip("."), "notes": "from table"}
                )
        return json.dumps({"results": results})

    def _results(self, prompt: str) -> str:
        document = _block(prompt, "DOCUMENT:")
        outcome = _line(prompt, "OUTCOME:")
        pattern = re.compile(
            rf"^Outcome: {re.escape(outcome)} \[.*?\]\n(?P<rows>(?:- .+\n?)+)", re.MULTILINE
        )
        match = pattern.search(document)
        results = []
        if match:
            for row in match.group("rows").splitlines():
                row_match = re.match(r"^- (.+?): (\S+?)\.?$", row.strip())
                if row_match:
                    results.append({"title": row_match.group(1), "value": row_match.group(2)})
        return json.dumps({"results": results})


def offline_gateway(max_in_flight: int = 4) -> LlmGateway:
    """A gateway whose model is the deterministic offline rule set."""
    return mock_gateway(responders=[OfflineModel()], max_in_flight=max_in_flight)
