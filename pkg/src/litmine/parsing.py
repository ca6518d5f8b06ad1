"""Parsing of structured model output: fenced JSON, term lists, score strings.

Every pipeline stage that reads model text funnels through here, so the
reprompt-once-then-fail policy lives in one place.
"""

from __future__ import annotations

import json
import re
from typing import Callable, TypeVar

from .gateway import ChatRequest, LlmGateway

T = TypeVar("T")

FORMAT_REMINDER = (
    "\n\nREMINDER: your previous answer could not be parsed. "
    "Answer again, strictly in the requested format, with no surrounding commentary."
)


class UnparseableModelOutput(Exception):
    """Model output failed to parse even after one format-reminder reprompt."""

    def __init__(self, message: str, raw_output: str = ""):
        super().__init__(message)
        self.raw_output = raw_output


_FENCE_RE = re.compile(r"```(?:json)?\s*([\[{][\s\S]*?[\]}])\s*```", re.IGNORECASE)


def _first_balanced(text: str, opener: str, closer: str) -> str | None:
    start = text.find(opener)
    if start == -1:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == opener:
            depth += 1
        elif ch == closer:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def extract_json(text: str):
    """Pull the first JSON object/array out of model text.

    Accepts a bare JSON document, a fenced ```json block, or JSON embedded in
    prose (first balanced braces win). Raises ValueError when nothing parses.
    """
    stripped = text.strip()
    try:
        return json.loads(stripped)
    except json.JSONDecodeError:
        pass
    match = _FENCE_RE.search(text)
    if match:
        try:
            return json.loads(match.group(1))
        except json.JSONDecodeError:
            pass
    # try whichever bracket opens first, so an array wrapping objects wins
    pairs = [("{", "}"), ("[", "]")]
    pairs.sort(key=lambda p: text.find(p[0]) if text.find(p[0]) != -1 else len(text))
    for opener, closer in pairs:
        candidate = _first_balanced(text, opener, closer)
        if candidate is not None:
            try:
                return json.loads(candidate)
            except json.JSONDecodeError:
                continue
    raise ValueError("no parseable JSON in model output")


def parse_term_list(text: str) -> list[str]:
    """Parse a keyword list: JSON array, or semicolon/newline-separated terms."""
    try:
        data = extract_json(text)
        if isinstance(data, list) and all(isinstance(x, str) for x in data):
            return [x.strip() for x in data if x.strip()]
    except ValueError:
        pass
    parts: list[str] = []
    for chunk in re.split(r"[;\n]", text):
        term = chunk.strip().strip("-*• ").strip()
        if term:
            parts.append(term)
    return parts


def complete_parsed(
    gateway: LlmGateway,
    request: ChatRequest,
    parse: Callable[[str], T],
    error_context: str,
) -> T:
    """Run a completion and parse it; on parse failure, reprompt exactly once
    with a format reminder, then raise UnparseableModelOutput."""
    response = gateway.complete(request)
    try:
        return parse(response.text)
    except (ValueError, KeyError, TypeError):
        pass
    retry_request = ChatRequest(
        user_text=request.user_text + FORMAT_REMINDER,
        system_text=request.system_text,
        temperature=request.temperature,
        max_output_tokens=request.max_output_tokens,
        seed=request.seed,
    )
    retry_response = gateway.complete(retry_request)
    try:
        return parse(retry_response.text)
    except (ValueError, KeyError, TypeError) as exc:
        raise UnparseableModelOutput(
            f"{error_context}: {exc}", raw_output=retry_response.text
        ) from exc
