"""Uniform access to chat-completion and embedding backends.

One gateway object fronts any OpenAI-compatible HTTP backend or the
deterministic offline mock. It owns the cross-cutting concerns every
pipeline stage relies on: prompt templating, bounded concurrency,
retries with backoff, and token accounting.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import requests


class GatewayError(Exception):
    """Base class for gateway failures."""


class MalformedRequest(GatewayError):
    """Request violates an invariant or was rejected by the backend as invalid. Never retried."""


class BackendUnreachable(GatewayError):
    """Backend could not be reached (or kept failing transiently) after all retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class RateLimited(GatewayError):
    """Backend refused the request due to rate limiting."""

    def __init__(self, message: str, retry_after: float = 1.0):
        super().__init__(message)
        self.retry_after = retry_after


class DimensionMismatch(GatewayError):
    """Embedding backend returned vectors of unequal dimension."""


class MissingVariable(GatewayError):
    """A prompt template placeholder was not supplied."""

    def __init__(self, placeholder: str):
        super().__init__(f"missing template variable: {placeholder!r}")
        self.placeholder = placeholder


class FixtureMiss(GatewayError):
    """Strict mock backend saw a prompt with no recorded fixture response."""


class TaskKind(str, Enum):
    SEARCH = "search"
    SCREENING = "screening"
    CHAR_EXTRACT = "char_extract"
    ARM_EXTRACT = "arm_extract"
    PARTICIPANT_EXTRACT = "participant_extract"
    RESULT_EXTRACT = "result_extract"
    TERM_EXTRACT = "term_extract"
    PICO_EXTRACT = "pico_extract"
    RATIONALE_GEN = "rationale_gen"
    SIMPLE_SCORE = "simple_score"
    TWO_STAGE_SCORE = "two_stage_score"


@dataclass(frozen=True)
class ChatRequest:
    """A single chat-completion request."""

    user_text: str
    system_text: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 2048
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.user_text:
            raise MalformedRequest("user_text must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise MalformedRequest(f"temperature {self.temperature} outside [0, 1]")
        if self.max_output_tokens < 1:
            raise MalformedRequest("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_id: str
    latency_ms: float
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if self.latency_ms < 0 or self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("latency and token counts must be non-negative")


@dataclass(frozen=True)
class EmbeddingVector:
    """A dense text embedding."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) == 0:
            raise ValueError("embedding must have positive dimension")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding values must be finite")

    @property
    def dimension(self) -> int:
        return len(self.values)

    def cosine(self, other: "EmbeddingVector") -> float:
        """Cosine similarity, rounded to 9 decimals to absorb float roundoff."""
        a = np.asarray(self.values)
        b = np.asarray(other.values)
        denom = float(np.linalg.norm(a) * np.linalg.norm(b))
        if denom == 0.0:
            return 0.0
        return round(float(np.dot(a, b)) / denom, 9)


def estimate_tokens(text: str) -> int:
    """Approximate token count as ceil(chars / 4); used when a backend reports none."""
    return max(1, math.ceil(len(text) / 4))


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with ``{name}`` placeholders; ``{{``/``}}`` escape literal braces."""

    task_kind: TaskKind
    body: str

    def placeholders(self) -> set[str]:
        masked = self.body.replace("{{", "\x00").replace("}}", "\x01")
        return set(_PLACEHOLDER_RE.findall(masked))


def render_prompt(template: PromptTemplate, variables: dict[str, str]) -> str:
    """Substitute every placeholder; raises MissingVariable naming the first gap."""
    masked = template.body.replace("{{", "\x00").replace("}}", "\x01")

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in variables:
            raise MissingVariable(name)
        return str(variables[name])

    rendered = _PLACEHOLDER_RE.sub(_sub, masked)
    return rendered.replace("\x00", "{").replace("\x01", "}")


def load_template(task_kind: TaskKind, name: str | None = None) -> PromptTemplate:
    """Load a versioned prompt body from the package's prompts/ directory.

    Bodies are configuration, not code; ``name`` overrides the default
    one-file-per-task mapping (used for the two-stage ranker's first stage).
    """
    filename = f"{name or task_kind.value}.txt"
    body = resources.files("litmine.prompts").joinpath(filename).read_text(encoding="utf-8")
    return PromptTemplate(task_kind=task_kind, body=body)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


def prompt_key(request: ChatRequest) -> str:
    """Stable hash of the rendered prompt, used to key mock fixture files."""
    digest = hashlib.sha256()
    digest.update(request.system_text.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(request.user_text.encode("utf-8"))
    return digest.hexdigest()[:16]


class OpenAiChatBackend:
    """OpenAI-compatible /chat/completions client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.backend_id = f"openai-chat:{model}"
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def chat(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": request.user_text})
        payload: dict = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed

        started = time.perf_counter()
        try:
            resp = self._session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=self._headers(),
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendUnreachable(f"chat backend unreachable: {exc}") from exc
        latency_ms = (time.perf_counter() - started) * 1000.0

        if resp.status_code == 429:
            retry_after = float(resp.headers.get("Retry-After", "1"))
            raise RateLimited("chat backend rate limited", retry_after=retry_after)
        if resp.status_code >= 500:
            raise BackendUnreachable(f"chat backend HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise MalformedRequest(f"chat backend HTTP {resp.status_code}: {resp.text[:300]}")

        data = resp.json()
        text = data["choices"][0]["message"]["content"]
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            backend_id=self.backend_id,
            latency_ms=latency_ms,
            input_tokens=usage.get("prompt_tokens", estimate_tokens(request.user_text)),
            output_tokens=usage.get("completion_tokens", estimate_tokens(text)),
        )


class OpenAiEmbeddingBackend:
    """OpenAI-compatible /embeddings client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.backend_id = f"openai-embed:{model}"
        self._session = session or requests.Session()

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._session.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendUnreachable(f"embedding backend unreachable: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimited("embedding backend rate limited")
        if resp.status_code >= 500:
            raise BackendUnreachable(f"embedding backend HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise MalformedRequest(f"embedding backend HTTP {resp.status_code}")
        items = sorted(resp.json()["data"], key=lambda d: d["index"])
        return [EmbeddingVector(values=tuple(item["embedding"])) for item in items]


class MockBackend:
    """Deterministic offline backend for tests and fixture pipelines.

    Chat responses are resolved in order: responder callables, then fixture
    files named ``<prompt_key>.txt`` under ``fixtures_dir``. In strict mode
    an unresolved prompt raises FixtureMiss; otherwise a stable fallback
    string derived from the prompt hash is returned.

    Embeddings are unit-norm vectors seeded from the text hash, so identical
    texts always embed identically. The backend also instruments concurrency
    (``max_concurrent_seen``) so fairness of the admission gate is testable.
    """

    def __init__(
        self,
        responders: Sequence[Callable[[ChatRequest], str | None]] = (),
        fixtures_dir: str | Path | None = None,
        strict: bool = False,
        dimension: int = 32,
        backend_id: str = "mock",
    ):
        self.responders = list(responders)
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self.strict = strict
        self.dimension = dimension
        self.backend_id = backend_id
        self.calls = 0
        self.max_concurrent_seen = 0
        self._in_flight = 0
        self._lock = threading.Lock()
        self._embed_overrides: dict[str, tuple[float, ...]] = {}

    def set_embedding(self, text: str, values: Sequence[float]) -> None:
        """Pin the embedding of a given text (used to engineer exact similarities)."""
        self._embed_overrides[text] = tuple(float(v) for v in values)

    def chat(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
            self._in_flight += 1
            self.max_concurrent_seen = max(self.max_concurrent_seen, self._in_flight)
        try:
            text = self._resolve(request)
        finally:
            with self._lock:
                self._in_flight -= 1
        return ChatResponse(
            text=text,
            backend_id=self.backend_id,
            latency_ms=0.0,
            input_tokens=estimate_tokens(request.user_text),
            output_tokens=estimate_tokens(text),
        )

    def _resolve(self, request: ChatRequest) -> str:
        for responder in self.responders:
            text = responder(request)
            if text is not None:
                return text
        key = prompt_key(request)
        if self.fixtures_dir is not None:
            path = self.fixtures_dir / f"{key}.txt"
            if path.exists():
                return path.read_text(encoding="utf-8")
        if self.strict:
            raise FixtureMiss(f"no recorded response for prompt key {key}")
        return f"mock-response:{key}"

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> EmbeddingVector:
        if text in self._embed_overrides:
            return EmbeddingVector(values=self._embed_overrides[text])
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dimension)
        vec = vec / np.linalg.norm(vec)
        return EmbeddingVector(values=tuple(float(v) for v in vec))


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


@dataclass
class RetryPolicy:
    """Exponential backoff with jitter; transient errors only."""

    attempts: int = 3
    base_delay: float = 1.0
    jitter: float = 0.1
    sleeper: Callable[[float], None] = time.sleep

    def delay(self, attempt: int, rng: random.Random) -> float:
        return self.base_delay * (2**attempt) * (1.0 + rng.uniform(-self.jitter, self.jitter))


class LlmGateway:
    """Shareable front door to one chat backend and one embedding backend.

    A single bounded-concurrency admission gate limits in-flight requests
    per backend; batch helpers preserve request order regardless of
    completion order.
    """

    def __init__(
        self,
        chat_backend,
        embedding_backend=None,
        max_in_flight: int = 4,
        retry: RetryPolicy | None = None,
    ):
        self.chat_backend = chat_backend
        self.embedding_backend = embedding_backend if embedding_backend is not None else chat_backend
        self.max_in_flight = max_in_flight
        self.retry = retry or RetryPolicy()
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._rng = random.Random(0)

    def complete(self, request: ChatRequest) -> ChatResponse:
        """Run one chat completion, retrying transient failures up to the cap."""
        last_exc: GatewayError | None = None
        for attempt in range(self.retry.attempts):
            try:
                with self._gate:
                    return self.chat_backend.chat(request)
            except MalformedRequest:
                raise
            except RateLimited as exc:
                last_exc = exc
                if attempt + 1 < self.retry.attempts:
                    self.retry.sleeper(max(exc.retry_after, self.retry.delay(attempt, self._rng)))
            except BackendUnreachable as exc:
                last_exc = exc
                if attempt + 1 < self.retry.attempts:
                    self.retry.sleeper(self.retry.delay(attempt, self._rng))
        if isinstance(last_exc, RateLimited):
            raise last_exc
        raise BackendUnreachable(
            f"backend still failing after {self.retry.attempts} attempts: {last_exc}",
            attempts=self.retry.attempts,
        )

    def complete_many(self, requests_: Sequence[ChatRequest]) -> list[ChatResponse]:
        """Run completions concurrently; results come back in request order."""
        if not requests_:
            return []
        with ThreadPoolExecutor(max_workers=max(2 * self.max_in_flight, 1)) as pool:
            return list(pool.map(self.complete, requests_))

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Embed texts; one vector per input, order preserved, uniform dimension."""
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not t for t in texts):
            raise ValueError("every text must be non-empty")
        last_exc: GatewayError | None = None
        for attempt in range(self.retry.attempts):
            try:
                with self._gate:
                    vectors = self.embedding_backend.embed_batch(texts)
                break
            except MalformedRequest:
                raise
            except (BackendUnreachable, RateLimited) as exc:
                last_exc = exc
                if attempt + 1 < self.retry.attempts:
                    self.retry.sleeper(self.retry.delay(attempt, self._rng))
        else:
            raise BackendUnreachable(
                f"embedding backend still failing after {self.retry.attempts} attempts: {last_exc}",
                attempts=self.retry.attempts,
            )
        if len(vectors) != len(texts):
            raise DimensionMismatch(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        dims = {v.dimension for v in vectors}
        if len(dims) != 1:
            raise DimensionMismatch(f"ragged embedding dimensions: {sorted(dims)}")
        return vectors


def mock_gateway(
    responders: Sequence[Callable[[ChatRequest], str | None]] = (),
    max_in_flight: int = 4,
    **mock_kwargs,
) -> LlmGateway:
    """Gateway wired to a fresh MockBackend; retries do not sleep."""
    backend = MockBackend(responders=responders, **mock_kwargs)
    retry = RetryPolicy(sleeper=lambda _s: None)
    return LlmGateway(backend, max_in_flight=max_in_flight, retry=retry)
