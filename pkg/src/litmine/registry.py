"""Publication- and trial-registry clients, plus the offline fixture store.

All tests run against the fixture store (a directory of JSON records and a
toy word-postings index honoring AND/OR); the live E-utilities-style and
v2-style JSON clients are opt-in via configuration and share the same
operation surface.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .query import And, BooleanQuery, Dialect, Or, Term, normalize_term, parse_query

logger = logging.getLogger(__name__)

NCT_PATTERN = re.compile(r"NCT\d{8}")
_WORD_RE = re.compile(r"[a-z0-9]+")


class RegistryError(Exception):
    """Base class for registry failures."""


class RegistryUnavailable(RegistryError):
    pass


class QueryRejected(RegistryError):
    """Registry rejected the query syntax; carries the registry message."""


class NotFound(RegistryError):
    pass


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class PublicationCitation:
    citation_id: str
    title: str
    abstract: str
    publication_date: date
    linked_trial_id: str | None = None
    full_text: str | None = None
    table_text: str | None = None

    def __post_init__(self) -> None:
        if not self.citation_id:
            raise ValueError("citation_id required")
        if not self.title:
            raise ValueError("title must be non-empty")
        if isinstance(self.publication_date, str):
            self.publication_date = date.fromisoformat(self.publication_date)

    def to_json(self) -> dict:
        data = {
            "citation_id": self.citation_id,
            "title": self.title,
            "abstract": self.abstract,
            "publication_date": self.publication_date.isoformat(),
            "linked_trial_id": self.linked_trial_id,
            "full_text": self.full_text,
            "table_text": self.table_text,
        }
        return data

    @classmethod
    def from_json(cls, data: dict) -> "PublicationCitation":
        return cls(**data)


@dataclass
class TrialRecord:
    trial_id: str
    conditions: list[str] = field(default_factory=list)
    interventions: list[str] = field(default_factory=list)
    enrollment: int = 0
    study_type: str = ""
    arms: list[dict] = field(default_factory=list)
    participant_flow: dict | None = None
    reported_results: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not NCT_PATTERN.fullmatch(self.trial_id):
            raise ValueError(f"trial id {self.trial_id!r} does not match the NCT pattern")
        if self.enrollment < 0:
            raise ValueError("enrollment must be >= 0")

    @property
    def has_results(self) -> bool:
        return bool(self.reported_results)

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "conditions": self.conditions,
            "interventions": self.interventions,
            "enrollment": self.enrollment,
            "study_type": self.study_type,
            "arms": self.arms,
            "participant_flow": self.participant_flow,
            "reported_results": self.reported_results,
            "has_results": self.has_results,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TrialRecord":
        data = dict(data)
        data.pop("has_results", None)
        return cls(**data)


@dataclass(frozen=True)
class SearchPage:
    ids: tuple[str, ...]
    total_available: int
    page_token: str | None = None

    def __post_init__(self) -> None:
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("page ids must be deduplicated")


@dataclass(frozen=True)
class FetchResult:
    """Resolvable records in input order plus the ids that did not resolve."""

    citations: tuple[PublicationCitation, ...]
    unresolved: tuple[str, ...]


def link_citation_to_trial(citation: PublicationCitation) -> str | None:
    """Return the trial id a citation declares, if any.

    Explicit metadata linkage wins; otherwise the abstract (and full text)
    is scanned for an NCT token. Disagreements are logged, never fabricated.
    """
    scanned = None
    for text in (citation.abstract, citation.full_text or ""):
        match = NCT_PATTERN.search(text)
        if match:
            scanned = match.group(0)
            break
    if citation.linked_trial_id:
        if scanned and scanned != citation.linked_trial_id:
            logger.warning(
                "citation %s: metadata links %s but text mentions %s; keeping metadata",
                citation.citation_id,
                citation.linked_trial_id,
                scanned,
            )
        return citation.linked_trial_id
    return scanned


# ---------------------------------------------------------------------------
# Fixture store
# ---------------------------------------------------------------------------


def text_words(text: str) -> set[str]:
    """Normalized unigram vocabulary of a text."""
    return set(_WORD_RE.findall(text.casefold()))


def term_words(term_text: str) -> list[str]:
    return _WORD_RE.findall(normalize_term(term_text))


class FixtureStore:
    """Directory-backed corpus: publications/, trials/, and a word-postings index.

    Layout::

        fixtures/publications/*.json
        fixtures/trials/*.json
        fixtures/index.json       # word -> [citation ids]
    """

    def __init__(
        self,
        publications: Sequence[PublicationCitation] = (),
        trials: Sequence[TrialRecord] = (),
    ):
        self.publications: dict[str, PublicationCitation] = {p.citation_id: p for p in publications}
        self.trials: dict[str, TrialRecord] = {t.trial_id: t for t in trials}
        self._postings: dict[str, set[str]] = {}
        self._trial_postings: dict[str, set[str]] = {}
        self._reindex()

    def _reindex(self) -> None:
        self._postings = {}
        for pub in self.publications.values():
            for word in text_words(f"{pub.title} {pub.abstract}"):
                self._postings.setdefault(word, set()).add(pub.citation_id)
        self._trial_postings = {}
        for trial in self.trials.values():
            blob = " ".join(trial.conditions + trial.interventions + [trial.study_type])
            for word in text_words(blob):
                self._trial_postings.setdefault(word, set()).add(trial.trial_id)

    @classmethod
    def load(cls, root: str | Path) -> "FixtureStore":
        root = Path(root)
        publications = [
            PublicationCitation.from_json(json.loads(p.read_text(encoding="utf-8")))
            for p in sorted((root / "publications").glob("*.json"))
        ]
        trials = [
            TrialRecord.from_json(json.loads(p.read_text(encoding="utf-8")))
            for p in sorted((root / "trials").glob("*.json"))
        ]
        return cls(publications=publications, trials=trials)

    def save(self, root: str | Path) -> None:
        root = Path(root)
        (root / "publications").mkdir(parents=True, exist_ok=True)
        (root / "trials").mkdir(parents=True, exist_ok=True)
        for pub in self.publications.values():
            path = root / "publications" / f"{pub.citation_id}.json"
            path.write_text(json.dumps(pub.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        for trial in self.trials.values():
            path = root / "trials" / f"{trial.trial_id}.json"
            path.write_text(json.dumps(trial.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        index = {word: sorted(ids) for word, ids in sorted(self._postings.items())}
        (root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def postings(self, word: str) -> set[str]:
        return self._postings.get(word, set())

    def publication_matches(self, citation_id: str, term_text: str) -> bool:
        """Word-AND term predicate: every word of the term appears in the document."""
        pub = self.publications[citation_id]
        words = term_words(term_text)
        doc_words = text_words(f"{pub.title} {pub.abstract}")
        return bool(words) and all(w in doc_words for w in words)


class FixtureRegistryClient:
    """Offline search/fetch over a FixtureStore, honoring AND/OR semantics.

    Execution path: postings-set algebra (Term -> intersection of word
    postings; And -> intersection; Or -> union). Rank order: descending
    count of distinct query words present in the document, tie ascending id.
    """

    dialect = Dialect.FIXTURE

    def __init__(self, store: FixtureStore):
        self.store = store

    # -- boolean execution over postings sets --

    def _eval_publications(self, query: BooleanQuery) -> set[str]:
        return self._eval(query, self.store._postings)

    def _eval_trials(self, query: BooleanQuery) -> set[str]:
        return self._eval(query, self.store._trial_postings)

    @staticmethod
    def _eval(query: BooleanQuery, postings: dict[str, set[str]]) -> set[str]:
        if isinstance(query, Term):
            words = term_words(query.text)
            if not words:
                return set()
            sets = [postings.get(w, set()) for w in words]
            return set.intersection(*sets) if sets else set()
        child_sets = [FixtureRegistryClient._eval(c, postings) for c in query.children]
        if isinstance(query, And):
            return set.intersection(*child_sets)
        return set.union(*child_sets)

    def _rank(self, ids: set[str], query: BooleanQuery, doc_words) -> list[str]:
        words = set()
        for node_term in _all_terms(query):
            words.update(term_words(node_term))

        def score(id_: str) -> int:
            return len(words & doc_words(id_))

        return sorted(ids, key=lambda i: (-score(i), i))

    # -- publications --

    def search_publications(
        self, query: str, limit: int = 3000, date_ceiling: date | None = None
    ) -> list[str]:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        try:
            ast = parse_query(query, Dialect.FIXTURE)
        except Exception as exc:
            raise QueryRejected(str(exc)) from exc
        hits = self._eval_publications(ast)
        if date_ceiling is not None:
            hits = {i for i in hits if self.store.publications[i].publication_date <= date_ceiling}

        def doc_words(id_: str) -> set[str]:
            pub = self.store.publications[id_]
            return text_words(f"{pub.title} {pub.abstract}")

        return self._rank(hits, ast, doc_words)[:limit]

    def search_publications_paged(
        self, query: str, page_size: int = 100, page_token: str | None = None
    ) -> SearchPage:
        all_ids = self.search_publications(query, limit=10**9)
        offset = int(page_token) if page_token else 0
        chunk = all_ids[offset : offset + page_size]
        next_token = str(offset + page_size) if offset + page_size < len(all_ids) else None
        return SearchPage(ids=tuple(chunk), total_available=len(all_ids), page_token=next_token)

    def fetch_citations(self, ids: Sequence[str]) -> FetchResult:
        if not ids:
            raise ValueError("ids must be non-empty")
        citations: list[PublicationCitation] = []
        unresolved: list[str] = []
        for id_ in ids:
            pub = self.store.publications.get(id_)
            if pub is None:
                unresolved.append(id_)
            else:
                citations.append(pub)
        return FetchResult(citations=tuple(citations), unresolved=tuple(unresolved))

    # -- trials --

    def search_trials(
        self, query: str, limit: int = 3000, date_ceiling: date | None = None
    ) -> list[str]:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        try:
            ast = parse_query(query, Dialect.FIXTURE)
        except Exception as exc:
            raise QueryRejected(str(exc)) from exc
        hits = self._eval_trials(ast)

        def doc_words(id_: str) -> set[str]:
            trial = self.store.trials[id_]
            blob = " ".join(trial.conditions + trial.interventions + [trial.study_type])
            return text_words(blob)

        return self._rank(hits, ast, doc_words)[:limit]

    def fetch_trial(self, trial_id: str) -> TrialRecord:
        if not NCT_PATTERN.fullmatch(trial_id):
            raise ValueError(f"malformed trial id: {trial_id!r}")
        trial = self.store.trials.get(trial_id)
        if trial is None:
            raise NotFound(f"trial {trial_id} not in fixture store")
        return trial


def _all_terms(query: BooleanQuery) -> Iterable[str]:
    if isinstance(query, Term):
        yield query.text
    else:
        for child in query.children:
            yield from _all_terms(child)


# ---------------------------------------------------------------------------
# Live clients
# ---------------------------------------------------------------------------


class TokenBucket:
    """Simple rate limiter; the only shared mutable state in live clients."""

    def __init__(self, rate_per_second: float = 3.0, clock=time.monotonic, sleeper=time.sleep):
        self.rate = rate_per_second
        self._clock = clock
        self._sleeper = sleeper
        self._lock = threading.Lock()
        self._next_free = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            wait = max(0.0, self._next_free - now)
            self._next_free = max(now, self._next_free) + 1.0 / self.rate
        if wait > 0:
            self._sleeper(wait)


class EUtilsPublicationClient:
    """E-utilities-style live publication client (esearch/esummary JSON)."""

    dialect = Dialect.PUBLICATION_REGISTRY

    def __init__(
        self,
        base_url: str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils",
        api_key: str | None = None,
        rate: TokenBucket | None = None,
        session: requests.Session | None = None,
        timeout: float = 30.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.rate = rate or TokenBucket()
        self.timeout = timeout
        self._session = session or requests.Session()

    def _get(self, path: str, params: dict) -> dict:
        self.rate.acquire()
        if self.api_key:
            params = {**params, "api_key": self.api_key}
        try:
            resp = self._session.get(f"{self.base_url}/{path}", params=params, timeout=self.timeout)
        except requests.RequestException as exc:
            raise RegistryUnavailable(f"registry unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise RegistryUnavailable(f"registry HTTP {resp.status_code}")
        data = resp.json()
        error = (data.get("esearchresult") or {}).get("ERROR")
        if error:
            raise QueryRejected(error)
        return data

    def search_publications(
        self,
        query: str,
        limit: int = 3000,
        date_ceiling: date | None = None,
        page_size: int = 500,
        filters: dict | None = None,
    ) -> list[str]:
        """``filters`` are raw registry parameters (year range, publication
        type, ...) passed through verbatim; no defaults are asserted."""
        if limit < 1:
            raise ValueError("limit must be >= 1")
        ids: list[str] = []
        seen: set[str] = set()
        offset = 0
        while len(ids) < limit:
            page = self._search_page(query, page_size=min(page_size, limit - len(ids)),
                                     offset=offset, date_ceiling=date_ceiling,
                                     filters=filters)
            for id_ in page.ids:
                if id_ not in seen:
                    seen.add(id_)
                    ids.append(id_)
            if page.page_token is None:
                break
            offset = int(page.page_token)
        return ids[:limit]

    def _search_page(self, query: str, page_size: int, offset: int, date_ceiling: date | None,
                     filters: dict | None = None) -> SearchPage:
        params = {
            "db": "pubmed",
            "term": query,
            "retmode": "json",
            "retstart": offset,
            "retmax": page_size,
        }
        if date_ceiling is not None:
            params.update({"datetype": "pdat", "mindate": "1800/01/01",
                           "maxdate": date_ceiling.strftime("%Y/%m/%d")})
        if filters:
            params.update(filters)
        data = self._get("esearch.fcgi", params)["esearchresult"]
        total = int(data.get("count", 0))
        raw_ids = data.get("idlist", [])
        unique = list(dict.fromkeys(raw_ids))
        next_offset = offset + page_size
        token = str(next_offset) if next_offset < total and raw_ids else None
        return SearchPage(ids=tuple(unique), total_available=total, page_token=token)

    def fetch_citations(self, ids: Sequence[str]) -> FetchResult:
        if not ids:
            raise ValueError("ids must be non-empty")
        params = {"db": "pubmed", "id": ",".join(dict.fromkeys(ids)), "retmode": "json"}
        data = self._get("esummary.fcgi", params).get("result", {})
        citations: list[PublicationCitation] = []
        unresolved: list[str] = []
        for id_ in ids:
            record = data.get(id_)
            if not record or "error" in record:
                unresolved.append(id_)
                continue
            citations.append(
                PublicationCitation(
                    citation_id=id_,
                    title=record.get("title", "(untitled)") or "(untitled)",
                    abstract=record.get("abstract", ""),
                    publication_date=_parse_registry_date(record.get("pubdate", "1900")),
                )
            )
        return FetchResult(citations=tuple(citations), unresolved=tuple(unresolved))


class TrialRegistryClient:
    """v2-style live trial registry client (JSON API with page tokens)."""

    dialect = Dialect.TRIAL_REGISTRY

    def __init__(
        self,
        base_url: str = "https://clinicaltrials.gov/api/v2",
        rate: TokenBucket | None = None,
        session: requests.Session | None = None,
        timeout: float = 30.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.rate = rate or TokenBucket()
        self.timeout = timeout
        self._session = session or requests.Session()

    def _get(self, path: str, params: dict) -> dict:
        self.rate.acquire()
        try:
            resp = self._session.get(f"{self.base_url}/{path}", params=params, timeout=self.timeout)
        except requests.RequestException as exc:
            raise RegistryUnavailable(f"registry unreachable: {exc}") from exc
        if resp.status_code == 404:
            raise NotFound(path)
        if resp.status_code >= 500:
            raise RegistryUnavailable(f"registry HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise QueryRejected(resp.text[:300])
        return resp.json()

    def search_trials(self, query: str, limit: int = 3000, date_ceiling: date | None = None) -> list[str]:
        if limit < 1:
            raise ValueError("limit must be >= 1")
        ids: list[str] = []
        seen: set[str] = set()
        token: str | None = None
        while len(ids) < limit:
            params: dict = {"query.term": query, "pageSize": min(200, limit - len(ids)),
                            "fields": "NCTId"}
            if date_ceiling is not None:
                params["filter.advanced"] = f"AREA[StudyFirstPostDate]RANGE[MIN,{date_ceiling.isoformat()}]"
            if token:
                params["pageToken"] = token
            data = self._get("studies", params)
            for study in data.get("studies", []):
                nct = (
                    study.get("protocolSection", {})
                    .get("identificationModule", {})
                    .get("nctId")
                )
                if nct and nct not in seen:
                    seen.add(nct)
                    ids.append(nct)
            token = data.get("nextPageToken")
            if not token:
                break
        return ids[:limit]

    def fetch_trial(self, trial_id: str) -> TrialRecord:
        if not NCT_PATTERN.fullmatch(trial_id):
            raise ValueError(f"malformed trial id: {trial_id!r}")
        data = self._get(f"studies/{trial_id}", {})
        protocol = data.get("protocolSection", {})
        results = data.get("resultsSection", {})
        design = protocol.get("designModule", {})
        arms_module = protocol.get("armsInterventionsModule", {})
        return TrialRecord(
            trial_id=trial_id,
            conditions=protocol.get("conditionsModule", {}).get("conditions", []),
            interventions=[
                i.get("name", "") for i in arms_module.get("interventions", [])
            ],
            enrollment=int(design.get("enrollmentInfo", {}).get("count", 0)),
            study_type=design.get("studyType", ""),
            arms=arms_module.get("armGroups", []),
            participant_flow=results.get("baselineCharacteristicsModule"),
            reported_results=results.get("outcomeMeasuresModule", {}).get("outcomeMeasures", []),
        )


def registry_from_config(path: str | Path):
    """Build (publication_client, trial_client) from a JSON config file.

    Offline fixtures are the default; live mode is opt-in per registry::

        {
          "publications": {"mode": "fixture", "fixtures_dir": "tests/fixtures"},
          "trials": {"mode": "live", "base_url": "https://...",
                      "api_key_env": "REGISTRY_KEY", "rate_per_second": 3}
        }

    API keys are never stored in the file; ``api_key_env`` names the
    environment variable that holds them.
    """
    import os

    config = json.loads(Path(path).read_text(encoding="utf-8"))
    fixture_clients: dict[str, FixtureRegistryClient] = {}

    def fixture_client(section: dict) -> FixtureRegistryClient:
        fixtures_dir = section.get("fixtures_dir", "tests/fixtures")
        if fixtures_dir not in fixture_clients:
            fixture_clients[fixtures_dir] = FixtureRegistryClient(FixtureStore.load(fixtures_dir))
        return fixture_clients[fixtures_dir]

    def build(kind: str, section: dict):
        mode = section.get("mode", "fixture")
        if mode == "fixture":
            return fixture_client(section)
        if mode != "live":
            raise ValueError(f"unknown registry mode {mode!r}")
        rate = TokenBucket(rate_per_second=float(section.get("rate_per_second", 3.0)))
        api_key = os.environ.get(section["api_key_env"]) if section.get("api_key_env") else None
        if kind == "publications":
            kwargs = {"rate": rate, "api_key": api_key}
            if section.get("base_url"):
                kwargs["base_url"] = section["base_url"]
            return EUtilsPublicationClient(**kwargs)
        kwargs = {"rate": rate}
        if section.get("base_url"):
            kwargs["base_url"] = section["base_url"]
        return TrialRegistryClient(**kwargs)

    publications = build("publications", config.get("publications", {}))
    trials = build("trials", config.get("trials", {}))
    return publications, trials


def _parse_registry_date(raw: str) -> date:
    raw = raw.strip()
    for fmt_len, fmt in ((10, "%Y/%m/%d"), (10, "%Y-%m-%d")):
        try:
            return time.strptime(raw[:fmt_len], fmt) and date(
                *time.strptime(raw[:fmt_len], fmt)[:3]
            )
        except ValueError:
            continue
    match = re.match(r"(\d{4})", raw)
    if match:
        return date(int(match.group(1)), 1, 1)
    return date(1900, 1, 1)
