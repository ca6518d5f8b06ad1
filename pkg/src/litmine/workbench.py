"""Human-in-the-loop screening and extraction workbench backend.

Projects pair participants with review topics; each review is assigned to
exactly one arm per participant (expert-only or expert+AI). Screening
sessions serve a fixed candidate queue (shuffled for expert-only, ranked
by the AI sheet for expert+AI), capture decisions and server-side timing,
and are immutable once submitted. State is an append-only JSONL event log
per project with periodic snapshots; a restart replays the log and must
reproduce every submitted session byte-identically.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from . import evaluation
from .evaluation import recall_at_k
from .extraction import NOT_REPORTED, SchemaViolation, parse_number
from .gateway import LlmGateway, mock_gateway

TIME_BIN_EDGES = [0, 180, 360, 540, 720, 900]
CONFUSION_TRUE_BAND = (0.75, 1.0)
CONFUSION_FALSE_BAND = (-1.0, -0.5)
SNAPSHOT_EVERY = 50


class WorkbenchError(Exception):
    pass


class UnbalancedAssignment(WorkbenchError):
    pass


class SessionAlreadyOpen(WorkbenchError):
    pass


class MissingAiSheet(WorkbenchError):
    pass


class DuplicateDecision(WorkbenchError):
    pass


class SessionClosed(WorkbenchError):
    pass


class InsufficientData(WorkbenchError):
    pass


class StudyArm(str, Enum):
    EXPERT_ONLY = "expert_only"
    EXPERT_AI = "expert_ai"


class Verdict(str, Enum):
    INCLUDE = "include"
    EXCLUDE = "exclude"


EXTRACTION_TASKS = ("char_extract", "arm_extract", "participant_extract", "result_extract")

# AI-derived keys that must never appear in an expert-only response.
AI_FIELD_NAMES = frozenset({"score", "overall_score", "assessments", "rationale", "label",
                            "ai_sheet", "ai_prefill"})


# ---------------------------------------------------------------------------
# Event log
# ---------------------------------------------------------------------------


class EventLog:
    """Append-only JSONL log with a periodic snapshot alongside."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = directory / "events.jsonl"
        self.snapshot_path = directory / "snapshot.json"
        self._count = 0
        if self.path.exists():
            self._count = sum(1 for line in self.path.read_text(encoding="utf-8").splitlines() if line.strip())

    def append(self, event_type: str, payload: dict) -> None:
        record = {"seq": self._count, "type": event_type, "payload": payload}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
        self._count += 1

    def replay(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [
            json.loads(line)
            for line in self.path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]

    def write_snapshot(self, state: dict) -> None:
        self.snapshot_path.write_text(
            json.dumps(state, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
        )

    @property
    def count(self) -> int:
        return self._count


# ---------------------------------------------------------------------------
# In-memory project state (rebuilt from the log)
# ---------------------------------------------------------------------------


@dataclass
class ProjectState:
    project_id: str
    topic_area: str
    participants: list[str]
    reviews: dict[str, dict]  # review_id -> {included_study_ids, candidates}
    candidates_per_session: int = 30
    max_selections: int = 10
    token: str | None = None
    arm_assignments: dict[str, dict[str, str]] = field(default_factory=dict)
    extraction_arms: dict[str, dict[str, str]] = field(default_factory=dict)
    ai_sheets: dict[str, list[dict]] = field(default_factory=dict)
    extraction_tasks: dict[str, dict] = field(default_factory=dict)  # "cid/task" -> {gold, ai_prefill}
    screening_sessions: dict[str, dict] = field(default_factory=dict)
    extraction_sessions: dict[str, dict] = field(default_factory=dict)

    def public_config(self) -> dict:
        return {
            "project_id": self.project_id,
            "topic_area": self.topic_area,
            "participants": sorted(self.participants),
            "reviews": sorted(self.reviews),
            "candidates_per_session": self.candidates_per_session,
            "max_selections": self.max_selections,
        }


def _score_band(score: float) -> str:
    if CONFUSION_TRUE_BAND[0] <= score <= CONFUSION_TRUE_BAND[1]:
        return "predicted_true"
    if CONFUSION_FALSE_BAND[0] <= score <= CONFUSION_FALSE_BAND[1]:
        return "predicted_false"
    return "undetermined"


def _time_bin(seconds: float) -> str:
    for low, high in zip(TIME_BIN_EDGES, TIME_BIN_EDGES[1:]):
        if low <= seconds < high:
            return f"{low}-{high}"
    return f">{TIME_BIN_EDGES[-1]}"


class WorkbenchService:
    """File-backed workbench; shareable across readers, single writer per project."""

    def __init__(
        self,
        storage_dir: str | Path,
        clock: Callable[[], float] = time.time,
        gateway: LlmGateway | None = None,
    ):
        self.storage_dir = Path(storage_dir)
        self.storage_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        # metric truth: the same eval-harness functions, deterministic mock embeddings
        self.gateway = gateway or mock_gateway()
        self._projects: dict[str, ProjectState] = {}
        self._logs: dict[str, EventLog] = {}
        for project_dir in sorted(self.storage_dir.glob("projects/*")):
            if (project_dir / "events.jsonl").exists():
                self._load_project(project_dir.name)

    # -- persistence ------------------------------------------------------

    def _log(self, project_id: str) -> EventLog:
        if project_id not in self._logs:
            self._logs[project_id] = EventLog(self.storage_dir / "projects" / project_id)
        return self._logs[project_id]

    def _record(self, project_id: str, event_type: str, payload: dict) -> None:
        log = self._log(project_id)
        log.append(event_type, payload)
        if log.count % SNAPSHOT_EVERY == 0:
            log.write_snapshot(self.state_fingerprint(project_id))

    def _load_project(self, project_id: str) -> None:
        log = self._log(project_id)
        for event in log.replay():
            self._apply(event["type"], event["payload"])

    def _apply(self, event_type: str, payload: dict) -> None:
        if event_type == "project_created":
            config = payload
            state = ProjectState(
                project_id=config["project_id"],
                topic_area=config.get("topic_area", ""),
                participants=list(config.get("participants", [])),
                reviews={r["review_id"]: r for r in config.get("reviews", [])},
                candidates_per_session=config.get("candidates_per_session", 30),
                max_selections=config.get("max_selections", 10),
                token=config.get("token"),
            )
            self._projects[state.project_id] = state
            return
        state = self._projects[payload["project_id"]]
        if event_type == "arms_assigned":
            state.arm_assignments = payload["assignments"]
        elif event_type == "extraction_arms_assigned":
            state.extraction_arms[payload["participant_id"]] = payload["assignments"]
        elif event_type == "ai_sheet_registered":
            state.ai_sheets[payload["review_id"]] = payload["sheet"]
        elif event_type == "extraction_task_registered":
            key = f"{payload['citation_id']}/{payload['task_kind']}"
            state.extraction_tasks[key] = {
                "gold": payload["gold"],
                "ai_prefill": payload.get("ai_prefill"),
                "document": payload.get("document", ""),
            }
        elif event_type == "screening_opened":
            state.screening_sessions[payload["session_id"]] = dict(payload, decisions=None,
                                                                   submitted_at=None, metrics=None)
        elif event_type == "decisions_submitted":
            session = state.screening_sessions[payload["session_id"]]
            session.update(
                decisions=payload["decisions"],
                submitted_at=payload["submitted_at"],
                metrics=payload["metrics"],
                client_elapsed=payload.get("client_elapsed"),
                client_token=payload.get("client_token"),
            )
        elif event_type == "extraction_opened":
            state.extraction_sessions[payload["session_id"]] = dict(payload, records=[],
                                                                    submitted_at=None)
        elif event_type == "extraction_submitted":
            session = state.extraction_sessions[payload["session_id"]]
            session["records"].append(payload["record"])
            session["submitted_at"] = payload["submitted_at"]
            session["client_elapsed"] = payload.get("client_elapsed")
        else:
            raise WorkbenchError(f"unknown event type {event_type}")

    def state_fingerprint(self, project_id: str) -> dict:
        """Deterministic serialization of all project state (durability checks)."""
        state = self._state(project_id)
        return {
            "config": state.public_config(),
            "arm_assignments": state.arm_assignments,
            "extraction_arms": state.extraction_arms,
            "screening_sessions": state.screening_sessions,
            "extraction_sessions": state.extraction_sessions,
        }

    def _state(self, project_id: str) -> ProjectState:
        if project_id not in self._projects:
            raise WorkbenchError(f"unknown project {project_id}")
        return self._projects[project_id]

    def check_token(self, project_id: str, token: str | None) -> None:
        state = self._state(project_id)
        if state.token and token != state.token:
            raise PermissionError("bad or missing project token")

    # -- project setup ----------------------------------------------------

    def create_project(self, config: dict) -> dict:
        project_id = config.get("project_id") or f"proj{len(self._projects) + 1:03d}"
        if project_id in self._projects:
            raise WorkbenchError(f"project {project_id} already exists")
        for review in config.get("reviews", []):
            if "review_id" not in review:
                raise WorkbenchError("every review needs a review_id")
        payload = dict(config, project_id=project_id)
        self._apply("project_created", payload)
        self._record(project_id, "project_created", payload)
        return self._projects[project_id].public_config()

    def assign_arms(self, project_id: str, seed: int) -> dict[str, dict[str, str]]:
        """Seeded half/half arm split of each participant's reviews."""
        state = self._state(project_id)
        review_ids = sorted(state.reviews)
        if len(review_ids) % 2 != 0:
            raise UnbalancedAssignment(
                f"need an even number of reviews per participant, got {len(review_ids)}"
            )
        assignments: dict[str, dict[str, str]] = {}
        for participant in sorted(state.participants):
            rng = random.Random(f"{seed}:{participant}")
            shuffled = review_ids[:]
            rng.shuffle(shuffled)
            half = len(shuffled) // 2
            assignments[participant] = {
                rid: (StudyArm.EXPERT_ONLY.value if i < half else StudyArm.EXPERT_AI.value)
                for i, rid in enumerate(shuffled)
            }
        payload = {"project_id": project_id, "assignments": assignments, "seed": seed}
        self._apply("arms_assigned", payload)
        self._record(project_id, "arms_assigned", payload)
        return assignments

    def assign_extraction_arms(
        self, project_id: str, participant_id: str, task_keys: Sequence[str], seed: int
    ) -> dict[str, str]:
        """Half/half arm split over extraction task keys ("citation/task")."""
        if len(task_keys) % 2 != 0:
            raise UnbalancedAssignment("need an even number of extraction tasks")
        keys = sorted(task_keys)
        rng = random.Random(f"{seed}:{participant_id}:extraction")
        rng.shuffle(keys)
        half = len(keys) // 2
        assignments = {
            key: (StudyArm.EXPERT_ONLY.value if i < half else StudyArm.EXPERT_AI.value)
            for i, key in enumerate(keys)
        }
        payload = {"project_id": project_id, "participant_id": participant_id,
                   "assignments": assignments, "seed": seed}
        self._apply("extraction_arms_assigned", payload)
        self._record(project_id, "extraction_arms_assigned", payload)
        return assignments

    def register_ai_sheet(self, project_id: str, review_id: str, sheet: list[dict]) -> None:
        """Attach a precomputed ranked sheet (score + labels + rationales per candidate)."""
        state = self._state(project_id)
        if review_id not in state.reviews:
            raise WorkbenchError(f"unknown review {review_id}")
        ordered = sorted(sheet, key=lambda r: (-r["score"], r["citation_id"]))
        payload = {"project_id": project_id, "review_id": review_id, "sheet": ordered}
        self._apply("ai_sheet_registered", payload)
        self._record(project_id, "ai_sheet_registered", payload)

    def register_extraction_task(
        self,
        project_id: str,
        citation_id: str,
        task_kind: str,
        gold: dict,
        ai_prefill: dict | None = None,
        document: str = "",
    ) -> None:
        if task_kind not in EXTRACTION_TASKS:
            raise WorkbenchError(f"unknown extraction task {task_kind}")
        payload = {
            "project_id": project_id,
            "citation_id": citation_id,
            "task_kind": task_kind,
            "gold": gold,
            "ai_prefill": ai_prefill,
            "document": document,
        }
        self._apply("extraction_task_registered", payload)
        self._record(project_id, "extraction_task_registered", payload)

    # -- screening sessions -----------------------------------------------

    def _arm_of(self, state: ProjectState, participant_id: str, review_id: str) -> StudyArm:
        try:
            return StudyArm(state.arm_assignments[participant_id][review_id])
        except KeyError as exc:
            raise WorkbenchError(
                f"no arm assignment for participant {participant_id} on review {review_id}"
            ) from exc

    def open_screening_session(
        self, project_id: str, review_id: str, participant_id: str, seed: int = 0
    ) -> dict:
        """Open a screening queue; ordering depends on the arm.

        Expert-only: seeded shuffle. Expert+AI: ranked by the registered AI
        sheet, which must exist. The server clock starts now.
        """
        state = self._state(project_id)
        arm = self._arm_of(state, participant_id, review_id)
        session_id = f"scr-{review_id}-{participant_id}"
        if session_id in state.screening_sessions:
            raise SessionAlreadyOpen(session_id)
        review = state.reviews[review_id]
        candidate_ids = [c["citation_id"] for c in review.get("candidates", [])]
        candidate_ids = candidate_ids[: state.candidates_per_session]

        if arm is StudyArm.EXPERT_AI:
            sheet = state.ai_sheets.get(review_id)
            if not sheet:
                raise MissingAiSheet(f"no AI sheet registered for review {review_id}")
            sheet_order = [r["citation_id"] for r in sheet if r["citation_id"] in set(candidate_ids)]
            remainder = [cid for cid in candidate_ids if cid not in set(sheet_order)]
            order = sheet_order + sorted(remainder)
        else:
            rng = random.Random(f"{seed}:{session_id}")
            order = candidate_ids[:]
            rng.shuffle(order)

        payload = {
            "project_id": project_id,
            "session_id": session_id,
            "review_id": review_id,
            "participant_id": participant_id,
            "arm": arm.value,
            "candidate_order": order,
            "started_at": self.clock(),
            "seed": seed,
        }
        self._apply("screening_opened", payload)
        self._record(project_id, "screening_opened", payload)
        return self.screening_view(project_id, session_id)

    def screening_view(self, project_id: str, session_id: str) -> dict:
        """The session as served to a client; expert-only views carry zero AI fields."""
        state = self._state(project_id)
        session = state.screening_sessions.get(session_id)
        if session is None:
            raise WorkbenchError(f"unknown session {session_id}")
        review = state.reviews[session["review_id"]]
        meta = {c["citation_id"]: c for c in review.get("candidates", [])}
        arm = StudyArm(session["arm"])
        sheet_by_id = {}
        if arm is StudyArm.EXPERT_AI:
            sheet_by_id = {r["citation_id"]: r for r in state.ai_sheets.get(session["review_id"], [])}
        cards = []
        for cid in session["candidate_order"]:
            card = {
                "citation_id": cid,
                "title": meta.get(cid, {}).get("title", ""),
                "abstract": meta.get(cid, {}).get("abstract", ""),
            }
            if arm is StudyArm.EXPERT_AI and cid in sheet_by_id:
                card["score"] = sheet_by_id[cid]["score"]
                card["assessments"] = sheet_by_id[cid].get("assessments", [])
            cards.append(card)
        view = {
            "session_id": session_id,
            "review_id": session["review_id"],
            "participant_id": session["participant_id"],
            "arm": arm.value,
            "max_selections": state.max_selections,
            "candidates": cards,
            "started_at": session["started_at"],
            "submitted": session["submitted_at"] is not None,
        }
        return view

    def ai_sheet_view(self, project_id: str, session_id: str) -> list[dict]:
        """The full ranked sheet; refused outright for expert-only sessions."""
        state = self._state(project_id)
        session = state.screening_sessions.get(session_id)
        if session is None:
            raise WorkbenchError(f"unknown session {session_id}")
        if StudyArm(session["arm"]) is not StudyArm.EXPERT_AI:
            raise PermissionError("expert-only sessions have no AI sheet")
        return state.ai_sheets.get(session["review_id"], [])

    def submit_decisions(
        self,
        project_id: str,
        session_id: str,
        decisions: Sequence[dict],
        partial: bool = False,
        client_elapsed: float | None = None,
        client_token: str | None = None,
    ) -> dict:
        """Persist all decisions atomically and close the session.

        Decisions must cover every candidate unless ``partial`` is set.
        Resubmission with the same client token returns the stored metrics
        (idempotent retry); anything else raises SessionClosed.
        """
        state = self._state(project_id)
        session = state.screening_sessions.get(session_id)
        if session is None:
            raise WorkbenchError(f"unknown session {session_id}")
        if session["submitted_at"] is not None:
            if client_token and session.get("client_token") == client_token:
                return session["metrics"]
            raise SessionClosed(session_id)

        seen: set[str] = set()
        candidate_set = set(session["candidate_order"])
        normalized = []
        for decision in decisions:
            cid = decision["citation_id"]
            if cid in seen:
                raise DuplicateDecision(cid)
            seen.add(cid)
            if cid not in candidate_set:
                raise WorkbenchError(f"decision for non-candidate {cid}")
            verdict = Verdict(decision["verdict"])
            normalized.append({"citation_id": cid, "verdict": verdict.value,
                               "decided_at": decision.get("decided_at", self.clock())})
        if not partial and seen != candidate_set:
            missing = sorted(candidate_set - seen)
            raise WorkbenchError(f"decisions missing for {missing} (set partial=True to allow)")
        selected = [d["citation_id"] for d in normalized if d["verdict"] == Verdict.INCLUDE.value]
        if len(selected) > state.max_selections:
            raise WorkbenchError(
                f"{len(selected)} selections exceed the cap of {state.max_selections}"
            )

        truth = set(state.reviews[session["review_id"]].get("included_study_ids", []))
        recall = (
            recall_at_k(selected, truth, k=len(selected)) if selected and truth else 0.0
        )
        submitted_at = self.clock()
        elapsed = max(0.0, submitted_at - session["started_at"])
        metrics = {
            "session_id": session_id,
            "recall": recall,
            "selected": len(selected),
            "elapsed_seconds": elapsed,
            "client_elapsed_seconds": client_elapsed,
        }
        payload = {
            "project_id": project_id,
            "session_id": session_id,
            "decisions": normalized,
            "submitted_at": submitted_at,
            "client_elapsed": client_elapsed,
            "client_token": client_token,
            "metrics": metrics,
        }
        self._apply("decisions_submitted", payload)
        self._record(project_id, "decisions_submitted", payload)
        return metrics

    # -- extraction sessions ----------------------------------------------

    def open_extraction_session(
        self, project_id: str, citation_id: str, task_kind: str, participant_id: str,
        arm: str | None = None,
    ) -> dict:
        state = self._state(project_id)
        key = f"{citation_id}/{task_kind}"
        if key not in state.extraction_tasks:
            raise WorkbenchError(f"extraction task {key} not registered")
        if arm is None:
            arm = state.extraction_arms.get(participant_id, {}).get(key)
            if arm is None:
                raise WorkbenchError(f"no extraction arm assignment for {participant_id} on {key}")
        arm_value = StudyArm(arm).value
        session_id = f"ext-{citation_id}-{task_kind}-{participant_id}"
        if session_id in state.extraction_sessions:
            raise SessionAlreadyOpen(session_id)
        payload = {
            "project_id": project_id,
            "session_id": session_id,
            "citation_id": citation_id,
            "task_kind": task_kind,
            "participant_id": participant_id,
            "arm": arm_value,
            "started_at": self.clock(),
        }
        self._apply("extraction_opened", payload)
        self._record(project_id, "extraction_opened", payload)
        return self.extraction_view(project_id, session_id)

    def extraction_view(self, project_id: str, session_id: str) -> dict:
        state = self._state(project_id)
        session = state.extraction_sessions.get(session_id)
        if session is None:
            raise WorkbenchError(f"unknown session {session_id}")
        key = f"{session['citation_id']}/{session['task_kind']}"
        task = state.extraction_tasks[key]
        view = {
            "session_id": session_id,
            "citation_id": session["citation_id"],
            "task_kind": session["task_kind"],
            "participant_id": session["participant_id"],
            "arm": session["arm"],
            "document": task.get("document", ""),
            "schema": record_schema(session["task_kind"], task["gold"]),
            "submitted": session["submitted_at"] is not None,
            "record": session["records"][-1] if session["records"] else None,
        }
        if StudyArm(session["arm"]) is StudyArm.EXPERT_AI:
            view["ai_prefill"] = task.get("ai_prefill")
        return view

    def _validate_record(self, task_kind: str, record: dict, gold: dict) -> None:
        if not isinstance(record, dict):
            raise SchemaViolation("submitted record must be a JSON object")
        if task_kind == "char_extract":
            values = record.get("values")
            if not isinstance(values, dict):
                raise SchemaViolation("char_extract record needs a 'values' object")
            gold_values = gold.get("values", {})
            for name, gold_value in gold_values.items():
                if name not in values:
                    raise SchemaViolation(f"missing field {name!r}")
                submitted = values[name]
                if isinstance(gold_value, str) and gold_value != NOT_REPORTED:
                    if isinstance(submitted, (int, float)) and not isinstance(submitted, bool):
                        raise SchemaViolation(f"field {name!r} expects text, got a number")
                if isinstance(gold_value, (int, float)) and not isinstance(gold_value, bool):
                    if isinstance(submitted, str) and submitted != NOT_REPORTED:
                        try:
                            parse_number(submitted)
                        except ValueError as exc:
                            raise SchemaViolation(f"field {name!r} expects a number") from exc
        elif task_kind == "arm_extract":
            if not isinstance(record.get("arms"), list) or not record["arms"]:
                raise SchemaViolation("arm_extract record needs a non-empty 'arms' list")
        elif task_kind in ("participant_extract", "result_extract"):
            if not isinstance(record.get("results"), list):
                raise SchemaViolation(f"{task_kind} record needs a 'results' list")

    def submit_extraction(
        self, project_id: str, session_id: str, record: dict,
        client_elapsed: float | None = None, supersede: bool = False,
    ) -> dict:
        """Store a submitted record (validated); corrections append, never mutate."""
        state = self._state(project_id)
        session = state.extraction_sessions.get(session_id)
        if session is None:
            raise WorkbenchError(f"unknown session {session_id}")
        if session["submitted_at"] is not None and not supersede:
            raise SessionClosed(session_id)
        key = f"{session['citation_id']}/{session['task_kind']}"
        task = state.extraction_tasks[key]
        self._validate_record(session["task_kind"], record, task["gold"])
        submitted_at = self.clock()
        elapsed = max(0.0, submitted_at - session["started_at"])
        if elapsed <= 0:
            elapsed = 1e-3  # clock granularity floor: elapsed must be positive
        payload = {
            "project_id": project_id,
            "session_id": session_id,
            "record": record,
            "submitted_at": submitted_at,
            "client_elapsed": client_elapsed,
        }
        self._apply("extraction_submitted", payload)
        self._record(project_id, "extraction_submitted", payload)
        return {"session_id": session_id, "elapsed_seconds": elapsed, "versions": len(session["records"])}

    # -- reporting ----------------------------------------------------------

    def _extraction_accuracy(self, task_kind: str, submitted: dict, gold: dict) -> float:
        """Field-level accuracy of a submitted record against the gold record."""
        pairs = _flatten_record(task_kind, submitted), _flatten_record(task_kind, gold)
        submitted_flat, gold_flat = pairs
        if not gold_flat:
            return 0.0
        correct = 0
        for path, gold_value in gold_flat.items():
            if path not in submitted_flat:
                continue
            value = submitted_flat[path]
            try:
                if evaluation.match_numeric(value, gold_value):
                    correct += 1
                continue
            except (evaluation.UnparseableNumber, TypeError):
                pass
            try:
                match = evaluation.match_text(str(value), str(gold_value), self.gateway)
                if match.matched:
                    correct += 1
            except ValueError:
                continue
        return correct / len(gold_flat)

    def report_arm_comparison(self, project_id: str) -> dict:
        """Per-arm quality/time means, relative time savings, time-stratified
        quality bins, and the AI-score vs expert-decision confusion bands."""
        state = self._state(project_id)
        screening = {arm.value: {"recalls": [], "times": []} for arm in StudyArm}
        bins: dict[str, dict[str, list[float]]] = {}
        confusion = {
            band: {"included": 0, "excluded": 0}
            for band in ("predicted_true", "predicted_false", "undetermined")
        }
        for session in state.screening_sessions.values():
            if session["submitted_at"] is None:
                continue
            arm = session["arm"]
            elapsed = session["metrics"]["elapsed_seconds"]
            screening[arm]["recalls"].append(session["metrics"]["recall"])
            screening[arm]["times"].append(elapsed)
            bins.setdefault(_time_bin(elapsed), {}).setdefault(arm, []).append(
                session["metrics"]["recall"]
            )
            if StudyArm(arm) is StudyArm.EXPERT_AI:
                sheet = {r["citation_id"]: r["score"]
                         for r in state.ai_sheets.get(session["review_id"], [])}
                for decision in session["decisions"]:
                    score = sheet.get(decision["citation_id"])
                    if score is None:
                        continue
                    band = _score_band(score)
                    col = "included" if decision["verdict"] == Verdict.INCLUDE.value else "excluded"
                    confusion[band][col] += 1

        extraction = {arm.value: {"accuracies": [], "times": []} for arm in StudyArm}
        for session in state.extraction_sessions.values():
            if session["submitted_at"] is None or not session["records"]:
                continue
            key = f"{session['citation_id']}/{session['task_kind']}"
            gold = state.extraction_tasks[key]["gold"]
            accuracy = self._extraction_accuracy(session["task_kind"], session["records"][-1], gold)
            elapsed = max(
                session.get("client_elapsed") or 0.0,
                session["submitted_at"] - session["started_at"],
            )
            extraction[session["arm"]]["accuracies"].append(accuracy)
            extraction[session["arm"]]["times"].append(elapsed)

        def _mean(values: list[float]) -> float | None:
            return sum(values) / len(values) if values else None

        def _savings(only: float | None, ai: float | None) -> float | None:
            if only is None or ai is None or only == 0:
                return None
            return (only - ai) / only

        screening_submitted = sum(len(v["recalls"]) for v in screening.values())
        extraction_submitted = sum(len(v["accuracies"]) for v in extraction.values())
        if screening_submitted == 0 and extraction_submitted == 0:
            raise InsufficientData("no submitted sessions to report on")

        screening_report = {
            arm: {
                "mean_recall": _mean(data["recalls"]),
                "mean_time_seconds": _mean(data["times"]),
                "sessions": len(data["recalls"]),
            }
            for arm, data in screening.items()
        }
        extraction_report = {
            arm: {
                "mean_accuracy": _mean(data["accuracies"]),
                "mean_time_seconds": _mean(data["times"]),
                "sessions": len(data["accuracies"]),
            }
            for arm, data in extraction.items()
        }
        return {
            "project_id": project_id,
            "screening": screening_report,
            "screening_time_savings": _savings(
                screening_report[StudyArm.EXPERT_ONLY.value]["mean_time_seconds"],
                screening_report[StudyArm.EXPERT_AI.value]["mean_time_seconds"],
            ),
            "extraction": extraction_report,
            "extraction_time_savings": _savings(
                extraction_report[StudyArm.EXPERT_ONLY.value]["mean_time_seconds"],
                extraction_report[StudyArm.EXPERT_AI.value]["mean_time_seconds"],
            ),
            "time_bins": {
                bin_label: {arm: sum(vals) / len(vals) for arm, vals in arms.items()}
                for bin_label, arms in sorted(bins.items())
            },
            "confusion_bands": confusion,
        }

    def export_arm_comparison_csv(self, project_id: str, path: str | Path) -> Path:
        import csv

        report = self.report_arm_comparison(project_id)
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["section", "arm", "quality", "mean_time_seconds", "sessions"])
            for arm, row in sorted(report["screening"].items()):
                writer.writerow(["screening", arm, row["mean_recall"], row["mean_time_seconds"],
                                 row["sessions"]])
            for arm, row in sorted(report["extraction"].items()):
                writer.writerow(["extraction", arm, row["mean_accuracy"], row["mean_time_seconds"],
                                 row["sessions"]])
            writer.writerow(["savings", "screening", report["screening_time_savings"], "", ""])
            writer.writerow(["savings", "extraction", report["extraction_time_savings"], "", ""])
        return path


def record_schema(task_kind: str, gold: dict) -> dict:
    """Field names and kinds for the form UI, derived from the gold record.

    Carries structure only, never values: the client must not see answers.
    """

    def kind_of(value) -> str:
        if isinstance(value, bool):
            return "text"
        if isinstance(value, (int, float)):
            return "number"
        if isinstance(value, list):
            return "list"
        return "text"

    if task_kind == "char_extract":
        return {
            "fields": [
                {"name": name, "kind": kind_of(value)}
                for name, value in sorted((gold.get("values") or {}).items())
            ]
        }
    if task_kind == "arm_extract":
        return {"arms": len(gold.get("arms") or []),
                "fields": [{"name": "label", "kind": "text"},
                           {"name": "arm_type", "kind": "text"},
                           {"name": "description", "kind": "text"},
                           {"name": "intervention_names", "kind": "list"}]}
    results = gold.get("results") or []
    if task_kind == "participant_extract":
        # group ids are task inputs, not answers
        return {
            "results": [
                {"group_id": r.get("group_id", ""), "kind": kind_of(r.get("value"))}
                for r in results
            ]
        }
    # result rows: expose only the row count; titles are part of the answer
    return {"rows": len(results),
            "fields": [{"name": "title", "kind": "text"}, {"name": "value", "kind": "number"}]}


def _flatten_record(task_kind: str, record: dict) -> dict[str, object]:
    """Flatten a task record into field-path -> value for accuracy scoring."""
    flat: dict[str, object] = {}
    if task_kind == "char_extract":
        for name, value in (record.get("values") or {}).items():
            if isinstance(value, list):
                flat[f"values.{name}"] = "; ".join(str(v) for v in value)
            else:
                flat[f"values.{name}"] = value
    elif task_kind == "arm_extract":
        for arm in record.get("arms") or []:
            label = arm.get("label", "?")
            flat[f"arm.{label}.arm_type"] = arm.get("arm_type", "")
            flat[f"arm.{label}.interventions"] = "; ".join(arm.get("intervention_names", []))
    elif task_kind in ("participant_extract", "result_extract"):
        for i, result in enumerate(record.get("results") or []):
            key = result.get("group_id") or result.get("title") or str(i)
            flat[f"result.{key}"] = result.get("value")
    return flat
