"""HTTP JSON API over the workbench service.

Thin FastAPI layer: every endpoint delegates to WorkbenchService and maps
its exceptions to status codes. Project tokens ride the X-Project-Token
header. The review UI consumes exactly this surface.
"""

from __future__ import annotations

from fastapi import FastAPI, Header, HTTPException, Request

from .extraction import SchemaViolation
from .workbench import (
    DuplicateDecision,
    InsufficientData,
    MissingAiSheet,
    SessionAlreadyOpen,
    SessionClosed,
    UnbalancedAssignment,
    WorkbenchError,
    WorkbenchService,
)

_ERROR_STATUS = [
    (SessionAlreadyOpen, 409),
    (SessionClosed, 409),
    (DuplicateDecision, 409),
    (MissingAiSheet, 409),
    (UnbalancedAssignment, 422),
    (InsufficientData, 422),
    (SchemaViolation, 422),
    (PermissionError, 403),
    (KeyError, 404),
    (WorkbenchError, 400),
    (ValueError, 400),
]


def create_app(service: WorkbenchService) -> FastAPI:
    app = FastAPI(title="review workbench", version="0.1.0")

    def guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except tuple(cls for cls, _ in _ERROR_STATUS) as exc:
            for cls, status in _ERROR_STATUS:
                if isinstance(exc, cls):
                    raise HTTPException(status_code=status, detail=str(exc)) from exc
            raise

    @app.post("/projects")
    async def create_project(request: Request):
        config = await request.json()
        return guard(service.create_project, config)

    @app.post("/projects/{project_id}/arms")
    async def assign_arms(project_id: str, request: Request,
                          x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        body = await request.json()
        return guard(service.assign_arms, project_id, int(body.get("seed", 0)))

    @app.post("/projects/{project_id}/ai-sheets/{review_id}")
    async def register_ai_sheet(project_id: str, review_id: str, request: Request,
                                x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        sheet = await request.json()
        guard(service.register_ai_sheet, project_id, review_id, sheet)
        return {"registered": review_id, "entries": len(sheet)}

    @app.post("/projects/{project_id}/extraction-tasks")
    async def register_extraction_task(project_id: str, request: Request,
                                       x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        body = await request.json()
        guard(
            service.register_extraction_task,
            project_id,
            body["citation_id"],
            body["task_kind"],
            body["gold"],
            body.get("ai_prefill"),
            body.get("document", ""),
        )
        return {"registered": f"{body['citation_id']}/{body['task_kind']}"}

    @app.get("/projects/{project_id}/queue")
    async def queue(project_id: str, participant_id: str,
                    x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        state = guard(service._state, project_id)
        assignments = state.arm_assignments.get(participant_id, {})
        entries = []
        for review_id in sorted(assignments):
            session_id = f"scr-{review_id}-{participant_id}"
            session = state.screening_sessions.get(session_id)
            entries.append(
                {
                    "review_id": review_id,
                    "arm": assignments[review_id],
                    "status": (
                        "submitted"
                        if session and session["submitted_at"] is not None
                        else "open" if session else "pending"
                    ),
                }
            )
        return {"participant_id": participant_id, "entries": entries}

    @app.post("/sessions/screening/open")
    async def open_screening(request: Request,
                             x_project_token: str | None = Header(default=None)):
        body = await request.json()
        guard(service.check_token, body["project_id"], x_project_token)
        return guard(
            service.open_screening_session,
            body["project_id"],
            body["review_id"],
            body["participant_id"],
            int(body.get("seed", 0)),
        )

    @app.get("/sessions/screening/{session_id}")
    async def screening_view(session_id: str, project_id: str,
                             x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        return guard(service.screening_view, project_id, session_id)

    @app.get("/sessions/screening/{session_id}/ai-sheet")
    async def ai_sheet(session_id: str, project_id: str,
                       x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        return guard(service.ai_sheet_view, project_id, session_id)

    @app.post("/sessions/screening/{session_id}/decisions")
    async def submit_decisions(session_id: str, request: Request,
                               x_project_token: str | None = Header(default=None)):
        body = await request.json()
        guard(service.check_token, body["project_id"], x_project_token)
        return guard(
            service.submit_decisions,
            body["project_id"],
            session_id,
            body["decisions"],
            bool(body.get("partial", False)),
            body.get("client_elapsed"),
            body.get("client_token"),
        )

    @app.post("/sessions/extraction/open")
    async def open_extraction(request: Request,
                              x_project_token: str | None = Header(default=None)):
        body = await request.json()
        guard(service.check_token, body["project_id"], x_project_token)
        return guard(
            service.open_extraction_session,
            body["project_id"],
            body["citation_id"],
            body["task_kind"],
            body["participant_id"],
            body.get("arm"),
        )

    @app.get("/sessions/extraction/{session_id}")
    async def extraction_view(session_id: str, project_id: str,
                              x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        return guard(service.extraction_view, project_id, session_id)

    @app.post("/sessions/extraction/{session_id}/submit")
    async def submit_extraction(session_id: str, request: Request,
                                x_project_token: str | None = Header(default=None)):
        body = await request.json()
        guard(service.check_token, body["project_id"], x_project_token)
        return guard(
            service.submit_extraction,
            body["project_id"],
            session_id,
            body["record"],
            body.get("client_elapsed"),
            bool(body.get("supersede", False)),
        )

    @app.get("/projects/{project_id}/report")
    async def report(project_id: str, x_project_token: str | None = Header(default=None)):
        guard(service.check_token, project_id, x_project_token)
        return guard(service.report_arm_comparison, project_id)

    return app
