from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from litmine.webapi import create_app
from litmine.workbench import AI_FIELD_NAMES, WorkbenchService


class FakeClock:
    def __init__(self, start=1_000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def candidates(n=30, prefix="c"):
    return [
        {"citation_id": f"{prefix}{i:02d}", "title": f"study {i}", "abstract": f"abstract {i}"}
        for i in range(n)
    ]


def config():
    reviews = []
    for r in range(4):
        reviews.append({
            "review_id": f"rev{r}",
            "included_study_ids": [f"r{r}c{i:02d}" for i in range(10)],
            "candidates": candidates(30, prefix=f"r{r}c"),
        })
    return {
        "project_id": "p1",
        "topic_area": "Dermatology",
        "participants": ["alice"],
        "reviews": reviews,
    }


@pytest.fixture()
def api(tmp_path):
    clock = FakeClock()
    service = WorkbenchService(tmp_path, clock=clock)
    app = create_app(service)
    client = TestClient(app)
    client.post("/projects", json=config()).raise_for_status()
    client.post("/projects/p1/arms", json={"seed": 5}).raise_for_status()
    state = service._state("p1")
    for review_id, review in state.reviews.items():
        sheet = [
            {"citation_id": c["citation_id"], "score": round(1 - 0.05 * i, 2), "failed": False,
             "assessments": [{"criterion_id": "P1", "label": "YES", "rationale": "fits"}]}
            for i, c in enumerate(review["candidates"])
        ]
        client.post(f"/projects/p1/ai-sheets/{review_id}", json=sheet).raise_for_status()
    return client, service, clock


def arm_review(service, participant, arm):
    assignments = service._state("p1").arm_assignments[participant]
    return next(r for r, a in assignments.items() if a == arm)


class TestProjectEndpoints:
    def test_create_project_round_trip(self, api):
        client, _service, _clock = api
        response = client.post("/projects", json={**config(), "project_id": "p2"})
        assert response.status_code == 200
        assert response.json()["project_id"] == "p2"

    def test_duplicate_project_rejected(self, api):
        client, _service, _clock = api
        assert client.post("/projects", json=config()).status_code == 400

    def test_queue_lists_assignments_with_status(self, api):
        client, service, _clock = api
        response = client.get("/projects/p1/queue", params={"participant_id": "alice"})
        entries = response.json()["entries"]
        assert len(entries) == 4
        assert {e["status"] for e in entries} == {"pending"}
        review_id = arm_review(service, "alice", "expert_only")
        client.post("/sessions/screening/open",
                    json={"project_id": "p1", "review_id": review_id,
                          "participant_id": "alice"}).raise_for_status()
        entries = client.get("/projects/p1/queue",
                             params={"participant_id": "alice"}).json()["entries"]
        statuses = {e["review_id"]: e["status"] for e in entries}
        assert statuses[review_id] == "open"


class TestScreeningEndpoints:
    def open(self, client, service, arm):
        review_id = arm_review(service, "alice", arm)
        response = client.post("/sessions/screening/open",
                               json={"project_id": "p1", "review_id": review_id,
                                     "participant_id": "alice"})
        response.raise_for_status()
        return response.json()

    def test_expert_ai_session_includes_ranked_sheet(self, api):
        client, service, _clock = api
        view = self.open(client, service, "expert_ai")
        sheet = client.get(f"/sessions/screening/{view['session_id']}/ai-sheet",
                           params={"project_id": "p1"})
        assert sheet.status_code == 200
        scores = [r["score"] for r in sheet.json()]
        assert scores == sorted(scores, reverse=True)

    def test_expert_only_ai_sheet_forbidden(self, api):
        client, service, _clock = api
        view = self.open(client, service, "expert_only")
        response = client.get(f"/sessions/screening/{view['session_id']}/ai-sheet",
                              params={"project_id": "p1"})
        assert response.status_code == 403

    def test_full_api_scan_expert_only_has_zero_ai_fields(self, api):
        client, service, _clock = api
        view = self.open(client, service, "expert_only")
        session_id = view["session_id"]
        surfaces = [
            client.post("/sessions/screening/open",
                        json={"project_id": "p1",
                              "review_id": arm_review(service, "alice", "expert_only"),
                              "participant_id": "alice"}),  # SessionAlreadyOpen detail
            client.get(f"/sessions/screening/{session_id}", params={"project_id": "p1"}),
            client.get("/projects/p1/queue", params={"participant_id": "alice"}),
        ]
        for response in surfaces:
            blob = response.text
            for forbidden in AI_FIELD_NAMES:
                assert f'"{forbidden}"' not in blob
            assert "rationale" not in blob

    def test_submit_decisions_and_report(self, api):
        client, service, clock = api
        for arm, elapsed in (("expert_only", 580.0), ("expert_ai", 449.0)):
            view = self.open(client, service, arm)
            truth = set(service._state("p1").reviews[view["review_id"]]["included_study_ids"])
            decisions = [
                {"citation_id": c["citation_id"],
                 "verdict": "include" if c["citation_id"] in truth else "exclude"}
                for c in view["candidates"]
            ]
            clock.advance(elapsed)
            response = client.post(f"/sessions/screening/{view['session_id']}/decisions",
                                   json={"project_id": "p1", "decisions": decisions})
            response.raise_for_status()
            assert response.json()["recall"] == 1.0
        report = client.get("/projects/p1/report").json()
        assert report["screening_time_savings"] * 100 == pytest.approx(22.6, abs=0.1)

    def test_resubmit_conflict_status(self, api):
        client, service, clock = api
        view = self.open(client, service, "expert_only")
        decisions = [{"citation_id": c["citation_id"], "verdict": "exclude"}
                     for c in view["candidates"]]
        clock.advance(10)
        first = client.post(f"/sessions/screening/{view['session_id']}/decisions",
                            json={"project_id": "p1", "decisions": decisions,
                                  "client_token": "t1"})
        first.raise_for_status()
        retry = client.post(f"/sessions/screening/{view['session_id']}/decisions",
                            json={"project_id": "p1", "decisions": decisions,
                                  "client_token": "t1"})
        assert retry.status_code == 200
        assert retry.json() == first.json()
        other = client.post(f"/sessions/screening/{view['session_id']}/decisions",
                            json={"project_id": "p1", "decisions": decisions})
        assert other.status_code == 409


GOLD = {"values": {"enrollment": 120, "study_type": "randomized"}}


class TestExtractionEndpoints:
    def test_open_submit_view(self, api):
        client, _service, clock = api
        client.post("/projects/p1/extraction-tasks",
                    json={"citation_id": "s1", "task_kind": "char_extract", "gold": GOLD,
                          "ai_prefill": GOLD, "document": "doc"}).raise_for_status()
        view = client.post("/sessions/extraction/open",
                           json={"project_id": "p1", "citation_id": "s1",
                                 "task_kind": "char_extract", "participant_id": "alice",
                                 "arm": "expert_ai"}).json()
        assert view["ai_prefill"] == GOLD
        clock.advance(83)
        response = client.post(f"/sessions/extraction/{view['session_id']}/submit",
                               json={"project_id": "p1", "record": GOLD})
        response.raise_for_status()
        assert response.json()["elapsed_seconds"] == pytest.approx(83.0)

    def test_schema_violation_status(self, api):
        client, _service, clock = api
        client.post("/projects/p1/extraction-tasks",
                    json={"citation_id": "s2", "task_kind": "char_extract",
                          "gold": GOLD}).raise_for_status()
        view = client.post("/sessions/extraction/open",
                           json={"project_id": "p1", "citation_id": "s2",
                                 "task_kind": "char_extract", "participant_id": "alice",
                                 "arm": "expert_only"}).json()
        clock.advance(5)
        bad = {"values": {"enrollment": 120, "study_type": 42}}
        response = client.post(f"/sessions/extraction/{view['session_id']}/submit",
                               json={"project_id": "p1", "record": bad})
        assert response.status_code == 422


class TestTokenAuth:
    def test_token_required_when_configured(self, tmp_path):
        service = WorkbenchService(tmp_path / "t", clock=FakeClock())
        client = TestClient(create_app(service))
        secured = {**config(), "project_id": "sec", "token": "s3cret"}
        client.post("/projects", json=secured).raise_for_status()
        denied = client.post("/projects/sec/arms", json={"seed": 1})
        assert denied.status_code == 403
        allowed = client.post("/projects/sec/arms", json={"seed": 1},
                              headers={"X-Project-Token": "s3cret"})
        assert allowed.status_code == 200

    def test_insufficient_data_maps_to_422(self, api):
        client, _service, _clock = api
        assert client.get("/projects/p1/report").status_code == 422
