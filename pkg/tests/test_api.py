from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from arachnet.api import create_app


@pytest.fixture
def client(engine_factory):
    return TestClient(create_app(engine_factory()))


@pytest.fixture
def expert_client(engine_factory):
    return TestClient(create_app(engine_factory()))


def test_health(client):
    body = client.get("/api/health").json()
    assert body["status"] == "ok"


def test_create_and_fetch_run(client, queries):
    created = client.post("/api/runs", json={"query": queries["cable_impact"]})
    assert created.status_code == 201
    run_id = created.json()["run_id"]

    record = client.get(f"/api/runs/{run_id}").json()
    assert record["run_id"] == run_id
    assert {s["status"] for s in record["stages"]} == {"completed"}

    page = client.get("/api/runs").json()
    assert page["total"] == 1
    assert page["runs"][0]["run_id"] == run_id


def test_pagination(client, queries):
    ids = [client.post("/api/runs", json={"query": queries["cable_impact"]}).json()["run_id"] for _ in range(3)]
    page = client.get("/api/runs", params={"offset": 1, "limit": 1}).json()
    assert page["total"] == 3 and len(page["runs"]) == 1
    assert page["runs"][0]["run_id"] == sorted(ids, reverse=True)[1]


def test_artifact_and_dot_endpoints(client, queries):
    run_id = client.post("/api/runs", json={"query": queries["cable_impact"]}).json()["run_id"]
    artifact = client.get(f"/api/runs/{run_id}/stages/workflowscout/artifact").json()
    assert artifact["exploration_mode"] == "direct"
    dot = client.get(f"/api/runs/{run_id}/stages/workflowscout/artifact.dot")
    assert dot.status_code == 200
    assert dot.text.startswith("digraph")
    assert dot.text.count("->") == 3


def test_result_and_export_endpoints(client, queries):
    run_id = client.post("/api/runs", json={"query": queries["cable_impact"]}).json()["run_id"]
    result = client.get(f"/api/runs/{run_id}/result").json()
    assert result["status"]["state"] == "success"
    markdown = client.get(f"/api/runs/{run_id}/export", params={"format": "markdown"})
    assert "# Executable plan" in markdown.text
    dot = client.get(f"/api/runs/{run_id}/export", params={"format": "dot"})
    assert dot.text.startswith("digraph")


def test_unknown_run_404(client):
    assert client.get("/api/runs/missing").status_code == 404
    assert client.get("/api/runs/missing/result").status_code == 404
    assert client.get("/api/runs/missing/stages/querymind/artifact").status_code == 404


def test_review_wrong_state_409(client, queries):
    run_id = client.post("/api/runs", json={"query": queries["cable_impact"]}).json()["run_id"]
    response = client.post(
        f"/api/runs/{run_id}/stages/querymind/review", json={"decision": "approve"}
    )
    assert response.status_code == 409


def test_invalid_edit_422_with_messages(expert_client, queries):
    run_id = expert_client.post(
        "/api/runs", json={"query": queries["cable_impact"], "mode": "expert"}
    ).json()["run_id"]
    expert_client.post(f"/api/runs/{run_id}/stages/querymind/review", json={"decision": "approve"})
    artifact = expert_client.get(f"/api/runs/{run_id}/stages/workflowscout/artifact").json()
    broken = json.loads(json.dumps(artifact))
    last = broken["chosen"]["steps"][-1]
    broken["chosen"]["steps"][0]["input_bindings"] = {
        "cables": {"type": "step_output", "step_id": last["id"], "port": "impact"}
    }
    response = expert_client.post(
        f"/api/runs/{run_id}/stages/workflowscout/review",
        json={"decision": "edit", "replacement": broken},
    )
    assert response.status_code == 422
    body = response.json()
    assert body["messages"]
    record = expert_client.get(f"/api/runs/{run_id}").json()
    statuses = {s["name"]: s["status"] for s in record["stages"]}
    assert statuses["workflowscout"] == "awaiting_review"


def test_expert_approve_flow_via_api(expert_client, queries):
    run_id = expert_client.post(
        "/api/runs", json={"query": queries["cable_impact"], "mode": "expert"}
    ).json()["run_id"]
    for stage in ("querymind", "workflowscout", "solutionweaver", "curator"):
        response = expert_client.post(
            f"/api/runs/{run_id}/stages/{stage}/review",
            json={"decision": "approve", "reviewer": "api"},
        )
        assert response.status_code == 200
    record = expert_client.get(f"/api/runs/{run_id}").json()
    assert {s["status"] for s in record["stages"]} == {"completed"}


def test_registry_endpoints(client):
    summary = client.get("/api/registry").json()
    assert summary["version"] == 1
    assert len(summary["entries"]) == 17
    entry = client.get("/api/registry/nautilus.geolocate").json()
    assert entry["id"] == "nautilus.geolocate"
    assert client.get("/api/registry/nope.missing").status_code == 404


def test_promote_endpoint_collision_after_auto_promotion(engine_factory, queries):
    engine = engine_factory()
    client = TestClient(create_app(engine))
    for _ in range(3):
        client.post("/api/runs", json={"query": queries["cable_impact"]})
    # The third run mines a support-3 pattern and auto-promotes in standard
    # mode; promoting again via the endpoint must surface the collision.
    run_id = client.get("/api/runs").json()["runs"][0]["run_id"]
    artifact = client.get(f"/api/runs/{run_id}/stages/curator/artifact").json()
    assert artifact["promotions"]
    chain = artifact["proposals"][0]["pattern"]["chain"]
    response = client.post("/api/registry/promote", json={"run_id": run_id, "chain": chain})
    assert response.status_code == 400  # IdCollision surfaces as engine error


def test_promote_endpoint_happy_path_after_rejected_curator(engine_factory, queries):
    engine = engine_factory()
    client = TestClient(create_app(engine))
    for _ in range(2):
        client.post("/api/runs", json={"query": queries["cable_impact"]})
    # Third run in expert mode: approve up to the curator, then reject it so
    # the validated proposal is never auto-promoted.
    run_id = client.post(
        "/api/runs", json={"query": queries["cable_impact"], "mode": "expert"}
    ).json()["run_id"]
    for stage in ("querymind", "workflowscout", "solutionweaver"):
        client.post(f"/api/runs/{run_id}/stages/{stage}/review", json={"decision": "approve"})
    client.post(
        f"/api/runs/{run_id}/stages/curator/review",
        json={"decision": "reject", "reason": "defer promotion"},
    )
    artifact = client.get(f"/api/runs/{run_id}/stages/curator/artifact").json()
    validated = [p for p in artifact["proposals"] if p["status"] == "validated"]
    assert validated and not artifact["promotions"]

    chain = validated[0]["pattern"]["chain"]
    before = client.get("/api/registry").json()
    response = client.post("/api/registry/promote", json={"run_id": run_id, "chain": chain})
    assert response.status_code == 200
    promoted = response.json()
    after = client.get("/api/registry").json()
    assert after["version"] == before["version"] + 1
    assert len(after["entries"]) == len(before["entries"]) + 1
    assert any(e["id"] == promoted["id"] for e in after["entries"])
