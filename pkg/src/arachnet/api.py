"""HTTP API over the engine (JSON over HTTP).

Thin, stateless handlers over the run store: every business rule lives in
the engine and its stage modules, so disabling this layer (or the UI on top
of it) changes no pipeline outcome. Error mapping: unknown run 404, review
against a stage not awaiting review 409, invalid edit 422 with validator
messages, configuration problems 400.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .backend import BackendConfig
from .errors import (
    ArachnetError,
    ConfigError,
    InvalidEditError,
    UnknownRunError,
    WrongStateError,
)
from .orchestrator import STAGES, Engine, EngineConfig
from .solutionweaver import export_plan, plan_from_json
from .toolsim import fixture_registry_dir


class RunCreateRequest(BaseModel):
    query: str = Field(min_length=1)
    mode: Literal["standard", "expert"] = "standard"


class RunCreatedResponse(BaseModel):
    run_id: str


class StageStatus(BaseModel):
    name: str
    status: str


class RunSummary(BaseModel):
    run_id: str
    query: str
    mode: str
    created_at: str
    updated_at: str
    stages: list[StageStatus]


class RunListResponse(BaseModel):
    runs: list[RunSummary]
    total: int
    offset: int
    limit: int


class ReviewRequest(BaseModel):
    decision: Literal["approve", "edit", "reject"]
    replacement: dict[str, Any] | None = None
    reason: str = ""
    reviewer: str = ""


class PromoteRequest(BaseModel):
    run_id: str
    chain: list[str]


def create_app(engine: Engine, ui_dist: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="arachnet", version="0.1.0")
    app.state.engine = engine

    @app.exception_handler(UnknownRunError)
    async def _unknown_run(request: Request, exc: UnknownRunError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(WrongStateError)
    async def _wrong_state(request: Request, exc: WrongStateError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.exception_handler(InvalidEditError)
    async def _invalid_edit(request: Request, exc: InvalidEditError):
        return JSONResponse(
            status_code=422, content={"detail": str(exc), "messages": exc.messages}
        )

    @app.exception_handler(ConfigError)
    async def _config_error(request: Request, exc: ConfigError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ArachnetError)
    async def _engine_error(request: Request, exc: ArachnetError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/api/health")
    def health() -> dict[str, str]:
        return {"status": "ok", "registry_version": str(engine.store.registry_version())}

    @app.post("/api/runs", response_model=RunCreatedResponse, status_code=201)
    def create_run(request: RunCreateRequest) -> RunCreatedResponse:
        run_id = engine.start_run(request.query, request.mode)
        return RunCreatedResponse(run_id=run_id)

    @app.get("/api/runs", response_model=RunListResponse)
    def list_runs(offset: int = 0, limit: int = 50) -> RunListResponse:
        return RunListResponse(**engine.list_runs(offset=offset, limit=limit))

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str) -> JSONResponse:
        return JSONResponse(engine.get_record(run_id))

    def _check_stage(stage: str) -> None:
        if stage not in STAGES:
            raise UnknownRunError(f"stage {stage}")

    @app.get("/api/runs/{run_id}/stages/{stage}/artifact")
    def get_artifact(run_id: str, stage: str) -> JSONResponse:
        _check_stage(stage)
        engine.get_record(run_id)
        artifact = engine.store.load_artifact(run_id, stage)
        if artifact is None:
            raise UnknownRunError(f"{run_id} stage {stage} artifact")
        return JSONResponse(artifact)

    @app.get("/api/runs/{run_id}/stages/{stage}/artifact.dot", response_class=PlainTextResponse)
    def get_artifact_dot(run_id: str, stage: str) -> str:
        _check_stage(stage)
        engine.get_record(run_id)
        dot = engine.store.load_artifact_export(run_id, stage, "dot")
        if dot is None:
            raise UnknownRunError(f"{run_id} stage {stage} dot export")
        return dot

    @app.post("/api/runs/{run_id}/stages/{stage}/review")
    def review(run_id: str, stage: str, request: ReviewRequest) -> JSONResponse:
        _check_stage(stage)
        record = engine.submit_review(run_id, stage, request.model_dump())
        return JSONResponse(record)

    @app.get("/api/runs/{run_id}/result")
    def get_result(run_id: str) -> JSONResponse:
        engine.get_record(run_id)
        result = engine.store.load_result(run_id)
        if result is None:
            raise UnknownRunError(f"{run_id} result")
        return JSONResponse(result)

    @app.get("/api/runs/{run_id}/export")
    def export_run_plan(run_id: str, format: Literal["dot", "markdown", "json"] = "markdown") -> PlainTextResponse:
        engine.get_record(run_id)
        plan_doc = engine.store.load_artifact(run_id, "solutionweaver")
        if plan_doc is None:
            raise UnknownRunError(f"{run_id} plan artifact")
        return PlainTextResponse(export_plan(plan_from_json(plan_doc), format))

    @app.get("/api/registry")
    def registry_summary() -> dict[str, Any]:
        registry = engine.registry
        return {
            "version": engine.store.registry_version(),
            "entries": [
                {
                    "id": e.id,
                    "framework": e.framework,
                    "description": e.description,
                    "inputs": [p.data.kind for p in e.inputs],
                    "outputs": [p.data.kind for p in e.outputs],
                    "cost_hint": e.cost_hint,
                    "reliability": e.reliability,
                    "provenance": e.provenance,
                }
                for e in registry.sorted_entries()
            ],
        }

    @app.get("/api/registry/{capability_id}")
    def registry_entry(capability_id: str) -> JSONResponse:
        entry = engine.registry.entry(capability_id)
        if entry is None:
            raise UnknownRunError(f"capability {capability_id}")
        return JSONResponse(entry.to_json())

    @app.post("/api/registry/promote")
    def registry_promote(request: PromoteRequest) -> dict[str, Any]:
        return engine.promote_from_run(request.run_id, request.chain)

    dist = Path(ui_dist) if ui_dist else None
    if dist and dist.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=dist, html=True), name="ui")

    return app


def create_app_from_env() -> FastAPI:
    """App factory driven by environment variables (uvicorn entry point)."""
    home = os.environ.get("ARACHNET_HOME", str(Path.home() / ".arachnet"))
    registry_dir = os.environ.get("ARACHNET_REGISTRY", str(fixture_registry_dir()))
    backend_kind = os.environ.get("ARACHNET_BACKEND", "deterministic")
    config = EngineConfig(
        registry_dir=registry_dir,
        store_root=home,
        backend=BackendConfig(
            kind=backend_kind,
            endpoint=os.environ.get("ARACHNET_LLM_ENDPOINT", ""),
            model=os.environ.get("ARACHNET_LLM_MODEL", ""),
            auth_env=os.environ.get("ARACHNET_LLM_AUTH_ENV") or None,
        ),
    )
    return create_app(Engine(config), ui_dist=os.environ.get("ARACHNET_UI_DIST"))
