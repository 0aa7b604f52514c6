"""Pipeline engine: the four-stage state machine with expert checkpoints.

A run advances through querymind, workflowscout, solutionweaver (compile +
execute), and curator. In standard mode stages chain automatically; in
expert mode every stage pauses as awaiting_review until a reviewer
approves, edits (schema- and validator-checked, original retained), or
rejects. Stage k+1 never starts before stage k completed, and a rejected
run is terminal.

advance() is idempotent and crash-safe: a stage found in status "running"
(a crashed process) simply re-executes from its persisted inputs, and pure
stages plus the executor's replay property make the redo byte-identical.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

from . import curator as curator_mod
from . import querymind, solutionweaver, toolsim, workflowscout
from .backend import BackendConfig, make_backend
from .errors import (
    ArachnetError,
    ConfigError,
    IdCollisionError,
    InvalidEditError,
    ReplayError,
    WrongStateError,
)
from .executor import AdapterSet, FixedClock, execute
from .jsonutil import format_timestamp
from .registry import Registry, load_registry
from .store import RunStore
from .workflowscout import ExplorationBudget

STAGES = ("querymind", "workflowscout", "solutionweaver", "curator")
TERMINAL_STATUSES = {"failed", "rejected"}

_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def make_ulid(timestamp_ms: int, random_bytes: bytes) -> str:
    """Crockford base32 ULID: 48-bit timestamp + 80-bit randomness."""
    value = (timestamp_ms & ((1 << 48) - 1)) << 80
    value |= int.from_bytes(random_bytes[:10], "big")
    chars = []
    for shift in range(125, -1, -5):
        chars.append(_CROCKFORD[(value >> shift) & 31])
    return "".join(chars)


@dataclass
class EngineConfig:
    registry_dir: str | Path
    store_root: str | Path
    backend: BackendConfig = field(default_factory=BackendConfig)
    budget: ExplorationBudget = field(default_factory=ExplorationBudget)
    min_support: int = curator_mod.MIN_SUPPORT_DEFAULT
    parallel_execution: bool = False
    wall_clock: Callable[[], datetime] | None = None
    mono_clock: Callable[[], float] | None = None
    rng_seed: int | None = None

    def validate(self) -> None:
        if not Path(self.registry_dir).exists():
            raise ConfigError(f"registry directory {self.registry_dir} does not exist")
        if self.min_support < 1:
            raise ConfigError("min_support must be >= 1")


class Engine:
    """Composition root: wires store, registry, backend, adapters, stages."""

    def __init__(
        self,
        config: EngineConfig,
        backend=None,
        adapters: AdapterSet | None = None,
        pipeline: Mapping[str, Callable[["Engine", str], dict]] | None = None,
        execution_hook: Callable[[str], None] | None = None,
    ):
        config.validate()
        self.config = config
        self.store = RunStore(config.store_root)
        self.store.init_registry(config.registry_dir)
        self._registry: Registry | None = None
        self.backend = backend if backend is not None else make_backend(config.backend)
        self.dataset = toolsim.FixtureDataset.load()
        self.adapters = adapters or AdapterSet([toolsim.SimToolAdapter(self.dataset)])
        self.execution_hook = execution_hook
        self._wall = config.wall_clock or (lambda: datetime.now(timezone.utc))
        self._mono = config.mono_clock or time.monotonic
        if config.rng_seed is not None:
            import random

            self._rng = random.Random(config.rng_seed)
            self._randbytes = lambda n: self._rng.randbytes(n)
        else:
            self._randbytes = os.urandom
        self._custom_pipeline = pipeline is not None
        self.pipeline = dict(pipeline) if pipeline is not None else {
            "querymind": _stage_querymind,
            "workflowscout": _stage_workflowscout,
            "solutionweaver": _stage_solutionweaver,
            "curator": _stage_curator,
        }

    # --- registry -----------------------------------------------------------

    @property
    def registry(self) -> Registry:
        if self._registry is None:
            self._registry = load_registry(self.store.registry_dir)
        return self._registry

    def reload_registry(self) -> Registry:
        self._registry = None
        return self.registry

    # --- run records ----------------------------------------------------------

    def _now(self) -> str:
        return format_timestamp(self._wall())

    def new_run_id(self) -> str:
        return make_ulid(int(self._wall().timestamp() * 1000), self._randbytes(10))

    def _new_record(self, run_id: str, query: str, mode: str) -> dict[str, Any]:
        now = self._now()
        return {
            "run_id": run_id,
            "query": query,
            "mode": mode,
            "backend_kind": getattr(self.backend, "kind", "custom"),
            "created_at": now,
            "updated_at": now,
            "stages": [{"name": name, "status": "pending"} for name in self.pipeline],
        }

    def _save(self, record: dict[str, Any]) -> dict[str, Any]:
        record["updated_at"] = self._now()
        self.store.save_record(record["run_id"], record)
        return record

    def get_record(self, run_id: str) -> dict[str, Any]:
        return self.store.load_record(run_id)

    def list_runs(self, offset: int = 0, limit: int = 50) -> dict[str, Any]:
        run_ids = self.store.list_run_ids()
        page = run_ids[offset : offset + limit]
        summaries = []
        for run_id in page:
            record = self.store.load_record(run_id)
            summaries.append(
                {
                    "run_id": record["run_id"],
                    "query": record["query"],
                    "mode": record["mode"],
                    "created_at": record["created_at"],
                    "updated_at": record["updated_at"],
                    "stages": [
                        {"name": s["name"], "status": s["status"]} for s in record["stages"]
                    ],
                }
            )
        return {"runs": summaries, "total": len(run_ids), "offset": offset, "limit": limit}

    @staticmethod
    def _stage_entry(record: dict[str, Any], stage: str) -> dict[str, Any]:
        for entry in record["stages"]:
            if entry["name"] == stage:
                return entry
        raise WrongStateError(f"run has no stage {stage!r}")

    # --- lifecycle ---------------------------------------------------------------

    def start_run(self, query: str, mode: str = "standard", run_id: str | None = None) -> str:
        if mode not in ("standard", "expert"):
            raise ConfigError(f"mode must be standard or expert, not {mode!r}")
        if not query or not query.strip():
            raise ConfigError("query must be non-empty")
        run_id = run_id or self.new_run_id()
        record = self._new_record(run_id, query, mode)
        self._save(record)
        self.advance(run_id)
        return run_id

    def advance(self, run_id: str) -> dict[str, Any]:
        """Drive the run forward until blocked, terminal, or complete. Idempotent."""
        with self.store.lock(run_id):
            record = self.store.load_record(run_id)
            for entry in record["stages"]:
                status = entry["status"]
                if status in ("completed", "approved"):
                    continue
                if status in TERMINAL_STATUSES:
                    return record
                if status == "awaiting_review":
                    return record
                # pending, or running from a crashed process: (re)execute.
                record = self._run_stage(record, entry["name"])
                entry = self._stage_entry(record, entry["name"])
                if entry["status"] != "completed":
                    return record
            return record

    def _run_stage(self, record: dict[str, Any], stage: str) -> dict[str, Any]:
        entry = self._stage_entry(record, stage)
        entry["status"] = "running"
        entry["started_at"] = self._now()
        self._save(record)
        try:
            artifact = self.pipeline[stage](self, record["run_id"])
        except ArachnetError as exc:
            entry["status"] = "failed"
            entry["error"] = str(exc)
            return self._save(record)
        self.store.save_artifact(record["run_id"], stage, artifact)
        entry["finished_at"] = self._now()
        if record["mode"] == "expert":
            entry["status"] = "awaiting_review"
        else:
            entry["status"] = "completed"
            self._post_complete(record, stage)
        return self._save(record)

    def _post_complete(self, record: dict[str, Any], stage: str) -> None:
        if stage == "curator":
            _apply_promotions(self, record["run_id"])

    # --- reviews --------------------------------------------------------------------

    def submit_review(self, run_id: str, stage: str, decision: Mapping[str, Any]) -> dict[str, Any]:
        """Apply an expert decision to a stage awaiting review."""
        with self.store.lock(run_id):
            record = self.store.load_record(run_id)
            entry = self._stage_entry(record, stage)
            if entry["status"] != "awaiting_review":
                raise WrongStateError(
                    f"stage {stage!r} is {entry['status']!r}, not awaiting_review"
                )
            kind = decision.get("decision")
            reviewer = decision.get("reviewer", "")
            if kind == "approve":
                entry["status"] = "completed"
                entry["review"] = {"decision": "approve", "reviewer": reviewer}
                self._post_complete(record, stage)
                self._save(record)
            elif kind == "edit":
                replacement = decision.get("replacement")
                if replacement is None:
                    raise InvalidEditError(["edit decision carries no replacement artifact"])
                self._validate_edit(stage, replacement)
                self.store.save_artifact(run_id, stage, replacement, keep_original=True)
                try:
                    self._refresh_stage_exports(run_id, stage, replacement)
                except ArachnetError as exc:
                    entry["status"] = "failed"
                    entry["error"] = str(exc)
                    entry["review"] = {"decision": "edit", "reviewer": reviewer}
                    return self._save(record)
                entry["status"] = "completed"
                entry["review"] = {"decision": "edit", "reviewer": reviewer}
                self._post_complete(record, stage)
                self._save(record)
            elif kind == "reject":
                entry["status"] = "rejected"
                entry["review"] = {
                    "decision": "reject",
                    "reviewer": reviewer,
                    "reason": decision.get("reason", ""),
                }
                self._save(record)
                return record
            else:
                raise InvalidEditError([f"unknown review decision {kind!r}"])
            return self.advance(run_id)

    def promote_from_run(self, run_id: str, chain: list[str]) -> dict[str, Any]:
        """Promote one validated proposal from a run's curator artifact."""
        with self.store.lock(run_id):
            artifact = self.store.load_artifact(run_id, "curator")
            if artifact is None:
                raise WrongStateError(f"run {run_id} has no curator artifact yet")
            for proposal in artifact.get("proposals", []):
                if list(proposal["pattern"]["chain"]) != list(chain):
                    continue
                if proposal.get("status") == "already_promoted":
                    raise IdCollisionError(proposal["pattern"]["proposed_entry"]["id"])
                if proposal.get("status") != "validated":
                    raise WrongStateError(
                        f"proposal for chain {chain} is {proposal.get('status')!r}, not validated"
                    )
                pattern = _pattern_from_json(proposal["pattern"], self.registry)
                verdict = curator_mod.Verdict(
                    passed=True,
                    replays=tuple(
                        curator_mod.ReplayOutcome(r["run_id"], r["ok"], r.get("detail", ""))
                        for r in proposal["verdict"]["replays"]
                    ),
                )
                version, entry = curator_mod.promote(pattern, verdict, self.store, self.registry)
                promotions = list(artifact.get("promotions", []))
                promotions.append({"id": entry.id, "registry_version": version})
                artifact["promotions"] = promotions
                artifact["registry_version"] = version
                self.store.save_artifact(run_id, "curator", artifact)
                self.reload_registry()
                return {"id": entry.id, "registry_version": version}
            raise WrongStateError(f"run {run_id} proposed no pattern with chain {chain}")

    def _validate_edit(self, stage: str, replacement: Mapping[str, Any]) -> None:
        messages: list[str] = []
        if self._custom_pipeline:
            # Injected stage implementations own their artifact schemas.
            if not isinstance(replacement, Mapping):
                raise InvalidEditError(["replacement artifact must be a JSON object"])
            return
        try:
            if stage == "querymind":
                graph = querymind.graph_from_json(replacement)
                querymind.topological_sub_problems(graph)
            elif stage == "workflowscout":
                design = workflowscout.WorkflowDesign.from_json(replacement)
                report = workflowscout.validate_design(design, self.registry)
                if not report.valid:
                    messages.extend(v.message for v in report.violations)
            elif stage == "solutionweaver":
                plan = solutionweaver.plan_from_json(replacement)
                design = workflowscout.WorkflowDesign(
                    chosen=workflowscout.CandidateWorkflow(
                        steps=tuple(s for s in plan.steps if not plan.is_adapter(s.id)),
                        score=workflowscout.TradeoffScore(0, 0.0, 1.0),
                        run_input_kinds=plan.run_input_kinds,
                    ),
                    alternatives=(),
                    rationale="edited plan",
                    exploration_mode="direct",
                )
                report = workflowscout.validate_design(design, self.registry)
                if not report.valid:
                    messages.extend(v.message for v in report.violations)
            elif stage == "curator":
                proposals = replacement.get("proposals")
                if not isinstance(proposals, list):
                    messages.append("curator artifact must carry a proposals list")
            else:
                messages.append(f"unknown stage {stage!r}")
        except (ArachnetError, ValueError, KeyError, TypeError) as exc:
            messages.append(str(exc))
        if messages:
            raise InvalidEditError(messages)

    def _refresh_stage_exports(self, run_id: str, stage: str, artifact: Mapping[str, Any]) -> None:
        if self._custom_pipeline:
            return
        if stage == "querymind":
            graph = querymind.graph_from_json(artifact)
            self.store.save_artifact_export(run_id, stage, "dot", solutionweaver.graph_to_dot(graph))
        elif stage == "workflowscout":
            design = workflowscout.WorkflowDesign.from_json(artifact)
            self.store.save_artifact_export(run_id, stage, "dot", solutionweaver.design_to_dot(design))
        elif stage == "solutionweaver":
            plan = solutionweaver.plan_from_json(artifact)
            self.store.save_artifact_export(run_id, stage, "dot", solutionweaver.export_plan(plan, "dot"))
            # The edited plan replaces the executed one; re-run execution so
            # downstream stages see results for the artifact on record.
            _execute_plan(self, run_id, plan)


# --- stage implementations -------------------------------------------------------------


def _stage_querymind(engine: Engine, run_id: str) -> dict[str, Any]:
    record = engine.store.load_record(run_id)
    graph = querymind.analyze(record["query"], engine.registry, engine.backend)
    engine.store.save_artifact_export(run_id, "querymind", "dot", solutionweaver.graph_to_dot(graph))
    return graph.to_json()


def _stage_workflowscout(engine: Engine, run_id: str) -> dict[str, Any]:
    doc = engine.store.load_artifact(run_id, "querymind")
    graph = querymind.graph_from_json(doc)
    design = workflowscout.explore(graph, engine.registry, engine.config.budget, engine.backend)
    engine.store.save_artifact_export(run_id, "workflowscout", "dot", solutionweaver.design_to_dot(design))
    return design.to_json()


def _execute_plan(engine: Engine, run_id: str, plan) -> dict[str, Any]:
    graph_doc = engine.store.load_artifact(run_id, "querymind")
    graph = querymind.graph_from_json(graph_doc)
    run_inputs = toolsim.prepare_run_inputs(graph.intent, engine.dataset)
    blob_store = engine.store.blobs(run_id)
    for value in run_inputs.values():
        blob_store.put(value.content_digest(), value.to_json())
    result = execute(
        plan,
        engine.adapters,
        run_inputs,
        engine.registry,
        blob_store=blob_store,
        clock=engine.config.mono_clock or FixedClock(),
        on_step=engine.execution_hook,
        parallel=engine.config.parallel_execution,
    )
    result_json = result.to_json()
    engine.store.save_result(run_id, result_json)
    trace = curator_mod.build_trace(run_id, plan, result_json, run_inputs)
    engine.store.save_trace(run_id, trace)
    if not result.success:
        raise ArachnetError(
            f"execution failed at step {result.status_map.get('step_id')}: "
            f"{result.status_map.get('reason')}"
        )
    return result_json


def _stage_solutionweaver(engine: Engine, run_id: str) -> dict[str, Any]:
    design_doc = engine.store.load_artifact(run_id, "workflowscout")
    design = workflowscout.WorkflowDesign.from_json(design_doc)
    plan = solutionweaver.compile_design(design, engine.registry)
    engine.store.save_artifact_export(run_id, "solutionweaver", "dot", solutionweaver.export_plan(plan, "dot"))
    engine.store.save_artifact_export(run_id, "solutionweaver", "md", solutionweaver.export_plan(plan, "markdown"))
    _execute_plan(engine, run_id, plan)
    return plan.to_json()


def _stage_curator(engine: Engine, run_id: str) -> dict[str, Any]:
    registry = engine.registry
    traces = {t["run_id"]: t for t in engine.store.traces()}
    patterns = curator_mod.mine_patterns(
        traces.values(), registry, min_support=engine.config.min_support
    )
    proposals = []
    for pattern in patterns:
        entry_id = pattern.proposed_entry.id
        if entry_id in registry.entries:
            proposals.append(
                {"pattern": pattern.to_json(), "status": "already_promoted", "verdict": None}
            )
            continue
        try:
            verdict = curator_mod.validate_composite(
                pattern,
                traces,
                engine.adapters,
                registry,
                lambda rid, digest: engine.store.blobs(rid).get(digest),
            )
            proposals.append(
                {
                    "pattern": pattern.to_json(),
                    "status": "validated" if verdict.passed else "replay_failed",
                    "verdict": verdict.to_json(),
                }
            )
        except ReplayError as exc:
            proposals.append(
                {"pattern": pattern.to_json(), "status": "replay_unavailable", "verdict": None, "error": str(exc)}
            )
    return {
        "mined": len(patterns),
        "proposals": proposals,
        "promotions": [],
        "registry_version": engine.store.registry_version(),
    }


def _apply_promotions(engine: Engine, run_id: str) -> None:
    """Promote validated proposals after the curator stage completes."""
    artifact = engine.store.load_artifact(run_id, "curator")
    if artifact is None:
        return
    traces = {t["run_id"]: t for t in engine.store.traces()}
    promotions = list(artifact.get("promotions", []))
    promoted_ids = {p["id"] for p in promotions}
    changed = False
    for proposal in artifact.get("proposals", []):
        if proposal.get("status") != "validated":
            continue
        pattern = _pattern_from_json(proposal["pattern"], engine.registry)
        if pattern.proposed_entry.id in promoted_ids:
            continue
        verdict = curator_mod.Verdict(
            passed=bool(proposal["verdict"]["passed"]),
            replays=tuple(
                curator_mod.ReplayOutcome(r["run_id"], r["ok"], r.get("detail", ""))
                for r in proposal["verdict"]["replays"]
            ),
        )
        try:
            version, entry = curator_mod.promote(pattern, verdict, engine.store, engine.registry)
        except IdCollisionError:
            # A resumed stage may have promoted this already; keep idempotent.
            version, entry = engine.store.registry_version(), pattern.proposed_entry
        promotions.append({"id": entry.id, "registry_version": version})
        promoted_ids.add(entry.id)
        engine.reload_registry()
        changed = True
    if changed or artifact.get("registry_version") != engine.store.registry_version():
        artifact["promotions"] = promotions
        artifact["registry_version"] = engine.store.registry_version()
        engine.store.save_artifact(run_id, "curator", artifact)


def _pattern_from_json(doc: Mapping[str, Any], registry: Registry) -> curator_mod.CompositePattern:
    chain = tuple(doc["chain"])
    template = tuple(tuple(sorted(b.items())) for b in doc["binding_template"])
    return curator_mod.CompositePattern(
        chain=chain,
        binding_template=template,
        support=doc["support"],
        supporting_runs=tuple(doc["supporting_runs"]),
        occurrences=tuple((run, tuple(steps)) for run, steps in doc["occurrences"]),
        proposed_entry=curator_mod.propose_entry(chain, template, registry),
    )
