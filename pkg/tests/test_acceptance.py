"""Acceptance suite: one test per criterion, desk scale, no network.

Every criterion runs over the shipped minitopo fixtures with the
deterministic backend; socket access is actively blocked where the
criterion demands offline execution. Expected values come from the oracle
module (brute-force joins, exhaustive enumeration, round simulation), never
from the code paths under test.
"""

from __future__ import annotations

import json
import random
import socket
import time
from fractions import Fraction

import pytest

from arachnet.backend import BackendConfig, LLMBackend, ScriptedTransport
from arachnet.curator import mine_patterns, promote, validate_composite
from arachnet.errors import IntentError, NoPlanError, InvalidEditError
from arachnet.executor import AdapterSet, DataValue, MemoryBlobStore, execute
from arachnet.jsonutil import canonical_dumps
from arachnet.orchestrator import STAGES, Engine
from arachnet.registry import load_registry
from arachnet.solutionweaver import compile_design
from arachnet.store import RunStore
from arachnet.toolsim import (
    SPECS,
    SimToolAdapter,
    as_dependency_graph,
    cascade_propagate,
    fixture_registry_dir,
    hazard_event_process_exact,
    prepare_run_inputs,
)
from arachnet.workflowscout import (
    CandidateWorkflow,
    RunInput,
    StepOutput,
    WorkflowDesign,
    plan_for_kind,
    validate_design,
)

from oracles import (
    brute_force_min_plan_cost,
    oracle_cascade,
    oracle_impact_for_cables,
    random_registry,
)
from test_curator import _full_chain_design, _geo_agg_design, _run_fixture


def _stage_statuses(record):
    return {s["name"]: s["status"] for s in record["stages"]}


def test_criterion_1_cable_impact_replication(engine_factory, queries, registry):
    started = time.perf_counter()
    engine = engine_factory()
    run_id = engine.start_run(queries["cable_impact"])
    elapsed = time.perf_counter() - started

    design = engine.store.load_artifact(run_id, "workflowscout")
    functions = [s["capability_id"].split(".", 1)[1] for s in design["chosen"]["steps"]]
    assert functions == ["cable_dependency_lookup", "ip_extract", "geolocate", "impact_aggregate"]

    result = engine.store.load_result(run_id)
    assert result["status"]["state"] == "success"
    digest = next(d for s, p, d in result["step_outputs"] if s == "impact_aggregate" and p == "impact")
    payload = engine.store.blobs(run_id).get(digest)["payload"]
    assert payload == oracle_impact_for_cables({"C1"})  # bit-exact float equality

    assert elapsed < 5.0, f"end-to-end run took {elapsed:.2f}s"


def test_criterion_2_multi_hazard_restraint(engine_factory, queries, registry, dataset):
    engine = engine_factory()
    run_id = engine.start_run(queries["multi_hazard"])
    design_doc = engine.store.load_artifact(run_id, "workflowscout")
    capabilities = [s["capability_id"] for s in design_doc["chosen"]["steps"]]
    assert set(capabilities) == {"xaminer.hazard_event_process", "xaminer.impact_combine"}
    assert capabilities.count("xaminer.hazard_event_process") == 2

    # Minimality: removing any step breaks validation or goal coverage.
    design = WorkflowDesign.from_json(design_doc)
    goal_steps = {
        src.step_id
        for _, src in design.chosen.goal_sources
        if isinstance(src, StepOutput)
    }
    for removed in design.chosen.steps:
        remaining = tuple(s for s in design.chosen.steps if s.id != removed.id)
        probe = WorkflowDesign(
            chosen=CandidateWorkflow(
                steps=remaining,
                score=design.chosen.score,
                goal_sources=design.chosen.goal_sources,
                run_input_kinds=design.chosen.run_input_kinds,
            ),
            alternatives=(),
            rationale="minimality probe",
            exploration_mode=design.exploration_mode,
        )
        assert (not validate_design(probe, registry).valid) or removed.id in goal_steps

    # Linearity in the probability, in exact rational arithmetic.
    events = list(dataset.hazard_events)
    unit = hazard_event_process_exact(dataset, events, Fraction(1))
    for p in (Fraction(1, 10), Fraction(2, 3)):
        scaled = hazard_event_process_exact(dataset, events, p)
        assert set(scaled) == set(unit)
        for country in unit:
            assert scaled[country] == p * unit[country]


def test_criterion_3_cascade_fixpoint_and_monotonicity(engine_factory, queries, dataset):
    engine = engine_factory()
    run_id = engine.start_run(queries["cascade"])
    design = engine.store.load_artifact(run_id, "workflowscout")
    frameworks = {s["capability_id"].split(".")[0] for s in design["chosen"]["steps"]}
    assert len(frameworks) >= 4

    impact = oracle_impact_for_cables({"C1", "C2"})
    graph = as_dependency_graph(dataset)
    timeline = cascade_propagate(dataset, impact, graph, "0.5")
    expected = {r: s for r, s in oracle_cascade(impact, graph, 0.5).items() if s}
    got = {row["round"]: set(row["failed"]) for row in timeline if row["layer"] == "as"}
    assert got == expected

    rng = random.Random(333)
    link_ips = [l["ip_a"] for l in dataset.ip_links] + [l["ip_b"] for l in dataset.ip_links]
    for _ in range(200):
        n = rng.randint(2, 20)
        nodes = [
            {"asn": f"AS{i}", "country": "FR", "ips": rng.sample(link_ips, rng.randint(1, 3))}
            for i in range(n)
        ]
        edges = [
            {"src": f"AS{i}", "dst": f"AS{j}"}
            for i in range(n)
            for j in rng.sample(range(n), rng.randint(0, min(3, n - 1)))
            if i != j
        ]
        random_as_graph = {"nodes": nodes, "edges": edges}
        random_impact = [
            {"country": c, "impact": rng.choice([0.0, 0.3, 0.5, 0.8, 1.0])}
            for c in ("FR", "DE", "SG", "IN", "EG", "UK", "JP", "US")
        ]
        low, high = sorted(rng.sample([0.2, 0.4, 0.6, 0.8, 1.0], 2))

        def failed_set(threshold):
            rows = cascade_propagate(dataset, random_impact, random_as_graph, str(threshold))
            return {asn for row in rows if row["layer"] == "as" for asn in row["failed"]}

        assert failed_set(high) <= failed_set(low)


def test_criterion_4_forensic_attribution(engine_factory, queries):
    engine = engine_factory()
    run_id = engine.start_run(queries["forensics"])
    result = engine.store.load_result(run_id)
    assert result["status"]["state"] == "success"
    blobs = engine.store.blobs(run_id)

    def payload(step, port):
        digest = next(d for s, p, d in result["step_outputs"] if s == step and p == port)
        return blobs.get(digest)["payload"]

    report = payload("anomaly_detect", "report")
    assert report[0]["onset_timestamp"] == "2025-06-10T12:00:00Z"  # exactly t0

    ranking = payload("suspect_cable_rank", "ranking")
    assert ranking[0]["cable_id"] == "C2"
    assert ranking[0]["bgp_correlated"] is True  # T(C2) = 1
    assert ranking[0]["score"] > max((r["score"] for r in ranking[1:]), default=0.0)

    # Hand-evaluated scores: P(C2) = 6/12 paths, T(C2) = 1; P(C1) = 6/12, T(C1) = 0.25.
    by_cable = {r["cable_id"]: r for r in ranking}
    assert by_cable["C2"]["score"] == pytest.approx(0.5)
    assert by_cable["C1"]["score"] == pytest.approx(0.125)


def test_criterion_5_planner_optimality_500_registries():
    rng = random.Random(5005)
    mismatches = []
    checked = 0
    for index in range(500):
        registry = random_registry(rng)
        kinds = sorted(registry.kinds)
        goal = rng.choice(kinds)
        available = set(rng.sample(kinds, rng.randint(0, 2)))
        expected = brute_force_min_plan_cost(registry, goal, available, max_actions=6)
        outcomes = []
        for _ in range(3):
            try:
                outcomes.append(plan_for_kind(goal, registry, available).to_json())
            except NoPlanError:
                outcomes.append(None)
        assert outcomes[0] == outcomes[1] == outcomes[2], f"nondeterministic at {index}"
        if outcomes[0] is None:
            assert expected is None, f"planner missed a feasible plan at {index}"
            continue
        plan_cost = outcomes[0]["score"]["compute_cost"]
        n_steps = len(outcomes[0]["steps"])
        assert expected is not None
        if n_steps <= 6:
            if abs(plan_cost - expected) > 1e-9:
                mismatches.append((index, goal, plan_cost, expected))
        else:
            assert plan_cost <= expected + 1e-9
        checked += 1
    assert not mismatches, mismatches[:5]
    assert checked >= 300


def test_criterion_6_pipeline_gating(engine_factory, queries):
    # Exhaustive review-decision sequences on a mock pipeline.
    def mock_stage(name):
        return lambda engine, run_id: {"stage": name, "proposals": []}

    pipeline = {name: mock_stage(name) for name in STAGES}

    def check(record):
        statuses = [s["status"] for s in record["stages"]]
        for k in range(1, len(statuses)):
            if statuses[k] != "pending":
                assert statuses[k - 1] == "completed"
        assert sum(1 for s in statuses if s == "running") <= 1
        if record["mode"] == "standard":
            assert "awaiting_review" not in statuses

    sequences = [[]]
    for _ in STAGES:
        sequences = [seq + [d] for seq in sequences for d in ("approve", "edit", "reject")]
    for sequence in sequences:
        engine = engine_factory(pipeline=pipeline)
        run_id = engine.start_run("mock", mode="expert")
        check(engine.get_record(run_id))
        for stage, decision in zip(STAGES, sequence):
            statuses = _stage_statuses(engine.get_record(run_id))
            if statuses[stage] != "awaiting_review":
                break
            payload = {"decision": decision, "reviewer": "mc"}
            if decision == "edit":
                payload["replacement"] = {"stage": stage, "proposals": []}
            check(engine.submit_review(run_id, stage, payload))
            if decision == "reject":
                break

    # Edited stage-2 artifacts change downstream plans.
    engine = engine_factory()
    run_id = engine.start_run(queries["cable_impact"], mode="expert")
    engine.submit_review(run_id, "querymind", {"decision": "approve"})
    artifact = engine.store.load_artifact(run_id, "workflowscout")
    edited = json.loads(
        json.dumps(artifact).replace("nautilus.impact_aggregate", "xaminer.impact_aggregate")
    )
    engine.submit_review(run_id, "workflowscout", {"decision": "edit", "replacement": edited})
    plan = engine.store.load_artifact(run_id, "solutionweaver")
    assert "xaminer.impact_aggregate" in {s["capability_id"] for s in plan["steps"]}

    # Invalid edits leave state unchanged.
    engine2 = engine_factory()
    run2 = engine2.start_run(queries["cable_impact"], mode="expert")
    engine2.submit_review(run2, "querymind", {"decision": "approve"})
    artifact2 = engine2.store.load_artifact(run2, "workflowscout")
    before = canonical_dumps(artifact2)
    broken = json.loads(json.dumps(artifact2))
    last = broken["chosen"]["steps"][-1]
    broken["chosen"]["steps"][0]["input_bindings"] = {
        "cables": {"type": "step_output", "step_id": last["id"], "port": "impact"}
    }
    with pytest.raises(InvalidEditError):
        engine2.submit_review(run2, "workflowscout", {"decision": "edit", "replacement": broken})
    assert _stage_statuses(engine2.get_record(run2))["workflowscout"] == "awaiting_review"
    assert canonical_dumps(engine2.store.load_artifact(run2, "workflowscout")) == before


def test_criterion_7_curator_gate(registry, adapters, dataset, tmp_path):
    blobs: dict[str, MemoryBlobStore] = {}
    traces: dict[str, dict] = {}
    cable_input = {"cables": DataValue(SPECS["cable_id_set"], [{"cable_id": "C1"}], "run_input:cables")}
    ips_c2 = [{"ip": l["ip_a"]} for l in dataset.ip_links if l["cable_id"] == "C2"]
    ips_c4 = [{"ip": l["ip_b"]} for l in dataset.ip_links if l["cable_id"] == "C4"]
    _run_fixture("run_a", _full_chain_design(), cable_input, registry, adapters, blobs, traces)
    _run_fixture("run_b", _geo_agg_design(), {"ips": DataValue(SPECS["ip_set"], ips_c2, "r")},
                 registry, adapters, blobs, traces)
    _run_fixture("run_c", _geo_agg_design(), {"ips": DataValue(SPECS["ip_set"], ips_c4, "r")},
                 registry, adapters, blobs, traces)

    patterns = mine_patterns(traces.values(), registry, min_support=3, min_len=2)
    assert len(patterns) == 1  # exactly one composite proposed
    pattern = patterns[0]
    assert pattern.chain == ("nautilus.geolocate", "nautilus.impact_aggregate")

    verdict = validate_composite(
        pattern, traces, adapters, registry, lambda run, digest: blobs[run].get(digest)
    )
    assert verdict.passed

    store = RunStore(tmp_path / "gate_store")
    store.init_registry(fixture_registry_dir())
    version, entry = promote(pattern, verdict, store, registry)
    upgraded = load_registry(store.registry_dir)
    assert len(upgraded.entries) == len(registry.entries) + 1  # +1 exactly

    # Perturbed replay must fail validation and must not grow the registry.
    class Perturbed(SimToolAdapter):
        def invoke(self, capability_id, inputs, params):
            out = super().invoke(capability_id, inputs, params)
            if capability_id == "nautilus.impact_aggregate":
                rows = [dict(r, impact=r["impact"] + 0.001) for r in out["impact"].payload]
                out["impact"] = DataValue(out["impact"].data, rows, out["impact"].provenance)
            return out

    bad_verdict = validate_composite(
        pattern, traces, AdapterSet([Perturbed(dataset)]), registry,
        lambda run, digest: blobs[run].get(digest),
    )
    assert not bad_verdict.passed
    store2 = RunStore(tmp_path / "gate_store2")
    store2.init_registry(fixture_registry_dir())
    from arachnet.errors import ReplayError

    with pytest.raises(ReplayError):
        promote(pattern, bad_verdict, store2, registry)
    assert load_registry(store2.registry_dir).entries.keys() == registry.entries.keys()

    # Post-promotion plans through the composite are digest-identical to the
    # expanded chain on the same inputs.
    plan_with_composite = plan_for_kind("impact_table", upgraded, {"ip_set"})
    assert [s.capability_id for s in plan_with_composite.steps] == [entry.id]
    ips = [{"ip": l["ip_a"]} for l in dataset.ip_links if l["cable_id"] == "C1"]
    shared_value = DataValue(SPECS["ip_set"], ips, "r")
    run_inputs = {"ips": shared_value, "input_ip_set": shared_value}
    composite_design = WorkflowDesign(
        chosen=CandidateWorkflow(
            steps=plan_with_composite.steps,
            score=plan_with_composite.score,
            run_input_kinds=plan_with_composite.run_input_kinds,
        ),
        alternatives=(),
        rationale="composite",
        exploration_mode="direct",
    )
    composite_plan = compile_design(composite_design, upgraded)
    chain_plan = compile_design(_geo_agg_design(), upgraded)
    a = execute(composite_plan, adapters, run_inputs, upgraded)
    b = execute(chain_plan, adapters, run_inputs, upgraded)
    assert a.success and b.success
    composite_step = composite_plan.steps[0].id
    assert a.output_digest(composite_step, "impact") == b.output_digest("agg", "impact")


def test_criterion_8_backend_robustness(engine_factory, queries, registry, monkeypatch):
    valid = json.dumps(
        {
            "goal_kind": "impact_table",
            "subject": {"entity_type": "cable", "identifiers": ["C1"]},
            "aggregation": "country",
            "time_window": None,
            "parameters": {},
            "classification": {"spatial": True, "temporal": False, "causal": False,
                               "data_dependency": True},
        }
    )
    for k in range(4):
        transport = ScriptedTransport(["{broken"] * k + [valid])
        backend = LLMBackend(BackendConfig(kind="scripted", max_repair_attempts=3), transport)
        if k < 3:
            intent = backend.propose_intent("q", registry)
            assert intent.goal_kind == "impact_table"
        else:
            with pytest.raises(IntentError) as err:
                backend.propose_intent("q", registry)
            assert len(err.value.attempts) == 3

    # Full pipeline with networking disabled.
    def no_network(*args, **kwargs):
        raise AssertionError("network activity attempted during deterministic run")

    monkeypatch.setattr(socket.socket, "connect", no_network)
    monkeypatch.setattr(socket, "create_connection", no_network)
    engine = engine_factory()
    run_id = engine.start_run(queries["cascade"])
    record = engine.get_record(run_id)
    assert all(status == "completed" for status in _stage_statuses(record).values())


def test_criterion_9_crash_resume_digest_identical(engine_factory, queries):
    baseline = engine_factory()
    baseline_run = baseline.start_run(queries["forensics"])
    expected = baseline.store.load_result(baseline_run)

    class SimulatedCrash(RuntimeError):
        pass

    calls = {"n": 0}

    def crash_hook(step_id):
        calls["n"] += 1
        if calls["n"] == 4:
            raise SimulatedCrash(step_id)

    crashing = engine_factory(execution_hook=crash_hook)
    fixed_run = "01ACCEPT9CRASH000000000000"
    with pytest.raises(SimulatedCrash):
        crashing.start_run(queries["forensics"], run_id=fixed_run)
    assert _stage_statuses(crashing.store.load_record(fixed_run))["solutionweaver"] == "running"

    resumed = Engine(crashing.config)
    record = resumed.advance(fixed_run)
    assert all(status == "completed" for status in _stage_statuses(record).values())
    got = resumed.store.load_result(fixed_run)
    assert got["step_outputs"] == expected["step_outputs"]
    assert got["result_digest"] == expected["result_digest"]
