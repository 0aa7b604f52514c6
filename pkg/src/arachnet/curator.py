"""Stage 4: mine reusable chains from successful runs and grow the registry.

Patterns are contiguous linear chains of non-adapter steps whose internal
wiring is identical across runs. A pattern is only promoted after replay
validation: the chain is re-executed as a standalone plan on the recorded
inputs of at least two supporting runs and must reproduce the recorded
output digests exactly. Promotion snapshots the prior registry version and
adds a curated composite entry whose cost is the sum of its members, so the
planner prefers it only via the standard fewer-steps tie-break.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import IdCollisionError, ReplayError
from .executor import AdapterSet, DataValue, MemoryBlobStore, execute
from .registry import CapabilityEntry, CompositeDef, ParamSpec, Registry
from .solutionweaver import ExecutablePlan, compile_design
from .store import RunStore
from .workflowscout import (
    CandidateWorkflow,
    RunInput,
    StepOutput,
    TradeoffScore,
    WorkflowDesign,
    WorkflowStep,
)

MIN_SUPPORT_DEFAULT = 3
MIN_LEN_DEFAULT = 2


def build_trace(
    run_id: str,
    plan: ExecutablePlan,
    result_json: Mapping[str, Any],
    run_inputs: Mapping[str, DataValue],
) -> dict[str, Any]:
    """Derive the curator's view of one execution, verbatim from the result."""
    output_digests: dict[tuple[str, str], str] = {
        (s, p): d for s, p, d in result_json.get("step_outputs", [])
    }
    input_digest_of: dict[str, str] = {name: v.content_digest() for name, v in run_inputs.items()}
    steps = []
    for step in plan.steps:
        inputs = {}
        for port, source in step.input_bindings:
            if isinstance(source, StepOutput):
                digest = output_digests.get((source.step_id, source.port))
            elif isinstance(source, RunInput):
                digest = input_digest_of.get(source.name)
            else:
                digest = None
            inputs[port] = digest
        outputs = {
            port: digest for (sid, port), digest in output_digests.items() if sid == step.id
        }
        steps.append(
            {
                "step_id": step.id,
                "capability_id": step.capability_id,
                "is_adapter": plan.is_adapter(step.id),
                "params": step.params_map,
                "bindings": {port: src.to_json() for port, src in step.input_bindings},
                "input_digests": inputs,
                "output_digests": outputs,
            }
        )
    return {
        "run_id": run_id,
        "plan_id": plan.plan_id,
        "success": result_json.get("status", {}).get("state") == "success",
        "steps": steps,
        "run_inputs": dict(sorted(input_digest_of.items())),
    }


# --- mining -----------------------------------------------------------------------


@dataclass(frozen=True)
class CompositePattern:
    chain: tuple[str, ...]
    binding_template: tuple[tuple[tuple[str, str], ...], ...]
    support: int
    supporting_runs: tuple[str, ...]
    occurrences: tuple[tuple[str, tuple[str, ...]], ...]  # (run_id, step ids)
    proposed_entry: CapabilityEntry

    def key(self) -> tuple:
        return (self.chain, self.binding_template)

    def to_json(self) -> dict[str, Any]:
        return {
            "chain": list(self.chain),
            "binding_template": [dict(b) for b in self.binding_template],
            "support": self.support,
            "supporting_runs": list(self.supporting_runs),
            "occurrences": [[run, list(steps)] for run, steps in self.occurrences],
            "proposed_entry": self.proposed_entry.to_json(),
        }


def _linked_runs(trace: Mapping[str, Any]) -> list[list[dict]]:
    """Maximal chain-linked segments of non-adapter steps, in plan order."""
    steps = [s for s in trace["steps"] if not s.get("is_adapter")]
    segments: list[list[dict]] = []
    current: list[dict] = []

    def follows(prev: dict, step: dict) -> bool:
        sourced = [
            src for src in step.get("bindings", {}).values() if src["type"] == "step_output"
        ]
        if not sourced:
            return False
        return all(src["step_id"] == prev["step_id"] for src in sourced)

    for step in steps:
        if current and follows(current[-1], step):
            current.append(step)
        else:
            if current:
                segments.append(current)
            current = [step]
    if current:
        segments.append(current)
    return segments


def _window_template(window: Sequence[dict]) -> tuple[tuple[tuple[str, str], ...], ...]:
    """Normalized internal wiring of a chain window.

    Step-output bindings become chain:<offset>:<port>; everything else is an
    external input named by its port (suffixed with the member index when a
    later member reuses a port name).
    """
    template: list[tuple[tuple[str, str], ...]] = []
    used_external: set[str] = set()
    for index, step in enumerate(window):
        bindings: dict[str, str] = {}
        for port, src in sorted(step.get("bindings", {}).items()):
            if src["type"] == "step_output" and index > 0:
                bindings[port] = f"chain:{index - 1}:{src['port']}"
            else:
                name = port if port not in used_external else f"{port}_{index}"
                used_external.add(name)
                bindings[port] = f"external:{name}"
        template.append(tuple(sorted(bindings.items())))
    return tuple(template)


def mine_patterns(
    traces: Iterable[Mapping[str, Any]],
    registry: Registry,
    min_support: int = MIN_SUPPORT_DEFAULT,
    min_len: int = MIN_LEN_DEFAULT,
) -> list[CompositePattern]:
    """Maximal contiguous chains appearing in >= min_support successful runs.

    Chains must be wired identically (same normalized binding template) to
    count as the same pattern. Adapter steps break chain contiguity.
    """
    occurrences: dict[tuple, dict[str, tuple[str, ...]]] = {}
    for trace in traces:
        if not trace.get("success"):
            continue
        for segment in _linked_runs(trace):
            for start in range(len(segment)):
                for end in range(start + min_len, len(segment) + 1):
                    window = segment[start:end]
                    chain = tuple(s["capability_id"] for s in window)
                    template = _window_template(window)
                    key = (chain, template)
                    occurrences.setdefault(key, {})
                    occurrences[key].setdefault(
                        trace["run_id"], tuple(s["step_id"] for s in window)
                    )

    qualified = {
        key: runs for key, runs in occurrences.items() if len(runs) >= min_support
    }

    def contained(inner: tuple[str, ...], outer: tuple[str, ...]) -> bool:
        if len(inner) >= len(outer):
            return False
        return any(
            outer[i : i + len(inner)] == inner for i in range(len(outer) - len(inner) + 1)
        )

    patterns: list[CompositePattern] = []
    for (chain, template), runs in qualified.items():
        if any(contained(chain, other_chain) for (other_chain, _t) in qualified if other_chain != chain):
            continue
        entry = propose_entry(chain, template, registry)
        patterns.append(
            CompositePattern(
                chain=chain,
                binding_template=template,
                support=len(runs),
                supporting_runs=tuple(sorted(runs)),
                occurrences=tuple(sorted(runs.items())),
                proposed_entry=entry,
            )
        )
    patterns.sort(key=lambda p: (-p.support, p.chain))
    return patterns


def composite_id(chain: Sequence[str], registry: Registry, version: int = 1) -> str:
    slug = "_".join(registry.entries[cid].function.split("_")[0] for cid in chain)
    return f"curated.{slug}_v{version}"


def propose_entry(
    chain: Sequence[str],
    template: Sequence[Sequence[tuple[str, str]]],
    registry: Registry,
) -> CapabilityEntry:
    """Draft a registry entry: unbound inputs in, terminal outputs out."""
    members = [registry.entries[cid] for cid in chain]
    inputs = []
    for index, member_template in enumerate(template):
        member = members[index]
        for port, ref in member_template:
            if ref.startswith("external:"):
                name = ref.split(":", 1)[1]
                port_spec = member.input_port(port)
                inputs.append(
                    type(port_spec)(name=name, data=port_spec.data, required=port_spec.required)
                )
    outputs = list(members[-1].outputs)
    cost = sum(m.cost_hint for m in members)
    reliability = 1.0
    for m in members:
        reliability *= m.reliability
    param_specs: dict[str, ParamSpec] = {}
    for m in members:
        for spec in m.params:
            param_specs.setdefault(spec.name, spec)
    description = "Curated composite: " + " then ".join(m.function for m in members) + "."
    return CapabilityEntry(
        id=composite_id(chain, registry),
        framework="curated",
        description=description,
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        constraints=(),
        cost_hint=cost,
        reliability=reliability,
        provenance="curated",
        version=1,
        params=tuple(param_specs.values()),
        notes="Promoted from mined run patterns; cost and reliability are the member products.",
        composite_of=CompositeDef(
            chain=tuple(chain),
            bindings=tuple(tuple(member) for member in template),
        ),
    )


# --- replay validation ---------------------------------------------------------------


@dataclass(frozen=True)
class ReplayOutcome:
    run_id: str
    ok: bool
    detail: str = ""

    def to_json(self) -> dict[str, Any]:
        return {"run_id": self.run_id, "ok": self.ok, "detail": self.detail}


@dataclass(frozen=True)
class Verdict:
    passed: bool
    replays: tuple[ReplayOutcome, ...]

    def to_json(self) -> dict[str, Any]:
        return {"passed": self.passed, "replays": [r.to_json() for r in self.replays]}


def _chain_plan(
    pattern: CompositePattern,
    registry: Registry,
    member_params: Sequence[Mapping[str, str]],
) -> ExecutablePlan:
    """Standalone plan executing the pattern's chain on named external inputs."""
    steps: list[WorkflowStep] = []
    run_input_kinds = {}
    step_ids: list[str] = []
    for index, capability_id in enumerate(pattern.chain):
        entry = registry.entries[capability_id]
        bindings: dict[str, Any] = {}
        for port, ref in pattern.binding_template[index]:
            if ref.startswith("chain:"):
                _, idx, out_port = ref.split(":", 2)
                bindings[port] = StepOutput(step_id=step_ids[int(idx)], port=out_port)
            else:
                name = ref.split(":", 1)[1]
                bindings[port] = RunInput(name=name)
                port_spec = entry.input_port(port)
                run_input_kinds[name] = port_spec.data
        step_id = f"m{index}_{entry.function}"
        step_ids.append(step_id)
        steps.append(WorkflowStep.make(step_id, capability_id, bindings, dict(member_params[index])))
    workflow = CandidateWorkflow(
        steps=tuple(steps),
        score=TradeoffScore(data_requirements=len(run_input_kinds), compute_cost=0.0, reliability=1.0),
        goal_sources=(),
        run_input_kinds=tuple(sorted(run_input_kinds.items())),
    )
    design = WorkflowDesign(chosen=workflow, alternatives=(), rationale="replay", exploration_mode="direct")
    return compile_design(design, registry)


def validate_composite(
    pattern: CompositePattern,
    traces: Mapping[str, Mapping[str, Any]],
    adapters: AdapterSet,
    registry: Registry,
    blob_getter: Callable[[str, str], Mapping[str, Any] | None],
    min_replays: int = 2,
) -> Verdict:
    """Replay the chain on recorded inputs and compare output digests.

    Each replay reuses the supporting run's recorded step params, so a pass
    means the standalone chain reproduces the recorded outputs exactly.
    Raises ReplayError when fewer than min_replays supporting runs still
    have their recorded blobs available.
    """
    replays: list[ReplayOutcome] = []
    usable = 0
    for run_id, step_ids in pattern.occurrences:
        trace = traces.get(run_id)
        if trace is None:
            continue
        steps_by_id = {s["step_id"]: s for s in trace["steps"]}
        originals = [steps_by_id[sid] for sid in step_ids]
        run_inputs: dict[str, DataValue] = {}
        missing = False
        for index, original in enumerate(originals):
            for port, ref in pattern.binding_template[index]:
                if not ref.startswith("external:"):
                    continue
                name = ref.split(":", 1)[1]
                digest = original["input_digests"].get(port)
                blob = blob_getter(run_id, digest) if digest else None
                if blob is None:
                    missing = True
                    break
                run_inputs[name] = DataValue.from_json(blob)
            if missing:
                break
        if missing:
            continue
        usable += 1

        replay_plan = _chain_plan(pattern, registry, [o.get("params", {}) for o in originals])
        result = execute(replay_plan, adapters, run_inputs, registry, blob_store=MemoryBlobStore())
        mismatch = ""
        for index, original in enumerate(originals):
            replay_step_id = replay_plan.steps[index].id
            for port, recorded_digest in sorted(original["output_digests"].items()):
                replayed = result.output_digest(replay_step_id, port)
                if replayed != recorded_digest:
                    mismatch = (
                        f"step {original['step_id']}.{port}: recorded {recorded_digest[:12]} "
                        f"!= replayed {str(replayed)[:12]}"
                    )
                    break
            if mismatch:
                break
        replays.append(ReplayOutcome(run_id=run_id, ok=not mismatch, detail=mismatch))

    if usable < min_replays:
        raise ReplayError(
            f"only {usable} supporting run(s) retain recorded blobs; need {min_replays}"
        )
    return Verdict(passed=all(r.ok for r in replays) and len(replays) >= min_replays, replays=tuple(replays))


# --- promotion ----------------------------------------------------------------------


def promote(
    pattern: CompositePattern,
    verdict: Verdict,
    store: RunStore,
    registry: Registry,
) -> tuple[int, CapabilityEntry]:
    """Write the composite into the store's registry as a new version.

    Requires a passing replay verdict. The previous registry version is
    snapshotted on disk, a documentation stub is generated, and the version
    counter bumps; the caller reloads the registry afterwards.
    """
    if not verdict.passed:
        raise ReplayError("promotion requires a passing replay verdict")
    entry = pattern.proposed_entry
    if entry.id in registry.entries:
        raise IdCollisionError(entry.id)
    target = store.registry_dir / "capabilities" / "curated" / f"{entry.id}.json"
    if target.exists():
        raise IdCollisionError(entry.id)

    store.snapshot_registry()
    target.parent.mkdir(parents=True, exist_ok=True)
    from .jsonutil import write_json_atomic

    write_json_atomic(target, entry.to_json(), pretty=True)
    doc_path = store.root / "docs" / "registry" / f"{entry.id}.md"
    doc_path.parent.mkdir(parents=True, exist_ok=True)
    doc_path.write_text(_doc_stub(pattern, entry), encoding="utf-8")
    version = store.bump_registry_version()
    return version, entry


def _doc_stub(pattern: CompositePattern, entry: CapabilityEntry) -> str:
    lines = [
        f"# {entry.id}",
        "",
        entry.description,
        "",
        f"- members: {' -> '.join(pattern.chain)}",
        f"- support: {pattern.support} successful run(s): {', '.join(pattern.supporting_runs)}",
        f"- inputs: {', '.join(p.name + ':' + p.data.kind for p in entry.inputs) or '-'}",
        f"- outputs: {', '.join(p.name + ':' + p.data.kind for p in entry.outputs)}",
        f"- cost_hint: {entry.cost_hint} (sum of members)",
        f"- reliability: {entry.reliability:.6f} (product of members)",
        "",
        "Replay-validated against recorded run blobs before promotion.",
        "",
    ]
    return "\n".join(lines)
