"""Stage 3 (compile half): turn a validated design into an executable plan.

The plan is a typed, interpreted artifact rather than generated program
text: topologically ordered steps (with synthesized adapter steps bridging
any kind mismatches), quality checks attached at compile time, and a stable
content digest so recompiles of the same design are byte-identical.

Check attachment rules:
  schema (error)                    every step output
  nonempty (error)                  every terminal output
  cross_source_consistency (warn)   two independent non-adapter steps emit
                                    the same kind from the same inputs
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping

from .errors import CompileError
from .jsonutil import canonical_dumps, digest_of
from .registry import DataKindSpec, Registry, Translation
from .workflowscout import (
    CandidateWorkflow,
    Param,
    RunInput,
    Source,
    StepOutput,
    WorkflowDesign,
    WorkflowStep,
    check_compatibility_specs,
    validate_design,
)

PLAN_SCHEMA_VERSION = 1

# Tolerances for cross-source agreement checks. Timestamp-valued aggregates
# (anomaly onsets) compare within an absolute window in seconds; everything
# else compares by relative difference.
CONSISTENCY_RELATIVE_TOLERANCE = 0.05
ANOMALY_ONSET_TOLERANCE_SECONDS = 300.0

ADAPTER_OUT_PORT = "out"
ADAPTER_IN_PORT = "in"


@dataclass(frozen=True)
class QualityCheck:
    id: str
    target: tuple[str, str]
    kind: str
    severity: str
    params: tuple[tuple[str, str], ...] = ()

    @property
    def params_map(self) -> dict[str, str]:
        return dict(self.params)

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "target": {"step_id": self.target[0], "port": self.target[1]},
            "kind": self.kind,
            "severity": self.severity,
            "params": self.params_map,
        }

    @staticmethod
    def from_json(raw: Mapping[str, Any]) -> "QualityCheck":
        return QualityCheck(
            id=raw["id"],
            target=(raw["target"]["step_id"], raw["target"]["port"]),
            kind=raw["kind"],
            severity=raw["severity"],
            params=tuple(sorted(raw.get("params", {}).items())),
        )


@dataclass(frozen=True)
class ExecutablePlan:
    plan_id: str
    steps: tuple[WorkflowStep, ...]
    adapter_steps: frozenset[str]
    checks: tuple[QualityCheck, ...]
    outputs_manifest: tuple[tuple[str, str, str], ...]
    confidence: float
    run_input_kinds: tuple[tuple[str, DataKindSpec], ...] = ()

    @property
    def run_input_kinds_map(self) -> dict[str, DataKindSpec]:
        return dict(self.run_input_kinds)

    def step(self, step_id: str) -> WorkflowStep | None:
        return next((s for s in self.steps if s.id == step_id), None)

    def is_adapter(self, step_id: str) -> bool:
        return step_id in self.adapter_steps

    def body_json(self) -> dict[str, Any]:
        return {
            "plan_schema_version": PLAN_SCHEMA_VERSION,
            "steps": [
                {**s.to_json(), "role": "adapter" if s.id in self.adapter_steps else "capability"}
                for s in self.steps
            ],
            "checks": [c.to_json() for c in self.checks],
            "outputs_manifest": [list(t) for t in self.outputs_manifest],
            "confidence": self.confidence,
            "run_input_kinds": {name: spec.to_json() for name, spec in self.run_input_kinds},
        }

    def to_json(self) -> dict[str, Any]:
        return {"plan_id": self.plan_id, **self.body_json()}


def plan_from_json(doc: Mapping[str, Any]) -> ExecutablePlan:
    steps = []
    adapters = set()
    for raw in doc.get("steps", []):
        steps.append(WorkflowStep.from_json(raw))
        if raw.get("role") == "adapter":
            adapters.add(raw["id"])
    plan = ExecutablePlan(
        plan_id=doc.get("plan_id", ""),
        steps=tuple(steps),
        adapter_steps=frozenset(adapters),
        checks=tuple(QualityCheck.from_json(c) for c in doc.get("checks", [])),
        outputs_manifest=tuple((m[0], m[1], m[2]) for m in doc.get("outputs_manifest", [])),
        confidence=float(doc.get("confidence", 1.0)),
        run_input_kinds=tuple(
            sorted(
                (name, DataKindSpec(kind=s["kind"], format=s["format"], unit=s.get("unit")))
                for name, s in doc.get("run_input_kinds", {}).items()
            )
        ),
    )
    return plan


# --- compilation -----------------------------------------------------------------


def _source_spec(
    source: Source,
    steps_by_id: Mapping[str, WorkflowStep],
    registry: Registry,
    run_input_kinds: Mapping[str, DataKindSpec],
    adapter_outputs: Mapping[str, DataKindSpec],
) -> DataKindSpec | None:
    if isinstance(source, StepOutput):
        if source.step_id in adapter_outputs:
            return adapter_outputs[source.step_id]
        step = steps_by_id.get(source.step_id)
        entry = registry.entry(step.capability_id) if step else None
        port = entry.output_port(source.port) if entry else None
        return port.data if port else None
    if isinstance(source, RunInput):
        return run_input_kinds.get(source.name)
    return None


def compile_design(design: WorkflowDesign, registry: Registry) -> ExecutablePlan:
    """Compile a validated design; refuses designs that fail validation."""
    report = validate_design(design, registry)
    if not report.valid:
        raise CompileError([v.to_json() for v in report.violations])

    workflow = design.chosen
    run_input_kinds = workflow.run_input_kinds_map
    steps_by_id = {s.id: s for s in workflow.steps}

    compiled: dict[str, WorkflowStep] = {}
    adapter_outputs: dict[str, DataKindSpec] = {}
    adapter_ids: set[str] = set()
    adapter_cache: dict[tuple[str, tuple[str, ...]], str] = {}

    def ensure_adapters(origin: Source, path: tuple[Translation, ...]) -> Source:
        """Materialize a translation chain once per (origin, chain)."""
        current = origin
        applied: tuple[str, ...] = ()
        for translation in path:
            applied = applied + (translation.adapter_id,)
            cache_key = (canonical_dumps(origin.to_json()), applied)
            step_id = adapter_cache.get(cache_key)
            if step_id is None:
                base = current.step_id if isinstance(current, StepOutput) else getattr(current, "name", "input")
                step_id = f"{base}__{translation.adapter_id}"
                suffix = 2
                while step_id in compiled or step_id in steps_by_id:
                    step_id = f"{base}__{translation.adapter_id}_{suffix}"
                    suffix += 1
                compiled[step_id] = WorkflowStep.make(
                    step_id, translation.adapter_id, {ADAPTER_IN_PORT: current}, {}
                )
                adapter_outputs[step_id] = translation.to_spec
                adapter_ids.add(step_id)
                adapter_cache[cache_key] = step_id
            current = StepOutput(step_id=step_id, port=ADAPTER_OUT_PORT)
        return current

    for step in workflow.steps:
        entry = registry.entry(step.capability_id)
        new_bindings: dict[str, Source] = {}
        for port_name, source in step.bindings_map.items():
            port = entry.input_port(port_name)
            spec = _source_spec(source, steps_by_id, registry, run_input_kinds, adapter_outputs)
            if port is not None and spec is not None and spec != port.data:
                compat = check_compatibility_specs(spec, port.data, registry)
                if compat.status == "via_adapters":
                    source = ensure_adapters(source, compat.path)
            new_bindings[port_name] = source
        compiled[step.id] = WorkflowStep.make(step.id, step.capability_id, new_bindings, step.params_map)

    ordered = _topological_steps(list(compiled.values()))

    # Consumption map for terminal detection.
    consumed: set[tuple[str, str]] = set()
    for step in ordered:
        for _, source in step.input_bindings:
            if isinstance(source, StepOutput):
                consumed.add((source.step_id, source.port))

    manifest: list[tuple[str, str, str]] = []
    output_ports: dict[str, list[tuple[str, DataKindSpec]]] = {}
    for step in ordered:
        if step.id in adapter_ids:
            output_ports[step.id] = [(ADAPTER_OUT_PORT, adapter_outputs[step.id])]
        else:
            entry = registry.entry(step.capability_id)
            output_ports[step.id] = [(p.name, p.data) for p in sorted(entry.outputs, key=lambda p: p.name)]
        for port_name, spec in output_ports[step.id]:
            if (step.id, port_name) not in consumed:
                manifest.append((step.id, port_name, spec.kind))
    manifest.sort()

    checks: list[QualityCheck] = []
    for step in ordered:
        for port_name, spec in output_ports[step.id]:
            checks.append(
                QualityCheck(
                    id=f"schema__{step.id}__{port_name}",
                    target=(step.id, port_name),
                    kind="schema",
                    severity="error",
                    params=(("format", spec.format),),
                )
            )
    for step_id, port_name, _kind in manifest:
        checks.append(
            QualityCheck(
                id=f"nonempty__{step_id}__{port_name}",
                target=(step_id, port_name),
                kind="nonempty",
                severity="error",
            )
        )
    checks.extend(_consistency_checks(ordered, adapter_ids, output_ports))

    confidence = 1.0
    for step in ordered:
        if step.id in adapter_ids:
            continue
        entry = registry.entry(step.capability_id)
        confidence *= entry.reliability

    body = {
        "plan_schema_version": PLAN_SCHEMA_VERSION,
        "steps": [
            {**s.to_json(), "role": "adapter" if s.id in adapter_ids else "capability"} for s in ordered
        ],
        "checks": [c.to_json() for c in checks],
        "outputs_manifest": [list(t) for t in manifest],
        "confidence": confidence,
        "run_input_kinds": {name: spec.to_json() for name, spec in sorted(run_input_kinds.items())},
    }
    return ExecutablePlan(
        plan_id=digest_of(body),
        steps=tuple(ordered),
        adapter_steps=frozenset(adapter_ids),
        checks=tuple(checks),
        outputs_manifest=tuple(manifest),
        confidence=confidence,
        run_input_kinds=tuple(sorted(run_input_kinds.items())),
    )


def _topological_steps(steps: list[WorkflowStep]) -> list[WorkflowStep]:
    """Kahn's algorithm over data-flow edges; ties broken by step id."""
    import heapq as _heapq

    by_id = {s.id: s for s in steps}
    indegree = {s.id: 0 for s in steps}
    consumers: dict[str, list[str]] = {s.id: [] for s in steps}
    for step in steps:
        producers = {
            src.step_id
            for _, src in step.input_bindings
            if isinstance(src, StepOutput) and src.step_id in by_id
        }
        indegree[step.id] = len(producers)
        for producer in producers:
            consumers[producer].append(step.id)
    heap = [sid for sid, deg in indegree.items() if deg == 0]
    _heapq.heapify(heap)
    ordered: list[WorkflowStep] = []
    while heap:
        sid = _heapq.heappop(heap)
        ordered.append(by_id[sid])
        for nxt in consumers[sid]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                _heapq.heappush(heap, nxt)
    if len(ordered) != len(steps):
        raise CompileError([{"code": "cycle", "message": "steps contain a data-flow cycle"}])
    return ordered


def _consistency_checks(
    ordered: list[WorkflowStep],
    adapter_ids: set[str],
    output_ports: Mapping[str, list[tuple[str, DataKindSpec]]],
) -> list[QualityCheck]:
    """Pair up independent same-kind producers for cross-source agreement."""
    by_id = {s.id: s for s in ordered}
    upstream: dict[str, set[str]] = {}
    run_roots: dict[str, frozenset[str]] = {}
    for step in ordered:  # ordered is topological, so producers resolve first
        ups: set[str] = set()
        roots: set[str] = set()
        for _, source in step.input_bindings:
            if isinstance(source, StepOutput) and source.step_id in by_id:
                ups.add(source.step_id)
                ups |= upstream.get(source.step_id, set())
                roots |= run_roots.get(source.step_id, frozenset())
            elif isinstance(source, RunInput):
                roots.add(source.name)
        upstream[step.id] = ups
        run_roots[step.id] = frozenset(roots)

    emitters: dict[str, list[tuple[str, str]]] = {}
    for step in ordered:
        if step.id in adapter_ids:
            continue
        for port_name, spec in output_ports[step.id]:
            emitters.setdefault(spec.kind, []).append((step.id, port_name))

    checks: list[QualityCheck] = []
    for kind in sorted(emitters):
        pairs = emitters[kind]
        for i in range(len(pairs)):
            for j in range(i + 1, len(pairs)):
                a, b = pairs[i], pairs[j]
                if a[0] == b[0]:
                    continue
                if a[0] in upstream[b[0]] or b[0] in upstream[a[0]]:
                    continue
                if run_roots[a[0]] != run_roots[b[0]]:
                    continue
                if kind == "anomaly_report":
                    tolerance, mode = ANOMALY_ONSET_TOLERANCE_SECONDS, "absolute"
                else:
                    tolerance, mode = CONSISTENCY_RELATIVE_TOLERANCE, "relative"
                checks.append(
                    QualityCheck(
                        id=f"consistency__{a[0]}__{b[0]}__{kind}",
                        target=a,
                        kind="cross_source_consistency",
                        severity="warn",
                        params=(
                            ("mode", mode),
                            ("other_port", b[1]),
                            ("other_step", b[0]),
                            ("tolerance", str(tolerance)),
                        ),
                    )
                )
    return checks


# --- exports ---------------------------------------------------------------------


def export_plan(plan: ExecutablePlan, format: str) -> str:
    """Render a plan as json (lossless round-trip), dot, or markdown."""
    if format == "json":
        return json.dumps(plan.to_json(), indent=2, sort_keys=True) + "\n"
    if format == "dot":
        return _plan_dot(plan)
    if format == "markdown":
        return _plan_markdown(plan)
    raise ValueError(f"unknown export format {format!r}")


def import_plan(text: str) -> ExecutablePlan:
    return plan_from_json(json.loads(text))


def _dot_document(
    nodes: list[tuple[str, str, bool]], edges: list[tuple[str, str, str]], title: str
) -> str:
    lines = [f"digraph {title} {{", "  rankdir=LR;", "  node [shape=box, fontsize=10];"]
    for node_id, label, dashed in nodes:
        style = ', style="dashed"' if dashed else ""
        lines.append(f'  "{node_id}" [label="{label}"{style}];')
    for src, dst, label in edges:
        lines.append(f'  "{src}" -> "{dst}" [label="{label}", fontsize=9];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _step_edges(steps: tuple[WorkflowStep, ...]) -> list[tuple[str, str, str]]:
    known = {s.id for s in steps}
    edges = []
    for step in steps:
        for port, source in step.input_bindings:
            if isinstance(source, StepOutput) and source.step_id in known:
                edges.append((source.step_id, step.id, port))
    return sorted(edges)


def _plan_dot(plan: ExecutablePlan) -> str:
    nodes = [
        (s.id, f"{s.id}\\n{s.capability_id}", s.id in plan.adapter_steps)
        for s in plan.steps
    ]
    return _dot_document(nodes, _step_edges(plan.steps), "plan")


def design_to_dot(design: WorkflowDesign) -> str:
    workflow = design.chosen
    nodes = [(s.id, f"{s.id}\\n{s.capability_id}", False) for s in workflow.steps]
    return _dot_document(nodes, _step_edges(workflow.steps), "design")


def graph_to_dot(graph) -> str:
    """DOT rendering of a stage-1 sub-problem dependency graph."""
    nodes = [
        (sp.id, f"{sp.id}\\n{sp.required_output.kind}", False) for sp in graph.sub_problems
    ]
    edges = sorted(
        (dep, sp.id, "") for sp in graph.sub_problems for dep in set(sp.depends_on)
    )
    return _dot_document(nodes, edges, "subproblems")


def _plan_markdown(plan: ExecutablePlan) -> str:
    lines = [
        "# Executable plan",
        "",
        f"- plan id: `{plan.plan_id}`",
        f"- steps: {len(plan.steps)} ({len(plan.adapter_steps)} adapter step(s))",
        f"- static confidence: {plan.confidence:.4f}",
        "",
        "## Steps",
        "",
        "| # | step | capability | role | inputs |",
        "|---|------|------------|------|--------|",
    ]
    for i, step in enumerate(plan.steps, start=1):
        role = "adapter" if step.id in plan.adapter_steps else "capability"
        inputs = ", ".join(
            f"{port}<-{_describe_source(src)}" for port, src in step.input_bindings
        ) or "-"
        lines.append(f"| {i} | {step.id} | {step.capability_id} | {role} | {inputs} |")
    lines += ["", "## Quality checks", ""]
    for check in plan.checks:
        lines.append(
            f"- `{check.id}` ({check.severity}) on `{check.target[0]}.{check.target[1]}`"
        )
    if not plan.checks:
        lines.append("- none")
    lines += ["", "## Outputs", ""]
    for step_id, port, kind in plan.outputs_manifest:
        lines.append(f"- `{step_id}.{port}` -> {kind}")
    if not plan.outputs_manifest:
        lines.append("- none")
    lines += ["", "## Execution result", "", "_pending execution_", ""]
    return "\n".join(lines)


def _describe_source(source: Source) -> str:
    if isinstance(source, StepOutput):
        return f"{source.step_id}.{source.port}"
    if isinstance(source, RunInput):
        return f"run:{source.name}"
    if isinstance(source, Param):
        return f"param:{source.value}"
    return "?"
