"""Plan execution: tool adapters, data values, quality checks, tracing.

Steps run in data-flow order (optionally in parallel for independent
branches); fixture adapters are pure, so any legal schedule produces the
same outputs. Every step output is content-addressed by the digest of its
(data, payload) pair, which is what makes curator replay validation and
crash-resume comparisons exact. Timeline timestamps come from an injected
clock and are excluded from all digests.

An error-severity check failure aborts every step downstream of the failing
step (fail-fast); warn failures are recorded and execution continues.
"""

from __future__ import annotations

import statistics
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Protocol, Sequence

from .errors import (
    AdapterMismatchError,
    MissingAdapterError,
    MissingRunInputError,
    ToolError,
)
from .jsonutil import digest_of, epoch_seconds
from .registry import CapabilityEntry, DataKindSpec, Registry, Translation
from .solutionweaver import ADAPTER_IN_PORT, ADAPTER_OUT_PORT, ExecutablePlan, QualityCheck
from .workflowscout import Param, RunInput, StepOutput, WorkflowStep

LOSSY_CONFIDENCE_FACTOR = 0.95
WARN_FAILURE_CONFIDENCE_FACTOR = 0.9


@dataclass(frozen=True)
class DataValue:
    data: DataKindSpec
    payload: Any
    provenance: str
    confidence: float = 1.0

    def content_digest(self) -> str:
        # Provenance and confidence are run-dependent; identity is the data.
        return digest_of({"data": self.data.to_json(), "payload": self.payload})

    def to_json(self) -> dict[str, Any]:
        return {
            "data": self.data.to_json(),
            "payload": self.payload,
            "provenance": self.provenance,
            "confidence": self.confidence,
        }

    @staticmethod
    def from_json(raw: Mapping[str, Any]) -> "DataValue":
        d = raw["data"]
        return DataValue(
            data=DataKindSpec(kind=d["kind"], format=d["format"], unit=d.get("unit")),
            payload=raw["payload"],
            provenance=raw.get("provenance", ""),
            confidence=float(raw.get("confidence", 1.0)),
        )


class ToolAdapter(Protocol):
    def supported_capabilities(self) -> set[str]: ...

    def invoke(
        self, capability_id: str, inputs: Mapping[str, DataValue], params: Mapping[str, str]
    ) -> dict[str, DataValue]: ...


class AdapterSet:
    def __init__(self, adapters: Sequence[ToolAdapter]):
        self.adapters = list(adapters)

    def find(self, capability_id: str) -> ToolAdapter | None:
        for adapter in self.adapters:
            if capability_id in adapter.supported_capabilities():
                return adapter
        return None


class BlobStore(Protocol):
    def put(self, digest: str, document: Mapping[str, Any]) -> None: ...

    def get(self, digest: str) -> Mapping[str, Any] | None: ...


class MemoryBlobStore:
    def __init__(self):
        self.blobs: dict[str, Any] = {}

    def put(self, digest: str, document: Mapping[str, Any]) -> None:
        self.blobs.setdefault(digest, document)

    def get(self, digest: str) -> Mapping[str, Any] | None:
        return self.blobs.get(digest)


# --- quality checks ------------------------------------------------------------


def _schema_ok(payload: Any, fmt: str) -> tuple[bool, str]:
    if fmt == "table":
        if not isinstance(payload, list) or any(not isinstance(r, Mapping) for r in payload):
            return False, "table payload must be a list of records"
        keys = {tuple(sorted(r.keys())) for r in payload}
        if len(keys) > 1:
            return False, "table records must share one key set"
        return True, ""
    if fmt == "series":
        if not isinstance(payload, list):
            return False, "series payload must be a list of (timestamp, value) pairs"
        for point in payload:
            if not (isinstance(point, (list, tuple)) and len(point) == 2 and isinstance(point[1], (int, float))):
                return False, "series points must be (timestamp, number) pairs"
        return True, ""
    if fmt == "scalar":
        if not isinstance(payload, (int, float)):
            return False, "scalar payload must be a number"
        return True, ""
    if fmt == "graph":
        if not isinstance(payload, Mapping) or "nodes" not in payload or "edges" not in payload:
            return False, "graph payload must carry nodes and edges"
        return True, ""
    return False, f"unknown format {fmt!r}"


def _numeric_values(value: DataValue):
    fmt = value.data.format
    if fmt == "scalar":
        yield payload_label(value), value.payload
    elif fmt == "series":
        for ts, v in value.payload:
            yield str(ts), v
    elif fmt == "table":
        for i, row in enumerate(value.payload):
            for key in sorted(row):
                if isinstance(row[key], (int, float)) and not isinstance(row[key], bool):
                    yield f"row {i} {key}", row[key]


def payload_label(value: DataValue) -> str:
    return value.data.kind


def _nonempty(value: DataValue) -> bool:
    fmt = value.data.format
    if fmt in ("table", "series"):
        return len(value.payload) > 0
    if fmt == "scalar":
        return value.payload is not None
    if fmt == "graph":
        return len(value.payload.get("nodes", [])) > 0
    return False


def consistency_aggregate(value: DataValue) -> float | None:
    """Single comparable number for cross-source agreement checks.

    Anomaly reports compare by onset epoch; tables by the sum of their first
    numeric column (row count when none); series by their mean; scalars by
    value; graphs by node count.
    """
    fmt = value.data.format
    if value.data.kind == "anomaly_report":
        if not value.payload:
            return None
        return epoch_seconds(value.payload[0]["onset_timestamp"])
    if fmt == "scalar":
        return float(value.payload)
    if fmt == "series":
        if not value.payload:
            return None
        return statistics.fmean(v for _, v in value.payload)
    if fmt == "table":
        if not value.payload:
            return None
        first = value.payload[0]
        for key in sorted(first):
            if isinstance(first[key], (int, float)) and not isinstance(first[key], bool):
                return float(sum(row.get(key, 0) for row in value.payload))
        return float(len(value.payload))
    if fmt == "graph":
        return float(len(value.payload.get("nodes", [])))
    return None


@dataclass(frozen=True)
class CheckOutcome:
    check_id: str
    outcome: str  # "pass" | "fail"
    value: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {"check_id": self.check_id, "outcome": self.outcome, "value": self.value}


def evaluate_check(check: QualityCheck, outputs: Mapping[tuple[str, str], DataValue]) -> CheckOutcome:
    """Evaluate one quality check against materialized outputs."""
    value = outputs.get(check.target)
    if value is None:
        return CheckOutcome(check.id, "fail", "target output missing")
    params = check.params_map

    if check.kind == "schema":
        ok, why = _schema_ok(value.payload, params.get("format", value.data.format))
        return CheckOutcome(check.id, "pass" if ok else "fail", why or None)

    if check.kind == "nonempty":
        ok = _nonempty(value)
        return CheckOutcome(check.id, "pass" if ok else "fail", None if ok else "output is empty")

    if check.kind == "range":
        lo, hi = float(params["min"]), float(params["max"])
        for label, number in _numeric_values(value):
            if not (lo <= number <= hi):
                return CheckOutcome(check.id, "fail", f"{label} = {number} outside [{lo}, {hi}]")
        return CheckOutcome(check.id, "pass", None)

    if check.kind == "cross_source_consistency":
        other = outputs.get((params["other_step"], params["other_port"]))
        if other is None:
            return CheckOutcome(check.id, "fail", "comparison output missing")
        a, b = consistency_aggregate(value), consistency_aggregate(other)
        if a is None or b is None:
            return CheckOutcome(check.id, "fail", "aggregate unavailable on one side")
        tolerance = float(params.get("tolerance", 0.05))
        if params.get("mode", "relative") == "absolute":
            ok = abs(a - b) <= tolerance
            return CheckOutcome(check.id, "pass" if ok else "fail", f"|{a} - {b}| vs {tolerance}")
        scale = max(abs(a), abs(b))
        ok = (a == b) if scale == 0 else abs(a - b) / scale <= tolerance
        return CheckOutcome(check.id, "pass" if ok else "fail", f"rel diff of {a} and {b} vs {tolerance}")

    return CheckOutcome(check.id, "fail", f"unknown check kind {check.kind!r}")


# --- translation ----------------------------------------------------------------


def translate(value: DataValue, translation: Translation, adapters: AdapterSet) -> DataValue:
    """Apply one registered translation through its adapter.

    Confidence is preserved for lossless translations and multiplied by 0.95
    for lossy ones.
    """
    adapter = adapters.find(translation.adapter_id)
    if adapter is None:
        raise MissingAdapterError(translation.adapter_id)
    produced = adapter.invoke(translation.adapter_id, {ADAPTER_IN_PORT: value}, {})
    out = produced.get(ADAPTER_OUT_PORT)
    if out is None or out.data != translation.to_spec:
        got = out.data.kind if out is not None else "nothing"
        raise AdapterMismatchError(translation.to_spec.kind, got)
    confidence = value.confidence * (LOSSY_CONFIDENCE_FACTOR if translation.lossy else 1.0)
    return DataValue(data=out.data, payload=out.payload, provenance=value.provenance, confidence=confidence)


# --- execution -------------------------------------------------------------------


@dataclass(frozen=True)
class ExecutionResult:
    status: tuple[tuple[str, str], ...]
    step_outputs: tuple[tuple[str, str, str], ...]  # (step_id, port, digest)
    quality: tuple[CheckOutcome, ...]
    timeline: tuple[tuple[str, float, float], ...]
    plan_confidence_posterior: float
    plan_id: str = ""

    @property
    def status_map(self) -> dict[str, str]:
        return dict(self.status)

    @property
    def success(self) -> bool:
        return self.status_map.get("state") == "success"

    def output_digest(self, step_id: str, port: str) -> str | None:
        return next((d for s, p, d in self.step_outputs if s == step_id and p == port), None)

    def result_digest(self) -> str:
        # Timeline timestamps deliberately excluded.
        return digest_of(
            {
                "status": dict(self.status),
                "step_outputs": [list(t) for t in self.step_outputs],
                "quality": [q.to_json() for q in self.quality],
            }
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "status": dict(self.status),
            "step_outputs": [list(t) for t in self.step_outputs],
            "quality": [q.to_json() for q in self.quality],
            "timeline": [list(t) for t in self.timeline],
            "plan_confidence_posterior": self.plan_confidence_posterior,
            "plan_id": self.plan_id,
            "result_digest": self.result_digest(),
        }

    @staticmethod
    def from_json(raw: Mapping[str, Any]) -> "ExecutionResult":
        return ExecutionResult(
            status=tuple(sorted(raw["status"].items())),
            step_outputs=tuple((t[0], t[1], t[2]) for t in raw.get("step_outputs", [])),
            quality=tuple(
                CheckOutcome(q["check_id"], q["outcome"], q.get("value")) for q in raw.get("quality", [])
            ),
            timeline=tuple((t[0], t[1], t[2]) for t in raw.get("timeline", [])),
            plan_confidence_posterior=float(raw.get("plan_confidence_posterior", 1.0)),
            plan_id=raw.get("plan_id", ""),
        )


class FixedClock:
    """Deterministic monotonic clock for reproducible runs."""

    def __init__(self, start: float = 0.0, step: float = 1.0):
        self.value = start
        self.step = step

    def __call__(self) -> float:
        current = self.value
        self.value += self.step
        return current


def _supports(capability_id: str, adapters: AdapterSet, registry: Registry, seen: frozenset[str] = frozenset()) -> bool:
    if adapters.find(capability_id) is not None:
        return True
    entry = registry.entry(capability_id)
    if entry is not None and entry.composite_of is not None and capability_id not in seen:
        return all(
            _supports(member, adapters, registry, seen | {capability_id})
            for member in entry.composite_of.chain
        )
    if registry.translation(capability_id) is not None:
        return adapters.find(capability_id) is not None
    return False


def _invoke_composite(
    entry: CapabilityEntry,
    inputs: Mapping[str, DataValue],
    params: Mapping[str, str],
    adapters: AdapterSet,
    registry: Registry,
) -> dict[str, DataValue]:
    """Expand a curated composite into its member chain, inline."""
    composite = entry.composite_of
    member_outputs: list[dict[str, DataValue]] = []
    for index, member_id in enumerate(composite.chain):
        member = registry.entry(member_id)
        bindings = dict(composite.bindings[index])
        member_inputs: dict[str, DataValue] = {}
        for port in member.inputs:
            if not port.required and port.name not in bindings:
                continue
            ref = bindings.get(port.name)
            if ref is None:
                raise ToolError(f"composite {entry.id} leaves {member_id}.{port.name} unbound")
            if ref.startswith("chain:"):
                _, idx, out_port = ref.split(":", 2)
                member_inputs[port.name] = member_outputs[int(idx)][out_port]
            elif ref.startswith("external:"):
                name = ref.split(":", 1)[1]
                member_inputs[port.name] = inputs[name]
            else:
                raise ToolError(f"composite {entry.id} has malformed binding {ref!r}")
        member_outputs.append(_invoke_capability(member, member_inputs, params, adapters, registry))
    return member_outputs[-1]


def _invoke_capability(
    entry: CapabilityEntry,
    inputs: Mapping[str, DataValue],
    params: Mapping[str, str],
    adapters: AdapterSet,
    registry: Registry,
) -> dict[str, DataValue]:
    if entry.composite_of is not None:
        return _invoke_composite(entry, inputs, params, adapters, registry)
    adapter = adapters.find(entry.id)
    if adapter is None:
        raise MissingAdapterError(entry.id)
    produced = adapter.invoke(entry.id, inputs, params)
    for port in entry.outputs:
        out = produced.get(port.name)
        if out is None:
            raise AdapterMismatchError(port.data.kind, "nothing")
        if out.data.kind != port.data.kind:
            raise AdapterMismatchError(port.data.kind, out.data.kind)
    return produced


def execute(
    plan: ExecutablePlan,
    adapters: AdapterSet,
    run_inputs: Mapping[str, DataValue],
    registry: Registry,
    blob_store: BlobStore | None = None,
    clock: Callable[[], float] | None = None,
    on_step: Callable[[str], None] | None = None,
    parallel: bool = False,
) -> ExecutionResult:
    """Run a plan to completion or first error-severity failure.

    on_step fires before each step executes (test hook for crash injection).
    The returned result is identical for serial and parallel schedules apart
    from timeline timestamps, which never enter digests.
    """
    blob_store = blob_store if blob_store is not None else MemoryBlobStore()
    clock = clock or time.monotonic

    # Pre-flight: adapters and run inputs, before any step runs.
    for step in plan.steps:
        if plan.is_adapter(step.id):
            translation = registry.translation(step.capability_id)
            if translation is None or adapters.find(step.capability_id) is None:
                raise MissingAdapterError(step.capability_id)
        elif not _supports(step.capability_id, adapters, registry):
            raise MissingAdapterError(step.capability_id)
        for _, source in step.input_bindings:
            if isinstance(source, RunInput) and source.name not in run_inputs:
                raise MissingRunInputError(source.name)

    by_id = {s.id: s for s in plan.steps}
    dependents: dict[str, set[str]] = {s.id: set() for s in plan.steps}
    dependencies: dict[str, set[str]] = {s.id: set() for s in plan.steps}
    for step in plan.steps:
        for _, source in step.input_bindings:
            if isinstance(source, StepOutput) and source.step_id in by_id:
                dependents[source.step_id].add(step.id)
                dependencies[step.id].add(source.step_id)

    checks_by_step: dict[str, list[QualityCheck]] = {s.id: [] for s in plan.steps}
    deferred_checks: list[QualityCheck] = []
    for check in plan.checks:
        if check.kind == "cross_source_consistency":
            deferred_checks.append(check)
        else:
            checks_by_step[check.target[0]].append(check)

    outputs: dict[tuple[str, str], DataValue] = {}
    outcomes: dict[str, CheckOutcome] = {}
    failures: dict[str, str] = {}
    skipped: set[str] = set()
    timeline: dict[str, tuple[float, float]] = {}

    def downstream(step_id: str) -> set[str]:
        found: set[str] = set()
        frontier = [step_id]
        while frontier:
            current = frontier.pop()
            for nxt in dependents[current]:
                if nxt not in found:
                    found.add(nxt)
                    frontier.append(nxt)
        return found

    def resolve_inputs(step: WorkflowStep) -> dict[str, DataValue]:
        resolved: dict[str, DataValue] = {}
        entry = None if plan.is_adapter(step.id) else registry.entry(step.capability_id)
        for port, source in step.input_bindings:
            if isinstance(source, StepOutput):
                resolved[port] = outputs[(source.step_id, source.port)]
            elif isinstance(source, RunInput):
                resolved[port] = run_inputs[source.name]
            elif isinstance(source, Param):
                spec = None
                if entry is not None:
                    port_spec = entry.input_port(port)
                    spec = port_spec.data if port_spec else None
                resolved[port] = DataValue(
                    data=spec or DataKindSpec(kind="scalar_literal", format="scalar"),
                    payload=_parse_literal(source.value),
                    provenance=f"param:{port}",
                )
        return resolved

    def run_step(step: WorkflowStep) -> None:
        if on_step is not None:
            on_step(step.id)
        started = clock()
        try:
            resolved = resolve_inputs(step)
            if plan.is_adapter(step.id):
                translation = registry.translation(step.capability_id)
                value = translate(resolved[ADAPTER_IN_PORT], translation, adapters)
                produced = {ADAPTER_OUT_PORT: DataValue(value.data, value.payload, step.id, value.confidence)}
            else:
                entry = registry.entry(step.capability_id)
                raw = _invoke_capability(entry, resolved, step.params_map, adapters, registry)
                incoming = min((v.confidence for v in resolved.values()), default=1.0)
                produced = {
                    name: DataValue(v.data, v.payload, step.id, incoming * entry.reliability)
                    for name, v in raw.items()
                }
            for name, value in produced.items():
                outputs[(step.id, name)] = value
                blob_store.put(value.content_digest(), value.to_json())
        except ToolError as exc:
            failures[step.id] = str(exc)
            skipped.update(downstream(step.id))
            timeline[step.id] = (started, clock())
            return
        timeline[step.id] = (started, clock())
        for check in checks_by_step[step.id]:
            outcome = evaluate_check(check, outputs)
            outcomes[check.id] = outcome
            if outcome.outcome == "fail" and check.severity == "error":
                failures.setdefault(step.id, f"quality check {check.id} failed: {outcome.value}")
                skipped.update(downstream(step.id))

    if parallel:
        _run_parallel(plan, dependencies, failures, skipped, run_step)
    else:
        for step in plan.steps:
            if step.id in skipped:
                continue
            run_step(step)

    for check in deferred_checks:
        if check.id not in outcomes:
            both = check.target in outputs and (
                (check.params_map["other_step"], check.params_map["other_port"]) in outputs
            )
            if both:
                outcomes[check.id] = evaluate_check(check, outputs)

    ordered_outcomes = tuple(outcomes[c.id] for c in plan.checks if c.id in outcomes)
    first_failure = next((s.id for s in plan.steps if s.id in failures), None)
    if first_failure is None:
        status = (("state", "success"),)
    else:
        status = (("reason", failures[first_failure]), ("state", "failed"), ("step_id", first_failure))

    step_outputs = tuple(
        sorted((step_id, port, value.content_digest()) for (step_id, port), value in outputs.items())
    )

    warn_failures = sum(
        1
        for c in plan.checks
        if c.severity == "warn" and outcomes.get(c.id) is not None and outcomes[c.id].outcome == "fail"
    )
    terminal_confidences = [
        outputs[(s, p)].confidence for s, p, _ in plan.outputs_manifest if (s, p) in outputs
    ]
    posterior = min(terminal_confidences, default=plan.confidence)
    posterior *= WARN_FAILURE_CONFIDENCE_FACTOR ** warn_failures

    return ExecutionResult(
        status=status,
        step_outputs=step_outputs,
        quality=ordered_outcomes,
        timeline=tuple((sid, timeline[sid][0], timeline[sid][1]) for sid in (s.id for s in plan.steps) if sid in timeline),
        plan_confidence_posterior=posterior,
        plan_id=plan.plan_id,
    )


def _run_parallel(plan, dependencies, failures, skipped, run_step) -> None:
    by_id = {s.id: s for s in plan.steps}
    deps = {sid: set(d) for sid, d in dependencies.items()}
    done: set[str] = set()
    futures: dict[str, Any] = {}
    with ThreadPoolExecutor(max_workers=4) as pool:
        while True:
            for sid in sorted(deps):
                if sid in done or sid in skipped or sid in futures:
                    continue
                if deps[sid] <= done:
                    futures[sid] = pool.submit(run_step, by_id[sid])
            if not futures:
                break
            finished, _ = wait(list(futures.values()), return_when=FIRST_COMPLETED)
            for sid in [s for s, f in list(futures.items()) if f in finished]:
                futures.pop(sid).result()
                done.add(sid)


def _parse_literal(text: str) -> Any:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text
