"""Stage 1: turn a query into a structured sub-problem graph.

The natural-language boundary lives in the planner backend, which reduces a
query to a closed QueryIntent record. Everything downstream of that record
is a pure function: the expansion rule table (docs/expansion_rules.md, rule
table version 1) maps an intent to sub-problems, dependencies, constraints,
success criteria, and risk notes, and feasibility is a reachability check
over the registry. Identical intents always yield byte-identical graphs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Mapping

from .errors import UnknownGoalKindError
from .jsonutil import parse_timestamp
from .registry import (
    CapabilityEntry,
    Constraint,
    DataKindSpec,
    Registry,
    reachable_kinds,
)

RULE_TABLE_VERSION = 1

ENTITY_TYPES = ("cable", "hazard_event", "region_pair", "none")
AGGREGATIONS = ("country", "asn", "cable", "none")
CLASSIFICATION_FLAGS = ("spatial", "temporal", "causal", "data_dependency")


@dataclass(frozen=True)
class Subject:
    entity_type: str
    identifiers: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {"entity_type": self.entity_type, "identifiers": list(self.identifiers)}


@dataclass(frozen=True)
class TimeWindow:
    start: str
    end: str

    def to_json(self) -> dict[str, str]:
        return {"start": self.start, "end": self.end}


@dataclass(frozen=True)
class Classification:
    spatial: bool = False
    temporal: bool = False
    causal: bool = False
    data_dependency: bool = False

    def to_json(self) -> dict[str, bool]:
        return {
            "spatial": self.spatial,
            "temporal": self.temporal,
            "causal": self.causal,
            "data_dependency": self.data_dependency,
        }


@dataclass(frozen=True)
class QueryIntent:
    goal_kind: str
    subject: Subject
    aggregation: str
    time_window: TimeWindow | None
    parameters: tuple[tuple[str, str], ...]
    classification: Classification

    @property
    def parameters_map(self) -> dict[str, str]:
        return dict(self.parameters)

    def to_json(self) -> dict[str, Any]:
        return {
            "goal_kind": self.goal_kind,
            "subject": self.subject.to_json(),
            "aggregation": self.aggregation,
            "time_window": self.time_window.to_json() if self.time_window else None,
            "parameters": self.parameters_map,
            "classification": self.classification.to_json(),
        }


def validate_intent_dict(raw: Any) -> tuple[QueryIntent | None, list[str]]:
    """Validate a raw backend payload against the QueryIntent schema.

    Returns (intent, errors): on any error the intent is None and the
    messages are precise enough to drive the backend repair loop.
    """
    errors: list[str] = []
    if not isinstance(raw, Mapping):
        return None, ["intent must be a JSON object"]
    allowed = {"goal_kind", "subject", "aggregation", "time_window", "parameters", "classification"}
    for key in raw:
        if key not in allowed:
            errors.append(f"unknown field {key!r}")

    goal_kind = raw.get("goal_kind")
    if not isinstance(goal_kind, str) or not goal_kind:
        errors.append("goal_kind must be a non-empty string")
        goal_kind = ""

    subject_raw = raw.get("subject") or {}
    entity_type = "none"
    identifiers: tuple[str, ...] = ()
    if not isinstance(subject_raw, Mapping):
        errors.append("subject must be an object")
    else:
        entity_type = subject_raw.get("entity_type", "none")
        if entity_type not in ENTITY_TYPES:
            errors.append(f"subject.entity_type must be one of {ENTITY_TYPES}")
            entity_type = "none"
        ids_raw = subject_raw.get("identifiers", [])
        if not isinstance(ids_raw, list) or any(not isinstance(i, str) for i in ids_raw):
            errors.append("subject.identifiers must be a list of strings")
        else:
            identifiers = tuple(ids_raw)

    aggregation = raw.get("aggregation", "none")
    if aggregation not in AGGREGATIONS:
        errors.append(f"aggregation must be one of {AGGREGATIONS}")
        aggregation = "none"

    window = None
    window_raw = raw.get("time_window")
    if window_raw is not None:
        if not isinstance(window_raw, Mapping) or set(window_raw) != {"start", "end"}:
            errors.append("time_window must be an object with start and end")
        else:
            try:
                start, end = window_raw["start"], window_raw["end"]
                if parse_timestamp(start) >= parse_timestamp(end):
                    errors.append("time_window.start must precede time_window.end")
                else:
                    window = TimeWindow(start=start, end=end)
            except (ValueError, TypeError):
                errors.append("time_window values must be ISO-8601 timestamps")

    params_raw = raw.get("parameters", {})
    parameters: tuple[tuple[str, str], ...] = ()
    if not isinstance(params_raw, Mapping) or any(
        not isinstance(k, str) or not isinstance(v, str) for k, v in params_raw.items()
    ):
        errors.append("parameters must map strings to strings")
    else:
        parameters = tuple(sorted(params_raw.items()))
        fp = params_raw.get("failure_probability")
        if fp is not None:
            try:
                value = Fraction(fp)
                if not (0 <= value <= 1):
                    errors.append("failure_probability must be within [0, 1]")
            except (ValueError, ZeroDivisionError):
                errors.append("failure_probability must parse as a rational number")

    cls_raw = raw.get("classification", {})
    flags = {}
    if not isinstance(cls_raw, Mapping):
        errors.append("classification must be an object of boolean flags")
    else:
        for flag in CLASSIFICATION_FLAGS:
            value = cls_raw.get(flag, False)
            if not isinstance(value, bool):
                errors.append(f"classification.{flag} must be a boolean")
                value = False
            flags[flag] = value
        for key in cls_raw:
            if key not in CLASSIFICATION_FLAGS:
                errors.append(f"classification has unknown flag {key!r}")

    if errors:
        return None, errors
    return (
        QueryIntent(
            goal_kind=goal_kind,
            subject=Subject(entity_type=entity_type, identifiers=identifiers),
            aggregation=aggregation,
            time_window=window,
            parameters=parameters,
            classification=Classification(**flags),
        ),
        [],
    )


@dataclass(frozen=True)
class SubProblem:
    id: str
    statement: str
    required_output: DataKindSpec
    depends_on: tuple[str, ...] = ()
    constraints: tuple[Constraint, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "statement": self.statement,
            "required_output": self.required_output.to_json(),
            "depends_on": list(self.depends_on),
            "constraints": [c.to_json() for c in self.constraints],
        }


@dataclass(frozen=True)
class SuccessCriterion:
    description: str
    check: tuple[tuple[str, str], ...]

    @property
    def check_map(self) -> dict[str, str]:
        return dict(self.check)

    def to_json(self) -> dict[str, Any]:
        return {"description": self.description, "check": self.check_map}

    @staticmethod
    def make(description: str, **check: str) -> "SuccessCriterion":
        return SuccessCriterion(description=description, check=tuple(sorted(check.items())))


@dataclass(frozen=True)
class SubProblemGraph:
    intent: QueryIntent
    sub_problems: tuple[SubProblem, ...]
    success_criteria: tuple[SuccessCriterion, ...]
    risks: tuple[str, ...]
    feasibility: tuple[tuple[str, Any], ...] = (("status", "unknown"),)

    @property
    def feasibility_map(self) -> dict[str, Any]:
        return dict(self.feasibility)

    @property
    def feasible(self) -> bool:
        return self.feasibility_map.get("status") == "feasible"

    def sub_problem(self, sp_id: str) -> SubProblem | None:
        return next((sp for sp in self.sub_problems if sp.id == sp_id), None)

    def terminal_id(self) -> str | None:
        """The sink sub-problem producing the intent's goal kind."""
        referenced = {dep for sp in self.sub_problems for dep in sp.depends_on}
        for sp in self.sub_problems:
            if sp.id not in referenced and sp.required_output.kind == self.intent.goal_kind:
                return sp.id
        return None

    def to_json(self) -> dict[str, Any]:
        return {
            "rule_table_version": RULE_TABLE_VERSION,
            "intent": self.intent.to_json(),
            "sub_problems": [sp.to_json() for sp in self.sub_problems],
            "success_criteria": [c.to_json() for c in self.success_criteria],
            "risks": list(self.risks),
            "feasibility": dict(self.feasibility),
        }


def graph_from_json(doc: Mapping[str, Any]) -> SubProblemGraph:
    intent, errors = validate_intent_dict(doc.get("intent"))
    if intent is None:
        raise ValueError(f"invalid intent in graph document: {errors}")
    sub_problems = []
    for raw in doc.get("sub_problems", []):
        ro = raw["required_output"]
        sub_problems.append(
            SubProblem(
                id=raw["id"],
                statement=raw.get("statement", ""),
                required_output=DataKindSpec(kind=ro["kind"], format=ro["format"], unit=ro.get("unit")),
                depends_on=tuple(raw.get("depends_on", [])),
                constraints=tuple(
                    Constraint.make(c["kind"], c.get("params", {})) for c in raw.get("constraints", [])
                ),
            )
        )
    criteria = [
        SuccessCriterion(description=c.get("description", ""), check=tuple(sorted(c.get("check", {}).items())))
        for c in doc.get("success_criteria", [])
    ]
    feas = doc.get("feasibility", {"status": "unknown"})
    return SubProblemGraph(
        intent=intent,
        sub_problems=tuple(sub_problems),
        success_criteria=tuple(criteria),
        risks=tuple(doc.get("risks", [])),
        feasibility=tuple(sorted(feas.items(), key=lambda kv: kv[0])) if isinstance(feas, Mapping) else (("status", "unknown"),),
    )


# --- shared planning context ----------------------------------------------------


def build_params_context(intent: QueryIntent) -> dict[str, str]:
    """Parameter values a planner may feed into capability params.

    Combines explicit intent parameters with values derived from the subject
    (region pairs bind region_a/region_b positionally).
    """
    ctx = dict(intent.parameters_map)
    if intent.subject.entity_type == "region_pair" and len(intent.subject.identifiers) >= 2:
        ctx.setdefault("region_a", intent.subject.identifiers[0])
        ctx.setdefault("region_b", intent.subject.identifiers[1])
    if intent.time_window is not None:
        ctx.setdefault("window_start", intent.time_window.start)
        ctx.setdefault("window_end", intent.time_window.end)
    return ctx


def derive_run_inputs_spec(intent: QueryIntent) -> dict[str, str]:
    """Run-input names and kinds a run with this intent will be given."""
    subject = intent.subject
    if subject.entity_type == "cable":
        return {"target_cables": "cable_id_set"}
    if subject.entity_type == "hazard_event":
        return {f"hazard_events_{t}": "hazard_event_set" for t in sorted(set(subject.identifiers))}
    return {}


def entry_covers_window(entry: CapabilityEntry, window: TimeWindow | None) -> bool:
    coverages = entry.constraint_params("temporal_coverage")
    if window is None or not coverages:
        return True
    ws, we = parse_timestamp(window.start), parse_timestamp(window.end)
    for cov in coverages:
        if parse_timestamp(cov["start"]) <= ws and we <= parse_timestamp(cov["end"]):
            return True
    return False


def resolve_step_params(entry: CapabilityEntry, params_ctx: Mapping[str, str]) -> dict[str, str] | None:
    """Fill an entry's declared params from context and defaults.

    Returns None when a required parameter has neither a context value nor a
    default, which makes the capability unusable for this intent.
    """
    resolved: dict[str, str] = {}
    for spec in entry.params:
        if spec.name in params_ctx:
            resolved[spec.name] = params_ctx[spec.name]
        elif spec.default is not None:
            resolved[spec.name] = spec.default
        elif spec.required:
            return None
    return resolved


def make_admissibility(intent: QueryIntent, params_ctx: Mapping[str, str]) -> Callable[[CapabilityEntry], bool]:
    def usable(entry: CapabilityEntry) -> bool:
        if not entry_covers_window(entry, intent.time_window):
            return False
        return resolve_step_params(entry, params_ctx) is not None

    return usable


def scoped_run_inputs(sp: SubProblem, run_inputs: Mapping[str, str]) -> dict[str, str]:
    """Run inputs visible to one sub-problem's fragment.

    data_availability constraints with a run_input param narrow visibility to
    the named inputs; otherwise every run input is visible.
    """
    named = [
        c.params_map["run_input"]
        for c in sp.constraints
        if c.kind == "data_availability" and "run_input" in c.params_map
    ]
    if not named:
        return dict(run_inputs)
    scoped = {}
    for name in named:
        if name in run_inputs:
            scoped[name] = run_inputs[name]
        else:
            for c in sp.constraints:
                pm = c.params_map
                if c.kind == "data_availability" and pm.get("run_input") == name and "kind" in pm:
                    scoped[name] = pm["kind"]
    return scoped


def framework_pin(sp: SubProblem) -> str | None:
    """Framework restriction for the capability producing this sub-problem's output."""
    for c in sp.constraints:
        if c.kind == "data_availability" and "source" in c.params_map:
            return c.params_map["source"]
    return None


# --- expansion rule table --------------------------------------------------------


def _kind_spec(registry: Registry, kind: str) -> DataKindSpec:
    for spec in sorted(registry.vocabulary):
        if spec.kind == kind:
            return spec
    raise UnknownGoalKindError(kind)


def expand_intent(intent: QueryIntent, registry: Registry) -> SubProblemGraph:
    """Apply the deterministic expansion rules (rule table version 1).

    Subject rules run first and build the acquisition chain, classification
    flags add their standard prerequisite sub-problems, and the goal kind
    closes the graph with a terminal sub-problem.
    """
    if intent.goal_kind not in registry.kinds:
        raise UnknownGoalKindError(intent.goal_kind)

    spec = lambda kind: _kind_spec(registry, kind)
    sps: list[SubProblem] = []
    chain_end: str | None = None

    subject = intent.subject
    if subject.entity_type == "cable":
        sps.append(
            SubProblem(
                id="resolve_cable_dependencies",
                statement="Resolve which IP links depend on the subject cables.",
                required_output=spec("ip_link_set"),
                constraints=(
                    Constraint.make("data_availability", {"run_input": "target_cables", "kind": "cable_id_set"}),
                ),
            )
        )
        chain_end = "resolve_cable_dependencies"
    elif subject.entity_type == "region_pair":
        regions = ",".join(subject.identifiers)
        sps.append(
            SubProblem(
                id="select_region_cables",
                statement="Select the cables connecting the subject regions.",
                required_output=spec("cable_id_set"),
                constraints=(Constraint.make("geographic_scope", {"regions": regions}),),
            )
        )
        sps.append(
            SubProblem(
                id="resolve_cable_dependencies",
                statement="Resolve which IP links depend on the selected cables.",
                required_output=spec("ip_link_set"),
                depends_on=("select_region_cables",),
            )
        )
        chain_end = "resolve_cable_dependencies"

    hazard_sps: list[str] = []
    if subject.entity_type == "hazard_event":
        for hazard_type in sorted(set(subject.identifiers)):
            sp_id = f"assess_{hazard_type}_impact"
            sps.append(
                SubProblem(
                    id=sp_id,
                    statement=f"Assess the expected per-country impact of {hazard_type} events.",
                    required_output=spec("impact_table"),
                    constraints=(
                        Constraint.make(
                            "data_availability",
                            {"run_input": f"hazard_events_{hazard_type}", "kind": "hazard_event_set"},
                        ),
                    ),
                )
            )
            hazard_sps.append(sp_id)

    if intent.classification.spatial and subject.entity_type in ("cable", "region_pair") and chain_end:
        sps.append(
            SubProblem(
                id="extract_affected_ips",
                statement="Extract the affected IP addresses from the dependent links.",
                required_output=spec("ip_set"),
                depends_on=(chain_end,),
            )
        )
        sps.append(
            SubProblem(
                id="map_geography",
                statement="Map affected addresses to countries.",
                required_output=spec("country_table"),
                depends_on=("extract_affected_ips",),
            )
        )
        chain_end = "map_geography"

    needs_anomaly = intent.classification.temporal or intent.goal_kind == "ranked_cable_table"
    if needs_anomaly:
        sps.append(
            SubProblem(
                id="acquire_latency_timeline",
                statement="Acquire the latency series for the affected window.",
                required_output=spec("latency_series"),
            )
        )
        sps.append(
            SubProblem(
                id="detect_anomaly",
                statement="Detect the onset and magnitude of the latency anomaly.",
                required_output=spec("anomaly_report"),
                depends_on=("acquire_latency_timeline",),
                constraints=(Constraint.make("data_availability", {"source": "tracelens"}),),
            )
        )

    if intent.classification.causal:
        sps.append(
            SubProblem(
                id="validate_routing_evidence",
                statement="Independently validate the event window against routing-change evidence.",
                required_output=spec("anomaly_report"),
                constraints=(Constraint.make("data_availability", {"source": "bgpwatch"}),),
            )
        )

    # Terminal rule per goal kind.
    if intent.goal_kind == "impact_table" and hazard_sps:
        sps.append(
            SubProblem(
                id="combine_hazard_impacts",
                statement="Combine the per-hazard impact tables into one global table.",
                required_output=spec("impact_table"),
                depends_on=tuple(hazard_sps),
            )
        )
        terminal = "combine_hazard_impacts"
    elif intent.goal_kind == "impact_table":
        name = f"aggregate_{intent.aggregation}_impact" if intent.aggregation != "none" else "produce_impact_table"
        sps.append(
            SubProblem(
                id=name,
                statement=f"Aggregate affected items into {intent.aggregation}-level impact fractions."
                if intent.aggregation != "none"
                else "Produce the impact table.",
                required_output=spec("impact_table"),
                depends_on=(chain_end,) if chain_end else (),
            )
        )
        terminal = name
    elif intent.goal_kind == "cascade_timeline":
        sps.append(
            SubProblem(
                id="assess_baseline_impact",
                statement="Assess the first-order impact caused by the subject failures.",
                required_output=spec("impact_table"),
                depends_on=(chain_end,) if chain_end else (),
            )
        )
        sps.append(
            SubProblem(
                id="trace_cascade_propagation",
                statement="Propagate failures through the dependency layers to a fixpoint timeline.",
                required_output=spec("cascade_timeline"),
                depends_on=("assess_baseline_impact",),
            )
        )
        terminal = "trace_cascade_propagation"
    elif intent.goal_kind == "ranked_cable_table":
        rank_deps = ["detect_anomaly"]
        if chain_end:
            rank_deps.append(chain_end)
        sps.append(
            SubProblem(
                id="rank_suspect_cables",
                statement="Rank candidate cables by likelihood of causing the anomaly.",
                required_output=spec("ranked_cable_table"),
                depends_on=tuple(rank_deps),
            )
        )
        terminal = "rank_suspect_cables"
    else:
        sps.append(
            SubProblem(
                id=f"produce_{intent.goal_kind}",
                statement=f"Produce the {intent.goal_kind} answering the query.",
                required_output=spec(intent.goal_kind),
                depends_on=(chain_end,) if chain_end else (),
            )
        )
        terminal = f"produce_{intent.goal_kind}"

    criteria = [
        SuccessCriterion.make(
            "The terminal output must contain at least one row or point.",
            type="output_nonempty",
            sub_problem=terminal,
        )
    ]
    if any(sp.id == "validate_routing_evidence" for sp in sps):
        criteria.append(
            SuccessCriterion.make(
                "Independent routing evidence must be materialized for review.",
                type="output_present",
                sub_problem="validate_routing_evidence",
            )
        )
    fp = intent.parameters_map.get("failure_probability")
    if fp is not None:
        criteria.append(
            SuccessCriterion.make(
                "Impact fractions stay within the unit interval.",
                type="threshold",
                kind="impact_table",
                op="<=",
                value="1",
            )
        )

    risks = ["Methodological limitations are recorded for expert review and do not gate execution."]
    if intent.classification.causal:
        risks.append("Causal attribution rests on temporal correlation; treat confirmations as advisory.")
    if intent.classification.temporal:
        risks.append("Findings are bounded by the temporal coverage of the underlying measurements.")
    if intent.subject.entity_type == "region_pair":
        risks.append("Region scoping depends on the landing-country mapping of each cable.")

    return SubProblemGraph(
        intent=intent,
        sub_problems=tuple(sps),
        success_criteria=tuple(criteria),
        risks=tuple(risks),
    )


def topological_sub_problems(graph: SubProblemGraph) -> list[SubProblem]:
    """Kahn's algorithm with lexicographic tie-breaking; raises on cycles."""
    by_id = {sp.id: sp for sp in graph.sub_problems}
    for sp in graph.sub_problems:
        for dep in sp.depends_on:
            if dep not in by_id:
                raise ValueError(f"sub-problem {sp.id!r} depends on unknown {dep!r}")
    indegree = {sp.id: len(set(sp.depends_on)) for sp in graph.sub_problems}
    consumers: dict[str, list[str]] = {sp.id: [] for sp in graph.sub_problems}
    for sp in graph.sub_problems:
        for dep in set(sp.depends_on):
            consumers[dep].append(sp.id)
    ready = sorted(sp_id for sp_id, deg in indegree.items() if deg == 0)
    order: list[SubProblem] = []
    while ready:
        current = ready.pop(0)
        order.append(by_id[current])
        changed = False
        for nxt in consumers[current]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                ready.append(nxt)
                changed = True
        if changed:
            ready.sort()
    if len(order) != len(graph.sub_problems):
        stuck = sorted(sp_id for sp_id, deg in indegree.items() if deg > 0)
        raise ValueError(f"sub-problem dependencies contain a cycle among {stuck}")
    return order


# --- operations -------------------------------------------------------------------


def assess_feasibility(graph: SubProblemGraph, registry: Registry) -> SubProblemGraph:
    """Mark the graph feasible or list the unreachable output kinds.

    A sub-problem is reachable when its required output kind lies in the
    forward closure of its scoped run inputs, its (feasible) dependencies'
    outputs, and the registry's admissible source capabilities.
    """
    intent = graph.intent
    params_ctx = build_params_context(intent)
    usable = make_admissibility(intent, params_ctx)
    run_inputs = derive_run_inputs_spec(intent)

    feasible_outputs: dict[str, str] = {}
    missing: list[str] = []
    for sp in topological_sub_problems(graph):
        base = set(scoped_run_inputs(sp, run_inputs).values())
        deps_ok = True
        for dep in set(sp.depends_on):
            if dep in feasible_outputs:
                base.add(feasible_outputs[dep])
            else:
                deps_ok = False
        reach = reachable_kinds(registry, base, usable)
        ok = deps_ok and sp.required_output.kind in reach
        pin = framework_pin(sp)
        if ok and pin:
            ok = any(
                entry.framework == pin
                and usable(entry)
                and any(p.data.kind == sp.required_output.kind for p in entry.outputs)
                and all(p.data.kind in reach for p in entry.inputs if p.required)
                for entry in registry.sorted_entries()
            )
        if ok:
            feasible_outputs[sp.id] = sp.required_output.kind
        else:
            missing.append(sp.required_output.kind)

    if missing:
        feas: tuple[tuple[str, Any], ...] = (
            ("missing_kinds", sorted(set(missing))),
            ("status", "infeasible"),
        )
    else:
        feas = (("status", "feasible"),)
    return replace(graph, feasibility=feas)


def analyze(query: str, registry: Registry, backend) -> SubProblemGraph:
    """Full stage-1 operation: backend intent, expansion, feasibility."""
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    intent = backend.propose_intent(query, registry)
    if intent.goal_kind not in registry.kinds:
        raise UnknownGoalKindError(intent.goal_kind)
    graph = expand_intent(intent, registry)
    return assess_feasibility(graph, registry)
