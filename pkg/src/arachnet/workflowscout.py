"""Stage 2: search the registry for capability compositions.

Planning is uniform-cost backward chaining over a frontier of unsatisfied
data kinds. An action either binds a capability (cost = its cost_hint) or a
registered translation (cost = the translation's cost, 0.5 by default).
Ties break on fewer capability steps, then the lexicographically smallest
sorted capability-id sequence, then the adapter-id sequence, so planning is
a pure function of (graph, registry, budget).

Exploration is adaptive: when one framework can satisfy every sub-problem
and the graph is small, the optimal plan is returned alone (direct mode);
otherwise the k cheapest distinct candidates are compared and the rest kept
as scored alternatives.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .errors import ArachnetError, NoPlanError
from .jsonutil import canonical_dumps
from .querymind import (
    SubProblem,
    SubProblemGraph,
    build_params_context,
    derive_run_inputs_spec,
    framework_pin,
    make_admissibility,
    resolve_step_params,
    scoped_run_inputs,
    topological_sub_problems,
)
from .registry import (
    CapabilityEntry,
    CompatibilityResult,
    DataKindSpec,
    Registry,
    Translation,
    check_compatibility,
    reachable_kinds,
)

# --- sources and steps ----------------------------------------------------------


@dataclass(frozen=True)
class StepOutput:
    step_id: str
    port: str

    def to_json(self) -> dict[str, str]:
        return {"type": "step_output", "step_id": self.step_id, "port": self.port}


@dataclass(frozen=True)
class RunInput:
    name: str

    def to_json(self) -> dict[str, str]:
        return {"type": "run_input", "name": self.name}


@dataclass(frozen=True)
class Param:
    value: str

    def to_json(self) -> dict[str, str]:
        return {"type": "param", "value": self.value}


Source = StepOutput | RunInput | Param


def source_from_json(raw: Mapping[str, Any]) -> Source:
    t = raw.get("type")
    if t == "step_output":
        return StepOutput(step_id=raw["step_id"], port=raw["port"])
    if t == "run_input":
        return RunInput(name=raw["name"])
    if t == "param":
        return Param(value=raw["value"])
    raise ValueError(f"unknown source type {t!r}")


@dataclass(frozen=True)
class WorkflowStep:
    id: str
    capability_id: str
    input_bindings: tuple[tuple[str, Source], ...] = ()
    params: tuple[tuple[str, str], ...] = ()

    @property
    def bindings_map(self) -> dict[str, Source]:
        return dict(self.input_bindings)

    @property
    def params_map(self) -> dict[str, str]:
        return dict(self.params)

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "capability_id": self.capability_id,
            "input_bindings": {port: src.to_json() for port, src in self.input_bindings},
            "params": self.params_map,
        }

    @staticmethod
    def from_json(raw: Mapping[str, Any]) -> "WorkflowStep":
        return WorkflowStep(
            id=raw["id"],
            capability_id=raw["capability_id"],
            input_bindings=tuple(
                sorted((port, source_from_json(src)) for port, src in raw.get("input_bindings", {}).items())
            ),
            params=tuple(sorted(raw.get("params", {}).items())),
        )

    @staticmethod
    def make(step_id: str, capability_id: str, bindings: Mapping[str, Source], params: Mapping[str, str]) -> "WorkflowStep":
        return WorkflowStep(
            id=step_id,
            capability_id=capability_id,
            input_bindings=tuple(sorted(bindings.items())),
            params=tuple(sorted(params.items())),
        )


@dataclass(frozen=True)
class TradeoffScore:
    data_requirements: int
    compute_cost: float
    reliability: float

    def rank_key(self) -> tuple[float, float, int]:
        return (self.compute_cost, -self.reliability, self.data_requirements)

    def to_json(self) -> dict[str, Any]:
        return {
            "data_requirements": self.data_requirements,
            "compute_cost": self.compute_cost,
            "reliability": self.reliability,
        }


@dataclass(frozen=True)
class CandidateWorkflow:
    steps: tuple[WorkflowStep, ...]
    score: TradeoffScore
    goal_sources: tuple[tuple[str, Source], ...] = ()
    run_input_kinds: tuple[tuple[str, DataKindSpec], ...] = ()

    @property
    def goal_sources_map(self) -> dict[str, Source]:
        return dict(self.goal_sources)

    @property
    def run_input_kinds_map(self) -> dict[str, DataKindSpec]:
        return dict(self.run_input_kinds)

    def capability_multiset(self) -> tuple[str, ...]:
        return tuple(sorted(step.capability_id for step in self.steps))

    def step(self, step_id: str) -> WorkflowStep | None:
        return next((s for s in self.steps if s.id == step_id), None)

    def to_json(self) -> dict[str, Any]:
        return {
            "steps": [s.to_json() for s in self.steps],
            "score": self.score.to_json(),
            "goal_sources": {sp: src.to_json() for sp, src in self.goal_sources},
            "run_input_kinds": {name: spec.to_json() for name, spec in self.run_input_kinds},
        }

    @staticmethod
    def from_json(raw: Mapping[str, Any]) -> "CandidateWorkflow":
        score = raw.get("score", {})
        return CandidateWorkflow(
            steps=tuple(WorkflowStep.from_json(s) for s in raw.get("steps", [])),
            score=TradeoffScore(
                data_requirements=score.get("data_requirements", 0),
                compute_cost=score.get("compute_cost", 0.0),
                reliability=score.get("reliability", 1.0),
            ),
            goal_sources=tuple(
                sorted((sp, source_from_json(src)) for sp, src in raw.get("goal_sources", {}).items())
            ),
            run_input_kinds=tuple(
                sorted(
                    (name, DataKindSpec(kind=s["kind"], format=s["format"], unit=s.get("unit")))
                    for name, s in raw.get("run_input_kinds", {}).items()
                )
            ),
        )


@dataclass(frozen=True)
class WorkflowDesign:
    chosen: CandidateWorkflow
    alternatives: tuple[CandidateWorkflow, ...]
    rationale: str
    exploration_mode: str

    def to_json(self) -> dict[str, Any]:
        return {
            "chosen": self.chosen.to_json(),
            "alternatives": [c.to_json() for c in self.alternatives],
            "rationale": self.rationale,
            "exploration_mode": self.exploration_mode,
        }

    @staticmethod
    def from_json(raw: Mapping[str, Any]) -> "WorkflowDesign":
        return WorkflowDesign(
            chosen=CandidateWorkflow.from_json(raw["chosen"]),
            alternatives=tuple(CandidateWorkflow.from_json(c) for c in raw.get("alternatives", [])),
            rationale=raw.get("rationale", ""),
            exploration_mode=raw.get("exploration_mode", "direct"),
        )


@dataclass(frozen=True)
class ExplorationBudget:
    k: int = 3
    max_fragment_plans: int = 3
    max_actions: int = 8
    direct_max_subproblems: int = 4
    product_limit: int = 512


# --- abstract fragment search -----------------------------------------------------


@dataclass(frozen=True)
class _Fragment:
    """Abstract solution for one goal kind: an ordered, applicable action list."""

    goal_kind: str
    actions: tuple[tuple[str, str], ...]  # ("cap"|"trans", id) in application order
    cap_ids: tuple[str, ...]  # sorted, distinct
    trans_ids: tuple[str, ...]
    cost: float

    def rank_key(self) -> tuple[float, int, tuple[str, ...], tuple[str, ...]]:
        return (self.cost, len(self.cap_ids), self.cap_ids, self.trans_ids)


class _SearchSpace:
    def __init__(
        self,
        registry: Registry,
        available_kinds: frozenset[str],
        usable,
        params_ctx: Mapping[str, str],
        pin: str | None = None,
        pin_kind: str | None = None,
        framework: str | None = None,
    ):
        self.registry = registry
        self.available = available_kinds
        self.params_ctx = params_ctx
        entries = [e for e in registry.sorted_entries() if (usable is None or usable(e))]
        if framework is not None:
            entries = [e for e in entries if e.framework == framework]
        self.entries = entries
        self.pin = pin
        self.pin_kind = pin_kind
        self.producers: dict[str, list[CapabilityEntry]] = {}
        for entry in entries:
            for port in entry.outputs:
                self.producers.setdefault(port.data.kind, []).append(entry)
        self.translations_to: dict[str, list[Translation]] = {}
        for t in registry.translations:
            if t.from_spec.kind != t.to_spec.kind:
                self.translations_to.setdefault(t.to_spec.kind, []).append(t)

    def options(self, kind: str) -> list[tuple[str, Any]]:
        opts: list[tuple[str, Any]] = []
        for entry in self.producers.get(kind, []):
            if self.pin and kind == self.pin_kind and entry.framework != self.pin:
                continue
            opts.append(("cap", entry))
        for t in self.translations_to.get(kind, []):
            opts.append(("trans", t))
        return opts


def _relevant_kinds(space: _SearchSpace, goal_kind: str) -> set[str]:
    """Backward closure: kinds that can contribute to producing the goal."""
    relevant = {goal_kind}
    frontier = [goal_kind]
    while frontier:
        kind = frontier.pop()
        for a_type, action in space.options(kind):
            reqs = (
                [p.data.kind for p in action.inputs if p.required]
                if a_type == "cap"
                else [action.from_spec.kind]
            )
            for req in reqs:
                if req not in relevant:
                    relevant.add(req)
                    frontier.append(req)
    return relevant


def _forward_actions(space: _SearchSpace, relevant: set[str]):
    """Deterministically ordered actions that can add a relevant kind."""
    actions: list[tuple[str, str, float, frozenset[str], frozenset[str]]] = []
    seen_caps: set[str] = set()
    for kind in sorted(relevant):
        for a_type, action in space.options(kind):
            if a_type == "cap":
                if action.id in seen_caps:
                    continue
                seen_caps.add(action.id)
                required = frozenset(p.data.kind for p in action.inputs if p.required)
                outputs = frozenset(p.data.kind for p in action.outputs) & frozenset(relevant)
                actions.append(("cap", action.id, action.cost_hint, required, outputs))
            else:
                actions.append(
                    (
                        "trans",
                        action.adapter_id,
                        action.cost,
                        frozenset({action.from_spec.kind}),
                        frozenset({action.to_spec.kind}),
                    )
                )
    actions.sort(key=lambda a: (a[0], a[1]))
    return actions


def _cost_bound(space: _SearchSpace, goal_kind: str, relevant: set[str], actions) -> tuple[float, int] | None:
    """Uniform-cost reachability over achieved-kind sets: (min cost, steps)."""
    start: frozenset[str] = frozenset()
    heap: list[tuple[float, int, int, frozenset[str]]] = [(0.0, 0, 0, start)]
    best: dict[frozenset[str], tuple[float, int]] = {}
    counter = 0
    while heap:
        cost, steps, _, achieved = heapq.heappop(heap)
        if goal_kind in achieved or goal_kind in space.available:
            return (cost, steps)
        known = best.get(achieved)
        if known is not None and known <= (cost, steps):
            continue
        best[achieved] = (cost, steps)
        have = achieved | space.available
        for a_type, a_id, a_cost, required, outputs in actions:
            if not required <= have:
                continue
            gained = outputs - have
            if not gained:
                continue
            counter += 1
            heapq.heappush(
                heap,
                (cost + a_cost, steps + (1 if a_type == "cap" else 0), counter, achieved | gained),
            )
    return None


def _blocking_kinds(space: _SearchSpace, goal_kind: str) -> list[str]:
    reach = reachable_kinds(space.registry, space.available, lambda e: e in space.entries)
    relevant = _relevant_kinds(space, goal_kind)
    return sorted(k for k in relevant if k not in reach)


def _enumerate_fragments(
    space: _SearchSpace,
    goal_kind: str,
    limit: int | None,
    max_actions: int,
    cost_bound: float | None = None,
) -> list[_Fragment]:
    """Enumerate distinct action sets reaching the goal, best-ranked first.

    Forward chaining over achieved-kind sets restricted to the backward
    closure of the goal; duplicate orderings of the same action set are
    pruned through a visited filter. A cost bound (when given) prunes any
    branch that already exceeds the known optimum.
    """
    if goal_kind in space.available:
        return [_Fragment(goal_kind=goal_kind, actions=(), cap_ids=(), trans_ids=(), cost=0.0)]

    relevant = _relevant_kinds(space, goal_kind)
    actions = _forward_actions(space, relevant)
    results: dict[tuple[tuple[str, ...], tuple[str, ...]], _Fragment] = {}
    visited: set[tuple[frozenset[str], tuple[str, ...], tuple[str, ...]]] = set()
    expansions = 0

    def dfs(achieved: frozenset[str], ordered: tuple[tuple[str, str], ...], cap_seq, trans_seq, cost):
        nonlocal expansions
        if expansions > 50000:
            return
        if cost_bound is not None and cost > cost_bound + 1e-9:
            return
        if goal_kind in achieved:
            key = (cap_seq, trans_seq)
            fragment = _Fragment(goal_kind=goal_kind, actions=ordered, cap_ids=cap_seq, trans_ids=trans_seq, cost=cost)
            prior = results.get(key)
            if prior is None or fragment.rank_key() < prior.rank_key():
                results[key] = fragment
            return
        if len(cap_seq) + len(trans_seq) >= max_actions:
            return
        have = achieved | space.available
        for a_type, a_id, a_cost, required, outputs in actions:
            if not required <= have:
                continue
            gained = outputs - have
            if not gained:
                continue
            if a_type == "cap":
                new_caps, new_trans = tuple(sorted(cap_seq + (a_id,))), trans_seq
            else:
                new_caps, new_trans = cap_seq, tuple(sorted(trans_seq + (a_id,)))
            new_achieved = achieved | gained
            state = (new_achieved, new_caps, new_trans)
            if state in visited:
                continue
            visited.add(state)
            expansions += 1
            dfs(new_achieved, ordered + ((a_type, a_id),), new_caps, new_trans, cost + a_cost)

    dfs(frozenset(), (), (), (), 0.0)
    ranked = sorted(results.values(), key=lambda f: f.rank_key())
    return ranked if limit is None else ranked[:limit]


def _optimal_fragment(space: _SearchSpace, goal_kind: str) -> _Fragment:
    if goal_kind in space.available:
        return _Fragment(goal_kind=goal_kind, actions=(), cap_ids=(), trans_ids=(), cost=0.0)
    relevant = _relevant_kinds(space, goal_kind)
    actions = _forward_actions(space, relevant)
    bound = _cost_bound(space, goal_kind, relevant, actions)
    if bound is None:
        raise NoPlanError(_blocking_kinds(space, goal_kind) or [goal_kind])
    fragments = _enumerate_fragments(space, goal_kind, limit=1, max_actions=64, cost_bound=bound[0])
    if not fragments:
        raise NoPlanError(_blocking_kinds(space, goal_kind) or [goal_kind])
    return fragments[0]


# --- materialization ---------------------------------------------------------------


@dataclass(frozen=True)
class _AvailableEntry:
    name: str
    kind: str
    source: Source
    spec: DataKindSpec | None = None


class _WorkflowBuilder:
    """Accumulates steps across fragments, deduplicating identical ones."""

    def __init__(self, registry: Registry):
        self.registry = registry
        self.steps: list[WorkflowStep] = []
        self._by_signature: dict[tuple, str] = {}
        self._id_counts: dict[str, int] = {}
        self.adapter_uses: dict[tuple, float] = {}
        self.run_inputs_used: dict[str, DataKindSpec] = {}

    def _new_step_id(self, base: str) -> str:
        count = self._id_counts.get(base, 0) + 1
        self._id_counts[base] = count
        return base if count == 1 else f"{base}_{count}"

    def add_step(self, capability_id: str, bindings: Mapping[str, Source], params: Mapping[str, str]) -> str:
        signature = (
            capability_id,
            tuple(sorted((p, canonical_dumps(s.to_json())) for p, s in bindings.items())),
            tuple(sorted(params.items())),
        )
        existing = self._by_signature.get(signature)
        if existing is not None:
            return existing
        entry = self.registry.entry(capability_id)
        base = entry.function if entry else capability_id
        step_id = self._new_step_id(base)
        self.steps.append(WorkflowStep.make(step_id, capability_id, bindings, params))
        self._by_signature[signature] = step_id
        return step_id

    def note_adapter_use(self, origin: Source, chain: tuple[str, ...], cost: float) -> None:
        key = (str(sorted(origin.to_json().items())), chain)
        self.adapter_uses.setdefault(key, cost)

    def note_run_input(self, name: str, spec: DataKindSpec | None) -> None:
        if spec is not None:
            self.run_inputs_used.setdefault(name, spec)


def _materialize_fragment(
    fragment: _Fragment,
    space: _SearchSpace,
    available: Sequence[_AvailableEntry],
    builder: _WorkflowBuilder,
) -> Source:
    """Turn an abstract fragment into concrete steps inside the builder.

    Actions are already in an applicable order, so capability steps emit in
    that order and only reference earlier steps. Binding preference for a
    kind: an available entry first (dependency terminals precede run
    inputs), then the first fragment action that produced the kind.
    Translation chains collapse into the consumer's binding; the compiler
    re-derives and materializes the adapter steps.
    """
    registry = space.registry
    translations = {t.adapter_id: t for t in registry.translations}
    available_by_kind: dict[str, _AvailableEntry] = {}
    for entry in available:
        available_by_kind.setdefault(entry.kind, entry)

    producer_of: dict[str, tuple[str, str]] = {}
    for a_type, a_id in fragment.actions:
        if a_type == "cap":
            for port in registry.entry(a_id).outputs:
                producer_of.setdefault(port.data.kind, ("cap", a_id))
        else:
            producer_of.setdefault(translations[a_id].to_spec.kind, ("trans", a_id))

    step_ids: dict[str, str] = {}

    def source_for(kind: str, seen: frozenset[str] = frozenset()) -> Source:
        if kind in seen:
            raise ArachnetError(f"internal: circular source resolution for kind {kind!r}")
        if kind in available_by_kind:
            avail = available_by_kind[kind]
            if isinstance(avail.source, RunInput):
                builder.note_run_input(avail.source.name, avail.spec)
            return avail.source
        producer = producer_of.get(kind)
        if producer is None:
            raise NoPlanError([kind])
        a_type, a_id = producer
        if a_type == "cap":
            entry = registry.entry(a_id)
            port = next(p for p in sorted(entry.outputs, key=lambda p: p.name) if p.data.kind == kind)
            return StepOutput(step_id=step_ids[a_id], port=port.name)
        chain = [translations[a_id]]
        origin_kind = chain[0].from_spec.kind
        while origin_kind not in available_by_kind and producer_of.get(origin_kind, ("", ""))[0] == "trans":
            earlier = translations[producer_of[origin_kind][1]]
            chain.insert(0, earlier)
            origin_kind = earlier.from_spec.kind
        origin = source_for(origin_kind, seen | {kind})
        builder.note_adapter_use(origin, tuple(t.adapter_id for t in chain), sum(t.cost for t in chain))
        return origin

    for a_type, a_id in fragment.actions:
        if a_type != "cap":
            continue
        entry = registry.entry(a_id)
        bindings = {
            port.name: source_for(port.data.kind) for port in entry.inputs if port.required
        }
        params = resolve_step_params(entry, space.params_ctx) or {}
        step_ids[a_id] = builder.add_step(a_id, bindings, params)

    return source_for(fragment.goal_kind)


# --- scoring and merging -------------------------------------------------------------


def _score_workflow(builder: _WorkflowBuilder, registry: Registry) -> TradeoffScore:
    run_inputs: set[str] = set()
    cost = 0.0
    reliability = 1.0
    for step in builder.steps:
        entry = registry.entry(step.capability_id)
        if entry is not None:
            cost += entry.cost_hint
            reliability *= entry.reliability
        for _, src in step.input_bindings:
            if isinstance(src, RunInput):
                run_inputs.add(src.name)
    cost += sum(builder.adapter_uses.values())
    return TradeoffScore(data_requirements=len(run_inputs), compute_cost=round(cost, 9), reliability=reliability)


def _merge_candidate(
    ordered_sps: Sequence[SubProblem],
    fragment_choice: Mapping[str, "_FragmentPlan"],
    registry: Registry,
    run_inputs_all: Mapping[str, str],
    kind_specs: Mapping[str, DataKindSpec],
) -> CandidateWorkflow:
    builder = _WorkflowBuilder(registry)
    goal_sources: dict[str, Source] = {}
    for sp in ordered_sps:
        plan = fragment_choice[sp.id]
        available: list[_AvailableEntry] = []
        for dep in sorted(set(sp.depends_on)):
            dep_source = goal_sources[dep]
            dep_kind = next(s.required_output.kind for s in ordered_sps if s.id == dep)
            available.append(_AvailableEntry(name=f"dep:{dep}", kind=dep_kind, source=dep_source))
        for name, kind in sorted(scoped_run_inputs(sp, run_inputs_all).items()):
            available.append(
                _AvailableEntry(name=name, kind=kind, source=RunInput(name=name), spec=kind_specs.get(kind))
            )
        if plan.combine_chain is not None:
            goal_sources[sp.id] = _materialize_combine(plan, sp, available, builder, registry)
        else:
            goal_sources[sp.id] = _materialize_fragment(plan.fragment, plan.space, available, builder)
    score = _score_workflow(builder, registry)
    return CandidateWorkflow(
        steps=tuple(builder.steps),
        score=score,
        goal_sources=tuple(sorted(goal_sources.items())),
        run_input_kinds=tuple(sorted(builder.run_inputs_used.items())),
    )


@dataclass(frozen=True)
class _FragmentPlan:
    fragment: _Fragment
    space: _SearchSpace
    combine_chain: tuple[str, ...] | None = None  # combiner capability ids, applied left-fold

    def rank_key(self):
        return self.fragment.rank_key()


def _materialize_combine(
    plan: _FragmentPlan,
    sp: SubProblem,
    available: Sequence[_AvailableEntry],
    builder: _WorkflowBuilder,
    registry: Registry,
) -> Source:
    dep_entries = [a for a in available if a.name.startswith("dep:")]
    acc = dep_entries[0].source
    for combiner_id, dep in zip(plan.combine_chain, dep_entries[1:]):
        entry = registry.entry(combiner_id)
        same_kind_inputs = [p for p in entry.inputs if p.required]
        bindings = {same_kind_inputs[0].name: acc, same_kind_inputs[1].name: dep.source}
        params = resolve_step_params(entry, plan.space.params_ctx) or {}
        step_id = builder.add_step(combiner_id, bindings, params)
        out_port = next(p for p in sorted(entry.outputs, key=lambda p: p.name) if p.data.kind == sp.required_output.kind)
        acc = StepOutput(step_id=step_id, port=out_port.name)
    return acc


# --- public operations -----------------------------------------------------------------


def plan_for_kind(
    goal: DataKindSpec | str,
    registry: Registry,
    available: Iterable[str] = (),
    params_ctx: Mapping[str, str] | None = None,
) -> CandidateWorkflow:
    """Minimum-cost plan producing a goal kind from available run-input kinds.

    Run inputs are surfaced with synthetic names input_<kind>. Raises NoPlan
    with the blocking kinds when the goal is unreachable.
    """
    goal_kind = goal.kind if isinstance(goal, DataKindSpec) else goal
    if goal_kind not in registry.kinds:
        raise NoPlanError([goal_kind])
    params_ctx = dict(params_ctx or {})
    available_kinds = frozenset(available)
    usable = lambda entry: resolve_step_params(entry, params_ctx) is not None
    space = _SearchSpace(registry, available_kinds, usable, params_ctx)
    fragment = _optimal_fragment(space, goal_kind)
    builder = _WorkflowBuilder(registry)
    kind_specs = {spec.kind: spec for spec in sorted(registry.vocabulary)}
    entries = [
        _AvailableEntry(name=f"input_{k}", kind=k, source=RunInput(name=f"input_{k}"), spec=kind_specs.get(k))
        for k in sorted(available_kinds)
    ]
    goal_source = _materialize_fragment(fragment, space, entries, builder)
    return CandidateWorkflow(
        steps=tuple(builder.steps),
        score=_score_workflow(builder, registry),
        goal_sources=(("__goal__", goal_source),),
        run_input_kinds=tuple(sorted(builder.run_inputs_used.items())),
    )


def _fragment_plans_for(
    sp: SubProblem,
    registry: Registry,
    run_inputs_all: Mapping[str, str],
    params_ctx: Mapping[str, str],
    usable,
    dep_kinds: Mapping[str, str],
    budget: ExplorationBudget,
    enumerate_all: bool,
    framework: str | None = None,
) -> list[_FragmentPlan]:
    goal_kind = sp.required_output.kind
    deps = sorted(set(sp.depends_on))
    same_kind_deps = [d for d in deps if dep_kinds[d] == goal_kind]

    if len(deps) >= 2 and len(same_kind_deps) == len(deps):
        # Combining sub-problem: every dependency already yields the goal
        # kind, so the fragment must fold them through a combiner capability.
        combiners = [
            e
            for e in registry.sorted_entries()
            if (usable is None or usable(e))
            and (framework is None or e.framework == framework)
            and sum(1 for p in e.inputs if p.required and p.data.kind == goal_kind) >= 2
            and len([p for p in e.inputs if p.required]) == 2
            and any(p.data.kind == goal_kind for p in e.outputs)
        ]
        if not combiners:
            raise NoPlanError([goal_kind], sub_problem_id=sp.id)
        combiners.sort(key=lambda e: (e.cost_hint, e.id))
        plans = []
        for combiner in combiners[: budget.max_fragment_plans if enumerate_all else 1]:
            n_steps = len(deps) - 1
            space = _SearchSpace(registry, frozenset(), usable, params_ctx, framework=framework)
            fragment = _Fragment(
                goal_kind=goal_kind,
                actions=(),
                cap_ids=(combiner.id,) * n_steps,
                trans_ids=(),
                cost=combiner.cost_hint * n_steps,
            )
            plans.append(_FragmentPlan(fragment=fragment, space=space, combine_chain=(combiner.id,) * n_steps))
        return plans

    available_kinds = frozenset(scoped_run_inputs(sp, run_inputs_all).values()) | frozenset(
        dep_kinds[d] for d in deps
    )
    space = _SearchSpace(
        registry,
        available_kinds,
        usable,
        params_ctx,
        pin=framework_pin(sp),
        pin_kind=goal_kind,
        framework=framework,
    )
    if enumerate_all:
        fragments = _enumerate_fragments(space, goal_kind, budget.max_fragment_plans, budget.max_actions)
        if not fragments:
            raise NoPlanError(_blocking_kinds(space, goal_kind) or [goal_kind], sub_problem_id=sp.id)
    else:
        fragments = [_optimal_fragment(space, goal_kind)]
    return [_FragmentPlan(fragment=f, space=space) for f in fragments]


def _single_framework(
    ordered: Sequence[SubProblem],
    registry: Registry,
    run_inputs_all: Mapping[str, str],
    params_ctx: Mapping[str, str],
    usable,
    dep_kinds: Mapping[str, str],
    budget: ExplorationBudget,
) -> str | None:
    for framework in registry.frameworks():
        try:
            for sp in ordered:
                _fragment_plans_for(
                    sp, registry, run_inputs_all, params_ctx, usable, dep_kinds, budget,
                    enumerate_all=False, framework=framework,
                )
            return framework
        except NoPlanError:
            continue
    return None


def explore(
    graph: SubProblemGraph,
    registry: Registry,
    budget: ExplorationBudget | None = None,
    backend=None,
) -> WorkflowDesign:
    """Stage-2 operation: plan every sub-problem and pick a candidate.

    Direct mode (single framework suffices and the graph is small) returns
    the optimal plan alone. Comparative mode ranks up to budget.k distinct
    candidates by (compute_cost, -reliability, data_requirements); a backend
    may reorder candidates only within equal-score groups.
    """
    budget = budget or ExplorationBudget()
    if not graph.feasible:
        missing = graph.feasibility_map.get("missing_kinds", [])
        raise NoPlanError(list(missing) or ["<infeasible>"])

    intent = graph.intent
    params_ctx = build_params_context(intent)
    usable = make_admissibility(intent, params_ctx)
    run_inputs_all = derive_run_inputs_spec(intent)
    ordered = topological_sub_problems(graph)
    dep_kinds = {sp.id: sp.required_output.kind for sp in graph.sub_problems}
    kind_specs = {spec.kind: spec for spec in sorted(registry.vocabulary)}

    framework = _single_framework(ordered, registry, run_inputs_all, params_ctx, usable, dep_kinds, budget)
    direct = framework is not None and len(ordered) <= budget.direct_max_subproblems

    if direct:
        choice = {
            sp.id: _fragment_plans_for(
                sp, registry, run_inputs_all, params_ctx, usable, dep_kinds, budget, enumerate_all=False
            )[0]
            for sp in ordered
        }
        chosen = _merge_candidate(ordered, choice, registry, run_inputs_all, kind_specs)
        rationale = (
            f"Direct path: framework {framework!r} satisfies all {len(ordered)} sub-problem(s); "
            f"optimal plan costs {chosen.score.compute_cost} with reliability {chosen.score.reliability:.4f}."
        )
        design = WorkflowDesign(chosen=chosen, alternatives=(), rationale=rationale, exploration_mode="direct")
    else:
        per_sp: dict[str, list[_FragmentPlan]] = {}
        for sp in ordered:
            per_sp[sp.id] = _fragment_plans_for(
                sp, registry, run_inputs_all, params_ctx, usable, dep_kinds, budget, enumerate_all=True
            )
        candidates = _enumerate_candidates(ordered, per_sp, registry, run_inputs_all, kind_specs, budget)
        if not candidates:
            raise NoPlanError(["<no candidate>"])
        candidates = _apply_backend_preferences(candidates, backend)
        chosen, alternatives = candidates[0], tuple(candidates[1 : budget.k])
        rationale = _comparative_rationale(chosen, alternatives)
        note = backend.rationale_note() if backend is not None else None
        if note:
            rationale = f"{rationale} Backend note: {note}"
        design = WorkflowDesign(
            chosen=chosen, alternatives=alternatives, rationale=rationale, exploration_mode="comparative"
        )

    report = validate_design(design, registry)
    if not report.valid:
        raise ArachnetError(f"internal: chosen candidate failed validation: {report.violations}")
    return design


def _enumerate_candidates(
    ordered: Sequence[SubProblem],
    per_sp: Mapping[str, list[_FragmentPlan]],
    registry: Registry,
    run_inputs_all: Mapping[str, str],
    kind_specs: Mapping[str, DataKindSpec],
    budget: ExplorationBudget,
) -> list[CandidateWorkflow]:
    sp_ids = [sp.id for sp in ordered]
    counts = [len(per_sp[sp_id]) for sp_id in sp_ids]

    def combo_cost(indexes: tuple[int, ...]) -> float:
        return sum(per_sp[sp_id][i].fragment.cost for sp_id, i in zip(sp_ids, indexes))

    start = tuple(0 for _ in sp_ids)
    heap: list[tuple[float, tuple[int, ...]]] = [(combo_cost(start), start)]
    seen_indexes = {start}
    by_multiset: dict[tuple[str, ...], CandidateWorkflow] = {}
    pops = 0
    while heap and pops < budget.product_limit and len(by_multiset) < budget.k * 4:
        _, indexes = heapq.heappop(heap)
        pops += 1
        choice = {sp_id: per_sp[sp_id][i] for sp_id, i in zip(sp_ids, indexes)}
        candidate = _merge_candidate(ordered, choice, registry, run_inputs_all, kind_specs)
        key = candidate.capability_multiset()
        prior = by_multiset.get(key)
        if prior is None or _candidate_rank(candidate) < _candidate_rank(prior):
            by_multiset[key] = candidate
        for pos in range(len(sp_ids)):
            if indexes[pos] + 1 < counts[pos]:
                nxt = indexes[:pos] + (indexes[pos] + 1,) + indexes[pos + 1 :]
                if nxt not in seen_indexes:
                    seen_indexes.add(nxt)
                    heapq.heappush(heap, (combo_cost(nxt), nxt))
    ranked = sorted(by_multiset.values(), key=_candidate_rank)
    return ranked[: budget.k]


def _candidate_rank(candidate: CandidateWorkflow):
    return (candidate.score.rank_key(), candidate.capability_multiset())


def _apply_backend_preferences(candidates: list[CandidateWorkflow], backend) -> list[CandidateWorkflow]:
    """Let the backend reorder candidates, but only within equal-score groups."""
    if backend is None:
        return candidates
    preferences = backend.rank_preferences([",".join(c.capability_multiset()) for c in candidates])
    if not preferences:
        return candidates
    position = {idx: rank for rank, idx in enumerate(preferences) if 0 <= idx < len(candidates)}
    reordered: list[CandidateWorkflow] = []
    for _, group in itertools.groupby(
        range(len(candidates)), key=lambda i: candidates[i].score.rank_key()
    ):
        members = list(group)
        members.sort(key=lambda i: (position.get(i, len(candidates)), i))
        reordered.extend(candidates[i] for i in members)
    return reordered


def _comparative_rationale(chosen: CandidateWorkflow, alternatives: Sequence[CandidateWorkflow]) -> str:
    parts = [
        "Comparative exploration ranked candidates by (compute_cost, -reliability, data_requirements).",
        f"Chosen: {len(chosen.steps)} step(s), cost {chosen.score.compute_cost}, "
        f"reliability {chosen.score.reliability:.4f}, {chosen.score.data_requirements} run input(s).",
    ]
    for i, alt in enumerate(alternatives, start=1):
        parts.append(
            f"Alternative {i}: cost {alt.score.compute_cost}, reliability {alt.score.reliability:.4f}, "
            f"steps {len(alt.steps)}."
        )
    if not alternatives:
        parts.append("No distinct alternative met the budget.")
    return " ".join(parts)


# --- validation -------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    steps: tuple[str, ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "steps": list(self.steps)}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_json(self) -> dict[str, Any]:
        return {"valid": self.valid, "violations": [v.to_json() for v in self.violations]}


def validate_design(design: WorkflowDesign, registry: Registry) -> ValidationReport:
    """Structural checks on the chosen workflow; violations are values."""
    workflow = design.chosen
    violations: list[Violation] = []
    by_id: dict[str, WorkflowStep] = {}
    for step in workflow.steps:
        if step.id in by_id:
            violations.append(Violation("duplicate-step-id", f"step id {step.id!r} appears twice", (step.id,)))
        by_id[step.id] = step

    run_input_kinds = workflow.run_input_kinds_map

    for step in workflow.steps:
        entry = registry.entry(step.capability_id)
        if entry is None:
            violations.append(
                Violation("unknown-capability", f"step {step.id!r} names unknown capability {step.capability_id!r}", (step.id,))
            )
            continue
        bindings = step.bindings_map
        for port in entry.inputs:
            if port.required and port.name not in bindings:
                violations.append(
                    Violation("unbound-required-port", f"step {step.id!r} leaves required port {port.name!r} unbound", (step.id,))
                )
        for port_name, source in bindings.items():
            port = entry.input_port(port_name)
            if port is None:
                violations.append(
                    Violation("unknown-port", f"step {step.id!r} binds unknown port {port_name!r}", (step.id,))
                )
                continue
            source_spec: DataKindSpec | None = None
            if isinstance(source, StepOutput):
                src_step = by_id.get(source.step_id)
                if src_step is None:
                    violations.append(
                        Violation("unknown-step-reference", f"step {step.id!r} reads from missing step {source.step_id!r}", (step.id,))
                    )
                    continue
                src_entry = registry.entry(src_step.capability_id)
                src_port = src_entry.output_port(source.port) if src_entry else None
                if src_port is None:
                    violations.append(
                        Violation(
                            "unknown-port",
                            f"step {step.id!r} reads missing output port {source.port!r} of {source.step_id!r}",
                            (step.id, source.step_id),
                        )
                    )
                    continue
                source_spec = src_port.data
            elif isinstance(source, RunInput):
                source_spec = run_input_kinds.get(source.name)
            if source_spec is not None and source_spec != port.data:
                compat = check_compatibility_specs(source_spec, port.data, registry)
                if not compat.ok:
                    violations.append(
                        Violation(
                            "incompatible-kinds",
                            f"step {step.id!r} port {port_name!r} expects {port.data.label()} "
                            f"but receives {source_spec.label()} with no translation path",
                            (step.id,),
                        )
                    )
        for spec in entry.params:
            if spec.required and spec.name not in step.params_map and spec.default is None:
                violations.append(
                    Violation("missing-param", f"step {step.id!r} lacks required param {spec.name!r}", (step.id,))
                )

    cycle = _find_cycle(workflow)
    if cycle:
        violations.append(Violation("cycle", f"data-flow cycle through {cycle}", tuple(cycle)))

    return ValidationReport(violations=tuple(violations))


def check_compatibility_specs(out_spec: DataKindSpec, in_spec: DataKindSpec, registry: Registry) -> CompatibilityResult:
    from .registry import PortSpec, check_compatibility as _check

    return _check(PortSpec(name="out", data=out_spec), PortSpec(name="in", data=in_spec), registry)


def _find_cycle(workflow: CandidateWorkflow) -> list[str]:
    adjacency: dict[str, list[str]] = {s.id: [] for s in workflow.steps}
    for step in workflow.steps:
        for _, source in step.input_bindings:
            if isinstance(source, StepOutput) and source.step_id in adjacency:
                adjacency[source.step_id].append(step.id)
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        state[node] = 1
        stack.append(node)
        for nxt in adjacency[node]:
            if state.get(nxt, 0) == 1:
                return stack[stack.index(nxt):]
            if state.get(nxt, 0) == 0:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        state[node] = 2
        return None

    for node in sorted(adjacency):
        if state.get(node, 0) == 0:
            found = visit(node)
            if found:
                return sorted(found)
    return []
