from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arachnet.errors import UnknownGoalKindError
from arachnet.jsonutil import canonical_dumps
from arachnet.querymind import (
    Classification,
    QueryIntent,
    Subject,
    analyze,
    assess_feasibility,
    expand_intent,
    graph_from_json,
    topological_sub_problems,
    validate_intent_dict,
)
from arachnet.registry import build_registry


def intent(goal="impact_table", entity="cable", identifiers=("C1",), aggregation="country",
           parameters=(), **flags):
    return QueryIntent(
        goal_kind=goal,
        subject=Subject(entity_type=entity, identifiers=tuple(identifiers)),
        aggregation=aggregation,
        time_window=None,
        parameters=tuple(sorted(parameters)),
        classification=Classification(**flags),
    )


def test_cable_impact_expansion_four_sub_problems(registry):
    graph = expand_intent(intent(spatial=True, data_dependency=True), registry)
    ids = [sp.id for sp in graph.sub_problems]
    assert ids == [
        "resolve_cable_dependencies",
        "extract_affected_ips",
        "map_geography",
        "aggregate_country_impact",
    ]
    for earlier, later in zip(ids, ids[1:]):
        assert graph.sub_problem(later).depends_on == (earlier,)
    kinds = [sp.required_output.kind for sp in graph.sub_problems]
    assert kinds == ["ip_link_set", "ip_set", "country_table", "impact_table"]


def test_multi_hazard_expansion_per_hazard_plus_combine(registry):
    graph = expand_intent(
        intent(
            entity="hazard_event",
            identifiers=("earthquake", "hurricane"),
            parameters=(("failure_probability", "1/10"),),
            data_dependency=True,
        ),
        registry,
    )
    ids = [sp.id for sp in graph.sub_problems]
    assert ids == ["assess_earthquake_impact", "assess_hurricane_impact", "combine_hazard_impacts"]
    combine = graph.sub_problem("combine_hazard_impacts")
    assert set(combine.depends_on) == {"assess_earthquake_impact", "assess_hurricane_impact"}
    assert Fraction(graph.intent.parameters_map["failure_probability"]) == Fraction("0.10")


def test_terminal_always_gets_nonempty_criterion(registry):
    graph = expand_intent(intent(spatial=True), registry)
    nonempty = [
        c for c in graph.success_criteria if c.check_map.get("type") == "output_nonempty"
    ]
    assert len(nonempty) == 1
    assert nonempty[0].check_map["sub_problem"] == graph.terminal_id() == "aggregate_country_impact"


def test_expansion_is_pure_and_byte_identical(registry):
    a = expand_intent(intent(spatial=True, causal=True, temporal=True), registry)
    b = expand_intent(intent(spatial=True, causal=True, temporal=True), registry)
    assert canonical_dumps(a.to_json()) == canonical_dumps(b.to_json())


def test_structured_intent_matches_query_expansion(registry, backend, queries):
    via_query = analyze(queries["cable_impact"], registry, backend)
    structured = assess_feasibility(
        expand_intent(intent(spatial=True, data_dependency=True), registry), registry
    )
    assert canonical_dumps(via_query.to_json()["sub_problems"]) == canonical_dumps(
        structured.to_json()["sub_problems"]
    )


def test_unknown_goal_kind_raises(registry):
    with pytest.raises(UnknownGoalKindError):
        expand_intent(intent(goal="unheard_of_kind"), registry)


def test_feasibility_cable_impact(registry, backend, queries):
    graph = analyze(queries["cable_impact"], registry, backend)
    assert graph.feasible
    assert graph.feasibility_map == {"status": "feasible"}


def test_feasibility_missing_kind(registry):
    vocab = sorted(registry.vocabulary)
    bare = build_registry(vocab, [], [])
    graph = expand_intent(intent(goal="cascade_timeline", entity="none", aggregation="none"), bare)
    checked = assess_feasibility(graph, bare)
    assert not checked.feasible
    assert checked.feasibility_map["missing_kinds"] == ["cascade_timeline", "impact_table"]


def test_empty_graph_is_feasible(registry):
    graph = expand_intent(intent(entity="none", aggregation="none"), registry)
    empty = graph.__class__(
        intent=graph.intent,
        sub_problems=(),
        success_criteria=(),
        risks=(),
    )
    assert assess_feasibility(empty, registry).feasible


def test_graph_json_round_trip(registry, backend, queries):
    graph = analyze(queries["forensics"], registry, backend)
    doc = graph.to_json()
    again = graph_from_json(doc)
    assert canonical_dumps(again.to_json()) == canonical_dumps(doc)


def test_validate_intent_collects_errors():
    raw = {
        "goal_kind": "",
        "subject": {"entity_type": "galaxy", "identifiers": "C1"},
        "aggregation": "continent",
        "parameters": {"failure_probability": "1.5"},
        "classification": {"spatial": "yes"},
    }
    parsed, errors = validate_intent_dict(raw)
    assert parsed is None
    text = "\n".join(errors)
    for fragment in ("goal_kind", "entity_type", "identifiers", "aggregation",
                     "failure_probability", "spatial"):
        assert fragment in text


goal_kinds = st.sampled_from(
    ["impact_table", "cascade_timeline", "ranked_cable_table", "ip_set", "anomaly_report"]
)
entities = st.sampled_from(["cable", "hazard_event", "region_pair", "none"])
flags = st.booleans()


@settings(max_examples=120, deadline=None)
@given(
    goal=goal_kinds,
    entity=entities,
    aggregation=st.sampled_from(["country", "asn", "cable", "none"]),
    spatial=flags,
    temporal=flags,
    causal=flags,
    data_dependency=flags,
)
def test_every_expansion_is_acyclic_and_deterministic(
    goal, entity, aggregation, spatial, temporal, causal, data_dependency
):
    from arachnet.registry import load_registry
    from arachnet.toolsim import fixture_registry_dir

    registry = load_registry(fixture_registry_dir())
    identifiers = {
        "cable": ("C1",),
        "hazard_event": ("earthquake", "hurricane"),
        "region_pair": ("europe", "asia"),
        "none": (),
    }[entity]
    made = intent(
        goal=goal,
        entity=entity,
        identifiers=identifiers,
        aggregation=aggregation,
        spatial=spatial,
        temporal=temporal,
        causal=causal,
        data_dependency=data_dependency,
    )
    graph = expand_intent(made, registry)
    ordered = topological_sub_problems(graph)  # raises on cycles
    assert len(ordered) == len(graph.sub_problems)
    ids = [sp.id for sp in graph.sub_problems]
    assert len(ids) == len(set(ids))
    again = expand_intent(made, registry)
    assert canonical_dumps(again.to_json()) == canonical_dumps(graph.to_json())
