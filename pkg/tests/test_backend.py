from __future__ import annotations

import json
from fractions import Fraction

import pytest

from arachnet.backend import (
    BackendConfig,
    DeterministicBackend,
    LLMBackend,
    ScriptedTransport,
    make_backend,
    summarize_registry,
)
from arachnet.errors import ConfigError, IntentError, TransportError
from arachnet.registry import build_registry


VALID_INTENT = json.dumps(
    {
        "goal_kind": "impact_table",
        "subject": {"entity_type": "cable", "identifiers": ["C1"]},
        "aggregation": "country",
        "time_window": None,
        "parameters": {},
        "classification": {"spatial": True, "temporal": False, "causal": False, "data_dependency": True},
    }
)


def test_deterministic_cable_impact_query(registry, queries):
    intent = DeterministicBackend().propose_intent(queries["cable_impact_named"], registry)
    assert intent.goal_kind == "impact_table"
    assert intent.subject.entity_type == "cable"
    assert intent.subject.identifiers == ("SeaMeWe-5",)
    assert intent.aggregation == "country"


def test_deterministic_hazard_probability(registry, queries):
    intent = DeterministicBackend().propose_intent(queries["multi_hazard"], registry)
    assert intent.subject.identifiers == ("earthquake", "hurricane")
    assert Fraction(intent.parameters_map["failure_probability"]) == Fraction(1, 10)


def test_deterministic_unmatched_query_raises(registry):
    with pytest.raises(IntentError):
        DeterministicBackend().propose_intent("please compute something unrelated", registry)


def test_scripted_malformed_then_valid_succeeds_with_one_repair(registry):
    transport = ScriptedTransport(["{not json", VALID_INTENT])
    backend = LLMBackend(BackendConfig(kind="scripted", max_repair_attempts=3), transport)
    intent = backend.propose_intent("impact of cable C1", registry)
    assert intent.goal_kind == "impact_table"
    assert len(transport.calls) == 2
    repair_message = transport.calls[1][-1]["content"]
    assert "Validator messages" in repair_message


def test_scripted_exhausts_repairs_with_all_messages(registry):
    transport = ScriptedTransport(["{a", "{b", "{c"])
    backend = LLMBackend(BackendConfig(kind="scripted", max_repair_attempts=3), transport)
    with pytest.raises(IntentError) as err:
        backend.propose_intent("impact of cable C1", registry)
    assert len(err.value.attempts) == 3
    assert all("attempt" in message for message in err.value.attempts)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_repair_budget_boundary(registry, k):
    responses = ["{broken"] * k + [VALID_INTENT]
    transport = ScriptedTransport(responses)
    backend = LLMBackend(BackendConfig(kind="scripted", max_repair_attempts=3), transport)
    if k < 3:
        intent = backend.propose_intent("q", registry)
        assert intent.goal_kind == "impact_table"
    else:
        with pytest.raises(IntentError):
            backend.propose_intent("q", registry)


def test_schema_invalid_json_triggers_repair_with_field_messages(registry):
    wrong = json.dumps({"goal_kind": "impact_table", "aggregation": "continent"})
    transport = ScriptedTransport([wrong, VALID_INTENT])
    backend = LLMBackend(BackendConfig(kind="scripted"), transport)
    intent = backend.propose_intent("q", registry)
    assert intent.aggregation == "country"
    assert "aggregation" in transport.calls[1][-1]["content"]


def test_transport_error_distinguished_from_intent_error(registry):
    def failing_transport(messages, config):
        raise TransportError("connection refused")

    backend = LLMBackend(BackendConfig(kind="llm", endpoint="https://example.invalid"), failing_transport)
    with pytest.raises(TransportError):
        backend.propose_intent("q", registry)


def test_summarize_registry_lines(registry):
    summary = summarize_registry(registry)
    lines = summary.splitlines()
    assert len(lines) == len(registry.entries)
    assert all(len(line) <= 120 for line in lines)
    geolocate_line = next(line for line in lines if line.startswith("nautilus.geolocate:"))
    assert "ip_set" in geolocate_line and "country_table" in geolocate_line


def test_summarize_empty_registry():
    assert summarize_registry(build_registry([], [], [])) == ""


def test_entry_with_two_outputs_lists_both_kinds():
    from arachnet.registry import CapabilityEntry, DataKindSpec, PortSpec

    vocab = [DataKindSpec("alpha", "table"), DataKindSpec("beta", "table")]
    entry = CapabilityEntry(
        id="fw.dual",
        framework="fw",
        description="Emits two kinds.",
        inputs=(),
        outputs=(
            PortSpec("a", DataKindSpec("alpha", "table")),
            PortSpec("b", DataKindSpec("beta", "table")),
        ),
        constraints=(),
        cost_hint=1.0,
        reliability=0.9,
        provenance="manual",
        version=1,
    )
    registry = build_registry(vocab, [entry], [])
    line = summarize_registry(registry)
    assert "alpha" in line and "beta" in line


def test_credential_never_serialized(monkeypatch):
    monkeypatch.setenv("TEST_MODEL_KEY", "super-secret-value")
    config = BackendConfig(kind="llm", endpoint="https://example.invalid", auth_env="TEST_MODEL_KEY")
    dumped = json.dumps(config.to_json())
    assert "super-secret-value" not in dumped
    assert "TEST_MODEL_KEY" in dumped


def test_backend_config_rejects_nonzero_temperature():
    with pytest.raises(ConfigError):
        BackendConfig(kind="llm", temperature=0.7)


def test_make_backend_scripted_requires_transport():
    with pytest.raises(ConfigError):
        make_backend(BackendConfig(kind="scripted"))
