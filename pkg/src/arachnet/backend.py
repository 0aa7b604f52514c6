"""Planner backends: the natural-language boundary of the pipeline.

A backend turns a query into a QueryIntent. Three implementations:

  deterministic  versioned keyword-rule table (docs/intent_rules.md), no
                 network, used for tests and fixture runs
  llm            chat-completion JSON over HTTPS with schema validation and
                 a bounded repair loop
  scripted       the llm code path driven by canned transport responses, for
                 byte-reproducible tests of the error handling

No other module performs network activity. Credentials are referenced by
environment-variable name only and never serialized into run artifacts.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

from .errors import ConfigError, IntentError, TransportError
from .querymind import (
    Classification,
    QueryIntent,
    Subject,
    validate_intent_dict,
)
from .registry import Registry

INTENT_RULES_VERSION = 1

REGION_WORDS = {
    "europe": "europe",
    "european": "europe",
    "asia": "asia",
    "asian": "asia",
    "africa": "africa",
    "african": "africa",
    "america": "americas",
    "americas": "americas",
    "american": "americas",
}

HAZARD_WORDS = ("earthquake", "hurricane")

CABLE_TOKEN_RE = re.compile(r"\b([A-Z][A-Za-z0-9]*(?:-[A-Za-z0-9]+)+|C\d+)\b")
PROBABILITY_RE = re.compile(r"(\d+(?:\.\d+)?)\s*%")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "deterministic"
    endpoint: str = ""
    model: str = ""
    timeout: float = 30.0
    max_repair_attempts: int = 3
    temperature: float = 0.0
    auth_env: str | None = None
    prompt_dir: str | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "llm", "scripted"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.max_repair_attempts < 1:
            raise ConfigError("max_repair_attempts must be >= 1")
        if self.temperature != 0.0:
            raise ConfigError("temperature is fixed at 0 for reproducibility")

    def to_json(self) -> dict[str, Any]:
        # The credential itself is looked up from the environment at call
        # time and is deliberately absent here.
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "timeout": self.timeout,
            "max_repair_attempts": self.max_repair_attempts,
            "temperature": self.temperature,
            "auth_env": self.auth_env,
            "prompt_dir": self.prompt_dir,
        }


@dataclass(frozen=True)
class PromptTemplate:
    stage: str
    template: str

    PLACEHOLDERS = ("query", "registry_summary", "vocabulary", "validator_errors")

    def render(self, **values: str) -> str:
        text = self.template
        for name in self.PLACEHOLDERS:
            token = "{" + name + "}"
            if token in text:
                if name not in values:
                    raise ConfigError(f"prompt for stage {self.stage!r} needs placeholder {name!r}")
                text = text.replace(token, values[name])
        return text


def load_prompt(stage: str, prompt_dir: str | None = None) -> PromptTemplate:
    if prompt_dir:
        path = Path(prompt_dir) / f"{stage}.txt"
        return PromptTemplate(stage=stage, template=path.read_text(encoding="utf-8"))
    ref = resources.files("arachnet") / "prompts" / f"{stage}.txt"
    return PromptTemplate(stage=stage, template=ref.read_text(encoding="utf-8"))


def summarize_registry(registry: Registry) -> str:
    """One bounded line per capability: id, description, input/output kinds.

    Lines stay within 120 characters by shortening the description, never
    the kind lists the planner prompt depends on.
    """
    lines = []
    for entry in registry.sorted_entries():
        ins = ",".join(p.data.kind for p in entry.inputs) or "-"
        outs = ",".join(p.data.kind for p in entry.outputs)
        ports = f" | {ins} -> {outs}"
        room = 120 - len(ports) - len(entry.id) - 2
        description = entry.description
        if len(description) > room:
            description = description[: max(room - 3, 0)] + "..."
        lines.append(f"{entry.id}: {description}{ports}"[:120])
    return "\n".join(lines)


class PlannerBackend(Protocol):
    def propose_intent(self, query: str, registry: Registry) -> QueryIntent: ...

    def rank_preferences(self, candidate_summaries: Sequence[str]) -> list[int] | None: ...

    def rationale_note(self) -> str | None: ...


class DeterministicBackend:
    """Keyword-rule intent mapper (rule table version 1).

    Rules are checked in a fixed order; the first match wins. The table is
    documented in docs/intent_rules.md and deliberately small: it covers the
    query families the fixture dataset can answer.
    """

    kind = "deterministic"

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig(kind="deterministic")

    def propose_intent(self, query: str, registry: Registry) -> QueryIntent:
        text = query.strip()
        lowered = text.lower()
        if not text:
            raise IntentError("query is empty")

        hazards = tuple(sorted({w for w in HAZARD_WORDS if w in lowered}))
        regions = _regions_in_order(lowered)
        cables = tuple(dict.fromkeys(CABLE_TOKEN_RE.findall(text)))

        # Rule 1: multi-hazard expected impact.
        if hazards:
            params = {}
            prob = PROBABILITY_RE.search(lowered)
            if prob:
                params["failure_probability"] = str(Fraction(prob.group(1)) / 100)
            return QueryIntent(
                goal_kind="impact_table",
                subject=Subject(entity_type="hazard_event", identifiers=hazards),
                aggregation="country",
                time_window=None,
                parameters=tuple(sorted(params.items())),
                classification=Classification(data_dependency=True),
            )

        # Rule 2: cascading failure analysis between regions.
        if "cascad" in lowered and len(regions) >= 2:
            return QueryIntent(
                goal_kind="cascade_timeline",
                subject=Subject(entity_type="region_pair", identifiers=regions[:2]),
                aggregation="asn",
                time_window=None,
                parameters=(),
                classification=Classification(spatial=True, temporal=True, causal=True, data_dependency=True),
            )

        # Rule 3: latency forensics pointing at a cable cause.
        if "latency" in lowered and "cable" in lowered and len(regions) >= 2:
            return QueryIntent(
                goal_kind="ranked_cable_table",
                subject=Subject(entity_type="region_pair", identifiers=regions[:2]),
                aggregation="cable",
                time_window=None,
                parameters=(),
                classification=Classification(temporal=True, causal=True, data_dependency=True),
            )

        # Rule 4: cable failure impact.
        if "cable" in lowered and ("impact" in lowered or "failure" in lowered) and cables:
            aggregation = "country" if "country" in lowered else "none"
            return QueryIntent(
                goal_kind="impact_table",
                subject=Subject(entity_type="cable", identifiers=cables),
                aggregation=aggregation,
                time_window=None,
                parameters=(),
                classification=Classification(spatial=True, data_dependency=True),
            )

        raise IntentError(
            f"no deterministic rule (table v{INTENT_RULES_VERSION}) matches the query; "
            "use the llm backend or rephrase"
        )

    def rank_preferences(self, candidate_summaries: Sequence[str]) -> list[int] | None:
        return None

    def rationale_note(self) -> str | None:
        return None


def _regions_in_order(lowered: str) -> tuple[str, ...]:
    found: list[str] = []
    for match in re.finditer(r"[a-z]+", lowered):
        region = REGION_WORDS.get(match.group(0))
        if region and region not in found:
            found.append(region)
    return tuple(found)


Transport = Callable[[list[dict[str, str]], BackendConfig], str]


def http_transport(messages: list[dict[str, str]], config: BackendConfig) -> str:
    import httpx

    headers = {"content-type": "application/json"}
    if config.auth_env:
        credential = os.environ.get(config.auth_env)
        if not credential:
            raise ConfigError(f"credential environment variable {config.auth_env!r} is not set")
        headers["authorization"] = f"Bearer {credential}"
    payload = {
        "model": config.model,
        "messages": messages,
        "temperature": 0,
        "response_format": {"type": "json_object"},
    }
    try:
        response = httpx.post(config.endpoint, json=payload, headers=headers, timeout=config.timeout)
        response.raise_for_status()
        body = response.json()
        return body["choices"][0]["message"]["content"]
    except httpx.HTTPError as exc:
        raise TransportError(f"model endpoint failure: {exc}") from exc
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise TransportError(f"malformed completion envelope: {exc}") from exc


class ScriptedTransport:
    """Canned transport for tests: returns queued responses in order."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls: list[list[dict[str, str]]] = []

    def __call__(self, messages: list[dict[str, str]], config: BackendConfig) -> str:
        self.calls.append(messages)
        if not self.responses:
            raise TransportError("scripted transport exhausted")
        return self.responses.pop(0)


class LLMBackend:
    """Schema-constrained intent proposals with a bounded repair loop."""

    kind = "llm"

    def __init__(self, config: BackendConfig, transport: Transport | None = None):
        self.config = config
        self.transport = transport or http_transport
        self._last_rationale: str | None = None

    def propose_intent(self, query: str, registry: Registry) -> QueryIntent:
        template = load_prompt("intent", self.config.prompt_dir)
        vocabulary = ", ".join(sorted(registry.kinds))
        base = template.render(
            query=query,
            registry_summary=summarize_registry(registry),
            vocabulary=vocabulary,
            validator_errors="",
        )
        messages = [{"role": "user", "content": base}]
        collected: list[str] = []
        for attempt in range(1, self.config.max_repair_attempts + 1):
            content = self.transport(messages, self.config)
            raw, parse_error = _parse_json_payload(content)
            if parse_error:
                errors = [parse_error]
                intent = None
            else:
                intent, errors = validate_intent_dict(raw)
            if intent is not None:
                return intent
            collected.extend(f"attempt {attempt}: {msg}" for msg in errors)
            repair = (
                "The previous response was not a valid intent document. "
                f"Validator messages: {'; '.join(errors)}. "
                "Reply with only the corrected JSON object."
            )
            messages = messages + [
                {"role": "assistant", "content": content},
                {"role": "user", "content": repair},
            ]
        raise IntentError(
            f"backend failed to produce a valid intent after {self.config.max_repair_attempts} attempts",
            attempts=collected,
        )

    def rank_preferences(self, candidate_summaries: Sequence[str]) -> list[int] | None:
        return None

    def rationale_note(self) -> str | None:
        return self._last_rationale


def _parse_json_payload(content: str) -> tuple[Any, str | None]:
    text = content.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text)
    try:
        return json.loads(text), None
    except json.JSONDecodeError as exc:
        return None, f"response is not valid JSON ({exc.msg} at position {exc.pos})"


def make_backend(config: BackendConfig, transport: Transport | None = None) -> PlannerBackend:
    if config.kind == "deterministic":
        return DeterministicBackend(config)
    if config.kind == "llm":
        return LLMBackend(config, transport)
    if config.kind == "scripted":
        if transport is None:
            raise ConfigError("scripted backend requires a scripted transport")
        return LLMBackend(config, transport)
    raise ConfigError(f"unknown backend kind {config.kind!r}")
