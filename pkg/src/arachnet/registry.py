"""Capability registry: loading, validation, and query surface.

A registry is a directory of human-editable JSON documents:

    vocabulary.json            list of declared data kinds
    translations.json          registered format/kind adapters
    capabilities/<id>.json     one document per capability
    capabilities/curated/...   promoted composite capabilities

Documents are validated strictly at load time. Unknown top-level fields,
undeclared data kinds, and duplicate ids are rejected with errors that name
the offending file and field, so registry typos surface before any planning
happens. A loaded Registry is immutable and safe to share across runs.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .errors import DuplicateIdError, SchemaViolationError, UnknownKindError
from .jsonutil import read_json

FORMATS = ("table", "series", "scalar", "graph")
KIND_RE = re.compile(r"^[a-z0-9_]+$")
ID_RE = re.compile(r"^[a-z0-9_]+\.[a-z0-9_]+$")

CONSTRAINT_KINDS: dict[str, dict[str, set[str]]] = {
    "data_availability": {"required": set(), "optional": {"source", "run_input", "kind"}},
    "temporal_coverage": {"required": {"start", "end"}, "optional": set()},
    "geographic_scope": {"required": {"regions"}, "optional": set()},
    "compute_cost": {"required": {"max_cost"}, "optional": set()},
    "rate_limit": {"required": {"per_minute"}, "optional": set()},
}

# Constraint kinds that gate feasibility; the rest are advisory and surface
# as risks in stage-1 artifacts.
HARD_CONSTRAINT_KINDS = ("data_availability", "temporal_coverage")

DEFAULT_ADAPTER_COST = 0.5


@dataclass(frozen=True, order=True)
class DataKindSpec:
    """A semantic data category: kind token, encoding format, optional unit."""

    kind: str
    format: str
    unit: str | None = None

    def label(self) -> str:
        u = f" [{self.unit}]" if self.unit else ""
        return f"{self.kind}/{self.format}{u}"

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "format": self.format, "unit": self.unit}


@dataclass(frozen=True)
class PortSpec:
    name: str
    data: DataKindSpec
    required: bool = True

    def to_json(self) -> dict[str, Any]:
        return {"name": self.name, "data": self.data.to_json(), "required": self.required}


@dataclass(frozen=True)
class Constraint:
    kind: str
    params: tuple[tuple[str, str], ...]

    @property
    def params_map(self) -> dict[str, str]:
        return dict(self.params)

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": self.params_map}

    @staticmethod
    def make(kind: str, params: Mapping[str, str]) -> "Constraint":
        return Constraint(kind=kind, params=tuple(sorted((str(k), str(v)) for k, v in params.items())))


@dataclass(frozen=True)
class ParamSpec:
    name: str
    required: bool = False
    default: str | None = None


@dataclass(frozen=True)
class CompositeDef:
    """Wiring of a promoted chain: member capabilities plus internal bindings.

    bindings[i] maps a member input port either to "chain:<j>:<port>" (the
    output of an earlier member) or to "external:<port>" (an input of the
    composite itself).
    """

    chain: tuple[str, ...]
    bindings: tuple[tuple[tuple[str, str], ...], ...]

    def to_json(self) -> dict[str, Any]:
        return {"chain": list(self.chain), "bindings": [dict(b) for b in self.bindings]}


@dataclass(frozen=True)
class CapabilityEntry:
    id: str
    framework: str
    description: str
    inputs: tuple[PortSpec, ...]
    outputs: tuple[PortSpec, ...]
    constraints: tuple[Constraint, ...]
    cost_hint: float
    reliability: float
    provenance: str
    version: int
    params: tuple[ParamSpec, ...] = ()
    notes: str | None = None
    composite_of: CompositeDef | None = None

    @property
    def function(self) -> str:
        return self.id.split(".", 1)[1]

    def input_port(self, name: str) -> PortSpec | None:
        return next((p for p in self.inputs if p.name == name), None)

    def output_port(self, name: str) -> PortSpec | None:
        return next((p for p in self.outputs if p.name == name), None)

    def constraint_params(self, kind: str) -> list[dict[str, str]]:
        return [c.params_map for c in self.constraints if c.kind == kind]

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "id": self.id,
            "framework": self.framework,
            "description": self.description,
            "inputs": [
                {"name": p.name, "kind": p.data.kind, "format": p.data.format, "unit": p.data.unit, "required": p.required}
                for p in self.inputs
            ],
            "outputs": [
                {"name": p.name, "kind": p.data.kind, "format": p.data.format, "unit": p.data.unit}
                for p in self.outputs
            ],
            "constraints": [c.to_json() for c in self.constraints],
            "cost_hint": self.cost_hint,
            "reliability": self.reliability,
            "provenance": self.provenance,
            "version": self.version,
        }
        if self.params:
            doc["params"] = [
                {"name": p.name, "required": p.required, "default": p.default} for p in self.params
            ]
        if self.notes:
            doc["notes"] = self.notes
        if self.composite_of:
            doc["composite_of"] = self.composite_of.to_json()
        return doc


@dataclass(frozen=True)
class Translation:
    adapter_id: str
    from_spec: DataKindSpec
    to_spec: DataKindSpec
    cost: float = DEFAULT_ADAPTER_COST
    lossy: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "adapter_id": self.adapter_id,
            "from": self.from_spec.to_json(),
            "to": self.to_spec.to_json(),
            "cost": self.cost,
            "lossy": self.lossy,
        }


@dataclass(frozen=True)
class CompatibilityResult:
    """Outcome of a port compatibility query.

    status is one of "direct", "via_adapters", "incompatible". For the
    adapter case, path holds the cheapest translation chain and total_cost
    its summed cost.
    """

    status: str
    path: tuple[Translation, ...] = ()
    total_cost: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status != "incompatible"


@dataclass(frozen=True)
class Registry:
    entries: Mapping[str, CapabilityEntry]
    translations: tuple[Translation, ...]
    vocabulary: frozenset[DataKindSpec]
    source_dir: str | None = None

    # Derived indexes, filled in by load/build.
    kinds: frozenset[str] = field(default_factory=frozenset)

    def entry(self, capability_id: str) -> CapabilityEntry | None:
        return self.entries.get(capability_id)

    def translation(self, adapter_id: str) -> Translation | None:
        return next((t for t in self.translations if t.adapter_id == adapter_id), None)

    def frameworks(self) -> list[str]:
        return sorted({e.framework for e in self.entries.values()})

    def sorted_entries(self) -> list[CapabilityEntry]:
        return [self.entries[k] for k in sorted(self.entries)]


# --- document validation ------------------------------------------------------


def _expect_keys(doc: Mapping[str, Any], allowed: set[str], required: set[str], file: str) -> None:
    for key in doc:
        if key not in allowed:
            raise SchemaViolationError(file, key, "unknown top-level field")
    for key in required:
        if key not in doc:
            raise SchemaViolationError(file, key, "missing required field")


def _parse_kind_spec(raw: Mapping[str, Any], file: str, field_name: str) -> DataKindSpec:
    if not isinstance(raw, Mapping):
        raise SchemaViolationError(file, field_name, "expected an object")
    kind = raw.get("kind")
    fmt = raw.get("format")
    unit = raw.get("unit")
    if not isinstance(kind, str) or not KIND_RE.match(kind):
        raise SchemaViolationError(file, f"{field_name}.kind", "kind must be a non-empty lowercase [a-z0-9_]+ token")
    if fmt not in FORMATS:
        raise SchemaViolationError(file, f"{field_name}.format", f"format must be one of {FORMATS}")
    if unit is not None and not isinstance(unit, str):
        raise SchemaViolationError(file, f"{field_name}.unit", "unit must be a string or null")
    return DataKindSpec(kind=kind, format=fmt, unit=unit)


def _parse_constraint(raw: Mapping[str, Any], file: str, where: str) -> Constraint:
    if not isinstance(raw, Mapping) or set(raw) - {"kind", "params"}:
        raise SchemaViolationError(file, where, "constraint must be an object with kind and params")
    kind = raw.get("kind")
    if kind not in CONSTRAINT_KINDS:
        raise SchemaViolationError(file, f"{where}.kind", f"unknown constraint kind {kind!r}")
    params = raw.get("params") or {}
    if not isinstance(params, Mapping) or any(not isinstance(v, str) for v in params.values()):
        raise SchemaViolationError(file, f"{where}.params", "params must map strings to strings")
    schema = CONSTRAINT_KINDS[kind]
    keys = set(params)
    missing = schema["required"] - keys
    extra = keys - schema["required"] - schema["optional"]
    if missing:
        raise SchemaViolationError(file, f"{where}.params", f"missing keys {sorted(missing)} for {kind}")
    if extra:
        raise SchemaViolationError(file, f"{where}.params", f"unexpected keys {sorted(extra)} for {kind}")
    return Constraint.make(kind, params)


def _parse_port(raw: Mapping[str, Any], file: str, where: str, is_input: bool) -> PortSpec:
    allowed = {"name", "kind", "format", "unit"} | ({"required"} if is_input else set())
    if not isinstance(raw, Mapping):
        raise SchemaViolationError(file, where, "port must be an object")
    extra = set(raw) - allowed
    if extra:
        raise SchemaViolationError(file, where, f"unexpected port fields {sorted(extra)}")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaViolationError(file, f"{where}.name", "port name must be a non-empty string")
    data = _parse_kind_spec(raw, file, where)
    required = bool(raw.get("required", True))
    return PortSpec(name=name, data=data, required=required)


def _parse_capability(doc: Mapping[str, Any], file: str) -> CapabilityEntry:
    allowed = {
        "id", "framework", "description", "inputs", "outputs", "constraints",
        "cost_hint", "reliability", "provenance", "version", "params", "notes", "composite_of",
    }
    required = {"id", "framework", "description", "inputs", "outputs", "constraints",
                "cost_hint", "reliability", "provenance", "version"}
    _expect_keys(doc, allowed, required, file)

    cap_id = doc["id"]
    if not isinstance(cap_id, str) or not ID_RE.match(cap_id):
        raise SchemaViolationError(file, "id", "id must look like framework.function")
    framework = doc["framework"]
    if framework != cap_id.split(".", 1)[0]:
        raise SchemaViolationError(file, "framework", "framework must match the id prefix")
    description = doc["description"]
    if not isinstance(description, str) or not description.strip():
        raise SchemaViolationError(file, "description", "description must be a non-empty string")

    inputs = tuple(_parse_port(p, file, f"inputs[{i}]", True) for i, p in enumerate(doc["inputs"]))
    outputs = tuple(_parse_port(p, file, f"outputs[{i}]", False) for i, p in enumerate(doc["outputs"]))
    if not outputs:
        raise SchemaViolationError(file, "outputs", "a capability must declare at least one output")
    for ports, label in ((inputs, "inputs"), (outputs, "outputs")):
        names = [p.name for p in ports]
        if len(names) != len(set(names)):
            raise SchemaViolationError(file, label, "port names must be unique")

    constraints = tuple(
        _parse_constraint(c, file, f"constraints[{i}]") for i, c in enumerate(doc["constraints"])
    )

    cost_hint = doc["cost_hint"]
    if not isinstance(cost_hint, (int, float)) or cost_hint < 0:
        raise SchemaViolationError(file, "cost_hint", "cost_hint must be a non-negative number")
    reliability = doc["reliability"]
    if not isinstance(reliability, (int, float)) or not (0 <= reliability <= 1):
        raise SchemaViolationError(file, "reliability", "reliability must be within [0, 1]")
    provenance = doc["provenance"]
    if provenance not in ("manual", "curated"):
        raise SchemaViolationError(file, "provenance", "provenance must be 'manual' or 'curated'")
    version = doc["version"]
    if not isinstance(version, int) or version < 1:
        raise SchemaViolationError(file, "version", "version must be an integer >= 1")

    params: list[ParamSpec] = []
    for i, raw in enumerate(doc.get("params", [])):
        if not isinstance(raw, Mapping) or set(raw) - {"name", "required", "default"}:
            raise SchemaViolationError(file, f"params[{i}]", "param spec allows name, required, default")
        pname = raw.get("name")
        if not isinstance(pname, str) or not pname:
            raise SchemaViolationError(file, f"params[{i}].name", "param name must be a non-empty string")
        default = raw.get("default")
        if default is not None and not isinstance(default, str):
            raise SchemaViolationError(file, f"params[{i}].default", "default must be a string")
        params.append(ParamSpec(name=pname, required=bool(raw.get("required", False)), default=default))

    notes = doc.get("notes")
    if notes is not None and not isinstance(notes, str):
        raise SchemaViolationError(file, "notes", "notes must be a string")

    composite = None
    raw_comp = doc.get("composite_of")
    if raw_comp is not None:
        if not isinstance(raw_comp, Mapping) or set(raw_comp) - {"chain", "bindings"}:
            raise SchemaViolationError(file, "composite_of", "expected object with chain and bindings")
        chain = raw_comp.get("chain")
        bindings = raw_comp.get("bindings")
        if not isinstance(chain, list) or len(chain) < 2 or any(not isinstance(c, str) for c in chain):
            raise SchemaViolationError(file, "composite_of.chain", "chain must list >= 2 capability ids")
        if not isinstance(bindings, list) or len(bindings) != len(chain):
            raise SchemaViolationError(file, "composite_of.bindings", "one binding map per chain member")
        parsed_bindings = []
        for i, b in enumerate(bindings):
            if not isinstance(b, Mapping) or any(not isinstance(v, str) for v in b.values()):
                raise SchemaViolationError(file, f"composite_of.bindings[{i}]", "binding must map port to string")
            parsed_bindings.append(tuple(sorted((str(k), str(v)) for k, v in b.items())))
        composite = CompositeDef(chain=tuple(chain), bindings=tuple(parsed_bindings))
    if provenance == "curated" and composite is None:
        raise SchemaViolationError(file, "composite_of", "curated entries must carry a composite definition")

    return CapabilityEntry(
        id=cap_id,
        framework=framework,
        description=description.strip(),
        inputs=inputs,
        outputs=outputs,
        constraints=constraints,
        cost_hint=float(cost_hint),
        reliability=float(reliability),
        provenance=provenance,
        version=version,
        params=tuple(params),
        notes=notes,
        composite_of=composite,
    )


def _parse_translation(raw: Mapping[str, Any], file: str, idx: int) -> Translation:
    where = f"translations[{idx}]"
    allowed = {"adapter_id", "from", "to", "cost", "lossy"}
    if not isinstance(raw, Mapping) or set(raw) - allowed:
        raise SchemaViolationError(file, where, f"translation fields must be within {sorted(allowed)}")
    adapter_id = raw.get("adapter_id")
    if not isinstance(adapter_id, str) or not adapter_id:
        raise SchemaViolationError(file, f"{where}.adapter_id", "adapter_id must be a non-empty string")
    from_spec = _parse_kind_spec(raw.get("from", {}), file, f"{where}.from")
    to_spec = _parse_kind_spec(raw.get("to", {}), file, f"{where}.to")
    if from_spec == to_spec:
        raise SchemaViolationError(file, where, "translation endpoints must differ")
    cost = raw.get("cost", DEFAULT_ADAPTER_COST)
    if not isinstance(cost, (int, float)) or cost < 0:
        raise SchemaViolationError(file, f"{where}.cost", "cost must be a non-negative number")
    return Translation(
        adapter_id=adapter_id,
        from_spec=from_spec,
        to_spec=to_spec,
        cost=float(cost),
        lossy=bool(raw.get("lossy", False)),
    )


# --- loading ------------------------------------------------------------------


def _check_zero_cost_cycles(translations: Iterable[Translation], file: str) -> None:
    # A cycle of zero-cost edges would let planning loop for free.
    zero_edges: dict[DataKindSpec, list[DataKindSpec]] = {}
    for t in translations:
        if t.cost == 0:
            zero_edges.setdefault(t.from_spec, []).append(t.to_spec)

    visiting: set[DataKindSpec] = set()
    done: set[DataKindSpec] = set()

    def visit(node: DataKindSpec) -> None:
        if node in done:
            return
        if node in visiting:
            raise SchemaViolationError(file, "translations", f"zero-cost translation cycle through {node.label()}")
        visiting.add(node)
        for nxt in zero_edges.get(node, []):
            visit(nxt)
        visiting.discard(node)
        done.add(node)

    for start in list(zero_edges):
        visit(start)


def build_registry(
    vocabulary: Iterable[DataKindSpec],
    entries: Iterable[CapabilityEntry],
    translations: Iterable[Translation] = (),
    source_dir: str | None = None,
) -> Registry:
    """Assemble and cross-validate a registry from parsed pieces."""
    vocab = frozenset(vocabulary)
    kinds = frozenset(s.kind for s in vocab)
    entry_map: dict[str, CapabilityEntry] = {}
    for entry in sorted(entries, key=lambda e: e.id):
        if entry.id in entry_map:
            raise DuplicateIdError(entry.id, [entry.id, entry.id])
        entry_map[entry.id] = entry
        for port in list(entry.inputs) + list(entry.outputs):
            if port.data not in vocab:
                raise UnknownKindError(port.data.kind, f"{entry.id} port {port.name!r} uses undeclared {port.data.label()}")
    trans = tuple(sorted(translations, key=lambda t: t.adapter_id))
    for t in trans:
        for side, spec in (("from", t.from_spec), ("to", t.to_spec)):
            if spec not in vocab:
                raise UnknownKindError(spec.kind, f"translation {t.adapter_id!r} {side} endpoint undeclared")
    _check_zero_cost_cycles(trans, "translations.json")
    return Registry(
        entries=dict(entry_map),
        translations=trans,
        vocabulary=vocab,
        source_dir=source_dir,
        kinds=kinds,
    )


def load_registry(directory: str | Path) -> Registry:
    """Load and validate a registry directory.

    Loading is order-independent: capability documents are processed sorted
    by id, so two loads of the same directory produce structurally identical
    registries.
    """
    root = Path(directory)
    vocab_path = root / "vocabulary.json"
    trans_path = root / "translations.json"
    caps_dir = root / "capabilities"
    for p in (vocab_path, trans_path, caps_dir):
        if not p.exists():
            raise SchemaViolationError(str(p), "-", "missing registry file or directory")

    raw_vocab = read_json(vocab_path)
    if not isinstance(raw_vocab, list):
        raise SchemaViolationError(str(vocab_path), "-", "vocabulary must be a JSON list")
    vocabulary = [_parse_kind_spec(v, str(vocab_path), f"[{i}]") for i, v in enumerate(raw_vocab)]

    raw_trans = read_json(trans_path)
    if not isinstance(raw_trans, list):
        raise SchemaViolationError(str(trans_path), "-", "translations must be a JSON list")
    translations = [_parse_translation(t, str(trans_path), i) for i, t in enumerate(raw_trans)]
    seen_adapters: set[str] = set()
    for t in translations:
        if t.adapter_id in seen_adapters:
            raise SchemaViolationError(str(trans_path), "adapter_id", f"duplicate adapter id {t.adapter_id!r}")
        seen_adapters.add(t.adapter_id)

    by_id: dict[str, tuple[str, CapabilityEntry]] = {}
    for path in sorted(caps_dir.rglob("*.json")):
        doc = read_json(path)
        if not isinstance(doc, Mapping):
            raise SchemaViolationError(str(path), "-", "capability document must be a JSON object")
        entry = _parse_capability(doc, str(path))
        if entry.id in by_id:
            raise DuplicateIdError(entry.id, [by_id[entry.id][0], str(path)])
        by_id[entry.id] = (str(path), entry)

    registry = build_registry(
        vocabulary,
        [entry for _, entry in sorted(by_id.values(), key=lambda pair: pair[1].id)],
        translations,
        source_dir=str(root),
    )
    # Composite chains must reference loaded entries.
    for entry in registry.entries.values():
        if entry.composite_of:
            for member in entry.composite_of.chain:
                if member not in registry.entries:
                    raise SchemaViolationError(by_id[entry.id][0], "composite_of.chain", f"unknown member {member!r}")
    return registry


# --- queries ------------------------------------------------------------------


def find_producers(registry: Registry, kind: str) -> list[CapabilityEntry]:
    """All entries with an output port of the given kind, sorted by id."""
    if kind not in registry.kinds:
        raise UnknownKindError(kind)
    return [
        entry
        for entry in registry.sorted_entries()
        if any(p.data.kind == kind for p in entry.outputs)
    ]


def cheapest_translation_path(
    registry: Registry, from_spec: DataKindSpec, to_spec: DataKindSpec
) -> tuple[tuple[Translation, ...], float] | None:
    """Cheapest adapter chain between two kind specs, or None.

    Dijkstra over the translation graph; ties broken by the lexicographic
    sequence of adapter ids so results are stable across runs.
    """
    if from_spec == to_spec:
        return ((), 0.0)
    out_edges: dict[DataKindSpec, list[Translation]] = {}
    for t in registry.translations:
        out_edges.setdefault(t.from_spec, []).append(t)

    best: dict[DataKindSpec, tuple[float, tuple[str, ...]]] = {}
    heap: list[tuple[float, tuple[str, ...], int, DataKindSpec, tuple[Translation, ...]]] = []
    counter = 0
    heapq.heappush(heap, (0.0, (), counter, from_spec, ()))
    while heap:
        cost, ids, _, node, path = heapq.heappop(heap)
        if node == to_spec:
            return (path, cost)
        known = best.get(node)
        if known is not None and known <= (cost, ids):
            continue
        best[node] = (cost, ids)
        for t in out_edges.get(node, []):
            counter += 1
            heapq.heappush(
                heap,
                (cost + t.cost, ids + (t.adapter_id,), counter, t.to_spec, path + (t,)),
            )
    return None


def check_compatibility(out_port: PortSpec, in_port: PortSpec, registry: Registry) -> CompatibilityResult:
    """Decide whether an output port can feed an input port.

    Direct when kind, format, and unit all match; otherwise the cheapest
    translation path is searched. Incompatibility is a value, not an error.
    """
    for spec in (out_port.data, in_port.data):
        if spec.kind not in registry.kinds:
            raise UnknownKindError(spec.kind)
    if out_port.data == in_port.data:
        return CompatibilityResult(status="direct")
    found = cheapest_translation_path(registry, out_port.data, in_port.data)
    if found is None:
        return CompatibilityResult(status="incompatible")
    path, cost = found
    return CompatibilityResult(status="via_adapters", path=path, total_cost=cost)


def reachable_kinds(
    registry: Registry,
    available_kinds: Iterable[str],
    usable: Callable[[CapabilityEntry], bool] | None = None,
) -> set[str]:
    """Forward closure of producible kinds from the given starting kinds.

    A capability fires once every required input kind is reachable; an
    optional `usable` predicate can exclude entries (constraint filtering).
    """
    have = set(available_kinds)
    entries = [e for e in registry.sorted_entries() if usable is None or usable(e)]
    changed = True
    while changed:
        changed = False
        for entry in entries:
            if all(p.data.kind in have for p in entry.inputs if p.required):
                for port in entry.outputs:
                    if port.data.kind not in have:
                        have.add(port.data.kind)
                        changed = True
        for t in registry.translations:
            if t.from_spec.kind in have and t.to_spec.kind not in have:
                have.add(t.to_spec.kind)
                changed = True
    return have
