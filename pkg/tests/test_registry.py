from __future__ import annotations

import json
import random
import shutil

import pytest

from arachnet.errors import DuplicateIdError, SchemaViolationError, UnknownKindError
from arachnet.registry import (
    DataKindSpec,
    PortSpec,
    Translation,
    build_registry,
    check_compatibility,
    cheapest_translation_path,
    find_producers,
    load_registry,
)
from arachnet.toolsim import fixture_registry_dir

from oracles import oracle_simple_paths_min_cost


def port(kind, fmt="table", unit=None, name="p"):
    return PortSpec(name=name, data=DataKindSpec(kind, fmt, unit))


def test_load_fixture_registry_counts(registry):
    files = sorted(p.stem for p in (fixture_registry_dir() / "capabilities").rglob("*.json"))
    assert sorted(registry.entries) == files
    assert len(registry.entries) == 17


def test_load_is_order_independent_and_deterministic(registry):
    again = load_registry(fixture_registry_dir())
    assert again.entries == registry.entries
    assert again.translations == registry.translations
    assert again.vocabulary == registry.vocabulary


def test_empty_capabilities_dir_loads(tmp_path):
    src = fixture_registry_dir()
    shutil.copyfile(src / "vocabulary.json", tmp_path / "vocabulary.json")
    (tmp_path / "translations.json").write_text("[]")
    (tmp_path / "capabilities").mkdir()
    registry = load_registry(tmp_path)
    assert registry.entries == {}


def _copy_registry(tmp_path):
    dst = tmp_path / "registry"
    shutil.copytree(fixture_registry_dir(), dst)
    return dst


def test_duplicate_id_names_both_files(tmp_path):
    dst = _copy_registry(tmp_path)
    doc = json.loads((dst / "capabilities" / "nautilus.geolocate.json").read_text())
    (dst / "capabilities" / "zz_copy.json").write_text(json.dumps(doc))
    with pytest.raises(DuplicateIdError) as err:
        load_registry(dst)
    assert "nautilus.geolocate" in str(err.value)
    assert "zz_copy.json" in str(err.value)


def test_unknown_kind_rejected_at_load(tmp_path):
    dst = _copy_registry(tmp_path)
    path = dst / "capabilities" / "nautilus.geolocate.json"
    doc = json.loads(path.read_text())
    doc["outputs"][0]["kind"] = "mystery_kind"
    path.write_text(json.dumps(doc))
    with pytest.raises(UnknownKindError) as err:
        load_registry(dst)
    assert "mystery_kind" in str(err.value)


def test_unknown_top_level_field_rejected(tmp_path):
    dst = _copy_registry(tmp_path)
    path = dst / "capabilities" / "nautilus.geolocate.json"
    doc = json.loads(path.read_text())
    doc["surprise"] = True
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaViolationError) as err:
        load_registry(dst)
    assert "surprise" in str(err.value)
    assert "nautilus.geolocate.json" in str(err.value)


def test_malformed_constraint_schema_rejected(tmp_path):
    dst = _copy_registry(tmp_path)
    path = dst / "capabilities" / "bgpwatch.route_change_scan.json"
    doc = json.loads(path.read_text())
    doc["constraints"] = [{"kind": "temporal_coverage", "params": {"start": "2025-01-01T00:00:00Z"}}]
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaViolationError) as err:
        load_registry(dst)
    assert "end" in str(err.value)


def test_zero_cost_translation_cycle_rejected():
    vocab = [DataKindSpec("a", "table"), DataKindSpec("b", "table")]
    translations = [
        Translation("ab", DataKindSpec("a", "table"), DataKindSpec("b", "table"), cost=0.0),
        Translation("ba", DataKindSpec("b", "table"), DataKindSpec("a", "table"), cost=0.0),
    ]
    with pytest.raises(SchemaViolationError):
        build_registry(vocab, [], translations)


def test_find_producers_fixture(registry):
    assert [e.id for e in find_producers(registry, "country_table")] == ["nautilus.geolocate"]
    two = [e.id for e in find_producers(registry, "impact_table")]
    assert two == sorted(two)
    assert {"nautilus.impact_aggregate", "xaminer.impact_aggregate"} <= set(two)


def test_find_producers_unknown_kind_on_empty_registry():
    empty = build_registry([], [], [])
    with pytest.raises(UnknownKindError):
        find_producers(empty, "cascade_timeline")


def test_find_producers_covers_all_entries(registry):
    covered = set()
    for kind in sorted(registry.kinds):
        covered.update(e.id for e in find_producers(registry, kind))
    with_outputs = {e.id for e in registry.entries.values() if e.outputs}
    assert covered == with_outputs


def test_check_compatibility_direct(registry):
    a = port("ip_set")
    b = port("ip_set")
    assert check_compatibility(a, b, registry).status == "direct"


def test_check_compatibility_via_fixture_adapter(registry):
    result = check_compatibility(port("ip_link_set"), port("ip_set"), registry)
    assert result.status == "via_adapters"
    assert [t.adapter_id for t in result.path] == ["extract_ips"]
    assert result.total_cost == 0.5


def test_check_compatibility_incompatible_verified_exhaustively(registry):
    out_spec = DataKindSpec("latency_series", "series", "ms")
    in_spec = DataKindSpec("impact_table", "table", "fraction")
    assert oracle_simple_paths_min_cost(registry.translations, out_spec, in_spec) is None
    result = check_compatibility(
        PortSpec("o", out_spec), PortSpec("i", in_spec), registry
    )
    assert result.status == "incompatible"


def test_dijkstra_matches_bruteforce_on_random_translation_graphs():
    rng = random.Random(42)
    for trial in range(60):
        kinds = [DataKindSpec(f"k{i}", "table") for i in range(rng.randint(3, 6))]
        translations = []
        used = set()
        for i in range(rng.randint(1, 8)):
            a, b = rng.sample(range(len(kinds)), 2)
            if (a, b) in used:
                continue
            used.add((a, b))
            translations.append(
                Translation(f"t{i:02d}", kinds[a], kinds[b], cost=rng.choice([0.25, 0.5, 0.5, 1.0]))
            )
        registry = build_registry(kinds, [], translations)
        src, dst = rng.sample(kinds, 2)
        expected = oracle_simple_paths_min_cost(translations, src, dst)
        got = cheapest_translation_path(registry, src, dst)
        if expected is None:
            assert got is None
        else:
            exp_path, exp_cost = expected
            assert got is not None
            path, cost = got
            assert cost == pytest.approx(exp_cost)
            assert cost == pytest.approx(sum(t.cost for t in path))
            assert tuple(t.adapter_id for t in path) == tuple(t.adapter_id for t in exp_path)


def test_translation_tie_break_prefers_lexicographic_adapter_ids():
    a, b, c, d = (DataKindSpec(k, "table") for k in ("a", "b", "c", "d"))
    translations = [
        Translation("m_ab", a, b, cost=0.5),
        Translation("m_bd", b, d, cost=0.5),
        Translation("a_ac", a, c, cost=0.5),
        Translation("z_cd", c, d, cost=0.5),
    ]
    registry = build_registry([a, b, c, d], [], translations)
    path, cost = cheapest_translation_path(registry, a, d)
    assert cost == 1.0
    assert [t.adapter_id for t in path] == ["a_ac", "z_cd"]
