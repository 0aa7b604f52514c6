from __future__ import annotations

from datetime import datetime, timezone

import pytest

from arachnet.backend import DeterministicBackend
from arachnet.executor import AdapterSet, FixedClock
from arachnet.orchestrator import Engine, EngineConfig
from arachnet.registry import load_registry
from arachnet.toolsim import FixtureDataset, SimToolAdapter, fixture_registry_dir


@pytest.fixture(scope="session")
def registry():
    return load_registry(fixture_registry_dir())


@pytest.fixture(scope="session")
def dataset():
    return FixtureDataset.load()


@pytest.fixture(scope="session")
def adapters(dataset):
    return AdapterSet([SimToolAdapter(dataset)])


@pytest.fixture(scope="session")
def backend():
    return DeterministicBackend()


@pytest.fixture
def engine_factory(tmp_path):
    """Build engines over fresh stores with deterministic clocks."""
    counters = {"n": 0}

    def factory(**overrides) -> Engine:
        counters["n"] += 1
        store_root = tmp_path / f"store{counters['n']}"
        config = EngineConfig(
            registry_dir=overrides.pop("registry_dir", fixture_registry_dir()),
            store_root=overrides.pop("store_root", store_root),
            wall_clock=overrides.pop(
                "wall_clock", _ticking_wall_clock(datetime(2025, 7, 1, tzinfo=timezone.utc))
            ),
            mono_clock=overrides.pop("mono_clock", FixedClock()),
            rng_seed=overrides.pop("rng_seed", 1234),
            **{k: v for k, v in overrides.items() if k in EngineConfig.__dataclass_fields__},
        )
        engine_kwargs = {
            k: v for k, v in overrides.items() if k not in EngineConfig.__dataclass_fields__
        }
        return Engine(config, **engine_kwargs)

    return factory


def _ticking_wall_clock(start: datetime):
    state = {"t": start}

    def clock() -> datetime:
        from datetime import timedelta

        state["t"] = state["t"] + timedelta(milliseconds=1)
        return state["t"]

    return clock


CABLE_IMPACT_QUERY = "Identify the impact at a country level due to cable C1 failure"
CABLE_IMPACT_NAMED_QUERY = "Identify the impact at a country level due to SeaMeWe-5 cable failure"
MULTI_HAZARD_QUERY = (
    "Identify the impact of severe earthquakes and hurricanes globally "
    "assuming a 10% infra failure probability"
)
CASCADE_QUERY = "Analyze the cascading effects of submarine cable failures between Europe and Asia"
FORENSICS_QUERY = (
    "A sudden increase in latency was observed from European probes to Asian destinations "
    "starting three days ago. Determine if a submarine cable failure caused this, "
    "and if so, identify the specific cable."
)


@pytest.fixture(scope="session")
def queries():
    return {
        "cable_impact": CABLE_IMPACT_QUERY,
        "cable_impact_named": CABLE_IMPACT_NAMED_QUERY,
        "multi_hazard": MULTI_HAZARD_QUERY,
        "cascade": CASCADE_QUERY,
        "forensics": FORENSICS_QUERY,
    }


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One visible pass/fail line per acceptance criterion."""
    lines = []
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            nodeid = str(getattr(report, "nodeid", ""))
            if "test_acceptance" in nodeid and getattr(report, "when", "call") == "call":
                lines.append((nodeid.split("::")[-1], label))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, label in sorted(lines):
            terminalreporter.write_line(f"{label}  {name}")
