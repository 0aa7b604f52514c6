"""Deterministic simulated measurement tools over the minitopo fixtures.

minitopo is a hand-checkable synthetic dataset: 5 cables, 16 IP links,
10 ASes, geolocation for every address, traceroutes and BGP events around a
constructed incident (cable C2 degrades at a known instant), and a small
hazard catalog. Every capability here is a pure function of its inputs and
the fixture tables, and every output is sorted, so repeated invocations are
byte-identical.

Scoring and statistical constants (robust-z 3.0, correlation window 3600 s,
burst rule 3-in-300 s) are also recorded in the fixture registry documents
so reviewers can audit them next to the capability they describe.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from .errors import (
    BadProbabilityError,
    InsufficientBaselineError,
    NoAnomalyError,
    SchemaViolationError,
    ToolError,
    UncoveredIpError,
    UnknownCableError,
)
from .executor import ADAPTER_IN_PORT, ADAPTER_OUT_PORT, DataValue
from .jsonutil import epoch_seconds, read_json
from .registry import DataKindSpec

# Region membership of fixture countries (module constant; the dataset keys
# regions by these names in traceroute records).
REGION_OF = {
    "FR": "europe",
    "DE": "europe",
    "UK": "europe",
    "SG": "asia",
    "IN": "asia",
    "JP": "asia",
    "EG": "africa",
    "US": "americas",
}

ROBUST_Z_THRESHOLD = 3.0
MAD_SCALE = 1.4826
MEDIAN_FILTER_WINDOW = 3
MIN_BASELINE_POINTS = 8
BGP_CORRELATION_WINDOW_S = 3600.0
BGP_MISS_FACTOR = 0.25
BURST_WINDOW_S = 300.0
BURST_MIN_EVENTS = 3

SPECS = {
    "cable_id_set": DataKindSpec("cable_id_set", "table"),
    "ip_link_set": DataKindSpec("ip_link_set", "table"),
    "ip_set": DataKindSpec("ip_set", "table"),
    "country_table": DataKindSpec("country_table", "table"),
    "impact_table": DataKindSpec("impact_table", "table", "fraction"),
    "hazard_event_set": DataKindSpec("hazard_event_set", "table"),
    "latency_series": DataKindSpec("latency_series", "series", "ms"),
    "anomaly_report": DataKindSpec("anomaly_report", "table"),
    "route_change_set": DataKindSpec("route_change_set", "table"),
    "traceroute_set": DataKindSpec("traceroute_set", "table"),
    "ranked_cable_table": DataKindSpec("ranked_cable_table", "table"),
    "cascade_timeline": DataKindSpec("cascade_timeline", "table"),
    "as_dependency_graph": DataKindSpec("as_dependency_graph", "graph"),
}


def fixtures_root() -> Path:
    return Path(str(resources.files("arachnet") / "fixtures"))


def minitopo_dir() -> Path:
    return fixtures_root() / "minitopo"


def fixture_registry_dir() -> Path:
    return fixtures_root() / "registry"


def _ip_key(ip: str) -> tuple[int, ...]:
    return tuple(int(part) for part in ip.split("."))


@dataclass(frozen=True)
class FixtureDataset:
    cables: tuple[dict, ...]
    ip_links: tuple[dict, ...]
    geoip: tuple[dict, ...]
    as_nodes: tuple[dict, ...]
    as_edges: tuple[dict, ...]
    bgp_events: tuple[dict, ...]
    traceroutes: tuple[dict, ...]
    hazard_events: tuple[dict, ...]

    @staticmethod
    def load(directory: str | Path | None = None) -> "FixtureDataset":
        root = Path(directory) if directory else minitopo_dir()
        as_deps = read_json(root / "as_deps.json")
        dataset = FixtureDataset(
            cables=tuple(read_json(root / "cables.json")),
            ip_links=tuple(read_json(root / "ip_links.json")),
            geoip=tuple(read_json(root / "geoip.json")),
            as_nodes=tuple(as_deps["nodes"]),
            as_edges=tuple(as_deps["edges"]),
            bgp_events=tuple(read_json(root / "bgp_events.json")),
            traceroutes=tuple(read_json(root / "traceroutes.json")),
            hazard_events=tuple(read_json(root / "hazard_events.json")),
        )
        dataset.validate()
        return dataset

    def validate(self) -> None:
        cable_ids = {c["cable_id"] for c in self.cables}
        for link in self.ip_links:
            if link["cable_id"] not in cable_ids:
                raise SchemaViolationError("ip_links.json", "cable_id", f"unknown cable {link['cable_id']!r}")
        covered = {g["ip"] for g in self.geoip}
        link_ips = {l["ip_a"] for l in self.ip_links} | {l["ip_b"] for l in self.ip_links}
        trace_ips = {ip for t in self.traceroutes for ip in t["path"]}
        missing = sorted((link_ips | trace_ips) - covered)
        if missing:
            raise SchemaViolationError("geoip.json", "ip", f"uncovered addresses {missing[:5]}")
        for table, name in ((self.bgp_events, "bgp_events.json"), (self.traceroutes, "traceroutes.json")):
            for row in table:
                epoch_seconds(row["timestamp"])  # raises on malformed timestamps

    # Derived lookups -----------------------------------------------------

    def country_of(self, ip: str) -> str:
        for row in self.geoip:
            if row["ip"] == ip:
                return row["country"]
        raise UncoveredIpError(f"address {ip!r} is not covered by the geolocation table")

    def footprint(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for row in self.geoip:
            counts[row["country"]] = counts.get(row["country"], 0) + 1
        return counts

    def links_of(self, cable_ids: Iterable[str]) -> list[dict]:
        wanted = set(cable_ids)
        return sorted((l for l in self.ip_links if l["cable_id"] in wanted), key=lambda l: l["link_id"])

    def cable_by_identifier(self, identifier: str) -> dict | None:
        for cable in self.cables:
            if cable["cable_id"] == identifier or cable["name"] == identifier:
                return cable
        return None


# --- capability implementations (pure) ----------------------------------------


def cable_dependency_lookup(dataset: FixtureDataset, cable_ids: list[str]) -> list[dict]:
    known = {c["cable_id"] for c in dataset.cables}
    unknown = sorted(set(cable_ids) - known)
    if unknown:
        raise UnknownCableError(f"unknown cable id(s) {unknown}")
    return dataset.links_of(cable_ids)


def ip_extract(links: list[dict]) -> list[dict]:
    ips = {l["ip_a"] for l in links} | {l["ip_b"] for l in links}
    return [{"ip": ip} for ip in sorted(ips, key=_ip_key)]


def geolocate(dataset: FixtureDataset, ips: list[str]) -> list[dict]:
    rows = [{"ip": ip, "country": dataset.country_of(ip)} for ip in ips]
    return sorted(rows, key=lambda r: _ip_key(r["ip"]))


def impact_aggregate(dataset: FixtureDataset, countries: list[dict]) -> list[dict]:
    """Affected count per country divided by that country's address footprint."""
    footprint = dataset.footprint()
    counts: dict[str, int] = {}
    for row in countries:
        counts[row["country"]] = counts.get(row["country"], 0) + 1
    return [
        {"country": country, "impact": counts[country] / footprint[country]}
        for country in sorted(counts)
    ]


def region_cable_search(dataset: FixtureDataset, region_a: str, region_b: str) -> list[dict]:
    found = []
    for cable in dataset.cables:
        regions = {REGION_OF.get(c) for c in cable["landing_countries"]}
        if region_a in regions and region_b in regions:
            found.append({"cable_id": cable["cable_id"]})
    return sorted(found, key=lambda r: r["cable_id"])


def hazard_event_process_exact(
    dataset: FixtureDataset, events: list[dict], probability: Fraction
) -> dict[str, Fraction]:
    """Exact-rational core: probability * sum of per-event country fractions.

    Kept in rationals so hazard_event_process(p) == p * hazard_event_process(1)
    holds exactly, not merely to floating-point tolerance.
    """
    if not (0 <= probability <= 1):
        raise BadProbabilityError(f"failure probability {probability} outside [0, 1]")
    footprint = dataset.footprint()
    totals: dict[str, Fraction] = {}
    for event in events:
        links = dataset.links_of(event["affected_cables"])
        ips = {l["ip_a"] for l in links} | {l["ip_b"] for l in links}
        counts: dict[str, int] = {}
        for ip in ips:
            country = dataset.country_of(ip)
            counts[country] = counts.get(country, 0) + 1
        for country, count in counts.items():
            totals[country] = totals.get(country, Fraction(0)) + Fraction(count, footprint[country])
    return {country: probability * total for country, total in totals.items()}


def hazard_event_process(dataset: FixtureDataset, events: list[dict], failure_probability: str) -> list[dict]:
    try:
        probability = Fraction(failure_probability)
    except (ValueError, ZeroDivisionError) as exc:
        raise BadProbabilityError(f"failure probability {failure_probability!r} is not a rational") from exc
    exact = hazard_event_process_exact(dataset, events, probability)
    return [{"country": c, "impact": float(v)} for c, v in sorted(exact.items())]


def impact_combine(impact_a: list[dict], impact_b: list[dict]) -> list[dict]:
    totals: dict[str, float] = {}
    for table in (impact_a, impact_b):
        for row in table:
            totals[row["country"]] = totals.get(row["country"], 0.0) + row["impact"]
    return [{"country": c, "impact": v} for c, v in sorted(totals.items())]


def hazard_cable_extract(events: list[dict]) -> list[dict]:
    cables = sorted({c for e in events for c in e["affected_cables"]})
    return [{"cable_id": c} for c in cables]


def as_dependency_graph(dataset: FixtureDataset) -> dict:
    return {
        "nodes": sorted((dict(n) for n in dataset.as_nodes), key=lambda n: n["asn"]),
        "edges": sorted((dict(e) for e in dataset.as_edges), key=lambda e: (e["src"], e["dst"])),
    }


def cascade_propagate(dataset: FixtureDataset, impact: list[dict], as_deps: dict, threshold: str) -> list[dict]:
    """Breadth-first failure propagation across cable, link, and AS layers.

    Round 0 derives from the impact table: countries at or above the
    threshold fail, cables with a failed landing fail, their links fail, and
    an AS seeds as failed when the failed-link share of its owned addresses
    reaches the threshold. Later rounds fail an AS when the failed share of
    its dependency ASes reaches the threshold. Terminates at the fixpoint.
    """
    try:
        theta = float(Fraction(threshold))
    except (ValueError, ZeroDivisionError) as exc:
        raise ToolError(f"threshold {threshold!r} is not a rational") from exc
    if not (0 < theta <= 1):
        raise ToolError(f"threshold {theta} outside (0, 1]")

    failed_countries = {row["country"] for row in impact if row["impact"] >= theta}
    failed_cables = sorted(
        c["cable_id"]
        for c in dataset.cables
        if any(country in failed_countries for country in c["landing_countries"])
    )
    failed_links = [l for l in dataset.links_of(failed_cables)]
    failed_link_ids = sorted(l["link_id"] for l in failed_links)
    failed_ips = {l["ip_a"] for l in failed_links} | {l["ip_b"] for l in failed_links}

    nodes = {n["asn"]: n for n in as_deps.get("nodes", [])}
    deps: dict[str, list[str]] = {asn: [] for asn in nodes}
    for edge in as_deps.get("edges", []):
        if edge["src"] in deps:
            deps[edge["src"]].append(edge["dst"])

    failed_as: set[str] = set()
    for asn, node in nodes.items():
        owned = node.get("ips", [])
        if owned and sum(1 for ip in owned if ip in failed_ips) / len(owned) >= theta:
            failed_as.add(asn)

    timeline: list[dict] = []
    if failed_cables:
        timeline.append({"round": 0, "layer": "cable", "failed": failed_cables})
    if failed_link_ids:
        timeline.append({"round": 0, "layer": "ip_link", "failed": failed_link_ids})
    if failed_as:
        timeline.append({"round": 0, "layer": "as", "failed": sorted(failed_as)})

    round_no = 0
    current = set(failed_as)
    while True:
        round_no += 1
        fresh = set()
        for asn, dep_list in deps.items():
            if asn in current or not dep_list:
                continue
            share = sum(1 for dep in dep_list if dep in current) / len(dep_list)
            if share >= theta:
                fresh.add(asn)
        if not fresh:
            break
        current |= fresh
        timeline.append({"round": round_no, "layer": "as", "failed": sorted(fresh)})
    return timeline


def route_change_scan(dataset: FixtureDataset) -> list[dict]:
    return sorted((dict(e) for e in dataset.bgp_events), key=lambda e: (e["timestamp"], e["prefix"]))


def route_anomaly_scan(events: list[dict], burst_window: str, burst_min: str) -> list[dict]:
    """Earliest burst of route changes: >= burst_min events inside the window."""
    window = float(burst_window)
    minimum = int(burst_min)
    stamps = sorted(epoch_seconds(e["timestamp"]) for e in events)
    for i, start in enumerate(stamps):
        size = sum(1 for t in stamps[i:] if t < start + window)
        if size >= minimum:
            onset = next(e["timestamp"] for e in sorted(events, key=lambda e: e["timestamp"])
                         if epoch_seconds(e["timestamp"]) == start)
            return [{"onset_timestamp": onset, "magnitude": float(size)}]
    return []


def latency_probe(dataset: FixtureDataset, region_a: str, region_b: str) -> list[list]:
    """Median RTT per timestamp across matching probe/destination regions."""
    buckets: dict[str, list[float]] = {}
    for route in dataset.traceroutes:
        if route["probe_region"] == region_a and route["dest_region"] == region_b:
            buckets.setdefault(route["timestamp"], []).append(float(route["rtt_ms"]))
    return [[ts, statistics.median(buckets[ts])] for ts in sorted(buckets)]


def _median_filter(values: list[float], window: int = MEDIAN_FILTER_WINDOW) -> list[float]:
    half = window // 2
    return [
        statistics.median(values[max(0, i - half): i + half + 1])
        for i in range(len(values))
    ]


def anomaly_detect(series: list[list], baseline_window: str, threshold_sigma: str) -> list[dict]:
    """Robust step detection: onset is the first evaluated point whose
    median-filtered value exceeds baseline_median + sigma * 1.4826 * MAD.

    baseline_window is either "auto" (first half of the series) or an
    ISO-8601 interval "start/end"; at least 8 baseline points are required.
    """
    sigma = float(threshold_sigma)
    points = sorted(series, key=lambda p: epoch_seconds(p[0]))
    values = [float(p[1]) for p in points]
    if baseline_window == "auto":
        split = len(points) // 2
        baseline_idx = list(range(split))
        eval_idx = list(range(split, len(points)))
    else:
        try:
            start_text, end_text = baseline_window.split("/", 1)
            start, end = epoch_seconds(start_text), epoch_seconds(end_text)
        except ValueError as exc:
            raise ToolError(f"baseline_window {baseline_window!r} must be 'auto' or 'start/end'") from exc
        baseline_idx = [i for i, p in enumerate(points) if start <= epoch_seconds(p[0]) < end]
        eval_idx = [i for i, p in enumerate(points) if epoch_seconds(p[0]) >= end]
    if len(baseline_idx) < MIN_BASELINE_POINTS:
        raise InsufficientBaselineError(
            f"baseline has {len(baseline_idx)} points; need at least {MIN_BASELINE_POINTS}"
        )

    baseline_values = [values[i] for i in baseline_idx]
    center = statistics.median(baseline_values)
    mad = statistics.median([abs(v - center) for v in baseline_values])
    cutoff = center + sigma * MAD_SCALE * mad
    filtered = _median_filter(values)
    for i in eval_idx:
        if filtered[i] > cutoff:
            magnitude = filtered[i] / center if center else float("inf")
            return [
                {
                    "onset_timestamp": points[i][0],
                    "magnitude": magnitude,
                    "baseline_median": center,
                    "threshold": cutoff,
                }
            ]
    return []


def suspect_cable_rank(
    report: list[dict],
    traces: list[dict],
    links: list[dict],
    routes: list[dict],
    window: str,
) -> list[dict]:
    """score(c) = P(c) * T(c).

    P(c): fraction of traceroute paths timestamped within [onset, onset +
    window] that traverse one of c's links (an adjacent hop pair equal to
    the link's endpoints). T(c): 1.0 when a BGP event whose old/new path
    delta touches c's endpoints lies within +/- window of onset, else 0.25.
    Rows sort by descending (score, cable_id).
    """
    if not report:
        raise NoAnomalyError("anomaly report is empty; nothing to attribute")
    onset = epoch_seconds(report[0]["onset_timestamp"])
    horizon = float(window)

    links_by_cable: dict[str, list[tuple[str, str]]] = {}
    endpoints_by_cable: dict[str, set[str]] = {}
    for link in links:
        pair = (link["ip_a"], link["ip_b"])
        links_by_cable.setdefault(link["cable_id"], []).append(pair)
        endpoints_by_cable.setdefault(link["cable_id"], set()).update(pair)

    window_paths = [
        t["path"] for t in traces if onset <= epoch_seconds(t["timestamp"]) <= onset + horizon
    ]

    def traverses(path: list[str], cable: str) -> bool:
        hops = list(path)
        pairs = {frozenset(p) for p in zip(hops, hops[1:])}
        return any(frozenset(link) in pairs for link in links_by_cable[cable])

    rows = []
    for cable in sorted(links_by_cable):
        if window_paths:
            p_score = sum(1 for path in window_paths if traverses(path, cable)) / len(window_paths)
        else:
            p_score = 0.0
        correlated = False
        for event in routes:
            if abs(epoch_seconds(event["timestamp"]) - onset) > horizon:
                continue
            delta = set(event["old_path"]) ^ set(event["new_path"])
            if delta & endpoints_by_cable[cable]:
                correlated = True
                break
        t_score = 1.0 if correlated else BGP_MISS_FACTOR
        rows.append(
            {
                "cable_id": cable,
                "score": p_score * t_score,
                "path_fraction": p_score,
                "bgp_correlated": correlated,
            }
        )
    rows.sort(key=lambda r: (r["score"], r["cable_id"]), reverse=True)
    return rows


def trace_dump(dataset: FixtureDataset) -> list[dict]:
    return sorted(
        (dict(t) for t in dataset.traceroutes),
        key=lambda t: (t["timestamp"], t["path"][0], t["path"][-1]),
    )


# --- adapter ---------------------------------------------------------------------


def _table(value: DataValue) -> list[dict]:
    return list(value.payload)


def _column(value: DataValue, key: str) -> list:
    return [row[key] for row in value.payload]


class SimToolAdapter:
    """Adapter exposing every fixture capability plus the extract_ips translation."""

    def __init__(self, dataset: FixtureDataset | None = None):
        self.dataset = dataset or FixtureDataset.load()

    def supported_capabilities(self) -> set[str]:
        return {
            "nautilus.cable_dependency_lookup",
            "nautilus.ip_extract",
            "nautilus.geolocate",
            "nautilus.impact_aggregate",
            "nautilus.region_cable_search",
            "xaminer.impact_aggregate",
            "xaminer.hazard_event_process",
            "xaminer.impact_combine",
            "xaminer.hazard_cable_extract",
            "topolens.as_dependency_graph",
            "cascadia.cascade_propagate",
            "bgpwatch.route_change_scan",
            "bgpwatch.route_anomaly_scan",
            "tracelens.latency_probe",
            "tracelens.anomaly_detect",
            "tracelens.trace_dump",
            "forensix.suspect_cable_rank",
            "extract_ips",
        }

    def invoke(
        self, capability_id: str, inputs: Mapping[str, DataValue], params: Mapping[str, str]
    ) -> dict[str, DataValue]:
        ds = self.dataset
        out = lambda port, kind, payload: {
            port: DataValue(data=SPECS[kind], payload=payload, provenance=capability_id)
        }

        if capability_id == "extract_ips":
            payload = ip_extract(_table(inputs[ADAPTER_IN_PORT]))
            return {ADAPTER_OUT_PORT: DataValue(SPECS["ip_set"], payload, capability_id)}
        if capability_id == "nautilus.cable_dependency_lookup":
            return out("links", "ip_link_set", cable_dependency_lookup(ds, _column(inputs["cables"], "cable_id")))
        if capability_id == "nautilus.ip_extract":
            return out("ips", "ip_set", ip_extract(_table(inputs["links"])))
        if capability_id == "nautilus.geolocate":
            return out("countries", "country_table", geolocate(ds, _column(inputs["ips"], "ip")))
        if capability_id in ("nautilus.impact_aggregate", "xaminer.impact_aggregate"):
            return out("impact", "impact_table", impact_aggregate(ds, _table(inputs["countries"])))
        if capability_id == "nautilus.region_cable_search":
            payload = region_cable_search(ds, params["region_a"], params["region_b"])
            return out("cables", "cable_id_set", payload)
        if capability_id == "xaminer.hazard_event_process":
            payload = hazard_event_process(ds, _table(inputs["events"]), params["failure_probability"])
            return out("impact", "impact_table", payload)
        if capability_id == "xaminer.impact_combine":
            return out("impact", "impact_table", impact_combine(_table(inputs["impact_a"]), _table(inputs["impact_b"])))
        if capability_id == "xaminer.hazard_cable_extract":
            return out("cables", "cable_id_set", hazard_cable_extract(_table(inputs["events"])))
        if capability_id == "topolens.as_dependency_graph":
            return out("as_deps", "as_dependency_graph", as_dependency_graph(ds))
        if capability_id == "cascadia.cascade_propagate":
            payload = cascade_propagate(ds, _table(inputs["impact"]), inputs["as_deps"].payload, params["threshold"])
            return out("timeline", "cascade_timeline", payload)
        if capability_id == "bgpwatch.route_change_scan":
            return out("events", "route_change_set", route_change_scan(ds))
        if capability_id == "bgpwatch.route_anomaly_scan":
            payload = route_anomaly_scan(_table(inputs["events"]), params["burst_window"], params["burst_min"])
            return out("report", "anomaly_report", payload)
        if capability_id == "tracelens.latency_probe":
            return out("latency", "latency_series", latency_probe(ds, params["region_a"], params["region_b"]))
        if capability_id == "tracelens.anomaly_detect":
            payload = anomaly_detect(list(inputs["latency"].payload), params["baseline_window"], params["threshold_sigma"])
            return out("report", "anomaly_report", payload)
        if capability_id == "tracelens.trace_dump":
            return out("traces", "traceroute_set", trace_dump(ds))
        if capability_id == "forensix.suspect_cable_rank":
            payload = suspect_cable_rank(
                _table(inputs["report"]),
                _table(inputs["traces"]),
                _table(inputs["links"]),
                _table(inputs["routes"]),
                params["window"],
            )
            return out("ranking", "ranked_cable_table", payload)
        raise ToolError(f"capability {capability_id!r} is not simulated")


def prepare_run_inputs(intent, dataset: FixtureDataset) -> dict[str, DataValue]:
    """Materialize the run inputs a query's subject implies.

    Cable subjects resolve identifiers against cable ids and names; unknown
    identifiers pass through so the lookup capability reports them. Hazard
    subjects split the catalog by event type, one input per type.
    """
    subject = intent.subject
    inputs: dict[str, DataValue] = {}
    if subject.entity_type == "cable":
        rows = []
        for identifier in subject.identifiers:
            cable = dataset.cable_by_identifier(identifier)
            rows.append({"cable_id": cable["cable_id"] if cable else identifier})
        rows.sort(key=lambda r: r["cable_id"])
        inputs["target_cables"] = DataValue(SPECS["cable_id_set"], rows, "run_input:target_cables")
    elif subject.entity_type == "hazard_event":
        for hazard_type in sorted(set(subject.identifiers)):
            rows = sorted(
                (dict(e) for e in dataset.hazard_events if e["type"] == hazard_type),
                key=lambda e: e["event_id"],
            )
            name = f"hazard_events_{hazard_type}"
            inputs[name] = DataValue(SPECS["hazard_event_set"], rows, f"run_input:{name}")
    return inputs
