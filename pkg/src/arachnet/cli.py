"""Thin-client CLI.

Every command talks to the HTTP API: against a remote server when --server
(or ARACHNET_SERVER) is set, otherwise against an in-process instance of
the same app, so local usage needs no running daemon while still exercising
the exact service surface.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click
import httpx

from .backend import BackendConfig
from .orchestrator import STAGES, EngineConfig
from .toolsim import fixture_registry_dir

DEFAULT_HOME = str(Path.home() / ".arachnet")


class ApiClient:
    def __init__(self, server: str | None, home: str, registry: str, backend: str):
        if server:
            self.client = httpx.Client(base_url=server, timeout=60.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .api import create_app
            from .orchestrator import Engine

            config = EngineConfig(
                registry_dir=registry,
                store_root=home,
                backend=BackendConfig(
                    kind=backend,
                    endpoint=os.environ.get("ARACHNET_LLM_ENDPOINT", ""),
                    model=os.environ.get("ARACHNET_LLM_MODEL", ""),
                    auth_env=os.environ.get("ARACHNET_LLM_AUTH_ENV") or None,
                ),
            )
            self.client = TestClient(create_app(Engine(config)), base_url="http://engine")

    def call(self, method: str, path: str, **kwargs) -> httpx.Response:
        response = self.client.request(method, path, **kwargs)
        if response.status_code >= 400:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise click.ClickException(f"{response.status_code}: {detail}")
        return response


@click.group()
@click.option("--server", envvar="ARACHNET_SERVER", default=None, help="Remote engine URL; default runs in-process.")
@click.option("--home", envvar="ARACHNET_HOME", default=DEFAULT_HOME, show_default=True, help="Run store root.")
@click.option("--registry", "registry_dir", envvar="ARACHNET_REGISTRY", default=None, help="Registry directory (defaults to the packaged fixtures).")
@click.option("--backend", type=click.Choice(["deterministic", "llm"]), default="deterministic", show_default=True)
@click.pass_context
def main(ctx, server, home, registry_dir, backend):
    """Compose and review measurement workflows."""
    ctx.obj = {
        "server": server,
        "home": home,
        "registry": registry_dir or str(fixture_registry_dir()),
        "backend": backend,
    }


def _client(ctx) -> ApiClient:
    return ApiClient(ctx.obj["server"], ctx.obj["home"], ctx.obj["registry"], ctx.obj["backend"])


def _print_record(record: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(record, indent=2, sort_keys=True))
        return
    click.echo(f"run {record['run_id']} [{record['mode']}] {record['query']}")
    for stage in record["stages"]:
        line = f"  {stage['name']:<16} {stage['status']}"
        if stage.get("error"):
            line += f"  ({stage['error']})"
        click.echo(line)


@main.command()
@click.argument("query")
@click.option("--mode", type=click.Choice(["standard", "expert"]), default="standard", show_default=True)
@click.option("--backend", "backend_override", type=click.Choice(["deterministic", "llm"]), default=None,
              help="Override the group-level backend choice.")
@click.option("--registry", "registry_override", default=None, help="Override the registry directory.")
@click.option("--json", "as_json", is_flag=True, help="Print the full run record as JSON.")
@click.pass_context
def run(ctx, query, mode, backend_override, registry_override, as_json):
    """Start a run for QUERY and report its progress."""
    if backend_override:
        ctx.obj["backend"] = backend_override
    if registry_override:
        ctx.obj["registry"] = registry_override
    client = _client(ctx)
    created = client.call("POST", "/api/runs", json={"query": query, "mode": mode}).json()
    run_id = created["run_id"]
    record = client.call("GET", f"/api/runs/{run_id}").json()
    _print_record(record, as_json)
    if not as_json:
        statuses = {s["name"]: s["status"] for s in record["stages"]}
        if statuses.get("solutionweaver") == "completed":
            result = client.call("GET", f"/api/runs/{run_id}/result").json()
            state = result["status"].get("state")
            click.echo(f"  execution: {state}, confidence {result['plan_confidence_posterior']:.4f}")
        if record["mode"] == "expert":
            pending = [s["name"] for s in record["stages"] if s["status"] == "awaiting_review"]
            if pending:
                click.echo(f"  awaiting review: {pending[0]} (use `arachnet review {run_id} {pending[0]} ...`)")


@main.command()
@click.option("--offset", default=0)
@click.option("--limit", default=20)
@click.pass_context
def runs(ctx, offset, limit):
    """List stored runs, newest first."""
    page = _client(ctx).call("GET", "/api/runs", params={"offset": offset, "limit": limit}).json()
    for summary in page["runs"]:
        states = ",".join(f"{s['name'][:5]}={s['status']}" for s in summary["stages"])
        click.echo(f"{summary['run_id']}  {states}  {summary['query'][:50]}")
    click.echo(f"total: {page['total']}")


@main.command()
@click.argument("run_id")
@click.argument("stage", type=click.Choice(list(STAGES)))
@click.option("--approve", "decision", flag_value="approve")
@click.option("--edit", "edit_file", type=click.Path(exists=True), default=None, help="Replacement artifact JSON file.")
@click.option("--reject", "reject_reason", default=None, help="Reject with the given reason.")
@click.option("--reviewer", default=os.environ.get("USER", "expert"), show_default=True)
@click.pass_context
def review(ctx, run_id, stage, decision, edit_file, reject_reason, reviewer):
    """Approve, edit, or reject a stage awaiting review."""
    payload: dict = {"reviewer": reviewer}
    if edit_file:
        payload["decision"] = "edit"
        payload["replacement"] = json.loads(Path(edit_file).read_text(encoding="utf-8"))
    elif reject_reason is not None:
        payload["decision"] = "reject"
        payload["reason"] = reject_reason
    elif decision == "approve":
        payload["decision"] = "approve"
    else:
        raise click.UsageError("choose one of --approve, --edit FILE, --reject MSG")
    record = _client(ctx).call("POST", f"/api/runs/{run_id}/stages/{stage}/review", json=payload).json()
    _print_record(record, as_json=False)


@main.group()
def registry():
    """Inspect and grow the capability registry."""


@registry.command("list")
@click.pass_context
def registry_list(ctx):
    doc = _client(ctx).call("GET", "/api/registry").json()
    click.echo(f"registry version {doc['version']}, {len(doc['entries'])} entries")
    for entry in doc["entries"]:
        ins = ",".join(entry["inputs"]) or "-"
        outs = ",".join(entry["outputs"])
        click.echo(f"  {entry['id']:<40} {ins} -> {outs}  (cost {entry['cost_hint']}, rel {entry['reliability']})")


@registry.command("show")
@click.argument("capability_id")
@click.pass_context
def registry_show(ctx, capability_id):
    doc = _client(ctx).call("GET", f"/api/registry/{capability_id}").json()
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


@registry.command("promote")
@click.argument("run_id")
@click.option("--chain", required=True, help="Comma-separated capability ids of the validated proposal.")
@click.pass_context
def registry_promote(ctx, run_id, chain):
    payload = {"run_id": run_id, "chain": chain.split(",")}
    doc = _client(ctx).call("POST", "/api/registry/promote", json=payload).json()
    click.echo(f"promoted {doc['id']} (registry version {doc['registry_version']})")


@main.command()
@click.argument("run_id")
@click.option("--format", "fmt", type=click.Choice(["dot", "markdown", "json"]), default="markdown", show_default=True)
@click.option("--output", type=click.Path(), default=None, help="Write to a file instead of stdout.")
@click.pass_context
def export(ctx, run_id, fmt, output):
    """Export a run's executable plan."""
    text = _client(ctx).call("GET", f"/api/runs/{run_id}/export", params={"format": fmt}).text
    if output:
        Path(output).write_text(text, encoding="utf-8")
        click.echo(f"wrote {output}")
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8700, show_default=True)
@click.option("--ui-dist", default=None, help="Directory of built UI assets to serve at /ui.")
@click.pass_context
def serve(ctx, host, port, ui_dist):
    """Run the HTTP API (and optionally the expert UI) as a server."""
    import uvicorn

    from .api import create_app
    from .orchestrator import Engine

    if ctx.obj["server"]:
        raise click.UsageError("serve starts a local engine; drop --server")
    config = EngineConfig(
        registry_dir=ctx.obj["registry"],
        store_root=ctx.obj["home"],
        backend=BackendConfig(kind=ctx.obj["backend"]),
    )
    app = create_app(Engine(config), ui_dist=ui_dist or os.environ.get("ARACHNET_UI_DIST"))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
