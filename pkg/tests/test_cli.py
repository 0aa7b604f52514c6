from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from arachnet.cli import main
from arachnet.toolsim import fixture_registry_dir


@pytest.fixture
def cli_env(tmp_path):
    home = tmp_path / "home"
    return ["--home", str(home), "--registry", str(fixture_registry_dir())]


def invoke(args, cli_env):
    runner = CliRunner()
    result = runner.invoke(main, cli_env + args, catch_exceptions=False)
    return result


def test_run_command_standard(cli_env, queries):
    result = invoke(["run", queries["cable_impact"]], cli_env)
    assert result.exit_code == 0, result.output
    assert "solutionweaver   completed" in result.output
    assert "execution: success" in result.output


def test_run_command_json_output(cli_env, queries):
    result = invoke(["run", queries["multi_hazard"], "--json"], cli_env)
    assert result.exit_code == 0
    record = json.loads(result.output)
    assert {s["status"] for s in record["stages"]} == {"completed"}


def test_runs_listing(cli_env, queries):
    invoke(["run", queries["cable_impact"]], cli_env)
    result = invoke(["runs"], cli_env)
    assert result.exit_code == 0
    assert "total: 1" in result.output


def test_expert_review_flow(cli_env, queries):
    started = invoke(["run", queries["cable_impact"], "--mode", "expert"], cli_env)
    assert "awaiting review: querymind" in started.output
    run_id = started.output.split()[1]
    reviewed = invoke(["review", run_id, "querymind", "--approve"], cli_env)
    assert reviewed.exit_code == 0
    assert "workflowscout    awaiting_review" in reviewed.output


def test_review_reject(cli_env, queries):
    started = invoke(["run", queries["cable_impact"], "--mode", "expert"], cli_env)
    run_id = started.output.split()[1]
    rejected = invoke(["review", run_id, "querymind", "--reject", "out of scope"], cli_env)
    assert "querymind        rejected" in rejected.output


def test_registry_list_and_show(cli_env):
    listing = invoke(["registry", "list"], cli_env)
    assert listing.exit_code == 0
    assert "registry version 1, 17 entries" in listing.output
    show = invoke(["registry", "show", "nautilus.geolocate"], cli_env)
    assert '"id": "nautilus.geolocate"' in show.output


def test_export_dot_and_markdown(cli_env, queries, tmp_path):
    started = invoke(["run", queries["cable_impact"]], cli_env)
    run_id = started.output.split()[1]
    dot = invoke(["export", run_id, "--format", "dot"], cli_env)
    assert dot.output.startswith("digraph")
    out_file = tmp_path / "plan.md"
    markdown = invoke(["export", run_id, "--format", "markdown", "--output", str(out_file)], cli_env)
    assert markdown.exit_code == 0
    assert out_file.read_text().startswith("# Executable plan")


def test_error_is_reported_cleanly(cli_env):
    runner = CliRunner()
    result = runner.invoke(main, cli_env + ["export", "missing-run"])
    assert result.exit_code != 0
    assert "404" in result.output
