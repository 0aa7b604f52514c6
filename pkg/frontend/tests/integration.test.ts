/**
 * End-to-end UI flow against a real engine process (acceptance flow):
 * list runs, render the stage-2 DAG with the expected counts, complete an
 * approve flow that releases stage 3, and surface a 422 verbatim.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { parseDot, renderDagSvg } from "../src/dot.js";
import { ApiError, type DesignDoc } from "../src/types.js";
import { renderBanner, renderRunList, renderStage2 } from "../src/views.js";

const PORT = 8761;
const BASE = `http://127.0.0.1:${PORT}`;
const CABLE_IMPACT = "Identify the impact at a country level due to cable C1 failure";

let server: ChildProcess;
const api = new ApiClient(BASE);

async function waitForEngine(): Promise<void> {
  for (let attempt = 0; attempt < 60; attempt++) {
    try {
      await api.health();
      return;
    } catch {
      await new Promise((resolve) => setTimeout(resolve, 500));
    }
  }
  throw new Error("engine did not come up on " + BASE);
}

beforeAll(async () => {
  const home = mkdtempSync(join(tmpdir(), "arachnet-ui-test-"));
  server = spawn(
    "python3",
    ["-m", "arachnet.cli", "--home", home, "serve", "--host", "127.0.0.1", "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForEngine();
}, 45000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("expert UI against a live engine", () => {
  it("lists runs that exist on the server", async () => {
    const { run_id } = await api.startRun(CABLE_IMPACT, "standard");
    const page = await api.listRuns();
    expect(page.total).toBeGreaterThanOrEqual(1);
    const html = renderRunList(page.runs);
    expect(html).toContain(run_id);
    expect(html).toContain("badge-completed");
  });

  it("renders the stage-2 DAG with 4 nodes and 3 edges for the cable scenario", async () => {
    const { run_id } = await api.startRun(CABLE_IMPACT, "standard");
    const dot = await api.getArtifactDot(run_id, "workflowscout");
    const graph = parseDot(dot);
    expect(graph.nodes).toHaveLength(4);
    expect(graph.edges).toHaveLength(3);
    const svg = renderDagSvg(graph);
    expect(svg.match(/<g class="node/g)).toHaveLength(4);
    expect(svg.match(/<path class="edge"/g)).toHaveLength(3);

    const design = await api.getDesignArtifact(run_id);
    const html = renderStage2(design, dot);
    expect(html).toContain("nautilus.impact_aggregate");
  }, 20000);

  it("approve flow releases the next stage", async () => {
    const { run_id } = await api.startRun(CABLE_IMPACT, "expert");
    let record = await api.getRun(run_id);
    let statuses = Object.fromEntries(record.stages.map((s) => [s.name, s.status]));
    expect(statuses.querymind).toBe("awaiting_review");
    expect(statuses.workflowscout).toBe("pending");

    record = await api.submitReview(run_id, "querymind", { decision: "approve", reviewer: "ui" });
    statuses = Object.fromEntries(record.stages.map((s) => [s.name, s.status]));
    expect(statuses.querymind).toBe("completed");
    expect(statuses.workflowscout).toBe("awaiting_review");

    record = await api.submitReview(run_id, "workflowscout", { decision: "approve", reviewer: "ui" });
    statuses = Object.fromEntries(record.stages.map((s) => [s.name, s.status]));
    expect(["awaiting_review", "completed"]).toContain(statuses.solutionweaver);
  }, 30000);

  it("shows the server's 422 validator message verbatim and leaves state unchanged", async () => {
    const { run_id } = await api.startRun(CABLE_IMPACT, "expert");
    await api.submitReview(run_id, "querymind", { decision: "approve", reviewer: "ui" });
    const artifact = (await api.getDesignArtifact(run_id)) as DesignDoc;
    const broken = JSON.parse(JSON.stringify(artifact)) as DesignDoc;
    const last = broken.chosen.steps[broken.chosen.steps.length - 1];
    broken.chosen.steps[0].input_bindings = {
      cables: { type: "step_output", step_id: last.id, port: "impact" },
    };

    let caught: ApiError | null = null;
    try {
      await api.submitReview(run_id, "workflowscout", { decision: "edit", replacement: broken });
    } catch (error) {
      caught = error as ApiError;
    }
    expect(caught).not.toBeNull();
    expect(caught!.status).toBe(422);
    expect(caught!.messages.length).toBeGreaterThan(0);

    const serverMessage = [caught!.detail, ...caught!.messages].filter(Boolean).join("; ");
    const banner = renderBanner("error", serverMessage);
    for (const fragment of caught!.messages) {
      const escaped = fragment
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
      expect(banner).toContain(escaped);
    }

    const record = await api.getRun(run_id);
    const statuses = Object.fromEntries(record.stages.map((s) => [s.name, s.status]));
    expect(statuses.workflowscout).toBe("awaiting_review");
  }, 30000);

  it("wrong-state reviews resolve by refreshing to the server state", async () => {
    const { run_id } = await api.startRun(CABLE_IMPACT, "standard");
    let caught: ApiError | null = null;
    try {
      await api.submitReview(run_id, "querymind", { decision: "approve" });
    } catch (error) {
      caught = error as ApiError;
    }
    expect(caught?.status).toBe(409);
    const record = await api.getRun(run_id);
    expect(record.stages.every((s) => s.status === "completed")).toBe(true);
  });
});
