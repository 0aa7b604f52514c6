import { describe, expect, it } from "vitest";

import {
  editShapeProblems,
  renderBanner,
  renderReviewControls,
  renderRunList,
  renderStage1,
  renderStage2,
  renderStage3,
  renderStage4,
  renderStageTimeline,
} from "../src/views.js";
import type { CuratorDoc, DesignDoc, PlanDoc, ResultDoc, RunRecord, SubProblemGraphDoc } from "../src/types.js";

const record: RunRecord = {
  run_id: "01TESTRUN",
  query: "impact of cable C1",
  mode: "expert",
  created_at: "2025-07-01T00:00:00Z",
  updated_at: "2025-07-01T00:00:01Z",
  stages: [
    { name: "querymind", status: "completed" },
    { name: "workflowscout", status: "awaiting_review" },
    { name: "solutionweaver", status: "pending" },
    { name: "curator", status: "pending" },
  ],
};

describe("run list and timeline", () => {
  it("lists runs with stage badges and links", () => {
    const html = renderRunList([record]);
    expect(html).toContain("#/runs/01TESTRUN");
    expect(html).toContain("badge-awaiting_review");
    expect(html).toContain("impact of cable C1");
  });

  it("shows an empty state", () => {
    expect(renderRunList([])).toContain("No runs yet");
  });

  it("renders stage timeline with errors", () => {
    const failing: RunRecord = {
      ...record,
      stages: [{ name: "querymind", status: "failed", error: "backend exploded" }],
    };
    const html = renderStageTimeline(failing);
    expect(html).toContain("badge-failed");
    expect(html).toContain("backend exploded");
  });
});

describe("stage panels", () => {
  it("stage 1 shows sub-problems, criteria, and feasibility", () => {
    const doc: SubProblemGraphDoc = {
      rule_table_version: 1,
      intent: {
        goal_kind: "impact_table",
        subject: { entity_type: "cable", identifiers: ["C1"] },
        aggregation: "country",
        parameters: {},
        classification: { spatial: true, temporal: false, causal: false, data_dependency: true },
      },
      sub_problems: [
        {
          id: "resolve_cable_dependencies",
          statement: "Resolve links.",
          required_output: { kind: "ip_link_set", format: "table", unit: null },
          depends_on: [],
          constraints: [{ kind: "data_availability", params: { run_input: "target_cables" } }],
        },
      ],
      success_criteria: [{ description: "Terminal output nonempty.", check: { type: "output_nonempty" } }],
      risks: ["recorded for review"],
      feasibility: { status: "feasible" },
    };
    const html = renderStage1(doc);
    expect(html).toContain("resolve_cable_dependencies");
    expect(html).toContain("badge-feasible");
    expect(html).toContain("Terminal output nonempty.");
    expect(html).toContain("data_availability");
  });

  it("stage 2 renders the DAG and disables the alternatives tab when empty", () => {
    const design: DesignDoc = {
      chosen: {
        steps: [
          { id: "a", capability_id: "fw.a", input_bindings: {}, params: {} },
          { id: "b", capability_id: "fw.b", input_bindings: {}, params: {} },
        ],
        score: { data_requirements: 1, compute_cost: 2, reliability: 0.9 },
      },
      alternatives: [],
      rationale: "only path",
      exploration_mode: "direct",
    };
    const dot = `digraph d { "a" [label="a\\nfw.a"]; "b" [label="b\\nfw.b"]; "a" -> "b" [label="x"]; }`;
    const html = renderStage2(design, dot);
    expect(html.match(/<g class="node/g)).toHaveLength(2);
    expect(html).toContain("disabled");
    expect(html).toContain("only path");
  });

  it("stage 2 offers a trade-off table for alternatives", () => {
    const candidate = {
      steps: [{ id: "a", capability_id: "fw.a", input_bindings: {}, params: {} }],
      score: { data_requirements: 2, compute_cost: 3.5, reliability: 0.8 },
    };
    const design: DesignDoc = {
      chosen: candidate,
      alternatives: [candidate],
      rationale: "compared",
      exploration_mode: "comparative",
    };
    const html = renderStage2(design, `digraph d { "a" [label="a"]; }`);
    expect(html).toContain("alternatives (1)");
    expect(html).toContain("alternative 1");
    expect(html).not.toContain('data-tab="alternatives" disabled');
  });

  it("stage 3 joins checks with execution outcomes", () => {
    const plan: PlanDoc = {
      plan_id: "abc123def456",
      steps: [
        { id: "s1", capability_id: "fw.a", input_bindings: {}, params: {}, role: "capability" },
        { id: "x__t", capability_id: "t", input_bindings: {}, params: {}, role: "adapter" },
      ],
      checks: [
        { id: "schema__s1__out", target: { step_id: "s1", port: "out" }, kind: "schema", severity: "error", params: {} },
      ],
      outputs_manifest: [["s1", "out", "impact_table"]],
      confidence: 0.9,
    };
    const result: ResultDoc = {
      status: { state: "success" },
      step_outputs: [["s1", "out", "d1"]],
      quality: [{ check_id: "schema__s1__out", outcome: "pass", value: null }],
      plan_confidence_posterior: 0.88,
    };
    const html = renderStage3(plan, result);
    expect(html).toContain("badge-success");
    expect(html).toContain("schema__s1__out");
    expect(html).toContain("badge-pass");
    expect(html).toContain("0.8800");
  });

  it("stage 3 surfaces failure reasons as a banner", () => {
    const plan: PlanDoc = {
      plan_id: "p",
      steps: [],
      checks: [],
      outputs_manifest: [],
      confidence: 1,
    };
    const result: ResultDoc = {
      status: { state: "failed", step_id: "s9", reason: "quality check failed" },
      step_outputs: [],
      quality: [],
      plan_confidence_posterior: 1,
    };
    const html = renderStage3(plan, result);
    expect(html).toContain("failed at s9: quality check failed");
  });

  it("stage 4 lists proposals with replay verdicts", () => {
    const doc: CuratorDoc = {
      mined: 1,
      proposals: [
        {
          pattern: { chain: ["fw.a", "fw.b"], support: 3, supporting_runs: ["r1", "r2", "r3"] },
          status: "validated",
          verdict: { passed: true, replays: [{ run_id: "r1", ok: true, detail: "" }] },
        },
      ],
      promotions: [{ id: "curated.a_b_v1", registry_version: 2 }],
      registry_version: 2,
    };
    const html = renderStage4(doc);
    expect(html).toContain("fw.a -&gt; fw.b");
    expect(html).toContain("badge-validated");
    expect(html).toContain("curated.a_b_v1");
  });
});

describe("review controls", () => {
  it("renders controls only while awaiting review", () => {
    expect(renderReviewControls("workflowscout", "awaiting_review")).toContain("submit edit");
    expect(renderReviewControls("workflowscout", "completed")).toBe("");
  });
});

describe("banner", () => {
  it("shows server messages verbatim (escaped)", () => {
    const html = renderBanner("error", 'step "x" cycle <detected>');
    expect(html).toContain("step &quot;x&quot; cycle &lt;detected&gt;");
  });
});

describe("editShapeProblems", () => {
  it("accepts plausible artifacts and flags hollow ones", () => {
    expect(editShapeProblems("workflowscout", { chosen: { steps: [] } })).toEqual([]);
    expect(editShapeProblems("workflowscout", { nope: 1 })).toHaveLength(1);
    expect(editShapeProblems("querymind", { sub_problems: [] })).toEqual([]);
    expect(editShapeProblems("curator", [])).toEqual(["replacement must be a JSON object"]);
  });
});
