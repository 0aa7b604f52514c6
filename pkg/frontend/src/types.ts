/** Payload shapes of the engine API this UI consumes. */

export interface StageStatus {
  name: string;
  status: string;
  error?: string;
  review?: { decision: string; reviewer: string; reason?: string };
}

export interface RunRecord {
  run_id: string;
  query: string;
  mode: string;
  created_at: string;
  updated_at: string;
  stages: StageStatus[];
}

export interface RunListPage {
  runs: RunRecord[];
  total: number;
  offset: number;
  limit: number;
}

export interface SubProblem {
  id: string;
  statement: string;
  required_output: { kind: string; format: string; unit: string | null };
  depends_on: string[];
  constraints: { kind: string; params: Record<string, string> }[];
}

export interface SubProblemGraphDoc {
  rule_table_version: number;
  intent: {
    goal_kind: string;
    subject: { entity_type: string; identifiers: string[] };
    aggregation: string;
    parameters: Record<string, string>;
    classification: Record<string, boolean>;
  };
  sub_problems: SubProblem[];
  success_criteria: { description: string; check: Record<string, string> }[];
  risks: string[];
  feasibility: { status: string; missing_kinds?: string[] };
}

export interface WorkflowStepDoc {
  id: string;
  capability_id: string;
  input_bindings: Record<string, { type: string; step_id?: string; port?: string; name?: string; value?: string }>;
  params: Record<string, string>;
  role?: string;
}

export interface CandidateDoc {
  steps: WorkflowStepDoc[];
  score: { data_requirements: number; compute_cost: number; reliability: number };
}

export interface DesignDoc {
  chosen: CandidateDoc;
  alternatives: CandidateDoc[];
  rationale: string;
  exploration_mode: string;
}

export interface PlanDoc {
  plan_id: string;
  steps: WorkflowStepDoc[];
  checks: {
    id: string;
    target: { step_id: string; port: string };
    kind: string;
    severity: string;
    params: Record<string, string>;
  }[];
  outputs_manifest: [string, string, string][];
  confidence: number;
}

export interface ResultDoc {
  status: Record<string, string>;
  step_outputs: [string, string, string][];
  quality: { check_id: string; outcome: string; value: string | null }[];
  plan_confidence_posterior: number;
}

export interface CuratorDoc {
  mined: number;
  proposals: {
    pattern: { chain: string[]; support: number; supporting_runs: string[] };
    status: string;
    verdict: { passed: boolean; replays: { run_id: string; ok: boolean; detail: string }[] } | null;
  }[];
  promotions: { id: string; registry_version: number }[];
  registry_version: number;
}

export type StageName = "querymind" | "workflowscout" | "solutionweaver" | "curator";

export const STAGES: StageName[] = ["querymind", "workflowscout", "solutionweaver", "curator"];

export interface ReviewPayload {
  decision: "approve" | "edit" | "reject";
  replacement?: unknown;
  reason?: string;
  reviewer?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
    public messages: string[] = [],
  ) {
    super(detail);
  }
}
