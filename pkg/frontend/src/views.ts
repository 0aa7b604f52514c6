/**
 * Pure view renderers: every function maps API documents to an HTML
 * string. No business rules live here; the rendered state always derives
 * from the latest fetch, and validation outcomes shown to the reviewer are
 * the server's verbatim messages.
 */

import { parseDot, renderDagSvg } from "./dot.js";
import {
  CandidateDoc,
  CuratorDoc,
  DesignDoc,
  PlanDoc,
  ResultDoc,
  RunRecord,
  StageName,
  SubProblemGraphDoc,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function statusBadge(status: string): string {
  return `<span class="badge badge-${escapeHtml(status)}">${escapeHtml(status)}</span>`;
}

export function renderRunList(runs: RunRecord[]): string {
  if (runs.length === 0) {
    return `<p class="empty">No runs yet. Start one from the form above.</p>`;
  }
  const rows = runs
    .map((run) => {
      const badges = run.stages
        .map((s) => `<span title="${escapeHtml(s.name)}">${statusBadge(s.status)}</span>`)
        .join(" ");
      return `<tr data-run="${escapeHtml(run.run_id)}">
        <td><a href="#/runs/${escapeHtml(run.run_id)}">${escapeHtml(run.run_id)}</a></td>
        <td class="query">${escapeHtml(run.query)}</td>
        <td>${escapeHtml(run.mode)}</td>
        <td class="stages">${badges}</td>
      </tr>`;
    })
    .join("");
  return `<table class="runs"><thead><tr><th>run</th><th>query</th><th>mode</th><th>stages</th></tr></thead><tbody>${rows}</tbody></table>`;
}

export function renderStageTimeline(record: RunRecord): string {
  const items = record.stages
    .map((s) => {
      const error = s.error ? `<div class="stage-error">${escapeHtml(s.error)}</div>` : "";
      return `<li class="stage-item" data-stage="${escapeHtml(s.name)}">
        <span class="stage-name">${escapeHtml(s.name)}</span> ${statusBadge(s.status)}${error}
      </li>`;
    })
    .join("");
  return `<ol class="timeline">${items}</ol>`;
}

export function renderBanner(kind: "error" | "info", message: string, retryable = true): string {
  const retry = retryable && kind === "error" ? `<button data-action="retry">retry</button>` : "";
  return `<div class="banner banner-${kind}" role="alert"><span class="banner-text">${escapeHtml(
    message,
  )}</span>${retry}</div>`;
}

// --- stage 1 -------------------------------------------------------------------

export function renderStage1(doc: SubProblemGraphDoc): string {
  const feasibility =
    doc.feasibility.status === "feasible"
      ? statusBadge("feasible")
      : `${statusBadge("infeasible")} missing: ${escapeHtml(
          (doc.feasibility.missing_kinds ?? []).join(", "),
        )}`;
  const flags = Object.entries(doc.intent.classification)
    .filter(([, v]) => v)
    .map(([k]) => k)
    .join(", ");
  const subProblems = doc.sub_problems
    .map((sp) => {
      const deps = sp.depends_on.length ? `after ${sp.depends_on.join(", ")}` : "root";
      const constraints = sp.constraints
        .map(
          (c) =>
            `<code>${escapeHtml(c.kind)}(${escapeHtml(
              Object.entries(c.params)
                .map(([k, v]) => `${k}=${v}`)
                .join(", "),
            )})</code>`,
        )
        .join(" ");
      return `<li><strong>${escapeHtml(sp.id)}</strong> &rarr; ${escapeHtml(
        sp.required_output.kind,
      )} <em>(${escapeHtml(deps)})</em><br>${escapeHtml(sp.statement)} ${constraints}</li>`;
    })
    .join("");
  const criteria = doc.success_criteria
    .map((c) => `<li>${escapeHtml(c.description)} <code>${escapeHtml(JSON.stringify(c.check))}</code></li>`)
    .join("");
  const risks = doc.risks.map((r) => `<li>${escapeHtml(r)}</li>`).join("");
  return `<section class="panel stage1">
    <h3>Decomposition</h3>
    <p>goal <code>${escapeHtml(doc.intent.goal_kind)}</code>,
       subject ${escapeHtml(doc.intent.subject.entity_type)}
       [${escapeHtml(doc.intent.subject.identifiers.join(", "))}],
       aggregation ${escapeHtml(doc.intent.aggregation)},
       flags: ${escapeHtml(flags || "none")} &mdash; ${feasibility}</p>
    <ul class="subproblems">${subProblems}</ul>
    <h4>Success criteria</h4><ul>${criteria}</ul>
    <h4>Risks</h4><ul>${risks}</ul>
  </section>`;
}

// --- stage 2 -------------------------------------------------------------------

function tradeoffRow(label: string, candidate: CandidateDoc): string {
  return `<tr><td>${escapeHtml(label)}</td><td>${candidate.steps.length}</td><td>${
    candidate.score.compute_cost
  }</td><td>${candidate.score.reliability.toFixed(4)}</td><td>${
    candidate.score.data_requirements
  }</td></tr>`;
}

export function renderStage2(doc: DesignDoc, dot: string): string {
  const dag = renderDagSvg(parseDot(dot));
  const steps = doc.chosen.steps
    .map(
      (s) =>
        `<tr><td>${escapeHtml(s.id)}</td><td><code>${escapeHtml(s.capability_id)}</code></td><td>${escapeHtml(
          Object.entries(s.params)
            .map(([k, v]) => `${k}=${v}`)
            .join(", ") || "-",
        )}</td></tr>`,
    )
    .join("");
  const alternativesDisabled = doc.alternatives.length === 0;
  const tradeoffs = [
    tradeoffRow("chosen", doc.chosen),
    ...doc.alternatives.map((alt, i) => tradeoffRow(`alternative ${i + 1}`, alt)),
  ].join("");
  const altTab = alternativesDisabled
    ? `<button class="tab" data-tab="alternatives" disabled title="no alternatives">alternatives (0)</button>`
    : `<button class="tab" data-tab="alternatives">alternatives (${doc.alternatives.length})</button>`;
  return `<section class="panel stage2">
    <h3>Workflow design <small>(${escapeHtml(doc.exploration_mode)} mode)</small></h3>
    <div class="tabs"><button class="tab active" data-tab="chosen">chosen</button>${altTab}</div>
    <div class="tab-body" data-tab-body="chosen">
      ${dag}
      <table class="steps"><thead><tr><th>step</th><th>capability</th><th>params</th></tr></thead><tbody>${steps}</tbody></table>
    </div>
    <div class="tab-body hidden" data-tab-body="alternatives">
      <table class="tradeoffs"><thead><tr><th>candidate</th><th>steps</th><th>cost</th><th>reliability</th><th>run inputs</th></tr></thead><tbody>${tradeoffs}</tbody></table>
    </div>
    <p class="rationale">${escapeHtml(doc.rationale)}</p>
  </section>`;
}

// --- stage 3 -------------------------------------------------------------------

export function renderStage3(plan: PlanDoc, result: ResultDoc | null): string {
  const outcomes = new Map((result?.quality ?? []).map((q) => [q.check_id, q]));
  const steps = plan.steps
    .map(
      (s) =>
        `<tr class="${s.role === "adapter" ? "adapter" : ""}"><td>${escapeHtml(s.id)}</td><td><code>${escapeHtml(
          s.capability_id,
        )}</code></td><td>${escapeHtml(s.role ?? "capability")}</td></tr>`,
    )
    .join("");
  const checks = plan.checks
    .map((c) => {
      const outcome = outcomes.get(c.id);
      const badge = outcome ? statusBadge(outcome.outcome) : statusBadge("pending");
      const value = outcome?.value ? ` <small>${escapeHtml(outcome.value)}</small>` : "";
      return `<li><code>${escapeHtml(c.id)}</code> (${escapeHtml(c.severity)}) ${badge}${value}</li>`;
    })
    .join("");
  const state = result?.status?.state ?? "not executed";
  const failure =
    result && result.status.state === "failed"
      ? renderBanner("error", `failed at ${result.status.step_id}: ${result.status.reason}`, false)
      : "";
  const posterior = result ? result.plan_confidence_posterior.toFixed(4) : "-";
  return `<section class="panel stage3">
    <h3>Executable plan <small>${escapeHtml(plan.plan_id.slice(0, 12))}</small></h3>
    ${failure}
    <p>execution: ${statusBadge(state)} &middot; static confidence ${plan.confidence.toFixed(
      4,
    )} &middot; posterior ${posterior}</p>
    <table class="steps"><thead><tr><th>step</th><th>capability</th><th>role</th></tr></thead><tbody>${steps}</tbody></table>
    <h4>Quality checks</h4><ul class="checks">${checks}</ul>
  </section>`;
}

// --- stage 4 -------------------------------------------------------------------

export function renderStage4(doc: CuratorDoc): string {
  if (doc.proposals.length === 0) {
    return `<section class="panel stage4"><h3>Curator</h3><p class="empty">No reusable patterns reached the support threshold.</p></section>`;
  }
  const proposals = doc.proposals
    .map((p) => {
      const replays = (p.verdict?.replays ?? [])
        .map(
          (r) =>
            `<li>${escapeHtml(r.run_id)} ${statusBadge(r.ok ? "pass" : "fail")} ${escapeHtml(
              r.detail ?? "",
            )}</li>`,
        )
        .join("");
      return `<li><code>${escapeHtml(p.pattern.chain.join(" -> "))}</code>
        support ${p.pattern.support} ${statusBadge(p.status)}
        <ul class="replays">${replays}</ul></li>`;
    })
    .join("");
  const promotions = doc.promotions
    .map((p) => `<li><code>${escapeHtml(p.id)}</code> (registry v${p.registry_version})</li>`)
    .join("");
  return `<section class="panel stage4">
    <h3>Curator</h3>
    <ul class="proposals">${proposals}</ul>
    <h4>Promotions</h4><ul>${promotions || "<li>none</li>"}</ul>
  </section>`;
}

// --- review controls ---------------------------------------------------------------

export function renderReviewControls(stage: StageName, status: string): string {
  if (status !== "awaiting_review") {
    return "";
  }
  return `<div class="review" data-review-stage="${escapeHtml(stage)}">
    <button data-action="approve" data-stage="${escapeHtml(stage)}">approve</button>
    <button data-action="reject" data-stage="${escapeHtml(stage)}">reject&hellip;</button>
    <button data-action="open-editor" data-stage="${escapeHtml(stage)}">edit&hellip;</button>
    <div class="editor hidden" data-editor="${escapeHtml(stage)}">
      <textarea rows="14" spellcheck="false"></textarea>
      <div class="editor-actions">
        <button data-action="submit-edit" data-stage="${escapeHtml(stage)}">submit edit</button>
        <button data-action="close-editor" data-stage="${escapeHtml(stage)}">cancel</button>
      </div>
    </div>
  </div>`;
}

/**
 * Fast client-side sanity check before submitting an edit. The server stays
 * authoritative; this only catches obviously malformed documents early.
 */
export function editShapeProblems(stage: StageName, doc: unknown): string[] {
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    return ["replacement must be a JSON object"];
  }
  const record = doc as Record<string, unknown>;
  const problems: string[] = [];
  if (stage === "querymind" && !Array.isArray(record.sub_problems)) {
    problems.push("stage-1 artifact needs a sub_problems list");
  }
  if (stage === "workflowscout") {
    const chosen = record.chosen as Record<string, unknown> | undefined;
    if (!chosen || !Array.isArray(chosen.steps)) {
      problems.push("stage-2 artifact needs chosen.steps");
    }
  }
  if (stage === "solutionweaver" && !Array.isArray(record.steps)) {
    problems.push("stage-3 artifact needs a steps list");
  }
  if (stage === "curator" && !Array.isArray(record.proposals)) {
    problems.push("stage-4 artifact needs a proposals list");
  }
  return problems;
}
