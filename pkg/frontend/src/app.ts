/**
 * SPA shell: hash routing, a 2-second poll loop, and review actions.
 *
 * State is re-derived from the API on every poll; nothing the server owns
 * is cached across mutations. Polling performs only GETs, and review
 * mutations happen exclusively inside explicit click handlers.
 */

import { ApiClient } from "./api.js";
import {
  ApiError,
  CuratorDoc,
  DesignDoc,
  PlanDoc,
  ResultDoc,
  RunRecord,
  STAGES,
  StageName,
  SubProblemGraphDoc,
} from "./types.js";
import {
  editShapeProblems,
  escapeHtml,
  renderBanner,
  renderReviewControls,
  renderRunList,
  renderStage1,
  renderStage2,
  renderStage3,
  renderStage4,
  renderStageTimeline,
} from "./views.js";

const POLL_INTERVAL_MS = 2000;

interface StagePayloads {
  graph?: SubProblemGraphDoc;
  design?: DesignDoc;
  designDot?: string;
  plan?: PlanDoc;
  result?: ResultDoc | null;
  curator?: CuratorDoc;
}

export class App {
  private banner = "";
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private root: HTMLElement,
    private api: ApiClient = new ApiClient(),
  ) {}

  start(): void {
    window.addEventListener("hashchange", () => void this.refresh());
    this.root.addEventListener("click", (event) => void this.onClick(event));
    this.timer = setInterval(() => void this.refresh(), POLL_INTERVAL_MS);
    void this.refresh();
  }

  stop(): void {
    if (this.timer) clearInterval(this.timer);
  }

  private route(): { page: "list" } | { page: "run"; runId: string } {
    const match = window.location.hash.match(/^#\/runs\/([A-Za-z0-9_-]+)/);
    return match ? { page: "run", runId: match[1] } : { page: "list" };
  }

  async refresh(): Promise<void> {
    const route = this.route();
    try {
      if (route.page === "list") {
        const page = await this.api.listRuns();
        this.renderList(page.runs, page.total);
      } else {
        const record = await this.api.getRun(route.runId);
        const payloads = await this.fetchStagePayloads(record);
        this.renderRun(record, payloads);
      }
      this.banner = "";
    } catch (error) {
      // Fetch failures surface as a non-blocking banner; the stale view stays up.
      this.banner = error instanceof Error ? error.message : String(error);
      const zone = this.root.querySelector("[data-banner-zone]");
      if (zone) zone.innerHTML = renderBanner("error", this.banner);
    }
  }

  private async fetchStagePayloads(record: RunRecord): Promise<StagePayloads> {
    const status = new Map(record.stages.map((s) => [s.name, s.status]));
    const ready = (stage: StageName) =>
      ["awaiting_review", "completed", "failed"].includes(status.get(stage) ?? "");
    const payloads: StagePayloads = {};
    if (ready("querymind")) {
      payloads.graph = await this.api.getGraphArtifact(record.run_id);
    }
    if (ready("workflowscout")) {
      payloads.design = await this.api.getDesignArtifact(record.run_id);
      payloads.designDot = await this.api.getArtifactDot(record.run_id, "workflowscout");
    }
    if (ready("solutionweaver")) {
      payloads.plan = await this.api.getPlanArtifact(record.run_id);
      try {
        payloads.result = await this.api.getResult(record.run_id);
      } catch {
        payloads.result = null;
      }
    }
    if (ready("curator")) {
      payloads.curator = await this.api.getCuratorArtifact(record.run_id);
    }
    return payloads;
  }

  private renderList(runs: RunRecord[], total: number): void {
    this.root.innerHTML = `
      <header><h1>arachnet expert console</h1></header>
      <div data-banner-zone>${this.banner ? renderBanner("error", this.banner) : ""}</div>
      <form class="start" data-form="start">
        <input name="query" placeholder="measurement question" size="70" required>
        <select name="mode"><option>expert</option><option>standard</option></select>
        <button type="submit">start run</button>
      </form>
      <h2>Runs (${total})</h2>
      <div data-run-list>${renderRunList(runs)}</div>`;
    const form = this.root.querySelector<HTMLFormElement>("[data-form=start]");
    form?.addEventListener("submit", (event) => {
      event.preventDefault();
      const data = new FormData(form);
      void this.api
        .startRun(String(data.get("query")), String(data.get("mode")) as "standard" | "expert")
        .then(() => this.refresh())
        .catch((error) => this.showBanner(error));
    });
  }

  private renderRun(record: RunRecord, payloads: StagePayloads): void {
    const status = new Map(record.stages.map((s) => [s.name, s.status]));
    const sections: string[] = [];
    if (payloads.graph) {
      sections.push(renderStage1(payloads.graph));
      sections.push(renderReviewControls("querymind", status.get("querymind") ?? ""));
    }
    if (payloads.design && payloads.designDot !== undefined) {
      sections.push(renderStage2(payloads.design, payloads.designDot));
      sections.push(renderReviewControls("workflowscout", status.get("workflowscout") ?? ""));
    }
    if (payloads.plan) {
      sections.push(renderStage3(payloads.plan, payloads.result ?? null));
      sections.push(renderReviewControls("solutionweaver", status.get("solutionweaver") ?? ""));
    }
    if (payloads.curator) {
      sections.push(renderStage4(payloads.curator));
      sections.push(renderReviewControls("curator", status.get("curator") ?? ""));
    }
    this.root.innerHTML = `
      <header>
        <a href="#/">&larr; runs</a>
        <h1>${escapeHtml(record.run_id)}</h1>
        <p class="query">${escapeHtml(record.query)} <em>(${escapeHtml(record.mode)} mode)</em></p>
      </header>
      <div data-banner-zone>${this.banner ? renderBanner("error", this.banner) : ""}</div>
      ${renderStageTimeline(record)}
      ${sections.join("\n")}`;
    this.wireTabs();
  }

  private wireTabs(): void {
    for (const tab of this.root.querySelectorAll<HTMLButtonElement>(".tab:not([disabled])")) {
      tab.addEventListener("click", () => {
        const name = tab.dataset.tab;
        for (const t of this.root.querySelectorAll(".tab")) t.classList.toggle("active", t === tab);
        for (const body of this.root.querySelectorAll<HTMLElement>("[data-tab-body]")) {
          body.classList.toggle("hidden", body.dataset.tabBody !== name);
        }
      });
    }
  }

  private showBanner(error: unknown): void {
    const message =
      error instanceof ApiError
        ? [error.detail, ...error.messages].filter(Boolean).join("; ")
        : String(error);
    this.banner = message;
    const zone = this.root.querySelector("[data-banner-zone]");
    if (zone) zone.innerHTML = renderBanner("error", message);
  }

  private async onClick(event: Event): Promise<void> {
    const target = event.target as HTMLElement;
    const action = target.dataset?.action;
    if (!action) return;
    const route = this.route();
    if (action === "retry") {
      void this.refresh();
      return;
    }
    if (route.page !== "run") return;
    const stage = target.dataset.stage as StageName | undefined;
    if (!stage || !STAGES.includes(stage)) return;

    try {
      if (action === "approve") {
        if (!window.confirm(`Approve stage ${stage}?`)) return;
        await this.api.submitReview(route.runId, stage, { decision: "approve", reviewer: "ui" });
        await this.refresh();
      } else if (action === "reject") {
        const reason = window.prompt("Rejection reason:");
        if (reason === null) return;
        await this.api.submitReview(route.runId, stage, {
          decision: "reject",
          reason,
          reviewer: "ui",
        });
        await this.refresh();
      } else if (action === "open-editor") {
        const editor = this.root.querySelector<HTMLElement>(`[data-editor="${stage}"]`);
        const artifact = await this.api.getArtifact(route.runId, stage);
        const textarea = editor?.querySelector("textarea");
        if (editor && textarea) {
          textarea.value = JSON.stringify(artifact, null, 2);
          editor.classList.remove("hidden");
        }
      } else if (action === "close-editor") {
        this.root.querySelector(`[data-editor="${stage}"]`)?.classList.add("hidden");
      } else if (action === "submit-edit") {
        const textarea = this.root.querySelector<HTMLTextAreaElement>(
          `[data-editor="${stage}"] textarea`,
        );
        if (!textarea) return;
        let parsed: unknown;
        try {
          parsed = JSON.parse(textarea.value);
        } catch (error) {
          this.showBanner(new ApiError(0, `replacement is not valid JSON: ${error}`));
          return;
        }
        const problems = editShapeProblems(stage, parsed);
        if (problems.length > 0) {
          this.showBanner(new ApiError(0, problems.join("; ")));
          return;
        }
        await this.api.submitReview(route.runId, stage, {
          decision: "edit",
          replacement: parsed,
          reviewer: "ui",
        });
        await this.refresh();
      }
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // Someone else moved the run; re-sync to the authoritative state.
        this.showBanner(error);
        await this.refresh();
      } else {
        this.showBanner(error);
      }
    }
  }
}
