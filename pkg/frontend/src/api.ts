/**
 * Typed client over the engine HTTP API.
 *
 * Strictly read/write separated: polling code paths only ever call the
 * get* methods, and every review mutation goes through submitReview. All
 * business rules stay server-side; failures surface as ApiError with the
 * server's own detail text so views can show it verbatim.
 */

import {
  ApiError,
  CuratorDoc,
  DesignDoc,
  PlanDoc,
  ResultDoc,
  ReviewPayload,
  RunListPage,
  RunRecord,
  StageName,
  SubProblemGraphDoc,
} from "./types.js";

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.baseUrl + path, init);
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      let messages: string[] = [];
      try {
        const parsed = JSON.parse(text);
        detail = parsed.detail ?? text;
        messages = parsed.messages ?? [];
      } catch {
        /* non-JSON error body: show it as-is */
      }
      throw new ApiError(response.status, detail, messages);
    }
    const contentType = response.headers.get("content-type") ?? "";
    if (contentType.includes("application/json")) {
      return JSON.parse(text) as T;
    }
    return text as unknown as T;
  }

  listRuns(offset = 0, limit = 50): Promise<RunListPage> {
    return this.request("GET", `/api/runs?offset=${offset}&limit=${limit}`);
  }

  getRun(runId: string): Promise<RunRecord> {
    return this.request("GET", `/api/runs/${runId}`);
  }

  startRun(query: string, mode: "standard" | "expert"): Promise<{ run_id: string }> {
    return this.request("POST", "/api/runs", { query, mode });
  }

  getArtifact<T = unknown>(runId: string, stage: StageName): Promise<T> {
    return this.request("GET", `/api/runs/${runId}/stages/${stage}/artifact`);
  }

  getGraphArtifact(runId: string): Promise<SubProblemGraphDoc> {
    return this.getArtifact(runId, "querymind");
  }

  getDesignArtifact(runId: string): Promise<DesignDoc> {
    return this.getArtifact(runId, "workflowscout");
  }

  getPlanArtifact(runId: string): Promise<PlanDoc> {
    return this.getArtifact(runId, "solutionweaver");
  }

  getCuratorArtifact(runId: string): Promise<CuratorDoc> {
    return this.getArtifact(runId, "curator");
  }

  getArtifactDot(runId: string, stage: StageName): Promise<string> {
    return this.request("GET", `/api/runs/${runId}/stages/${stage}/artifact.dot`);
  }

  getResult(runId: string): Promise<ResultDoc> {
    return this.request("GET", `/api/runs/${runId}/result`);
  }

  submitReview(runId: string, stage: StageName, payload: ReviewPayload): Promise<RunRecord> {
    return this.request("POST", `/api/runs/${runId}/stages/${stage}/review`, payload);
  }

  getRegistry(): Promise<{ version: number; entries: { id: string; description: string }[] }> {
    return this.request("GET", "/api/registry");
  }

  health(): Promise<{ status: string }> {
    return this.request("GET", "/api/health");
  }
}
