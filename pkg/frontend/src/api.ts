import type {
  CandidateFilter,
  CandidatesPage,
  DecisionAck,
  ExpertDecision,
  JobSummary,
  Stats,
} from "./types";

/** Raised on HTTP 409: the write was computed against a stale version.
 * Carries the server's current stats so the caller can refetch-and-replay. */
export class ConflictError extends Error {
  constructor(public current: Stats) {
    super(`stale version; server is at ${current.version}`);
    this.name = "ConflictError";
  }
}

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** What the store needs from the service; ReviewApi implements it over
 * fetch, tests stub it. */
export interface ReviewApiLike {
  getJobs(): Promise<JobSummary[]>;
  getCandidates(jobId: string, filter: CandidateFilter, page: number, pageSize: number): Promise<CandidatesPage>;
  getStats(jobId: string): Promise<Stats>;
  putThreshold(jobId: string, tau: number, delta: number, version: number): Promise<Stats>;
  putDecision(jobId: string, candidateId: string, decision: ExpertDecision, version: number): Promise<DecisionAck>;
  exportUrl(jobId: string): string;
}

export class ReviewApi implements ReviewApiLike {
  constructor(private base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.base + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (resp.status === 409) {
      const body = await resp.json();
      throw new ConflictError(body.current as Stats);
    }
    if (!resp.ok) {
      let code = "http_error";
      let message = `${resp.status}`;
      try {
        const body = await resp.json();
        code = body.error?.code ?? code;
        message = body.error?.message ?? message;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, code, message);
    }
    return (await resp.json()) as T;
  }

  async getJobs(): Promise<JobSummary[]> {
    const body = await this.request<{ jobs: JobSummary[] }>("/jobs");
    return body.jobs;
  }

  getCandidates(jobId: string, filter: CandidateFilter, page: number, pageSize: number): Promise<CandidatesPage> {
    const params = new URLSearchParams({ filter, page: String(page), page_size: String(pageSize) });
    return this.request(`/jobs/${encodeURIComponent(jobId)}/candidates?${params}`);
  }

  getStats(jobId: string): Promise<Stats> {
    return this.request(`/jobs/${encodeURIComponent(jobId)}/stats`);
  }

  putThreshold(jobId: string, tau: number, delta: number, version: number): Promise<Stats> {
    return this.request(`/jobs/${encodeURIComponent(jobId)}/threshold`, {
      method: "PUT",
      body: JSON.stringify({ tau, delta, version }),
    });
  }

  putDecision(jobId: string, candidateId: string, decision: ExpertDecision, version: number): Promise<DecisionAck> {
    return this.request(
      `/jobs/${encodeURIComponent(jobId)}/candidates/${encodeURIComponent(candidateId)}/decision`,
      { method: "PUT", body: JSON.stringify({ decision, version }) },
    );
  }

  exportUrl(jobId: string): string {
    return `${this.base}/jobs/${encodeURIComponent(jobId)}/export`;
  }
}
