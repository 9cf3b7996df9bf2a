import { ConflictError, type ReviewApiLike } from "./api";
import type { CandidateFilter, CandidateItem, ExpertDecision, JobSummary, Stats } from "./types";

export interface StoreState {
  jobs: JobSummary[];
  jobId: string | null;
  /** Counts shown anywhere in the UI come from here and nowhere else. */
  stats: Stats | null;
  candidates: CandidateItem[];
  candidateTotal: number;
  filter: CandidateFilter;
  page: number;
  pageSize: number;
  selected: number;
  notice: string | null;
  busy: boolean;
}

type Listener = (state: StoreState) => void;

/** UI state and service interaction for one review session.
 *
 * Decisions are applied optimistically and rolled back if the service
 * rejects them; threshold moves that hit a version conflict refetch and
 * replay once. The store never derives a count locally: after every
 * mutation it refetches /stats.
 */
export class ReviewStore {
  state: StoreState = {
    jobs: [],
    jobId: null,
    stats: null,
    candidates: [],
    candidateTotal: 0,
    filter: "all",
    page: 0,
    pageSize: 200,
    selected: 0,
    notice: null,
    busy: false,
  };

  private listeners: Listener[] = [];

  constructor(private api: ReviewApiLike) {}

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private get version(): number {
    return this.state.stats?.version ?? 0;
  }

  /** Export is allowed only when the service says nothing is pending. */
  canExport(): boolean {
    return this.state.stats !== null && this.state.stats.pending === 0;
  }

  exportUrl(): string | null {
    return this.state.jobId ? this.api.exportUrl(this.state.jobId) : null;
  }

  selectedCandidate(): CandidateItem | null {
    return this.state.candidates[this.state.selected] ?? null;
  }

  async loadJobs(): Promise<void> {
    this.state.jobs = await this.api.getJobs();
    this.emit();
  }

  async openJob(jobId: string): Promise<void> {
    this.state.jobId = jobId;
    this.state.page = 0;
    this.state.selected = 0;
    await this.refresh();
  }

  /** Refetch stats (the count source) and the candidate page. */
  async refresh(): Promise<void> {
    const jobId = this.state.jobId;
    if (!jobId) return;
    this.state.stats = await this.api.getStats(jobId);
    const page = await this.api.getCandidates(jobId, this.state.filter, this.state.page, this.state.pageSize);
    this.state.candidates = page.items;
    this.state.candidateTotal = page.total;
    if (this.state.selected >= page.items.length) {
      this.state.selected = Math.max(0, page.items.length - 1);
    }
    this.emit();
  }

  async setFilter(filter: CandidateFilter): Promise<void> {
    this.state.filter = filter;
    this.state.page = 0;
    this.state.selected = 0;
    await this.refresh();
  }

  async setPage(page: number): Promise<void> {
    this.state.page = Math.max(0, page);
    await this.refresh();
  }

  moveSelection(delta: number): void {
    const n = this.state.candidates.length;
    if (n === 0) return;
    this.state.selected = Math.min(n - 1, Math.max(0, this.state.selected + delta));
    this.emit();
  }

  /** Move the threshold. On a version conflict the server state moved
   * under us: refetch, then replay the move once against the new version. */
  async setThreshold(tau: number, delta: number): Promise<void> {
    const jobId = this.state.jobId;
    if (!jobId) return;
    this.state.busy = true;
    this.emit();
    try {
      try {
        await this.api.putThreshold(jobId, tau, delta, this.version);
      } catch (err) {
        if (!(err instanceof ConflictError)) throw err;
        this.state.notice = "State changed elsewhere; reapplying threshold.";
        await this.refresh();
        await this.api.putThreshold(jobId, tau, delta, this.version);
      }
      this.state.notice = null;
    } finally {
      this.state.busy = false;
      // Counts rendered by the UI come solely from /stats, never from the
      // threshold response body.
      await this.refresh();
    }
  }

  /** Optimistic expert decision with rollback on any API error. */
  async decide(candidateId: string, decision: ExpertDecision): Promise<void> {
    const jobId = this.state.jobId;
    if (!jobId) return;
    const candidate = this.state.candidates.find((c) => c.id === candidateId);
    if (!candidate) return;
    const previous = candidate.decision;
    candidate.decision = decision;
    this.emit();
    try {
      await this.api.putDecision(jobId, candidateId, decision, this.version);
      this.state.stats = await this.api.getStats(jobId);
      this.state.notice = null;
      this.emit();
    } catch (err) {
      candidate.decision = previous;
      this.state.notice =
        err instanceof ConflictError
          ? "Decision conflicted with a newer state; refreshed."
          : `Decision failed: ${(err as Error).message}`;
      this.emit();
      if (err instanceof ConflictError) {
        await this.refresh();
      }
    }
  }

  async decideSelected(decision: ExpertDecision): Promise<void> {
    const candidate = this.selectedCandidate();
    if (candidate) {
      await this.decide(candidate.id, decision);
    }
  }
}

export type KeyAction =
  | { kind: "move"; delta: number }
  | { kind: "decide"; decision: ExpertDecision }
  | { kind: "filter"; filter: CandidateFilter }
  | { kind: "export" };

/** Keyboard map for the whole review flow; the UI is operable without a
 * pointer. */
export function keyAction(key: string): KeyAction | null {
  switch (key) {
    case "j":
    case "ArrowDown":
      return { kind: "move", delta: 1 };
    case "k":
    case "ArrowUp":
      return { kind: "move", delta: -1 };
    case "a":
      return { kind: "decide", decision: "expert_keep" };
    case "x":
      return { kind: "decide", decision: "expert_drop" };
    case "1":
      return { kind: "filter", filter: "all" };
    case "2":
      return { kind: "filter", filter: "pending" };
    case "3":
      return { kind: "filter", filter: "band" };
    case "e":
      return { kind: "export" };
    default:
      return null;
  }
}
