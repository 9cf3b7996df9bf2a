/** Payload shapes of the review service API. Rendered values must stay
 * byte-equal to these payloads: the client never recomputes distances or
 * counts on its own. */

export type Decision = "pending" | "auto_keep" | "auto_drop" | "expert_keep" | "expert_drop";
export type ExpertDecision = "expert_keep" | "expert_drop";
export type CandidateFilter = "all" | "pending" | "band";

export interface JobSummary {
  id: string;
  class_label: string;
  version: number;
  tau: number | null;
  delta: number;
  total: number;
  pending: number;
}

export interface NearestCounterpart {
  original_id: string;
  original_text: string;
  cosine_similarity: number;
  levenshtein_distance: number;
}

export interface CandidateItem {
  id: string;
  text: string;
  distance: number;
  decision: Decision;
  nearest: NearestCounterpart | null;
}

export interface CandidatesPage {
  job_id: string;
  version: number;
  filter: CandidateFilter;
  page: number;
  page_size: number;
  total: number;
  items: CandidateItem[];
}

export interface Histogram {
  edges: number[];
  counts: number[];
}

/** The single source of truth for every count the UI displays. */
export interface Stats {
  job_id: string;
  version: number;
  tau: number | null;
  delta: number;
  metric: string;
  total: number;
  kept: number;
  dropped: number;
  pending: number;
  expert_keep: number;
  expert_drop: number;
  min_distance: number | null;
  max_distance: number | null;
  histogram: Histogram;
}

export interface DecisionAck {
  job_id: string;
  candidate_id: string;
  decision: ExpertDecision;
  version: number;
}
