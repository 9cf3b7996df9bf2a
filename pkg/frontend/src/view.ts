import { charDiff, type DiffSpan } from "./diff";
import type { ReviewStore, StoreState } from "./store";
import type { CandidateItem, Decision } from "./types";

const DECISION_LABELS: Record<Decision, string> = {
  pending: "pending",
  auto_keep: "auto keep",
  auto_drop: "auto drop",
  expert_keep: "expert keep",
  expert_drop: "expert drop",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderSpans(target: HTMLElement, spans: DiffSpan[]): void {
  for (const span of spans) {
    const node = el("span", span.kind === "same" ? "" : `diff-${span.kind}`, span.text);
    target.appendChild(node);
  }
}

function fmt(value: number | null | undefined, digits = 4): string {
  return value === null || value === undefined ? "–" : value.toFixed(digits);
}

export class ReviewView {
  private root: HTMLElement;

  constructor(root: HTMLElement, private store: ReviewStore) {
    this.root = root;
    store.subscribe((state) => this.render(state));
  }

  private render(state: StoreState): void {
    this.root.replaceChildren();
    this.root.appendChild(this.renderHeader(state));
    if (state.notice) {
      this.root.appendChild(el("div", "notice", state.notice));
    }
    if (!state.jobId) {
      this.root.appendChild(this.renderJobPicker(state));
      return;
    }
    if (state.stats) {
      this.root.appendChild(this.renderStatsBar(state));
      this.root.appendChild(this.renderHistogram(state));
      this.root.appendChild(this.renderThresholdControls(state));
    }
    this.root.appendChild(this.renderFilterBar(state));
    this.root.appendChild(this.renderCandidateList(state));
  }

  private renderHeader(state: StoreState): HTMLElement {
    const header = el("header");
    header.appendChild(el("h1", "", "Candidate review"));
    const exportBtn = el("button", "export", "Export filtered dataset");
    exportBtn.id = "export-button";
    exportBtn.disabled = !this.store.canExport();
    exportBtn.title = this.store.canExport()
      ? "Download the kept candidates"
      : "Resolve all pending candidates first";
    exportBtn.addEventListener("click", () => {
      const url = this.store.exportUrl();
      if (url && this.store.canExport()) window.location.assign(url);
    });
    header.appendChild(exportBtn);
    if (state.jobId) {
      header.appendChild(el("span", "job-id", state.jobId));
    }
    return header;
  }

  private renderJobPicker(state: StoreState): HTMLElement {
    const list = el("ul", "job-list");
    for (const job of state.jobs) {
      const item = el("li");
      const btn = el("button", "", `${job.id} (${job.class_label}, ${job.total} candidates, ${job.pending} pending)`);
      btn.addEventListener("click", () => void this.store.openJob(job.id));
      item.appendChild(btn);
      list.appendChild(item);
    }
    if (state.jobs.length === 0) {
      list.appendChild(el("li", "", "No jobs in the data directory."));
    }
    return list;
  }

  private renderStatsBar(state: StoreState): HTMLElement {
    const stats = state.stats!;
    const bar = el("div", "stats");
    const entries: [string, string][] = [
      ["total", String(stats.total)],
      ["kept", String(stats.kept)],
      ["dropped", String(stats.dropped)],
      ["pending", String(stats.pending)],
      ["τ", fmt(stats.tau)],
      ["δ", fmt(stats.delta)],
      ["version", String(stats.version)],
    ];
    for (const [label, value] of entries) {
      const cell = el("span", "stat");
      cell.appendChild(el("b", "", value));
      cell.appendChild(el("small", "", label));
      bar.appendChild(cell);
    }
    return bar;
  }

  private renderHistogram(state: StoreState): HTMLElement {
    const stats = state.stats!;
    const wrap = el("div", "histogram");
    const { edges, counts } = stats.histogram;
    const peak = Math.max(1, ...counts);
    counts.forEach((count, i) => {
      const bar = el("div", "bin");
      bar.style.height = `${(count / peak) * 100}%`;
      const lo = edges[i];
      const hi = edges[i + 1];
      bar.title = `${count} in [${fmt(lo, 3)}, ${fmt(hi, 3)}]`;
      const tau = stats.tau;
      if (tau !== null && lo !== undefined && hi !== undefined) {
        const bandLo = tau - stats.delta;
        const bandHi = tau + stats.delta;
        if (hi >= bandLo && lo <= bandHi) bar.classList.add("in-band");
        if (lo <= tau && tau <= hi) bar.classList.add("tau-bin");
      }
      wrap.appendChild(bar);
    });
    return wrap;
  }

  private renderThresholdControls(state: StoreState): HTMLElement {
    const stats = state.stats!;
    const wrap = el("div", "threshold");
    const lo = stats.min_distance ?? 0;
    const hi = stats.max_distance ?? 1;

    const slider = el("input") as HTMLInputElement;
    slider.type = "range";
    slider.id = "tau-slider";
    slider.min = String(lo);
    slider.max = String(hi);
    slider.step = String((hi - lo) / 200 || 0.001);
    slider.value = String(stats.tau ?? hi);
    slider.setAttribute("aria-label", "distance threshold");
    slider.disabled = state.busy;

    const delta = el("input") as HTMLInputElement;
    delta.type = "number";
    delta.id = "delta-input";
    delta.min = "0";
    delta.step = "0.005";
    delta.value = String(stats.delta);
    delta.setAttribute("aria-label", "review band half-width");

    const readout = el("span", "tau-readout", `τ = ${fmt(stats.tau)}`);
    slider.addEventListener("input", () => {
      readout.textContent = `τ = ${fmt(Number(slider.value))}`;
    });
    const commit = () => void this.store.setThreshold(Number(slider.value), Number(delta.value));
    slider.addEventListener("change", commit);
    delta.addEventListener("change", commit);

    wrap.appendChild(el("label", "", "threshold"));
    wrap.appendChild(slider);
    wrap.appendChild(readout);
    wrap.appendChild(el("label", "", "band ±"));
    wrap.appendChild(delta);
    return wrap;
  }

  private renderFilterBar(state: StoreState): HTMLElement {
    const bar = el("nav", "filters");
    for (const filter of ["all", "pending", "band"] as const) {
      const btn = el("button", state.filter === filter ? "active" : "", filter);
      btn.addEventListener("click", () => void this.store.setFilter(filter));
      bar.appendChild(btn);
    }
    const pages = Math.max(1, Math.ceil(state.candidateTotal / state.pageSize));
    if (pages > 1) {
      const prev = el("button", "", "◀");
      prev.disabled = state.page === 0;
      prev.addEventListener("click", () => void this.store.setPage(state.page - 1));
      const next = el("button", "", "▶");
      next.disabled = state.page >= pages - 1;
      next.addEventListener("click", () => void this.store.setPage(state.page + 1));
      bar.appendChild(prev);
      bar.appendChild(el("span", "", `page ${state.page + 1}/${pages}`));
      bar.appendChild(next);
    }
    return bar;
  }

  private renderCandidateList(state: StoreState): HTMLElement {
    const list = el("ol", "candidates");
    state.candidates.forEach((candidate, index) => {
      list.appendChild(this.renderCard(state, candidate, index));
    });
    if (state.candidates.length === 0) {
      list.appendChild(el("li", "empty", "Nothing to review under this filter."));
    }
    return list;
  }

  private renderCard(state: StoreState, candidate: CandidateItem, index: number): HTMLElement {
    const card = el("li", `card decision-${candidate.decision}${index === state.selected ? " selected" : ""}`);
    card.tabIndex = 0;
    card.addEventListener("focus", () => {
      if (state.selected !== index) {
        state.selected = index;
        card.classList.add("selected");
      }
    });

    const head = el("div", "card-head");
    head.appendChild(el("span", "badge", DECISION_LABELS[candidate.decision]));
    head.appendChild(el("span", "distance", `d = ${fmt(candidate.distance, 6)}`));
    card.appendChild(head);

    const body = el("div", "card-body");
    const candLine = el("p", "candidate-text");
    const origLine = el("p", "original-text");
    if (candidate.nearest) {
      const diff = charDiff(candidate.text, candidate.nearest.original_text);
      renderSpans(candLine, diff.candidate);
      renderSpans(origLine, diff.original);
      const meta = el(
        "p",
        "counterpart-meta",
        `nearest ${candidate.nearest.original_id}: cos ${fmt(candidate.nearest.cosine_similarity)}, ` +
          `levenshtein ${candidate.nearest.levenshtein_distance}`,
      );
      body.appendChild(candLine);
      body.appendChild(origLine);
      body.appendChild(meta);
    } else {
      candLine.textContent = candidate.text;
      body.appendChild(candLine);
    }
    card.appendChild(body);

    const actions = el("div", "card-actions");
    const keep = el("button", "keep", "keep (a)");
    keep.addEventListener("click", () => void this.store.decide(candidate.id, "expert_keep"));
    const drop = el("button", "drop", "drop (x)");
    drop.addEventListener("click", () => void this.store.decide(candidate.id, "expert_drop"));
    actions.appendChild(keep);
    actions.appendChild(drop);
    card.appendChild(actions);
    return card;
  }
}
