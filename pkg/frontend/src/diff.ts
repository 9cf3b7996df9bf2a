/** Character-level diff between a generated candidate and its nearest
 * original, for spotting synonym swaps, truncations and added suffixes
 * at a glance. Classic LCS dynamic program; fine for tweet-length text. */

export type SpanKind = "same" | "added" | "removed";

export interface DiffSpan {
  text: string;
  kind: SpanKind;
}

export interface CharDiff {
  candidate: DiffSpan[]; // "added" marks text only in the candidate
  original: DiffSpan[]; // "removed" marks text only in the original
}

function lcsTable(a: string, b: string): Int32Array {
  const n = a.length;
  const m = b.length;
  const width = m + 1;
  const table = new Int32Array((n + 1) * width);
  for (let i = 1; i <= n; i++) {
    for (let j = 1; j <= m; j++) {
      if (a[i - 1] === b[j - 1]) {
        table[i * width + j] = table[(i - 1) * width + (j - 1)]! + 1;
      } else {
        const up = table[(i - 1) * width + j]!;
        const left = table[i * width + (j - 1)]!;
        table[i * width + j] = up > left ? up : left;
      }
    }
  }
  return table;
}

function pushChar(spans: DiffSpan[], ch: string, kind: SpanKind): void {
  const last = spans[spans.length - 1];
  if (last && last.kind === kind) {
    last.text += ch;
  } else {
    spans.push({ text: ch, kind });
  }
}

const MAX_DIFF_CELLS = 4_000_000; // ~2000x2000 chars; beyond that, skip alignment

export function charDiff(candidate: string, original: string): CharDiff {
  if ((candidate.length + 1) * (original.length + 1) > MAX_DIFF_CELLS) {
    return {
      candidate: [{ text: candidate, kind: candidate === original ? "same" : "added" }],
      original: [{ text: original, kind: candidate === original ? "same" : "removed" }],
    };
  }
  const table = lcsTable(candidate, original);
  const width = original.length + 1;
  const candSpans: DiffSpan[] = [];
  const origSpans: DiffSpan[] = [];
  let i = candidate.length;
  let j = original.length;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && candidate[i - 1] === original[j - 1]) {
      pushChar(candSpans, candidate[i - 1]!, "same");
      pushChar(origSpans, original[j - 1]!, "same");
      i--;
      j--;
    } else if (j > 0 && (i === 0 || table[(i - 1) * width + j]! < table[i * width + (j - 1)]!)) {
      pushChar(origSpans, original[j - 1]!, "removed");
      j--;
    } else {
      pushChar(candSpans, candidate[i - 1]!, "added");
      i--;
    }
  }
  // Spans were built back-to-front.
  for (const spans of [candSpans, origSpans]) {
    spans.reverse();
    for (const span of spans) {
      span.text = [...span.text].reverse().join("");
    }
  }
  return { candidate: candSpans, original: origSpans };
}
