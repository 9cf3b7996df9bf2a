"""Centroid-distance filtering of generated candidates.

Candidates are embedded, ranked by distance to the class centroid, and
decided automatically outside a review band around the threshold; inside
the band an expert decides. Expert decisions permanently override the
automation. States are versioned for optimistic concurrency and persisted
as one JSON file per job.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .augment import (
    AUTO_DROP,
    AUTO_KEEP,
    EXPERT_DROP,
    EXPERT_KEEP,
    PENDING,
    CounterpartRef,
    GeneratedCandidate,
    candidate_from_record,
    candidate_to_record,
)
from .backends import EmbeddingBackend
from .corpus import LabeledInstance
from .errors import PendingCandidatesError, ToolkitError

COSINE = "cosine_distance"
EUCLIDEAN = "euclidean"
METRICS = (COSINE, EUCLIDEAN)

KEEP_DECISIONS = (AUTO_KEEP, EXPERT_KEEP)
DROP_DECISIONS = (AUTO_DROP, EXPERT_DROP)
EXPERT_DECISIONS = (EXPERT_KEEP, EXPERT_DROP)


@dataclass(frozen=True)
class FilterState:
    """Ranked candidates plus the current threshold/band and decisions.

    Immutable: every mutation returns a new state with version + 1.
    """

    job_id: str
    class_label: str
    metric: str
    centroid: tuple[float, ...]
    candidates: tuple[GeneratedCandidate, ...]
    originals: tuple[tuple[str, str], ...] = ()  # (id, text), for counterpart display
    tau: float | None = None
    delta: float = 0.0
    version: int = 1
    normalize: bool = True
    history: tuple[dict, ...] = ()

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ToolkitError(f"unknown metric {self.metric!r}")
        for c in self.candidates:
            if c.distance is None:
                raise ToolkitError(f"candidate {c.id!r} has no distance")
            if c.distance < 0:
                raise ToolkitError(f"candidate {c.id!r} has negative distance")
            if self.metric == COSINE and c.distance > 2.0 + 1e-9:
                raise ToolkitError(f"cosine distance {c.distance} outside [0, 2]")

    def candidate(self, candidate_id: str) -> GeneratedCandidate:
        for c in self.candidates:
            if c.id == candidate_id:
                return c
        raise ToolkitError(f"unknown candidate {candidate_id!r}")

    def counts(self) -> dict[str, int]:
        counts = {d: 0 for d in (PENDING, AUTO_KEEP, AUTO_DROP, EXPERT_KEEP, EXPERT_DROP)}
        for c in self.candidates:
            counts[c.decision] += 1
        counts["kept"] = counts[AUTO_KEEP] + counts[EXPERT_KEEP]
        counts["dropped"] = counts[AUTO_DROP] + counts[EXPERT_DROP]
        counts["total"] = len(self.candidates)
        return counts

    def kept(self) -> list[GeneratedCandidate]:
        return [c for c in self.candidates if c.decision in KEEP_DECISIONS]

    def pending(self) -> list[GeneratedCandidate]:
        return [c for c in self.candidates if c.decision == PENDING]

    def in_band(self) -> list[GeneratedCandidate]:
        if self.tau is None:
            return list(self.candidates)
        lo, hi = self.tau - self.delta, self.tau + self.delta
        return [c for c in self.candidates if lo <= c.distance <= hi]


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def compute_centroid(vectors: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Arithmetic per-component mean of the given vectors."""
    if isinstance(vectors, np.ndarray):
        if vectors.size == 0:
            raise ToolkitError("compute_centroid needs at least one vector")
        if vectors.ndim == 1:
            return vectors.astype(np.float64)
        return vectors.mean(axis=0, dtype=np.float64)
    if len(vectors) == 0:
        raise ToolkitError("compute_centroid needs at least one vector")
    dims = {np.asarray(v).shape for v in vectors}
    if len(dims) != 1:
        raise ToolkitError(f"dimension mismatch across vectors: {sorted(dims)}")
    return np.stack([np.asarray(v, dtype=np.float64) for v in vectors]).mean(axis=0)


def _normalized(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.where(norms == 0.0, 1.0, norms)


def rank_candidates(
    job_id: str,
    candidates: Sequence[GeneratedCandidate],
    original_embeddings: np.ndarray,
    embedder: EmbeddingBackend,
    metric: str = COSINE,
    class_label: str = "relevant",
    originals: Sequence[tuple[str, str]] = (),
    normalize: bool = True,
) -> FilterState:
    """Embed candidates, fill distances to the originals' centroid, and
    return a state sorted ascending by (distance, candidate id)."""
    if metric not in METRICS:
        raise ToolkitError(f"unknown metric {metric!r}")
    original_embeddings = np.asarray(original_embeddings, dtype=np.float64)
    if original_embeddings.ndim != 2 or original_embeddings.shape[0] < 1:
        raise ToolkitError("need at least one original embedding")
    if normalize:
        original_embeddings = _normalized(original_embeddings)
    centroid = compute_centroid(original_embeddings)

    ranked: list[GeneratedCandidate] = []
    if candidates:
        X = np.asarray(embedder.embed([c.text for c in candidates]), dtype=np.float64)
        if X.shape[1] != centroid.shape[0]:
            raise ToolkitError(
                f"candidate embedding dim {X.shape[1]} != centroid dim {centroid.shape[0]}"
            )
        if normalize:
            X = _normalized(X)
        distances = _kernels.centroid_distances(X, centroid, cosine=(metric == COSINE))
        for c, d in zip(candidates, distances):
            d = float(min(max(d, 0.0), 2.0)) if metric == COSINE else float(max(d, 0.0))
            ranked.append(replace(c, distance=d, decision=PENDING))
        ranked.sort(key=lambda c: (c.distance, c.id))

    return FilterState(
        job_id=job_id,
        class_label=class_label,
        metric=metric,
        centroid=tuple(float(x) for x in centroid),
        candidates=tuple(ranked),
        originals=tuple(originals),
        normalize=normalize,
    )


# ---------------------------------------------------------------------------
# Thresholding and decisions
# ---------------------------------------------------------------------------


def _band_decision(distance: float, tau: float, delta: float) -> str:
    if distance <= tau - delta:
        return AUTO_KEEP
    if distance >= tau + delta:
        return AUTO_DROP
    return PENDING


def apply_threshold(state: FilterState, tau: float, delta: float = 0.0) -> FilterState:
    """Recompute automatic decisions for the band [tau-delta, tau+delta].

    Expert decisions are never touched; the version is bumped and the
    change appended to the threshold history.
    """
    if not tau >= 0:  # also rejects NaN and -inf; +inf is a valid keep-all setting
        raise ToolkitError("tau must be >= 0")
    if not delta >= 0:
        raise ToolkitError("delta must be >= 0")
    updated = []
    for c in state.candidates:
        if c.decision in EXPERT_DECISIONS:
            updated.append(c)
        else:
            updated.append(replace(c, decision=_band_decision(c.distance, tau, delta)))
    return replace(
        state,
        candidates=tuple(updated),
        tau=tau,
        delta=delta,
        version=state.version + 1,
        history=state.history + ({"version": state.version + 1, "tau": tau, "delta": delta},),
    )


def record_decision(state: FilterState, candidate_id: str, decision: str) -> FilterState:
    """Apply an expert decision; experts may revise their own calls."""
    if decision not in EXPERT_DECISIONS:
        raise ToolkitError(f"decision must be one of {EXPERT_DECISIONS}, got {decision!r}")
    found = False
    updated = []
    for c in state.candidates:
        if c.id == candidate_id:
            updated.append(replace(c, decision=decision))
            found = True
        else:
            updated.append(c)
    if not found:
        raise ToolkitError(f"unknown candidate {candidate_id!r}")
    return replace(state, candidates=tuple(updated), version=state.version + 1)


def suggest_threshold(state: FilterState, keep_fraction: float) -> float:
    """Nearest-rank quantile of the candidate distances."""
    if not 0 < keep_fraction <= 1:
        raise ToolkitError("keep_fraction must lie in (0, 1]")
    if not state.candidates:
        raise ToolkitError("state has no candidates")
    distances = sorted(c.distance for c in state.candidates)
    rank = max(1, math.ceil(keep_fraction * len(distances)))
    return distances[rank - 1]


def suggest_band(state: FilterState, tau: float) -> float:
    """Half the width of the decile bin the threshold falls into."""
    if not state.candidates:
        raise ToolkitError("state has no candidates")
    distances = sorted(c.distance for c in state.candidates)
    n = len(distances)
    deciles = [distances[max(1, math.ceil(q / 10 * n)) - 1] for q in range(11)]
    deciles[0] = distances[0]
    for lo, hi in zip(deciles, deciles[1:]):
        if lo <= tau <= hi:
            return (hi - lo) / 2.0
    return (deciles[-1] - deciles[0]) / 20.0


# ---------------------------------------------------------------------------
# Nearest counterparts
# ---------------------------------------------------------------------------


def nearest_counterpart(
    candidate_text: str,
    originals: Sequence[tuple[str, str]],
    embedder: EmbeddingBackend,
) -> CounterpartRef:
    """The original with maximal cosine similarity to the candidate, with
    the pair's Levenshtein distance reported alongside."""
    if not originals:
        raise ToolkitError("nearest_counterpart needs at least one original")
    texts = [t for _, t in originals]
    vecs = np.asarray(embedder.embed([candidate_text] + texts), dtype=np.float64)
    sims = _kernels.cosine_similarity_matrix(vecs[:1], vecs[1:])[0]
    best = 0
    for j in range(1, len(originals)):
        if sims[j] > sims[best] or (sims[j] == sims[best] and originals[j][0] < originals[best][0]):
            best = j
    oid, otext = originals[best]
    return CounterpartRef(
        original_id=oid,
        cosine_similarity=float(sims[best]),
        levenshtein_distance=_kernels.levenshtein_distance(candidate_text, otext),
    )


def attach_counterparts(state: FilterState, embedder: EmbeddingBackend) -> FilterState:
    """Fill each candidate's nearest-original record (version unchanged:
    this is enrichment, not a decision)."""
    if not state.originals:
        raise ToolkitError("state carries no originals to compare against")
    updated = tuple(
        replace(c, nearest=nearest_counterpart(c.text, state.originals, embedder))
        for c in state.candidates
    )
    return replace(state, candidates=updated)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_filtered(state: FilterState, allow_pending: bool = False) -> list[LabeledInstance]:
    """Materialize kept candidates as generated instances of the job's class."""
    pending = state.pending()
    if pending and not allow_pending:
        raise PendingCandidatesError(len(pending))
    out = []
    for c in state.kept():
        meta = {
            "generation_job": state.job_id,
            "source_class": state.class_label,
            "decision": c.decision,
            "distance": f"{c.distance:.6f}",
        }
        if c.nearest is not None:
            meta["nearest_original"] = c.nearest.original_id
        out.append(
            LabeledInstance(
                id=c.id,
                text=c.text,
                label=state.class_label,
                provenance="generated",
                meta=meta,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def state_to_dict(state: FilterState) -> dict:
    return {
        "job_id": state.job_id,
        "class_label": state.class_label,
        "metric": state.metric,
        "normalize": state.normalize,
        "centroid": list(state.centroid),
        "tau": state.tau,
        "delta": state.delta,
        "version": state.version,
        "history": list(state.history),
        "originals": [[i, t] for i, t in state.originals],
        "candidates": [candidate_to_record(c) for c in state.candidates],
    }


def state_from_dict(payload: dict) -> FilterState:
    return FilterState(
        job_id=payload["job_id"],
        class_label=payload["class_label"],
        metric=payload["metric"],
        normalize=payload.get("normalize", True),
        centroid=tuple(payload["centroid"]),
        tau=payload.get("tau"),
        delta=payload.get("delta", 0.0),
        version=payload["version"],
        history=tuple(payload.get("history", ())),
        originals=tuple((i, t) for i, t in payload.get("originals", ())),
        candidates=tuple(candidate_from_record(r) for r in payload["candidates"]),
    )


def save_state(state: FilterState, path: str | Path) -> None:
    """Atomic, durable write: temp file + fsync + rename."""
    path = Path(path)
    payload = json.dumps(state_to_dict(state), ensure_ascii=False, sort_keys=True, indent=2) + "\n"
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_state(path: str | Path) -> FilterState:
    return state_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
