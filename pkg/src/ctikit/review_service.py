"""HTTP review service for the expert filtering loop.

Serves candidate pages sorted by centroid distance, accepts threshold moves
and keep/drop decisions under optimistic concurrency (every write carries
the state version the client saw), and exports the filtered dataset.
Decisions are fsynced to the per-job state file before they are
acknowledged, so an acknowledged write survives a hard kill.

Endpoints:
    GET  /jobs
    GET  /jobs/{id}/candidates?filter=all|pending|band&page=&page_size=
    GET  /jobs/{id}/stats
    PUT  /jobs/{id}/threshold            {"tau":, "delta":, "version":}
    PUT  /jobs/{id}/candidates/{cid}/decision  {"decision":, "version":}
    GET  /jobs/{id}/export
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from . import filtering
from .augment import EXPERT_DROP, EXPERT_KEEP, PENDING
from .corpus import instance_lines
from .errors import PendingCandidatesError, StaleVersionError, ToolkitError
from .filtering import FilterState


class FilterStore:
    """Disk-backed job states with a single writer lock per job."""

    def __init__(self, data_dir: str | Path):
        self.jobs_dir = Path(data_dir) / "jobs"
        self.jobs_dir.mkdir(parents=True, exist_ok=True)
        self._states: dict[str, FilterState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        for path in sorted(self.jobs_dir.glob("*.json")):
            state = filtering.load_state(path)
            self._states[state.job_id] = state
            self._locks[state.job_id] = threading.Lock()

    def job_ids(self) -> list[str]:
        with self._registry_lock:
            return sorted(self._states)

    def get(self, job_id: str) -> FilterState:
        with self._registry_lock:
            if job_id not in self._states:
                raise KeyError(job_id)
            return self._states[job_id]

    def _path(self, job_id: str) -> Path:
        return self.jobs_dir / f"{job_id.replace('/', '_')}.json"

    def put(self, state: FilterState) -> None:
        """Register or replace a job state (initial load path)."""
        with self._registry_lock:
            self._locks.setdefault(state.job_id, threading.Lock())
            filtering.save_state(state, self._path(state.job_id))
            self._states[state.job_id] = state

    def mutate(self, job_id: str, seen_version: int, fn) -> FilterState:
        """Run fn(state) -> state under the job lock; reject stale versions.

        The new state is durably persisted before it becomes visible."""
        with self._registry_lock:
            if job_id not in self._states:
                raise KeyError(job_id)
            lock = self._locks[job_id]
        with lock:
            state = self._states[job_id]
            if state.version != seen_version:
                raise StaleVersionError(seen_version, state.version)
            new_state = fn(state)
            filtering.save_state(new_state, self._path(job_id))
            self._states[job_id] = new_state
            return new_state


def _error(status: int, code: str, message: str, **extra) -> JSONResponse:
    body = {"error": {"code": code, "message": message}}
    body.update(extra)
    return JSONResponse(status_code=status, content=body)


def _candidate_payload(state: FilterState, c) -> dict:
    originals = dict(state.originals)
    nearest = None
    if c.nearest is not None:
        nearest = {
            "original_id": c.nearest.original_id,
            "original_text": originals.get(c.nearest.original_id, ""),
            "cosine_similarity": c.nearest.cosine_similarity,
            "levenshtein_distance": c.nearest.levenshtein_distance,
        }
    return {
        "id": c.id,
        "text": c.text,
        "distance": c.distance,
        "decision": c.decision,
        "nearest": nearest,
    }


def _stats_payload(state: FilterState) -> dict:
    counts = state.counts()
    distances = [c.distance for c in state.candidates]
    histogram = {"edges": [], "counts": []}
    if distances:
        lo, hi = min(distances), max(distances)
        if hi == lo:
            hi = lo + 1e-9
        bins = 10
        width = (hi - lo) / bins
        edges = [lo + i * width for i in range(bins + 1)]
        buckets = [0] * bins
        for d in distances:
            idx = min(int((d - lo) / width), bins - 1)
            buckets[idx] += 1
        histogram = {"edges": edges, "counts": buckets}
    return {
        "job_id": state.job_id,
        "version": state.version,
        "tau": state.tau,
        "delta": state.delta,
        "metric": state.metric,
        "total": counts["total"],
        "kept": counts["kept"],
        "dropped": counts["dropped"],
        "pending": counts[PENDING],
        "expert_keep": counts[EXPERT_KEEP],
        "expert_drop": counts[EXPERT_DROP],
        "min_distance": min(distances) if distances else None,
        "max_distance": max(distances) if distances else None,
        "histogram": histogram,
    }


def create_app(store: FilterStore, ui_dir: str | Path | None = None, token: str | None = None) -> FastAPI:
    app = FastAPI(title="ctikit review service")

    if token:

        @app.middleware("http")
        async def check_token(request: Request, call_next):
            if request.url.path.startswith("/jobs"):
                header = request.headers.get("authorization", "")
                if header != f"Bearer {token}":
                    return _error(401, "unauthorized", "missing or invalid bearer token")
            return await call_next(request)

    @app.get("/jobs")
    def list_jobs():
        jobs = []
        for job_id in store.job_ids():
            state = store.get(job_id)
            counts = state.counts()
            jobs.append(
                {
                    "id": job_id,
                    "class_label": state.class_label,
                    "version": state.version,
                    "tau": state.tau,
                    "delta": state.delta,
                    "total": counts["total"],
                    "pending": counts[PENDING],
                }
            )
        return {"jobs": jobs}

    @app.get("/jobs/{job_id}/candidates")
    def list_candidates(job_id: str, filter: str = "all", page: int = 0, page_size: int = 50):
        try:
            state = store.get(job_id)
        except KeyError:
            return _error(404, "unknown_job", f"no job {job_id!r}")
        if filter not in ("all", "pending", "band"):
            return _error(400, "bad_filter", f"filter must be all|pending|band, got {filter!r}")
        if page < 0 or page_size < 1:
            return _error(400, "bad_page", "page must be >= 0 and page_size >= 1")
        if filter == "pending":
            pool = state.pending()
        elif filter == "band":
            pool = state.in_band()
        else:
            pool = list(state.candidates)
        start = page * page_size
        items = pool[start : start + page_size]
        return {
            "job_id": job_id,
            "version": state.version,
            "filter": filter,
            "page": page,
            "page_size": page_size,
            "total": len(pool),
            "items": [_candidate_payload(state, c) for c in items],
        }

    @app.get("/jobs/{job_id}/stats")
    def stats(job_id: str):
        try:
            state = store.get(job_id)
        except KeyError:
            return _error(404, "unknown_job", f"no job {job_id!r}")
        return _stats_payload(state)

    @app.put("/jobs/{job_id}/threshold")
    async def set_threshold(job_id: str, request: Request):
        body = await request.json()
        tau = body.get("tau")
        delta = body.get("delta", 0.0)
        seen = body.get("version")
        if not isinstance(tau, (int, float)) or isinstance(tau, bool) or tau < 0:
            return _error(400, "bad_tau", "tau must be a number >= 0")
        if not isinstance(delta, (int, float)) or isinstance(delta, bool) or delta < 0:
            return _error(400, "bad_delta", "delta must be a number >= 0")
        if not isinstance(seen, int) or isinstance(seen, bool):
            return _error(400, "bad_version", "version must be an integer")
        try:
            state = store.mutate(job_id, seen, lambda s: filtering.apply_threshold(s, float(tau), float(delta)))
        except KeyError:
            return _error(404, "unknown_job", f"no job {job_id!r}")
        except StaleVersionError as exc:
            return _error(409, "stale_version", str(exc), current=_stats_payload(store.get(job_id)))
        return _stats_payload(state)

    @app.put("/jobs/{job_id}/candidates/{candidate_id}/decision")
    async def record_decision(job_id: str, candidate_id: str, request: Request):
        body = await request.json()
        decision = body.get("decision")
        seen = body.get("version")
        if decision not in (EXPERT_KEEP, EXPERT_DROP):
            return _error(400, "bad_decision", f"decision must be {EXPERT_KEEP} or {EXPERT_DROP}")
        if not isinstance(seen, int) or isinstance(seen, bool):
            return _error(400, "bad_version", "version must be an integer")
        try:
            state = store.mutate(
                job_id, seen, lambda s: filtering.record_decision(s, candidate_id, decision)
            )
        except KeyError:
            return _error(404, "unknown_job", f"no job {job_id!r}")
        except StaleVersionError as exc:
            return _error(409, "stale_version", str(exc), current=_stats_payload(store.get(job_id)))
        except ToolkitError as exc:
            return _error(404, "unknown_candidate", str(exc))
        return {"job_id": job_id, "candidate_id": candidate_id, "decision": decision, "version": state.version}

    @app.get("/jobs/{job_id}/export")
    def export(job_id: str):
        try:
            state = store.get(job_id)
        except KeyError:
            return _error(404, "unknown_job", f"no job {job_id!r}")
        try:
            instances = filtering.export_filtered(state)
        except PendingCandidatesError as exc:
            return _error(412, "pending_candidates", str(exc), pending=exc.pending)
        return PlainTextResponse(
            instance_lines(instances),
            media_type="application/jsonl",
            headers={"Content-Disposition": f'attachment; filename="{job_id.replace("/", "_")}-filtered.jsonl"'},
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
