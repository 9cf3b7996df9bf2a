import json
import os
import random
import signal
import socket
import subprocess
import sys
import threading
import time

import pytest
from fastapi.testclient import TestClient

from ctikit import filtering
from ctikit.augment import GeneratedCandidate
from ctikit.backends import MockEmbeddingBackend
from ctikit.review_service import FilterStore, create_app


def build_job_state(job_id="job-rel", n=12, seed=0, with_threshold=True):
    rng = random.Random(seed)
    words = ["patch", "server", "exploit", "urgent", "threat", "mail", "breach", "fix"]
    originals = [(f"o{i}", " ".join(rng.choice(words) for _ in range(6)) + f" {i}") for i in range(4)]
    texts = [" ".join(rng.choice(words) for _ in range(6)) + f" c{i}" for i in range(n)]
    candidates = [
        GeneratedCandidate(id=f"{job_id}-{i:05d}", text=t, job_id=job_id, parse_position=0)
        for i, t in enumerate(texts)
    ]
    embedder = MockEmbeddingBackend(dim=16, seed=seed)
    state = filtering.rank_candidates(
        job_id, candidates, embedder.embed([t for _, t in originals]), embedder, originals=originals
    )
    state = filtering.attach_counterparts(state, embedder)
    if with_threshold:
        tau = filtering.suggest_threshold(state, 0.5)
        state = filtering.apply_threshold(state, tau, 0.02)
    return state


@pytest.fixture
def client(tmp_path):
    store = FilterStore(tmp_path)
    store.put(build_job_state())
    return TestClient(create_app(store))


class TestListing:
    def test_jobs_listed(self, client):
        body = client.get("/jobs").json()
        assert [j["id"] for j in body["jobs"]] == ["job-rel"]

    def test_unknown_job_404(self, client):
        resp = client.get("/jobs/nope/candidates")
        assert resp.status_code == 404
        assert resp.json()["error"]["code"] == "unknown_job"

    def test_candidates_sorted_by_distance(self, client):
        items = client.get("/jobs/job-rel/candidates").json()["items"]
        distances = [c["distance"] for c in items]
        assert distances == sorted(distances)

    def test_candidates_carry_counterparts(self, client):
        items = client.get("/jobs/job-rel/candidates").json()["items"]
        for c in items:
            assert c["nearest"]["original_id"]
            assert c["nearest"]["original_text"]
            assert isinstance(c["nearest"]["levenshtein_distance"], int)

    def test_band_filter(self, client):
        stats = client.get("/jobs/job-rel/stats").json()
        body = client.get("/jobs/job-rel/candidates", params={"filter": "band"}).json()
        lo = stats["tau"] - stats["delta"]
        hi = stats["tau"] + stats["delta"]
        for c in body["items"]:
            assert lo <= c["distance"] <= hi

    def test_page_beyond_end_empty_but_total_reported(self, client):
        body = client.get("/jobs/job-rel/candidates", params={"page": 99, "page_size": 10}).json()
        assert body["items"] == []
        assert body["total"] == 12

    def test_pagination_covers_all(self, client):
        seen = []
        for page in range(3):
            body = client.get("/jobs/job-rel/candidates", params={"page": page, "page_size": 5}).json()
            seen.extend(c["id"] for c in body["items"])
        assert len(seen) == 12

    def test_bad_filter_rejected(self, client):
        assert client.get("/jobs/job-rel/candidates", params={"filter": "odd"}).status_code == 400


class TestStats:
    def test_counts_consistent_with_listing(self, client):
        stats = client.get("/jobs/job-rel/stats").json()
        items = client.get("/jobs/job-rel/candidates", params={"page_size": 100}).json()["items"]
        by_decision = {}
        for c in items:
            by_decision[c["decision"]] = by_decision.get(c["decision"], 0) + 1
        assert stats["pending"] == by_decision.get("pending", 0)
        assert stats["kept"] == by_decision.get("auto_keep", 0) + by_decision.get("expert_keep", 0)
        assert stats["total"] == 12
        assert len(stats["histogram"]["counts"]) == 10
        assert sum(stats["histogram"]["counts"]) == 12


class TestThreshold:
    def test_set_threshold_updates_counts(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        resp = client.put("/jobs/job-rel/threshold", json={"tau": 99.0, "delta": 0.0, "version": version})
        assert resp.status_code == 200
        body = resp.json()
        assert body["kept"] == 12
        assert body["pending"] == 0
        assert body["version"] == version + 1

    def test_stale_version_conflict_echoes_current(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        first = client.put("/jobs/job-rel/threshold", json={"tau": 0.5, "delta": 0.0, "version": version})
        assert first.status_code == 200
        second = client.put("/jobs/job-rel/threshold", json={"tau": 0.6, "delta": 0.0, "version": version})
        assert second.status_code == 409
        assert second.json()["error"]["code"] == "stale_version"
        assert second.json()["current"]["version"] == version + 1

    def test_negative_tau_validation_error(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        resp = client.put("/jobs/job-rel/threshold", json={"tau": -1.0, "version": version})
        assert resp.status_code == 400


class TestDecisions:
    def _pending_id(self, client):
        items = client.get("/jobs/job-rel/candidates", params={"filter": "pending", "page_size": 100}).json()["items"]
        return items[0]["id"] if items else None

    def test_keep_then_visible(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        cid = client.get("/jobs/job-rel/candidates").json()["items"][0]["id"]
        resp = client.put(f"/jobs/job-rel/candidates/{cid}/decision", json={"decision": "expert_keep", "version": version})
        assert resp.status_code == 200
        items = client.get("/jobs/job-rel/candidates", params={"page_size": 100}).json()["items"]
        assert next(c for c in items if c["id"] == cid)["decision"] == "expert_keep"

    def test_expert_may_change_their_mind(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        cid = client.get("/jobs/job-rel/candidates").json()["items"][0]["id"]
        client.put(f"/jobs/job-rel/candidates/{cid}/decision", json={"decision": "expert_keep", "version": version})
        resp = client.put(
            f"/jobs/job-rel/candidates/{cid}/decision", json={"decision": "expert_drop", "version": version + 1}
        )
        assert resp.status_code == 200
        items = client.get("/jobs/job-rel/candidates", params={"page_size": 100}).json()["items"]
        assert next(c for c in items if c["id"] == cid)["decision"] == "expert_drop"

    def test_stale_version_conflict(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        cid = client.get("/jobs/job-rel/candidates").json()["items"][0]["id"]
        resp = client.put(f"/jobs/job-rel/candidates/{cid}/decision", json={"decision": "expert_keep", "version": version - 1})
        assert resp.status_code == 409

    def test_unknown_candidate_404(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        resp = client.put("/jobs/job-rel/candidates/ghost/decision", json={"decision": "expert_keep", "version": version})
        assert resp.status_code == 404

    def test_bad_decision_rejected(self, client):
        resp = client.put("/jobs/job-rel/candidates/x/decision", json={"decision": "auto_keep", "version": 1})
        assert resp.status_code == 400

    def test_two_writer_interleaving(self, tmp_path):
        store = FilterStore(tmp_path)
        store.put(build_job_state(job_id="job-race", n=8))
        app = create_app(store)
        client = TestClient(app)
        version = client.get("/jobs/job-race/stats").json()["version"]
        ids = [c["id"] for c in client.get("/jobs/job-race/candidates").json()["items"][:2]]
        results = {}

        def writer(name, cid):
            resp = client.put(
                f"/jobs/job-race/candidates/{cid}/decision",
                json={"decision": "expert_keep", "version": version},
            )
            results[name] = resp

        threads = [threading.Thread(target=writer, args=(n, c)) for n, c in zip("ab", ids)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        codes = sorted(r.status_code for r in results.values())
        assert codes == [200, 409]  # exactly one wins per version step
        loser = next(r for r in results.values() if r.status_code == 409)
        retry = client.put(
            f"/jobs/job-race/candidates/{ids[0] if results['b'].status_code == 200 else ids[1]}/decision",
            json={"decision": "expert_keep", "version": loser.json()["current"]["version"]},
        )
        assert retry.status_code == 200


class TestExport:
    def test_pending_blocks_export(self, client):
        resp = client.get("/jobs/job-rel/export")
        stats = client.get("/jobs/job-rel/stats").json()
        if stats["pending"] > 0:
            assert resp.status_code == 412
            assert resp.json()["pending"] == stats["pending"]
        else:
            assert resp.status_code == 200

    def test_fully_decided_exports_kept_only(self, client):
        version = client.get("/jobs/job-rel/stats").json()["version"]
        client.put("/jobs/job-rel/threshold", json={"tau": 0.5, "delta": 0.0, "version": version})
        stats = client.get("/jobs/job-rel/stats").json()
        assert stats["pending"] == 0
        resp = client.get("/jobs/job-rel/export")
        assert resp.status_code == 200
        lines = [json.loads(l) for l in resp.text.splitlines()]
        assert len(lines) == stats["kept"]
        for rec in lines:
            assert rec["provenance"] == "generated"

    def test_empty_keep_set_valid_file(self, tmp_path):
        store = FilterStore(tmp_path)
        state = build_job_state(job_id="job-empty", with_threshold=False)
        state = filtering.apply_threshold(state, 0.0, 0.0)
        # tau 0 keeps only distance-0 candidates; expert-drop those.
        for c in list(state.kept()):
            state = filtering.record_decision(state, c.id, "expert_drop")
        store.put(state)
        client = TestClient(create_app(store))
        resp = client.get("/jobs/job-empty/export")
        assert resp.status_code == 200
        assert resp.text == ""


class TestPersistence:
    def test_acknowledged_decision_survives_reload(self, tmp_path):
        store = FilterStore(tmp_path)
        store.put(build_job_state(job_id="job-dur"))
        client = TestClient(create_app(store))
        version = client.get("/jobs/job-dur/stats").json()["version"]
        cid = client.get("/jobs/job-dur/candidates").json()["items"][0]["id"]
        assert client.put(
            f"/jobs/job-dur/candidates/{cid}/decision", json={"decision": "expert_drop", "version": version}
        ).status_code == 200
        # Fresh store instance = process restart at the storage level.
        reopened = FilterStore(tmp_path)
        assert reopened.get("job-dur").candidate(cid).decision == "expert_drop"

    def test_auth_token_enforced(self, tmp_path):
        store = FilterStore(tmp_path)
        store.put(build_job_state(job_id="job-auth"))
        client = TestClient(create_app(store, token="hunter2"))
        assert client.get("/jobs").status_code == 401
        assert client.get("/jobs", headers={"Authorization": "Bearer hunter2"}).status_code == 200


def _free_port() -> int:
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    return port


@pytest.mark.slow
class TestDurabilityAcrossKill:
    def test_decision_survives_sigkill(self, tmp_path):
        data_dir = tmp_path / "data"
        store = FilterStore(data_dir)
        store.put(build_job_state(job_id="job-kill"))
        port = _free_port()
        argv = [
            sys.executable,
            "-m",
            "ctikit.cli",
            "review-serve",
            "--data-dir",
            str(data_dir),
            "--listen",
            f"127.0.0.1:{port}",
        ]

        import httpx

        def wait_ready(timeout=30.0):
            deadline = time.time() + timeout
            while time.time() < deadline:
                try:
                    if httpx.get(f"http://127.0.0.1:{port}/jobs", timeout=1.0).status_code == 200:
                        return
                except Exception:
                    time.sleep(0.2)
            raise RuntimeError("service did not come up")

        proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            wait_ready()
            stats = httpx.get(f"http://127.0.0.1:{port}/jobs/job-kill/stats", timeout=5.0).json()
            cid = httpx.get(f"http://127.0.0.1:{port}/jobs/job-kill/candidates", timeout=5.0).json()["items"][0]["id"]
            resp = httpx.put(
                f"http://127.0.0.1:{port}/jobs/job-kill/candidates/{cid}/decision",
                json={"decision": "expert_keep", "version": stats["version"]},
                timeout=5.0,
            )
            assert resp.status_code == 200  # acknowledged
        finally:
            proc.send_signal(signal.SIGKILL)
            proc.wait(timeout=10)

        proc2 = subprocess.Popen(argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        try:
            wait_ready()
            items = httpx.get(
                f"http://127.0.0.1:{port}/jobs/job-kill/candidates", params={"page_size": 100}, timeout=5.0
            ).json()["items"]
            assert next(c for c in items if c["id"] == cid)["decision"] == "expert_keep"
        finally:
            proc2.send_signal(signal.SIGKILL)
            proc2.wait(timeout=10)
