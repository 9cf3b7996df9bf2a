import math
import random

import numpy as np
import pytest

from ctikit import filtering
from ctikit.augment import GeneratedCandidate
from ctikit.backends import MockEmbeddingBackend
from ctikit.errors import PendingCandidatesError, ToolkitError
from ctikit.filtering import (
    FilterState,
    apply_threshold,
    attach_counterparts,
    compute_centroid,
    export_filtered,
    nearest_counterpart,
    rank_candidates,
    record_decision,
    suggest_threshold,
)


def make_candidates(texts, job="job-x"):
    return [
        GeneratedCandidate(id=f"{job}/{i:05d}", text=t, job_id=job, parse_position=0)
        for i, t in enumerate(texts)
    ]


def random_texts(rng, n, lo=12, hi=60):
    words = ["patch", "server", "exploit", "urgent", "threat", "cat", "coffee", "game", "cloud", "mail"]
    return [" ".join(rng.choice(words) for _ in range(rng.randrange(3, 9))) + f" {i}" for i in range(n)]


# -- independent scalar oracle helpers (no numpy) ---------------------------


def oracle_cosine_distance(x, c):
    dot = sum(a * b for a, b in zip(x, c))
    nx = math.sqrt(sum(a * a for a in x))
    nc = math.sqrt(sum(a * a for a in c))
    if nx == 0 or nc == 0:
        return 1.0
    return 1.0 - dot / (nx * nc)


def oracle_centroid(vectors):
    dim = len(vectors[0])
    return [sum(v[k] for v in vectors) / len(vectors) for k in range(dim)]


class TestCentroid:
    def test_mean_of_two(self):
        got = compute_centroid([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        assert np.allclose(got, [0.5, 0.5])

    def test_single_vector_identity(self):
        got = compute_centroid([np.array([0.3, 0.4, 0.5])])
        assert np.allclose(got, [0.3, 0.4, 0.5])

    def test_dim_mismatch(self):
        with pytest.raises(ToolkitError):
            compute_centroid([np.array([1.0, 2.0]), np.array([1.0, 2.0, 3.0])])

    def test_empty(self):
        with pytest.raises(ToolkitError):
            compute_centroid([])


class TestRankCandidates:
    def _ranked(self, texts, originals, seed=0):
        embedder = MockEmbeddingBackend(dim=16, seed=seed)
        return rank_candidates(
            "job-x",
            make_candidates(texts),
            embedder.embed(originals),
            embedder,
            originals=[(f"o{i}", t) for i, t in enumerate(originals)],
        )

    def test_identical_candidate_has_near_zero_distance(self):
        # One original: its normalized embedding is the centroid, so an
        # identical candidate sits at distance 0.
        state = self._ranked(["urgent patch the server"], ["urgent patch the server"])
        assert state.candidates[0].distance == pytest.approx(0.0, abs=1e-12)

    def test_ordering_matches_bruteforce(self):
        rng = random.Random(17)
        texts = random_texts(rng, 100)
        originals = random_texts(rng, 10)
        embedder = MockEmbeddingBackend(dim=16, seed=0)
        state = self._ranked(texts, originals)

        # Brute force with scalar math on the same embeddings.
        orig_vecs = embedder.embed(originals)
        orig_vecs = orig_vecs / np.linalg.norm(orig_vecs, axis=1, keepdims=True)
        centroid = oracle_centroid([list(map(float, v)) for v in orig_vecs])
        cand_vecs = embedder.embed(texts)
        cand_vecs = cand_vecs / np.linalg.norm(cand_vecs, axis=1, keepdims=True)
        expected = []
        for i, t in enumerate(texts):
            d = oracle_cosine_distance([float(v) for v in cand_vecs[i]], centroid)
            expected.append((d, f"job-x/{i:05d}"))
        expected.sort()
        assert [c.id for c in state.candidates] == [cid for _, cid in expected]
        for c, (d, _) in zip(state.candidates, expected):
            assert c.distance == pytest.approx(d, abs=1e-9)

    def test_orthogonal_candidate_distance_one(self):
        class AxisEmbedder:
            def embed(self, texts):
                # "x"-labeled texts on the first axis, others on the second.
                return np.stack(
                    [np.array([1.0, 0.0]) if t.startswith("x") else np.array([0.0, 1.0]) for t in texts]
                )

        embedder = AxisEmbedder()
        state = rank_candidates(
            "j", make_candidates(["y orthogonal"]), embedder.embed(["x base"]), embedder
        )
        assert state.candidates[0].distance == pytest.approx(1.0, abs=1e-12)

    def test_distances_in_cosine_range(self):
        rng = random.Random(3)
        state = self._ranked(random_texts(rng, 50), random_texts(rng, 5))
        for c in state.candidates:
            assert 0.0 <= c.distance <= 2.0

    def test_initial_state_all_pending(self):
        rng = random.Random(4)
        state = self._ranked(random_texts(rng, 10), random_texts(rng, 3))
        assert all(c.decision == "pending" for c in state.candidates)
        assert state.tau is None
        assert state.version == 1


class TestApplyThreshold:
    def _state(self, distances):
        cands = tuple(
            GeneratedCandidate(id=f"j/{i:05d}", text=f"text number {i}", job_id="j", parse_position=0, distance=d)
            for i, d in enumerate(distances)
        )
        return FilterState(job_id="j", class_label="relevant", metric="cosine_distance", centroid=(1.0,), candidates=cands)

    def test_collapsed_band_no_pending(self):
        state = apply_threshold(self._state([0.1, 0.2, 0.3, 0.4]), tau=0.25, delta=0.0)
        decisions = [c.decision for c in state.candidates]
        assert decisions == ["auto_keep", "auto_keep", "auto_drop", "auto_drop"]
        assert not state.pending()

    def test_keep_set_is_distance_leq_tau(self):
        state = apply_threshold(self._state([0.1, 0.2, 0.3]), tau=0.2, delta=0.0)
        kept = {c.id for c in state.kept()}
        assert kept == {"j/00000", "j/00001"}

    def test_tau_infinity_keeps_all(self):
        state = apply_threshold(self._state([0.5, 1.5, 2.0]), tau=math.inf, delta=0.0)
        assert all(c.decision == "auto_keep" for c in state.candidates)

    def test_band_yields_pending(self):
        state = apply_threshold(self._state([0.1, 0.25, 0.4]), tau=0.25, delta=0.1)
        assert [c.decision for c in state.candidates] == ["auto_keep", "pending", "auto_drop"]

    def test_expert_decision_survives_retreshold(self):
        state = apply_threshold(self._state([0.1, 0.2, 0.3]), tau=0.25, delta=0.0)
        state = record_decision(state, "j/00002", "expert_drop")
        # Move the keep region over the expert-dropped candidate.
        state = apply_threshold(state, tau=1.0, delta=0.0)
        assert state.candidate("j/00002").decision == "expert_drop"
        assert state.candidate("j/00000").decision == "auto_keep"

    def test_version_strictly_increases(self):
        state = self._state([0.1, 0.2])
        versions = [state.version]
        state = apply_threshold(state, 0.15, 0.0)
        versions.append(state.version)
        state = record_decision(state, "j/00000", "expert_keep")
        versions.append(state.version)
        state = apply_threshold(state, 0.3, 0.05)
        versions.append(state.version)
        assert versions == sorted(set(versions))

    def test_negative_tau_rejected(self):
        with pytest.raises(ToolkitError):
            apply_threshold(self._state([0.1]), tau=-0.5)

    def test_keep_set_monotone_in_tau(self):
        rng = random.Random(23)
        distances = [rng.random() for _ in range(60)]
        base = self._state(distances)
        taus = sorted(rng.random() for _ in range(30))
        previous: set = set()
        for tau in taus:
            kept = {c.id for c in apply_threshold(base, tau, 0.0).kept()}
            assert previous <= kept
            previous = kept

    def test_history_records_every_change(self):
        state = apply_threshold(apply_threshold(self._state([0.1]), 0.5, 0.0), 0.7, 0.1)
        assert [h["tau"] for h in state.history] == [0.5, 0.7]


class TestScaleConsistency:
    def test_positive_scaling_keeps_order_and_decisions(self):
        rng = random.Random(29)
        texts = random_texts(rng, 40)
        originals = random_texts(rng, 6)
        embedder = MockEmbeddingBackend(dim=16, seed=1)

        class ScaledEmbedder:
            def __init__(self, factor):
                self.factor = factor

            def embed(self, items):
                return embedder.embed(items) * self.factor

        for factor in (0.01, 3.7, 250.0):
            plain = rank_candidates(
                "j", make_candidates(texts), embedder.embed(originals), embedder, normalize=False
            )
            scaled = rank_candidates(
                "j",
                make_candidates(texts),
                ScaledEmbedder(factor).embed(originals),
                ScaledEmbedder(factor),
                normalize=False,
            )
            assert [c.id for c in plain.candidates] == [c.id for c in scaled.candidates]
            # Thresholds derived per state (a raw tau does not transfer across
            # scalings: the boundary candidate moves by a float ulp).
            kept_plain = {c.id for c in apply_threshold(plain, suggest_threshold(plain, 0.5), 0.0).kept()}
            kept_scaled = {c.id for c in apply_threshold(scaled, suggest_threshold(scaled, 0.5), 0.0).kept()}
            assert kept_plain == kept_scaled


class TestSuggestThreshold:
    def _state(self, distances):
        cands = tuple(
            GeneratedCandidate(id=f"j/{i:05d}", text=f"text number {i}", job_id="j", parse_position=0, distance=d)
            for i, d in enumerate(distances)
        )
        return FilterState(job_id="j", class_label="relevant", metric="euclidean", centroid=(1.0,), candidates=cands)

    def test_nearest_rank_median(self):
        assert suggest_threshold(self._state([1, 2, 3, 4]), 0.5) == 2

    def test_full_keep_is_max(self):
        assert suggest_threshold(self._state([1, 2, 3, 4]), 1.0) == 4

    def test_singleton(self):
        assert suggest_threshold(self._state([0.7]), 0.3) == 0.7

    def test_out_of_range_fraction(self):
        with pytest.raises(ToolkitError):
            suggest_threshold(self._state([1.0]), 0.0)

    def test_band_suggestion_nonnegative(self):
        rng = random.Random(31)
        state = self._state(sorted(rng.random() for _ in range(40)))
        tau = suggest_threshold(state, 0.6)
        assert filtering.suggest_band(state, tau) >= 0.0


class TestNearestCounterpart:
    def test_identical_counterpart(self):
        embedder = MockEmbeddingBackend(dim=16, seed=0)
        originals = [("o1", "urgent patch the server"), ("o2", "cat pictures are great")]
        rec = nearest_counterpart("urgent patch the server", originals, embedder)
        assert rec.original_id == "o1"
        assert rec.cosine_similarity == pytest.approx(1.0, abs=1e-9)
        assert rec.levenshtein_distance == 0

    def test_kitten_sitting(self):
        embedder = MockEmbeddingBackend(dim=16, seed=0)
        rec = nearest_counterpart("kitten", [("o1", "sitting")], embedder)
        assert rec.levenshtein_distance == 3

    def test_argmax_matches_exhaustive(self):
        rng = random.Random(37)
        embedder = MockEmbeddingBackend(dim=16, seed=2)
        originals = [(f"o{i}", t) for i, t in enumerate(random_texts(rng, 50))]
        candidates = random_texts(rng, 50)
        orig_vecs = embedder.embed([t for _, t in originals])
        for cand in candidates:
            cand_vec = embedder.embed([cand])[0]
            sims = []
            for j, (_, t) in enumerate(originals):
                dot = sum(float(a) * float(b) for a, b in zip(cand_vec, orig_vecs[j]))
                na = math.sqrt(sum(float(a) ** 2 for a in cand_vec))
                nb = math.sqrt(sum(float(b) ** 2 for b in orig_vecs[j]))
                sims.append(dot / (na * nb))
            best = max(range(len(originals)), key=lambda j: (sims[j], -j))
            rec = nearest_counterpart(cand, originals, embedder)
            assert rec.original_id == originals[best][0]

    def test_self_in_pool_wins(self):
        embedder = MockEmbeddingBackend(dim=16, seed=0)
        pool = [("a", "first original text"), ("b", "the candidate text itself"), ("c", "third one here")]
        rec = nearest_counterpart("the candidate text itself", pool, embedder)
        assert rec.original_id == "b"
        assert rec.levenshtein_distance == 0

    def test_empty_pool_rejected(self):
        with pytest.raises(ToolkitError):
            nearest_counterpart("x", [], MockEmbeddingBackend())


class TestExport:
    def _decided_state(self):
        cands = tuple(
            GeneratedCandidate(id=f"j/{i:05d}", text=f"generated text {i}", job_id="j", parse_position=0, distance=0.1 * i)
            for i in range(5)
        )
        state = FilterState(job_id="j", class_label="relevant", metric="cosine_distance", centroid=(1.0,), candidates=cands)
        return apply_threshold(state, tau=0.25, delta=0.0)

    def test_kept_become_generated_instances(self):
        out = export_filtered(self._decided_state())
        assert len(out) == 3
        for inst in out:
            assert inst.provenance == "generated"
            assert inst.label == "relevant"
            assert inst.meta["generation_job"] == "j"
            assert inst.meta["source_class"] == "relevant"

    def test_pending_blocks_export(self):
        state = self._decided_state()
        state = apply_threshold(state, tau=0.25, delta=0.1)
        with pytest.raises(PendingCandidatesError):
            export_filtered(state)

    def test_empty_keep_set_valid(self):
        state = self._decided_state()
        state = apply_threshold(state, tau=0.0, delta=0.0)
        kept = export_filtered(state)
        assert kept[0].id == "j/00000"  # distance 0.0 <= tau
        state2 = apply_threshold(state, tau=0.0, delta=0.0)
        # Drop even the closest one via expert call: empty export is fine.
        state2 = record_decision(state2, "j/00000", "expert_drop")
        assert export_filtered(state2) == []


class TestPersistenceAndCounterparts:
    def test_state_roundtrip(self, tmp_path):
        rng = random.Random(41)
        embedder = MockEmbeddingBackend(dim=16, seed=0)
        originals = [(f"o{i}", t) for i, t in enumerate(random_texts(rng, 4))]
        state = rank_candidates(
            "job-y",
            make_candidates(random_texts(rng, 8), job="job-y"),
            embedder.embed([t for _, t in originals]),
            embedder,
            originals=originals,
        )
        state = attach_counterparts(state, embedder)
        state = apply_threshold(state, suggest_threshold(state, 0.5), 0.05)
        path = tmp_path / "job-y.json"
        filtering.save_state(state, path)
        loaded = filtering.load_state(path)
        assert loaded == state

    def test_attach_counterparts_fills_all(self):
        rng = random.Random(43)
        embedder = MockEmbeddingBackend(dim=16, seed=0)
        originals = [(f"o{i}", t) for i, t in enumerate(random_texts(rng, 3))]
        state = rank_candidates(
            "job-z",
            make_candidates(random_texts(rng, 5), job="job-z"),
            embedder.embed([t for _, t in originals]),
            embedder,
            originals=originals,
        )
        state = attach_counterparts(state, embedder)
        assert all(c.nearest is not None for c in state.candidates)
