import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctikit import corpus
from ctikit.errors import IngestError, SplitError, TieError, ToolkitError

from conftest import synthetic_bundle


def lines(*records):
    return [json.dumps(r) for r in records]


class TestIngest:
    def test_three_valid_lines(self):
        bundle = corpus.ingest(lines({"id": "a", "text": "x"}, {"id": "b", "text": "y"}, {"id": "c", "text": "z"}))
        assert len(bundle) == 3
        assert bundle.splits == {}

    def test_missing_text_names_line(self):
        with pytest.raises(IngestError, match="line 2"):
            corpus.ingest(lines({"id": "a", "text": "x"}, {"id": "b"}))

    def test_duplicate_id_named(self):
        with pytest.raises(IngestError, match="t1"):
            corpus.ingest(lines({"id": "t1", "text": "x"}, {"id": "t1", "text": "y"}))

    def test_invalid_json_names_line(self):
        with pytest.raises(IngestError, match="line 1"):
            corpus.ingest(["{nope"])

    def test_blank_lines_skipped(self):
        bundle = corpus.ingest(["", json.dumps({"id": "a", "text": "x"}), "   "])
        assert len(bundle) == 1

    def test_whitespace_only_text_rejected(self):
        with pytest.raises(IngestError, match="line 1"):
            corpus.ingest(lines({"id": "a", "text": "   "}))

    def test_generated_requires_job_meta(self):
        with pytest.raises(IngestError):
            corpus.ingest(lines({"id": "a", "text": "x", "provenance": "generated"}))
        bundle = corpus.ingest(
            lines(
                {
                    "id": "a",
                    "text": "x",
                    "provenance": "generated",
                    "meta": {"generation_job": "j1", "source_class": "relevant"},
                }
            )
        )
        assert bundle.instances["a"].provenance == "generated"

    def test_roundtrip_bit_exact(self, tmp_path, small_bundle):
        spec = corpus.SplitSpec(sizes={"full_train": 20, "full_dev": 10, "test": 10}, seed=3)
        bundle = corpus.make_splits(small_bundle, spec)
        inst1, man1 = tmp_path / "a.jsonl", tmp_path / "a-splits.json"
        corpus.write_bundle(bundle, inst1, man1)
        reread = corpus.read_bundle(inst1, man1)
        inst2, man2 = tmp_path / "b.jsonl", tmp_path / "b-splits.json"
        corpus.write_bundle(reread, inst2, man2)
        assert inst1.read_bytes() == inst2.read_bytes()
        assert man1.read_bytes() == man2.read_bytes()


class TestPreprocess:
    def test_title_and_body(self):
        assert corpus.preprocess_long_text("T", "B") == "xxtitle T xxbodytext B"

    def test_empty_title_preserved(self):
        assert corpus.preprocess_long_text("", "B") == "xxtitle  xxbodytext B"

    def test_no_inner_rewriting(self):
        assert corpus.preprocess_long_text("A A", "B B") == "xxtitle A A xxbodytext B B"


class TestExpandLinks:
    def test_no_url_identity(self):
        resolver = corpus.StaticResolver({})
        text, mapping = corpus.expand_links("no links here", resolver)
        assert text == "no links here"
        assert mapping == {}

    def test_single_hop_redirect(self):
        resolver = corpus.StaticResolver({"https://t.co/x": "https://example.com/full-story"})
        text, mapping = corpus.expand_links("read https://t.co/x now", resolver)
        assert text == "read https://example.com/full-story now"
        assert mapping == {"https://t.co/x": "https://example.com/full-story"}

    def test_unresolvable_kept_with_warning(self, caplog):
        resolver = corpus.StaticResolver({})
        with caplog.at_level("WARNING"):
            text, mapping = corpus.expand_links("see https://t.co/dead", resolver)
        assert text == "see https://t.co/dead"
        assert mapping == {}
        assert any("t.co/dead" in r.message for r in caplog.records)

    def test_bundle_expansion_records_meta(self):
        bundle = corpus.ingest(lines({"id": "a", "text": "go https://t.co/x"}))
        resolver = corpus.StaticResolver({"https://t.co/x": "https://long.example/x"})
        changed = corpus.expand_bundle_links(bundle, resolver)
        assert changed == 1
        inst = bundle.instances["a"]
        assert "long.example" in inst.text
        assert json.loads(inst.meta["expanded_urls"]) == {"https://t.co/x": "https://long.example/x"}

    def test_cached_resolver_persists(self, tmp_path):
        cache = tmp_path / "cache.json"
        inner = corpus.StaticResolver({"https://t.co/x": "https://a.example/"})
        resolver = corpus.CachedResolver(inner, cache)
        assert resolver.resolve("https://t.co/x") == "https://a.example/"
        # A second resolver with an empty inner map must hit the cache.
        resolver2 = corpus.CachedResolver(corpus.StaticResolver({}), cache)
        assert resolver2.resolve("https://t.co/x") == "https://a.example/"


class TestMajorityVote:
    def test_majority(self):
        assert corpus.majority_vote({"A": "relevant", "B": "relevant", "C": "irrelevant"}) == "relevant"

    def test_singleton(self):
        assert corpus.majority_vote({"A": "relevant"}) == "relevant"

    def test_tie_raises(self):
        with pytest.raises(TieError):
            corpus.majority_vote({"A": "relevant", "B": "irrelevant"})

    def test_empty_raises(self):
        with pytest.raises(ToolkitError):
            corpus.majority_vote({})


class TestCohenKappa:
    def test_perfect_agreement(self):
        labels = ["relevant", "irrelevant", "relevant"]
        assert corpus.cohen_kappa(labels, labels) == 1.0

    def test_hand_computed_zero(self):
        # p_o = 0.5 and p_e = 1*0.5 + 0*0.5 = 0.5, so kappa = 0.
        a = ["relevant"] * 4
        b = ["relevant", "relevant", "irrelevant", "irrelevant"]
        assert corpus.cohen_kappa(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_agreement(self):
        assert corpus.cohen_kappa(["relevant"] * 3, ["relevant"] * 3) == 1.0

    def test_total_disagreement_with_point_masses(self):
        assert corpus.cohen_kappa(["relevant"] * 2, ["irrelevant"] * 2) == pytest.approx(0.0)

    def test_length_mismatch(self):
        with pytest.raises(ToolkitError):
            corpus.cohen_kappa(["relevant"], [])

    def test_empty(self):
        with pytest.raises(ToolkitError):
            corpus.cohen_kappa([], [])

    @given(
        st.lists(st.sampled_from(["relevant", "irrelevant"]), min_size=1, max_size=30),
        st.randoms(use_true_random=False),
    )
    @settings(max_examples=100, deadline=None)
    def test_symmetry_property(self, labels_a, rnd):
        labels_b = [rnd.choice(["relevant", "irrelevant"]) for _ in labels_a]
        assert corpus.cohen_kappa(labels_a, labels_b) == pytest.approx(
            corpus.cohen_kappa(labels_b, labels_a), abs=1e-12
        )

    def test_label_permutation_invariance(self):
        rng = random.Random(5)
        swap = {"relevant": "irrelevant", "irrelevant": "relevant"}
        for _ in range(50):
            n = rng.randrange(2, 40)
            a = [rng.choice(["relevant", "irrelevant"]) for _ in range(n)]
            b = [rng.choice(["relevant", "irrelevant"]) for _ in range(n)]
            k1 = corpus.cohen_kappa(a, b)
            k2 = corpus.cohen_kappa([swap[x] for x in a], [swap[x] for x in b])
            assert k1 == pytest.approx(k2, abs=1e-12)


class TestMakeSplits:
    def test_paper_spec_sizes(self):
        bundle = synthetic_bundle(3001, seed=2)
        out = corpus.make_splits(bundle, corpus.paper_split_spec(seed=9))
        assert len(out.splits["full_train"]) == 1800
        assert len(out.splits["full_dev"]) == 600
        assert len(out.splits["test"]) == 601
        assert len(out.splits["fewshot_train"]) == 32
        assert len(out.splits["fewshot_dev"]) == 32
        out.validate()

    def test_fewshot_stratified_16_16(self):
        bundle = synthetic_bundle(3001, seed=2)
        out = corpus.make_splits(bundle, corpus.paper_split_spec(seed=9))
        labels = [bundle.instances[i].label for i in out.splits["fewshot_train"]]
        assert labels.count("relevant") == 16
        assert labels.count("irrelevant") == 16

    def test_same_seed_identical(self, small_bundle):
        spec = corpus.SplitSpec(sizes={"full_train": 20, "full_dev": 10, "test": 10, "fewshot_train": 8, "fewshot_dev": 4}, seed=13)
        first = corpus.make_splits(small_bundle, spec).splits
        second = corpus.make_splits(small_bundle, spec).splits
        assert first == second

    def test_different_seed_differs(self, small_bundle):
        spec1 = corpus.SplitSpec(sizes={"full_train": 20, "full_dev": 10, "test": 10}, seed=1)
        spec2 = corpus.SplitSpec(sizes={"full_train": 20, "full_dev": 10, "test": 10}, seed=2)
        assert corpus.make_splits(small_bundle, spec1).splits != corpus.make_splits(small_bundle, spec2).splits

    def test_infeasible_stratified_counts(self):
        # 30 relevant but only 10 irrelevant: a stratified 40 needs 20 of each.
        bundle = corpus.ingest(
            lines(
                *(
                    {"id": f"r{i}", "text": f"threat report number {i}", "label": "relevant"}
                    for i in range(30)
                ),
                *(
                    {"id": f"i{i}", "text": f"everyday post number {i}", "label": "irrelevant"}
                    for i in range(10)
                ),
            )
        )
        spec = corpus.SplitSpec(sizes={"full_train": 40, "fewshot_train": 40}, seed=0, stratify=True)
        with pytest.raises(SplitError, match="irrelevant"):
            corpus.make_splits(bundle, spec)

    def test_unlabeled_rejected(self):
        bundle = corpus.ingest(lines({"id": "a", "text": "x"}))
        with pytest.raises(SplitError):
            corpus.make_splits(bundle, corpus.SplitSpec(sizes={"test": 1}))

    @given(st.integers(min_value=0, max_value=2**32 - 1), st.data())
    @settings(max_examples=40, deadline=None)
    def test_split_invariants_random_specs(self, seed, data):
        bundle = synthetic_bundle(80, seed=4)  # 40 per class
        n_train = data.draw(st.integers(min_value=2, max_value=40))
        n_dev = data.draw(st.integers(min_value=2, max_value=20))
        n_test = data.draw(st.integers(min_value=0, max_value=80 - n_train - n_dev))
        few = data.draw(st.integers(min_value=0, max_value=n_train))
        spec = corpus.SplitSpec(
            sizes={"full_train": n_train, "full_dev": n_dev, "test": n_test, "fewshot_train": few},
            seed=seed,
            stratify=False,
        )
        out = corpus.make_splits(bundle, spec)
        out.validate()
        assert len(out.splits["full_train"]) == n_train
        assert len(out.splits["fewshot_train"]) == few
        assert set(out.splits["fewshot_train"]) <= set(out.splits["full_train"])
        assert not set(out.splits["fewshot_train"]) & set(out.splits["test"])
