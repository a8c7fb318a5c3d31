"""Coarse retrieval: cosine scoring and exact top-k shortlisting."""

import numpy as np
import pytest

from hulirag import (
    DegenerateEmbeddingError,
    DimensionMismatchError,
    RankedList,
    ShortlistIndex,
    cosine_similarity,
    top_k,
)

from conftest import emb, make_image, make_query


class TestCosineSimilarity:
    def test_identical_vectors(self):
        assert cosine_similarity(emb("a", [1, 0]), emb("b", [1, 0])) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity(emb("a", [1, 0]), emb("b", [0, 1])) == 0.0

    def test_hand_value(self):
        # dot = 24, norms 5 and 5
        got = cosine_similarity(emb("a", [3, 4]), emb("b", [4, 3]))
        assert got == pytest.approx(24 / 25, abs=1e-12)

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = emb("a", rng.normal(size=8))
            b = emb("b", rng.normal(size=8))
            ab = cosine_similarity(a, b)
            assert ab == pytest.approx(cosine_similarity(b, a), abs=1e-12)
            assert -1.0 - 1e-12 <= ab <= 1.0 + 1e-12

    def test_scale_invariance(self):
        a = emb("a", [0.3, -0.2, 0.9])
        scaled = emb("a2", np.asarray([0.3, -0.2, 0.9]) * 7.5)
        assert cosine_similarity(a, scaled) == pytest.approx(1.0, abs=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity(emb("a", [1, 0]), emb("b", [1, 0, 0]))

    def test_zero_norm_refused(self):
        with pytest.raises(DegenerateEmbeddingError):
            cosine_similarity(emb("a", [0, 0]), emb("b", [1, 0]))


def _corpus(scores_by_id):
    """Images along one axis so cosine vs the [1,0] query equals the stored x."""
    images = []
    for iid, s in scores_by_id.items():
        images.append(make_image(iid, [s, np.sqrt(1 - s * s)]))
    return images


class TestTopK:
    def test_argmax(self):
        corpus = _corpus({"A": 0.9, "B": 0.1, "C": 0.5})
        q = make_query("q", [1.0, 0.0], {"A"})
        assert top_k(corpus, q, 1).ids() == ["A"]

    def test_k_clamps_to_corpus(self):
        corpus = _corpus({"A": 0.9, "B": 0.1})
        q = make_query("q", [1.0, 0.0], {"A"})
        got = top_k(corpus, q, 10)
        assert got.ids() == ["A", "B"]

    def test_tie_break_by_id(self):
        corpus = _corpus({"B": 0.5, "A": 0.5})
        q = make_query("q", [1.0, 0.0], {"A"})
        assert top_k(corpus, q, 2).ids() == ["A", "B"]

    def test_scores_are_cosines(self):
        corpus = _corpus({"A": 0.9, "B": 0.1})
        q = make_query("q", [1.0, 0.0], {"A"})
        got = dict(top_k(corpus, q, 2).entries)
        assert got["A"] == pytest.approx(0.9, abs=1e-12)
        assert got["B"] == pytest.approx(0.1, abs=1e-12)

    def test_empty_corpus_rejected(self):
        q = make_query("q", [1.0, 0.0], {"A"})
        with pytest.raises(ValueError):
            top_k([], q, 1)
        with pytest.raises(ValueError):
            ShortlistIndex([])

    def test_k_must_be_positive(self):
        corpus = _corpus({"A": 0.9})
        q = make_query("q", [1.0, 0.0], {"A"})
        with pytest.raises(ValueError):
            top_k(corpus, q, 0)

    def test_matches_brute_force_sort_oracle(self):
        # oracle: full pure-Python sort with the same (score desc, id asc) key
        rng = np.random.default_rng(42)
        dim = 16
        images = [make_image(f"img{i:04d}", rng.normal(size=dim)) for i in range(400)]
        index = ShortlistIndex(images)
        for qi in range(20):
            q = make_query(f"q{qi}", rng.normal(size=dim), {"img0000"})
            expected = sorted(
                ((cosine_similarity(q.text_embedding, img.global_embedding), img.image_id)
                 for img in images),
                key=lambda t: (-t[0], t[1]))
            for k in (1, 7, 50, 400):
                got = index.search(q, k)
                assert got.ids() == [iid for _, iid in expected[:k]]

    def test_subset_monotonicity_in_k(self):
        rng = np.random.default_rng(3)
        images = [make_image(f"img{i}", rng.normal(size=8)) for i in range(30)]
        q = make_query("q", rng.normal(size=8), {"img0"})
        prev = set()
        for k in range(1, 31):
            ids = set(top_k(images, q, k).ids())
            assert prev <= ids
            prev = ids

    def test_index_and_function_agree(self):
        rng = np.random.default_rng(9)
        images = [make_image(f"img{i}", rng.normal(size=8)) for i in range(25)]
        index = ShortlistIndex(images)
        q = make_query("q", rng.normal(size=8), {"img0"})
        assert index.search(q, 10).entries == top_k(images, q, 10).entries


class TestRankedList:
    def test_rejects_duplicates_and_disorder(self):
        with pytest.raises(ValueError):
            RankedList("q", [("A", 0.5), ("A", 0.4)])
        with pytest.raises(ValueError):
            RankedList("q", [("A", 0.1), ("B", 0.9)])
        # equal scores must be id-ascending
        with pytest.raises(ValueError):
            RankedList("q", [("B", 0.5), ("A", 0.5)])

    def test_json_roundtrip(self):
        rl = RankedList("q", [("A", 0.9), ("B", 0.1)])
        assert RankedList.from_json(rl.to_json()) == rl
