"""Retrieval ranking, projection heads, and their consistency."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from storyorder import (
    EmbeddingTable,
    RetrievalHead,
    project_table,
    retrieve_topk,
)


def make_tables(dim=8, n_frames=6, seed=0):
    rng = np.random.default_rng(seed)
    tt = EmbeddingTable(dim)
    tt.add("q", rng.standard_normal(dim))
    ft = EmbeddingTable(dim)
    ids = [f"f{j}" for j in range(n_frames)]
    for fid in ids:
        ft.add(fid, rng.standard_normal(dim))
    return tt, ft, ids


def test_ranking_matches_cosine_oracle():
    tt, ft, ids = make_tables()
    ranking = retrieve_topk("q", ids, tt, ft, k=len(ids))
    tvec = tt.vector("q")
    sims = {
        fid: float(ft.vector(fid).astype(np.float64) @ tvec.astype(np.float64))
        for fid in ids
    }
    oracle = sorted(ids, key=lambda f: (-sims[f], f))
    assert list(ranking.ranked_ids) == oracle
    for fid, score in zip(ranking.ranked_ids, ranking.scores):
        assert score == pytest.approx(sims[fid], abs=1e-12)
    assert all(a >= b for a, b in zip(ranking.scores, ranking.scores[1:]))


def test_topk_is_prefix_of_full_ranking():
    tt, ft, ids = make_tables(n_frames=10, seed=3)
    full = retrieve_topk("q", ids, tt, ft, k=10)
    for k in range(1, 11):
        part = retrieve_topk("q", ids, tt, ft, k=k)
        assert part.ranked_ids == full.ranked_ids[:k]


def test_tie_breaks_toward_smaller_id():
    dim = 4
    tt = EmbeddingTable(dim)
    tt.add("q", [1.0, 0.0, 0.0, 0.0])
    ft = EmbeddingTable(dim)
    same = [0.0, 1.0, 0.0, 0.0]
    ft.add("zz", same)
    ft.add("aa", same)
    ft.add("mm", same)
    ranking = retrieve_topk("q", ["zz", "aa", "mm"], tt, ft, k=3)
    assert ranking.ranked_ids == ("aa", "mm", "zz")


def test_k_larger_than_pool_returns_all():
    tt, ft, ids = make_tables(n_frames=4)
    ranking = retrieve_topk("q", ids, tt, ft, k=100)
    assert len(ranking.ranked_ids) == 4


def test_input_validation():
    tt, ft, ids = make_tables()
    with pytest.raises(ValueError, match="k must be"):
        retrieve_topk("q", ids, tt, ft, k=0)
    with pytest.raises(ValueError, match="duplicates"):
        retrieve_topk("q", [ids[0], ids[0]], tt, ft, k=2)
    empty = retrieve_topk("q", [], tt, ft, k=5)
    assert empty.ranked_ids == () and empty.scores == ()


def test_head_init_deterministic():
    h1 = RetrievalHead.init(8, 6, seed=4)
    h2 = RetrievalHead.init(8, 6, seed=4)
    for key in h1.params:
        np.testing.assert_array_equal(h1.params[key], h2.params[key])
    h3 = RetrievalHead.init(8, 6, seed=5)
    assert not np.array_equal(h1.params["text.w"], h3.params["text.w"])


def test_projections_are_unit_norm():
    head = RetrievalHead.init(8, 5, seed=0)
    vecs = np.random.default_rng(1).standard_normal((7, 8))
    for proj in (head.project_text(vecs), head.project_frames(vecs)):
        assert proj.shape == (7, 5)
        np.testing.assert_allclose(np.linalg.norm(proj, axis=1), 1.0, atol=1e-12)


def test_ranking_with_head_equals_preprojected_tables():
    tt, ft, ids = make_tables(dim=8, n_frames=9, seed=2)
    head = RetrievalHead.init(8, 6, seed=7)
    with_head = retrieve_topk("q", ids, tt, ft, k=9, head=head)
    tt_p = project_table(tt, head, "text")
    ft_p = project_table(ft, head, "frame")
    without = retrieve_topk("q", ids, tt_p, ft_p, k=9)
    assert with_head.ranked_ids == without.ranked_ids
    # Tables store float32, so pre-projected scores only match to f32 precision.
    np.testing.assert_allclose(with_head.scores, without.scores, atol=1e-6)


def test_project_table_shape_and_side_validation():
    tt, ft, _ = make_tables(dim=8)
    head = RetrievalHead.init(8, 3, seed=0)
    out = project_table(ft, head, "frame")
    assert out.dim == 3
    assert sorted(out.ids()) == sorted(ft.ids())
    with pytest.raises(ValueError, match="side"):
        project_table(ft, head, "image")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_topk_contains_k_best_scores(seed, k):
    tt, ft, ids = make_tables(dim=6, n_frames=12, seed=seed)
    ranking = retrieve_topk("q", ids, tt, ft, k=k)
    tvec = tt.vector("q")
    sims = sorted(
        (float(ft.vector(f).astype(np.float64) @ tvec.astype(np.float64)) for f in ids),
        reverse=True,
    )
    np.testing.assert_allclose(ranking.scores, sims[:k], atol=1e-12)
