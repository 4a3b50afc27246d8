"""Similarity-ordering baselines, segmentation, and optimal assignment."""

import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from storyorder import (
    EmbeddingTable,
    TableSegmentEmbedder,
    bipartite_match,
    enumerate_segmentations,
    order_contextual,
    order_cumulative,
    order_dynamic,
    order_naive,
    order_sliding,
    segment_text,
)
from storyorder.baselines import count_segmentations


# ----------------------------------------------------------- segmentation


def test_segment_even_split():
    text = " ".join(f"w{i}" for i in range(7))
    assert segment_text(text, 3) == [(0, 3), (3, 5), (5, 7)]


def test_segment_single_span_covers_everything():
    text = "a b c d"
    assert segment_text(text, 1) == [(0, 4)]


def test_segment_one_token_each():
    text = "a b c"
    assert segment_text(text, 3) == [(0, 1), (1, 2), (2, 3)]


def test_segment_rejects_too_many_spans():
    with pytest.raises(ValueError):
        segment_text("a b c", 4)
    with pytest.raises(ValueError):
        segment_text("a b c", 0)


@given(st.integers(min_value=1, max_value=40), st.integers(min_value=1, max_value=40))
@settings(max_examples=200, deadline=None)
def test_segment_partition_properties(n, m):
    if m > n:
        return
    text = " ".join(f"w{i}" for i in range(n))
    spans = segment_text(text, m)
    assert len(spans) == m
    assert spans[0][0] == 0
    assert spans[-1][1] == n
    sizes = [e - s for s, e in spans]
    assert all(s > 0 for s in sizes)
    assert max(sizes) - min(sizes) <= 1
    # Earlier spans absorb the remainder.
    assert sizes == sorted(sizes, reverse=True)
    for (s1, e1), (s2, _) in zip(spans, spans[1:]):
        assert e1 == s2


def test_enumerate_exhaustive_when_small():
    segs = enumerate_segmentations(5, 3, limit=100)
    assert len(segs) == math.comb(4, 2)
    assert len(set(segs)) == len(segs)
    for seg in segs:
        assert seg[0][0] == 0 and seg[-1][1] == 5
        for (s1, e1), (s2, _) in zip(seg, seg[1:]):
            assert e1 == s2 and e1 > s1


def test_enumerate_sampled_when_large():
    total = count_segmentations(30, 8)
    assert total > 50
    segs = enumerate_segmentations(30, 8, limit=50, seed=3)
    assert len(segs) == 50
    assert len(set(segs)) == 50
    wider = enumerate_segmentations(30, 8, limit=80, seed=3)
    assert wider[:50] == segs


def test_enumerate_rejects_bad_inputs():
    with pytest.raises(ValueError):
        enumerate_segmentations(3, 4, limit=10)
    with pytest.raises(ValueError):
        enumerate_segmentations(3, 2, limit=0)


# ------------------------------------------------------------- assignment


def brute_force_assignment(sim):
    n = sim.shape[0]
    best_total = -np.inf
    best_cols = None
    for perm in itertools.permutations(range(n)):
        total = float(sum(sim[r, perm[r]] for r in range(n)))
        if total > best_total + 1e-12:
            best_total = total
            best_cols = list(perm)
    return best_cols, best_total


def test_assignment_oracle_200_random():
    rng = np.random.default_rng(0)
    t0 = time.time()
    for trial in range(200):
        n = int(rng.integers(1, 8))
        sim = rng.standard_normal((n, n))
        cols, total = bipartite_match(sim)
        _, want_total = brute_force_assignment(sim)
        assert abs(total - want_total) < 1e-9
        assert sorted(cols) == list(range(n))
        assert abs(sum(sim[r, c] for r, c in enumerate(cols)) - want_total) < 1e-9
    assert time.time() - t0 < 10.0


def test_assignment_tie_prefers_lexicographic_columns():
    sim = np.zeros((3, 3))
    cols, total = bipartite_match(sim)
    assert cols == [0, 1, 2]
    assert total == 0.0


def test_assignment_identity_and_antidiagonal():
    sim = np.eye(4)
    cols, total = bipartite_match(sim)
    assert cols == [0, 1, 2, 3]
    assert total == pytest.approx(4.0)
    anti = np.fliplr(np.eye(4))
    cols, total = bipartite_match(anti)
    assert cols == [3, 2, 1, 0]
    assert total == pytest.approx(4.0)


def test_assignment_rejects_non_square():
    with pytest.raises(ValueError):
        bipartite_match(np.zeros((2, 3)))


def test_assignment_empty():
    cols, total = bipartite_match(np.zeros((0, 0)))
    assert cols == [] and total == 0.0


# --------------------------------------------------------------- orderers


def make_tables(m, dim=8, seed=0, n_tokens_per_frame=2):
    """Planted line geometry: frame k sits at position k along a direction."""
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    anchor, axis = basis[0], basis[1]
    text_table = EmbeddingTable(dim=dim)
    frame_table = EmbeddingTable(dim=dim)
    frame_ids = [f"f{k:02d}" for k in range(m)]
    for k, fid in enumerate(frame_ids):
        v = anchor + (0.2 + 0.8 * k / max(m - 1, 1)) * axis
        frame_table.add(fid, v / np.linalg.norm(v))
    tokens = []
    n_tok = m * n_tokens_per_frame
    for j in range(n_tok):
        v = anchor + (0.2 + 0.8 * j / max(n_tok - 1, 1)) * axis
        tokens.append(v / np.linalg.norm(v))
    text_table.add("t0", anchor)
    for j, tv in enumerate(tokens):
        text_table.add(f"t0#s{j}:{j + 1}", tv)
    text = " ".join(f"w{j}" for j in range(n_tok))
    return text, text_table, frame_table, frame_ids


def test_naive_sorts_by_whole_text_similarity():
    text, tt, ft, fids = make_tables(5)
    result = order_naive("t0", sorted(fids, reverse=True), tt, ft)
    tvec = tt.vector("t0")
    sims = {fid: float(ft.vector(fid) @ tvec) for fid in fids}
    want = sorted(fids, key=lambda f: (-sims[f], f))
    assert list(result.ordered_ids) == want
    assert list(result.scores) == sorted(result.scores, reverse=True)


def test_naive_rejects_duplicates():
    text, tt, ft, fids = make_tables(3)
    with pytest.raises(ValueError):
        order_naive("t0", [fids[0], fids[0]], tt, ft)


def test_sliding_recovers_planted_line():
    text, tt, ft, fids = make_tables(6)
    result = order_sliding(text, "t0", list(reversed(fids)), TableSegmentEmbedder(tt), ft)
    assert list(result.ordered_ids) == fids


def test_cumulative_runs_and_uses_each_candidate_once():
    text, tt, ft, fids = make_tables(6)
    result = order_cumulative(text, "t0", fids, TableSegmentEmbedder(tt), ft)
    assert sorted(result.ordered_ids) == sorted(fids)
    assert len(result.scores) == len(fids)


def test_beam_width_one_equals_cumulative_on_random_instances():
    rng = np.random.default_rng(1)
    for trial in range(100):
        m = int(rng.integers(2, 7))
        dim = int(rng.integers(3, 9))
        tt = EmbeddingTable(dim=dim)
        ft = EmbeddingTable(dim=dim)
        tt.add("t0", rng.standard_normal(dim))
        n_tok = int(rng.integers(m, 2 * m + 1))
        for j in range(n_tok):
            tt.add(f"t0#s{j}:{j + 1}", rng.standard_normal(dim))
        fids = [f"f{k}" for k in range(m)]
        for fid in fids:
            ft.add(fid, rng.standard_normal(dim))
        text = " ".join(f"w{j}" for j in range(n_tok))
        emb = TableSegmentEmbedder(tt)
        got = order_contextual(text, "t0", fids, emb, ft, beam_width=1)
        want = order_cumulative(text, "t0", fids, emb, ft)
        assert got.ordered_ids == want.ordered_ids


def test_exhaustive_beam_attains_optimal_total():
    rng = np.random.default_rng(2)
    for trial in range(30):
        m = int(rng.integers(2, 6))
        dim = 6
        tt = EmbeddingTable(dim=dim)
        ft = EmbeddingTable(dim=dim)
        tt.add("t0", rng.standard_normal(dim))
        for j in range(m):
            tt.add(f"t0#s{j}:{j + 1}", rng.standard_normal(dim))
        fids = [f"f{k}" for k in range(m)]
        for fid in fids:
            ft.add(fid, rng.standard_normal(dim))
        text = " ".join(f"w{j}" for j in range(m))
        emb = TableSegmentEmbedder(tt)
        width = math.factorial(m) * m
        got = order_contextual(text, "t0", fids, emb, ft, beam_width=width)

        from storyorder.baselines import _cumulative_queries, _segment_queries

        queries = _cumulative_queries(_segment_queries(text, "t0", m, emb))
        frames = ft.matrix(fids)
        sims = frames @ queries.T
        best = max(
            sum(sims[perm[t], t] for t in range(m))
            for perm in itertools.permutations(range(m))
        )
        assert sum(got.scores) == pytest.approx(best, abs=1e-9)


def test_contextual_rejects_bad_width():
    text, tt, ft, fids = make_tables(3)
    with pytest.raises(ValueError):
        order_contextual(text, "t0", fids, TableSegmentEmbedder(tt), ft, beam_width=0)


def test_dynamic_matches_best_assignment_over_segmentations():
    text, tt, ft, fids = make_tables(4)
    emb = TableSegmentEmbedder(tt)
    result = order_dynamic(text, "t0", fids, emb, ft, limit=10000)
    assert sorted(result.ordered_ids) == sorted(fids)

    frames = ft.matrix(fids)
    best = -np.inf
    for seg in enumerate_segmentations(len(text.split()), 4, limit=10000):
        seg_mat = np.stack([emb.embed("t0", s) for s in seg])
        _, total = bipartite_match(seg_mat @ frames.T)
        best = max(best, total)
    assert sum(result.scores) == pytest.approx(best, abs=1e-9)


def test_dynamic_rejects_pool_larger_than_tokens():
    text, tt, ft, fids = make_tables(3, n_tokens_per_frame=1)
    extra = EmbeddingTable(dim=8)
    for fid in fids:
        extra.add(fid, ft.vector(fid))
    extra.add("f99", ft.vector(fids[0]))
    with pytest.raises(ValueError):
        order_dynamic(text, "t0", fids + ["f99"], TableSegmentEmbedder(tt), extra)


def test_empty_pool_is_empty_result():
    text, tt, ft, fids = make_tables(3)
    emb = TableSegmentEmbedder(tt)
    assert order_naive("t0", [], tt, ft).ordered_ids == ()
    assert order_sliding(text, "t0", [], emb, ft).ordered_ids == ()
    assert order_cumulative(text, "t0", [], emb, ft).ordered_ids == ()
    assert order_contextual(text, "t0", [], emb, ft).ordered_ids == ()
    assert order_dynamic(text, "t0", [], emb, ft).ordered_ids == ()


def test_table_embedder_whole_and_span_lookup():
    text, tt, ft, fids = make_tables(3)
    emb = TableSegmentEmbedder(tt)
    np.testing.assert_array_equal(emb.whole("t0"), tt.vector("t0"))
    got = emb.embed("t0", (0, 2))
    v = tt.vector("t0#s0:1") + tt.vector("t0#s1:2")
    np.testing.assert_allclose(got, v / np.linalg.norm(v), atol=1e-12)
