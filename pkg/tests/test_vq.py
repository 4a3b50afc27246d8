"""Codebook quantizers against exhaustive oracles."""

import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from storyorder import (
    Codebook,
    codebook_utilization,
    quantize,
    quantize_any,
    quantize_hierarchical,
    quantize_multi_stage,
    quantize_soft,
    straight_through,
    straight_through_backward,
    vq_loss,
)


def nearest_by_l2(codes, feature):
    """Exhaustive scan; lowest index wins ties."""
    best, best_d = 0, float("inf")
    for i, c in enumerate(codes):
        d = float(np.sum((feature - c) ** 2))
        if d < best_d - 1e-15:
            best, best_d = i, d
    return best


def test_nearest_neighbor_oracle():
    rng = np.random.default_rng(0)
    t0 = time.time()
    for trial in range(1000):
        dim = int(rng.integers(2, 17))
        size = int(rng.integers(2, 513))
        cb = Codebook.vanilla(size=size, code_dim=dim, seed=trial)
        f = rng.standard_normal(dim)
        got = quantize(cb, f)
        assert got.index == nearest_by_l2(cb.codes, f)
    assert time.time() - t0 < 5.0


def test_tie_resolves_to_lowest_index():
    cb = Codebook.vanilla(size=4, code_dim=3, seed=0)
    cb.codes[2] = cb.codes[1]
    result = quantize(cb, cb.codes[1] * 2.0)
    assert result.index == 1


def test_quantize_rejects_wrong_variant_and_shape():
    cb = Codebook.vanilla(size=4, code_dim=3, seed=0)
    with pytest.raises(ValueError):
        quantize(cb, np.zeros(5))
    ms = Codebook.multi_stage(size=4, code_dim=3, seed=0)
    with pytest.raises(ValueError):
        quantize(ms, np.zeros(3))


def test_multi_stage_single_stage_is_vanilla():
    rng = np.random.default_rng(1)
    for seed in range(20):
        ms = Codebook.multi_stage(size=32, code_dim=8, stages=1, seed=seed)
        vn = Codebook.vanilla(size=32, code_dim=8, seed=seed)
        f = rng.standard_normal(8)
        got = quantize_multi_stage(ms, f)
        ref = quantize(vn, f)
        assert got.index == [ref.index]
        np.testing.assert_array_equal(got.code, ref.code)


def test_multi_stage_residual_never_grows():
    rng = np.random.default_rng(2)
    for seed in range(30):
        cb = Codebook.multi_stage(size=16, code_dim=8, stages=3, seed=seed)
        f = rng.standard_normal(8)
        result = quantize_multi_stage(cb, f)
        assert len(result.index) == 3
        residual = f.copy()
        prev = np.linalg.norm(residual)
        for s, idx in enumerate(result.index):
            picked = cb.codes[s][idx]
            residual = residual - (residual @ picked) * picked
            norm = np.linalg.norm(residual)
            assert norm <= prev + 1e-12
            prev = norm
        assert abs(np.linalg.norm(result.code) - 1.0) < 1e-9


def test_multi_stage_each_stage_picks_best_for_residual():
    rng = np.random.default_rng(3)
    for seed in range(20):
        cb = Codebook.multi_stage(size=16, code_dim=6, stages=3, seed=seed)
        f = rng.standard_normal(6)
        result = quantize_multi_stage(cb, f)
        residual = f.copy()
        for s, idx in enumerate(result.index):
            sims = cb.codes[s] @ residual
            assert idx == int(np.argmax(sims))
            picked = cb.codes[s][idx]
            residual = residual - (residual @ picked) * picked


def test_soft_membership_weights():
    rng = np.random.default_rng(4)
    cb = Codebook.soft(size=32, code_dim=8, softness=0.1, seed=0)
    f = rng.standard_normal(8)
    result = quantize_soft(cb, f)
    w = result.index
    assert w.shape == (32,)
    assert np.all(w > 0)
    assert np.sum(w) == pytest.approx(1.0)
    # Sharper softness concentrates mass on the nearest code.
    sharp = Codebook.soft(size=32, code_dim=8, softness=0.01, seed=0)
    w_sharp = quantize_soft(sharp, f).index
    assert w_sharp.max() > w.max()
    assert abs(np.linalg.norm(result.code) - 1.0) < 1e-9


def test_soft_limit_approaches_nearest_code():
    rng = np.random.default_rng(5)
    cb = Codebook.soft(size=16, code_dim=6, softness=1e-4, seed=1)
    vn = Codebook.vanilla(size=16, code_dim=6, seed=1)
    for _ in range(10):
        f = rng.standard_normal(6)
        ref = quantize(vn, f)
        got = quantize_soft(cb, f)
        np.testing.assert_allclose(got.code, ref.code, atol=1e-6)


def test_hierarchical_routes_through_parent():
    rng = np.random.default_rng(6)
    cb = Codebook.hierarchical(size=64, code_dim=8, seed=0)
    assert cb.parent_size == 8
    for _ in range(20):
        f = rng.standard_normal(8)
        result = quantize_hierarchical(cb, f)
        p, c = result.index
        assert p == int(np.argmax(cb.parents @ f))
        assert c == int(np.argmax(cb.children[p] @ f))
        np.testing.assert_array_equal(result.code, cb.children[p][c])


def test_hierarchical_parent_size_override():
    # size is the total leaf budget, split across parent books.
    cb = Codebook.hierarchical(size=64, code_dim=8, seed=0, parent_size=4)
    assert cb.parents.shape == (4, 8)
    assert cb.children.shape == (4, 16, 8)


def test_quantize_any_dispatch():
    rng = np.random.default_rng(7)
    f = rng.standard_normal(8)
    for maker, direct in [
        (Codebook.vanilla, quantize),
        (Codebook.multi_stage, quantize_multi_stage),
        (Codebook.soft, quantize_soft),
        (Codebook.hierarchical, quantize_hierarchical),
    ]:
        cb = maker(size=16, code_dim=8, seed=0)
        np.testing.assert_array_equal(quantize_any(cb, f).code, direct(cb, f).code)


def test_straight_through_value_is_code_exactly():
    rng = np.random.default_rng(8)
    f = rng.standard_normal((5, 8))
    c = rng.standard_normal((5, 8))
    out = straight_through(f, c)
    assert np.array_equal(out, c)
    out[0, 0] = 99.0
    assert c[0, 0] != 99.0


def test_straight_through_backward_passes_probe_unchanged():
    rng = np.random.default_rng(9)
    probe = rng.standard_normal((7, 4))
    back = straight_through_backward(probe)
    assert np.array_equal(back, probe)
    back[0, 0] = -1.0
    assert probe[0, 0] != -1.0


def test_straight_through_shape_mismatch():
    with pytest.raises(ValueError):
        straight_through(np.zeros(3), np.zeros(4))


@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=2, max_value=8),
    st.floats(min_value=0.0, max_value=2.0),
)
@settings(max_examples=50, deadline=None)
def test_vq_loss_matches_direct_formula(n, dim, beta):
    rng = np.random.default_rng(n * 100 + dim)
    f = rng.standard_normal((n, dim))
    c = rng.standard_normal((n, dim))
    expected = float(np.sum((f - c) ** 2) * (1.0 + beta))
    assert vq_loss(f, c, beta=beta) == pytest.approx(expected)


def test_vq_loss_zero_at_codes():
    rng = np.random.default_rng(10)
    c = rng.standard_normal((4, 6))
    assert vq_loss(c.copy(), c, beta=0.8) == 0.0


def test_codebook_utilization():
    used, perplexity = codebook_utilization(np.array([0, 0, 1, 2]), size=8)
    assert used == pytest.approx(3 / 8)
    counts = np.array([2, 1, 1]) / 4
    expected = float(np.exp(-np.sum(counts * np.log(counts))))
    assert perplexity == pytest.approx(expected)
    used_all, _ = codebook_utilization(np.arange(8), size=8)
    assert used_all == 1.0
