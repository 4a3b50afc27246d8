"""Analytic gradients against finite differences on tiny doubles-only models."""

import time

import numpy as np
import pytest

from storyorder import Codebook, ModelConfig, OrdererModel, grad_check

DIM = 8


def tiny_config(depth=2, mode="prefix", use_vq=True):
    # Small enough that the full parameter sweep of the five-point stencil
    # stays cheap; position and frame limits sized to the probe batches.
    return ModelConfig(
        input_dim=DIM,
        code_dim=DIM,
        model_dim=8,
        depth=depth,
        heads=2,
        mlp_ratio=2,
        max_text_len=2,
        max_frames=5,
        conditioning_mode=mode,
        use_vq=use_vq,
    )


def tiny_batch(rng, n_pairs=2):
    batch = []
    for _ in range(n_pairs):
        m = int(rng.integers(2, 5))
        t = rng.standard_normal((1, DIM))
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        f = rng.standard_normal((m, DIM))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        batch.append((t, f))
    return batch


def test_grad_check_ten_seeds_under_budget():
    cfg = tiny_config()
    start = time.time()
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = OrdererModel.init(cfg, seed=seed)
        codebook = Codebook.vanilla(size=8, code_dim=DIM, seed=seed)
        err = grad_check(model, codebook, tiny_batch(rng), epsilon=1e-4)
        assert err < 1e-4, f"seed {seed}: max relative error {err:.3e}"
    assert time.time() - start < 60.0


def test_grad_check_without_codebook():
    model = OrdererModel.init(tiny_config(use_vq=False), seed=0)
    rng = np.random.default_rng(0)
    err = grad_check(model, None, tiny_batch(rng), epsilon=1e-4)
    assert err < 1e-4


def test_grad_check_cross_attention_mode():
    model = OrdererModel.init(tiny_config(mode="cross_attention"), seed=1)
    rng = np.random.default_rng(1)
    codebook = Codebook.vanilla(size=8, code_dim=DIM, seed=1)
    err = grad_check(model, codebook, tiny_batch(rng), epsilon=1e-4)
    assert err < 1e-4


@pytest.mark.parametrize("variant", ["multi_stage", "soft", "hierarchical"])
def test_grad_check_codebook_variants(variant):
    model = OrdererModel.init(tiny_config(depth=1), seed=2)
    rng = np.random.default_rng(2)
    if variant == "multi_stage":
        codebook = Codebook.multi_stage(size=8, code_dim=DIM, stages=2, seed=2)
    elif variant == "soft":
        codebook = Codebook.soft(size=8, code_dim=DIM, softness=0.5, seed=2)
    else:
        codebook = Codebook.hierarchical(size=8, code_dim=DIM, parent_size=2, seed=2)
    err = grad_check(model, codebook, tiny_batch(rng, n_pairs=1), epsilon=1e-4)
    assert err < 1e-4


def test_grad_check_lambda_scaling():
    # lambda_vq only rescales the codebook pull and commitment terms; the
    # check must hold at both extremes.
    for lam in (0.0, 5.0):
        model = OrdererModel.init(tiny_config(depth=1), seed=3)
        rng = np.random.default_rng(3)
        codebook = Codebook.vanilla(size=8, code_dim=DIM, seed=3)
        err = grad_check(
            model, codebook, tiny_batch(rng, n_pairs=1), epsilon=1e-4, lambda_vq=lam
        )
        assert err < 1e-4
