"""Checkpoint files: bit-exact round-trips and corruption rejection."""

import numpy as np
import pytest

from storyorder import (
    CheckpointError,
    Codebook,
    ModelConfig,
    OrdererModel,
    RetrievalHead,
    load_checkpoint,
    save_checkpoint,
)
from storyorder.checkpoint import (
    load_head,
    load_orderer,
    load_rerank,
    save_head,
    save_orderer,
    save_rerank,
)
from storyorder.model import RerankConfig, RerankModel


def test_raw_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    config = {"kind": "demo", "depth": 3, "lr": 0.25, "flag": True, "name": "x"}
    tensors = {
        "a": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(7),
        "c": rng.standard_normal((2, 2, 2)),
    }
    path = tmp_path / "c.tvsc"
    save_checkpoint(path, config, tensors)
    got_config, got_tensors = load_checkpoint(path)
    assert got_config == config
    assert sorted(got_tensors) == sorted(tensors)
    for k in tensors:
        assert got_tensors[k].dtype == np.float64
        assert np.array_equal(got_tensors[k], tensors[k])
    # Second save of loaded state is byte-identical.
    path2 = tmp_path / "c2.tvsc"
    save_checkpoint(path2, got_config, got_tensors)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.tvsc"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncation(tmp_path):
    path = tmp_path / "c.tvsc"
    save_checkpoint(path, {"k": 1}, {"t": np.ones((2, 2))})
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_rejects_illegal_config_key(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.tvsc", {"a=b": 1}, {})


def test_orderer_roundtrip_with_codebook(tmp_path):
    cfg = ModelConfig(input_dim=8, code_dim=6, model_dim=12, depth=1, heads=2, mlp_ratio=2)
    model = OrdererModel.init(cfg, seed=3)
    cb = Codebook.multi_stage(size=16, code_dim=6, stages=2, seed=1)
    path = tmp_path / "m.tvsc"
    save_orderer(path, model, cb, extra={"epochs": 5})
    loaded, loaded_cb, info = load_orderer(path)
    assert loaded.config == cfg
    assert info["epochs"] == 5
    for k in model.params:
        assert np.array_equal(loaded.params[k], model.params[k])
    assert loaded_cb.variant == "multi_stage"
    assert loaded_cb.stages == 2
    assert np.array_equal(loaded_cb.codes, cb.codes)


def test_orderer_roundtrip_without_codebook(tmp_path):
    cfg = ModelConfig(
        input_dim=8, code_dim=6, model_dim=12, depth=1, heads=2, mlp_ratio=2, use_vq=False
    )
    model = OrdererModel.init(cfg, seed=0)
    path = tmp_path / "m.tvsc"
    save_orderer(path, model, None)
    loaded, loaded_cb, _ = load_orderer(path)
    assert loaded_cb is None
    assert loaded.config == cfg


def test_orderer_hierarchical_codebook_roundtrip(tmp_path):
    cfg = ModelConfig(input_dim=8, code_dim=6, model_dim=12, depth=1, heads=2, mlp_ratio=2)
    model = OrdererModel.init(cfg, seed=0)
    cb = Codebook.hierarchical(size=16, code_dim=6, seed=2)
    path = tmp_path / "m.tvsc"
    save_orderer(path, model, cb)
    _, loaded_cb, _ = load_orderer(path)
    assert np.array_equal(loaded_cb.parents, cb.parents)
    assert np.array_equal(loaded_cb.children, cb.children)
    assert loaded_cb.parent_size == cb.parent_size


def test_orderer_expectation_mismatch(tmp_path):
    cfg = ModelConfig(input_dim=8, code_dim=6, model_dim=12, depth=1, heads=2, mlp_ratio=2)
    model = OrdererModel.init(cfg, seed=0)
    path = tmp_path / "m.tvsc"
    save_orderer(path, model, Codebook.vanilla(size=8, code_dim=6))
    with pytest.raises(CheckpointError):
        load_orderer(path, expect={"model.depth": 2})
    loaded, _, _ = load_orderer(path, expect={"model.depth": 1})
    assert loaded.config.depth == 1


def test_wrong_kind_rejected_across_loaders(tmp_path):
    cfg = ModelConfig(input_dim=8, code_dim=6, model_dim=12, depth=1, heads=2, mlp_ratio=2)
    model = OrdererModel.init(cfg, seed=0)
    path = tmp_path / "m.tvsc"
    save_orderer(path, model, None)
    with pytest.raises(CheckpointError):
        load_rerank(path)
    with pytest.raises(CheckpointError):
        load_head(path)


def test_rerank_roundtrip(tmp_path):
    cfg = RerankConfig(input_dim=8, model_dim=12, depth=1, heads=2, mlp_ratio=2)
    model = RerankModel.init(cfg, seed=0)
    path = tmp_path / "r.tvsc"
    save_rerank(path, model)
    loaded, _ = load_rerank(path)
    assert loaded.config == cfg
    for k in model.params:
        assert np.array_equal(loaded.params[k], model.params[k])


def test_head_roundtrip(tmp_path):
    head = RetrievalHead.init(input_dim=8, shared_dim=4, seed=0)
    path = tmp_path / "h.tvsc"
    save_head(path, head)
    loaded, _ = load_head(path)
    assert loaded.input_dim == 8
    assert loaded.shared_dim == 4
    for k in head.params:
        assert np.array_equal(loaded.params[k], head.params[k])
