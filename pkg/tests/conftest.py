"""Session-scoped fixtures shared by the expensive end-to-end tests.

The planted-order corpus and the trained models take minutes to build, so
they are created once per session.  Every number that defines the training
recipe lives in RECIPE so tests agree on the exact configuration.
"""

from __future__ import annotations

import pytest

from storyorder.data import split_dataset
from storyorder.model import ModelConfig, OrdererModel
from storyorder.synth import SynthConfig, generate_synthetic
from storyorder.training import TrainConfig, train_orderer, train_retrieval_head
from storyorder.vq import Codebook

RECIPE = {
    "data_seed": 0,
    "model_seed": 0,
    "dim": 32,
    "n_train": 2000,
    "n_val": 200,
    "n_test": 200,
    "noise": 0.20,
    "token_noise_frac": 2.0,
    "codebook_size": 4096,
    "code_dim": 32,
    "model_dim": 128,
    "depth": 3,
    "heads": 4,
    "epochs": 20,
    "lr": 1e-3,
    "lambda_vq": 1.0,
    "beta": 0.8,
    "dead_code_patience": 300,
}


@pytest.fixture(scope="session")
def corpus():
    """(split, text_table, frame_table) for the calibration corpus."""
    cfg = SynthConfig(
        n_examples=RECIPE["n_train"] + RECIPE["n_val"] + RECIPE["n_test"],
        dim=RECIPE["dim"],
        seed=RECIPE["data_seed"],
        noise=RECIPE["noise"],
        token_noise_frac=RECIPE["token_noise_frac"],
    )
    examples, text_table, frame_table = generate_synthetic(cfg)
    split = split_dataset(
        examples,
        (RECIPE["n_train"], RECIPE["n_val"], RECIPE["n_test"]),
        RECIPE["data_seed"],
    )
    return split, text_table, frame_table


def _orderer_config(use_vq: bool) -> ModelConfig:
    return ModelConfig(
        input_dim=RECIPE["dim"],
        code_dim=RECIPE["code_dim"],
        model_dim=RECIPE["model_dim"],
        depth=RECIPE["depth"],
        heads=RECIPE["heads"],
        use_vq=use_vq,
    )


def _train_config() -> TrainConfig:
    return TrainConfig(
        epochs=RECIPE["epochs"],
        seed=RECIPE["model_seed"],
        lr=RECIPE["lr"],
        lambda_vq=RECIPE["lambda_vq"],
        dead_code_patience=RECIPE["dead_code_patience"],
    )


@pytest.fixture(scope="session")
def trained_vq(corpus):
    """(model, codebook, wall_seconds) for the full recipe with VQ."""
    import time

    split, text_table, frame_table = corpus
    model = OrdererModel.init(_orderer_config(use_vq=True), seed=RECIPE["model_seed"])
    codebook = Codebook.vanilla(
        size=RECIPE["codebook_size"],
        code_dim=RECIPE["code_dim"],
        beta=RECIPE["beta"],
        seed=RECIPE["model_seed"],
    )
    start = time.perf_counter()
    train_orderer(model, codebook, list(split.train), text_table, frame_table, _train_config())
    elapsed = time.perf_counter() - start
    return model, codebook, elapsed


@pytest.fixture(scope="session")
def trained_novq(corpus):
    """Same recipe with quantization disabled."""
    split, text_table, frame_table = corpus
    model = OrdererModel.init(_orderer_config(use_vq=False), seed=RECIPE["model_seed"])
    train_orderer(model, None, list(split.train), text_table, frame_table, _train_config())
    return model


@pytest.fixture(scope="session")
def trained_head(corpus):
    """Projection heads fit on the training split."""
    split, text_table, frame_table = corpus
    head, _ = train_retrieval_head(
        list(split.train), text_table, frame_table, RECIPE["code_dim"], _train_config()
    )
    return head
