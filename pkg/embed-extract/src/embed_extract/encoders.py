"""Text and image encoders producing 512-dim unit vectors.

The default ``HashedEncoder`` is content-addressed: it seeds a PRNG from a
SHA-256 digest of the input and draws a Gaussian vector, so identical
inputs always yield identical embeddings with no model weights involved.
``ClipEncoder`` wraps a pretrained image-text backbone when its optional
dependencies and weights are present; construction raises
``EncoderUnavailable`` otherwise so callers can fall back cleanly.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

DIM = 512


class EncoderUnavailable(RuntimeError):
    """Raised when an encoder's dependencies or weights cannot be loaded."""


class HashedEncoder:
    """Deterministic content-hash encoder; needs no weights or network.

    Texts and images live in separate hash domains so a text whose UTF-8
    bytes equal an image file's bytes still gets a different vector.
    """

    name = "hashed"
    version = "1"
    dim = DIM

    def _draw(self, domain: bytes, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(domain + b"\x00" + payload).digest()
        seed = list(struct.unpack("<4Q", digest))
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        return self._draw(b"text", text.encode("utf-8"))

    def encode_image(self, raw: bytes) -> np.ndarray:
        return self._draw(b"image", raw)


class ClipEncoder:
    """Pretrained image-text backbone (512-dim projection space).

    Optional: requires torch, transformers, Pillow and locally available
    weights.  Any failure to load surfaces as ``EncoderUnavailable``.
    """

    name = "clip-vit-base-patch32"
    dim = DIM

    def __init__(self, model_id: str = "openai/clip-vit-base-patch32"):
        try:
            import torch
            import transformers
            from PIL import Image
            from transformers import CLIPModel, CLIPProcessor
        except Exception as exc:
            raise EncoderUnavailable(f"clip dependencies missing: {exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_id)
            self._processor = CLIPProcessor.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderUnavailable(f"clip weights unavailable: {exc}") from exc
        self._model.eval()
        self._torch = torch
        self._image_cls = Image
        self.version = transformers.__version__

    def encode_text(self, text: str) -> np.ndarray:
        torch = self._torch
        inputs = self._processor(text=[text], return_tensors="pt", padding=True, truncation=True)
        with torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        vec = feats[0].numpy().astype(np.float64)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def encode_image(self, raw: bytes) -> np.ndarray:
        import io

        torch = self._torch
        image = self._image_cls.open(io.BytesIO(raw)).convert("RGB")
        inputs = self._processor(images=[image], return_tensors="pt")
        with torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        vec = feats[0].numpy().astype(np.float64)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


ENCODERS = {
    "hashed": HashedEncoder,
    "clip": ClipEncoder,
}


def make_encoder(name: str):
    try:
        cls = ENCODERS[name]
    except KeyError:
        raise ValueError(f"unknown encoder {name!r}; choose from {sorted(ENCODERS)}") from None
    return cls()
