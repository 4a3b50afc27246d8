"""Batch extraction: encode inputs and write embedding-table files.

Failures are collected per item, never silently dropped: every input that
cannot be read or encoded lands in the manifest's error list while the
remaining items are still written.  Identical inputs produce byte-identical
outputs, including the manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from embed_extract.spans import span_id, span_text
from embed_extract.tvse import ExportError, write_table

TEXT_FILE = "text.tvse"
IMAGE_FILE = "frames.tvse"


@dataclass(frozen=True)
class ExtractManifest:
    encoder_name: str
    encoder_version: str
    dim: int
    inputs: list[dict] = field(default_factory=list)
    outputs: list[dict] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)

    def to_obj(self) -> dict:
        return {
            "encoder": {"name": self.encoder_name, "version": self.encoder_version},
            "dim": self.dim,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "errors": self.errors,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, indent=2) + "\n"


def _sha256(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def extract(
    texts: Sequence[tuple[str, str]] = (),
    images: Sequence[Path] = (),
    segments: Sequence[tuple[str, int, int]] = (),
    out_dir: str | Path = ".",
    encoder=None,
) -> ExtractManifest:
    """Encode texts, token-span segments and image files under ``out_dir``.

    ``texts`` holds (id, text) pairs; ``segments`` holds (text_id, start,
    end) token spans resolved against ``texts``; ``images`` are file paths
    whose stem becomes the embedding id.  Text and segment vectors go to
    text.tvse, image vectors to frames.tvse; a file is only written when it
    has at least one entry.  Returns the manifest; the caller decides where
    to persist it.
    """
    if encoder is None:
        raise ValueError("an encoder is required")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    inputs: list[dict] = []
    errors: list[dict] = []
    text_entries: list[tuple[str, np.ndarray]] = []
    image_entries: list[tuple[str, np.ndarray]] = []
    text_by_id: dict[str, str] = {}
    seen_text_ids: set[str] = set()
    seen_image_ids: set[str] = set()

    for text_id, text in texts:
        source = f"text:{text_id}"
        if not text_id or not isinstance(text_id, str):
            errors.append({"source": source, "error": "missing or empty text id"})
            continue
        if not isinstance(text, str) or not text.strip():
            errors.append({"source": source, "error": "missing or empty text body"})
            continue
        if text_id in seen_text_ids:
            errors.append({"source": source, "error": f"duplicate text id {text_id!r}"})
            continue
        try:
            vec = encoder.encode_text(text)
        except Exception as exc:
            errors.append({"source": source, "error": f"encode failed: {exc}"})
            continue
        seen_text_ids.add(text_id)
        text_by_id[text_id] = text
        text_entries.append((text_id, vec))
        inputs.append(
            {"kind": "text", "id": text_id, "source": source,
             "sha256": _sha256(text.encode("utf-8"))}
        )

    for text_id, start, end in segments:
        source = f"segment:{text_id}#s{start}:{end}"
        if text_id not in text_by_id:
            errors.append({"source": source, "error": f"unknown text id {text_id!r}"})
            continue
        try:
            piece = span_text(text_by_id[text_id], int(start), int(end))
        except (ValueError, TypeError) as exc:
            errors.append({"source": source, "error": str(exc)})
            continue
        key = span_id(text_id, int(start), int(end))
        if key in seen_text_ids:
            errors.append({"source": source, "error": f"duplicate segment id {key!r}"})
            continue
        try:
            vec = encoder.encode_text(piece)
        except Exception as exc:
            errors.append({"source": source, "error": f"encode failed: {exc}"})
            continue
        seen_text_ids.add(key)
        text_entries.append((key, vec))
        inputs.append(
            {"kind": "segment", "id": key, "source": source,
             "sha256": _sha256(piece.encode("utf-8"))}
        )

    for path in images:
        path = Path(path)
        source = f"image:{path}"
        image_id = path.stem
        if not image_id:
            errors.append({"source": source, "error": "image file has no stem to use as id"})
            continue
        if image_id in seen_image_ids:
            errors.append({"source": source, "error": f"duplicate image id {image_id!r}"})
            continue
        try:
            raw = path.read_bytes()
        except OSError as exc:
            errors.append({"source": source, "error": f"unreadable: {exc}"})
            continue
        try:
            vec = encoder.encode_image(raw)
        except Exception as exc:
            errors.append({"source": source, "error": f"encode failed: {exc}"})
            continue
        seen_image_ids.add(image_id)
        image_entries.append((image_id, vec))
        inputs.append({"kind": "image", "id": image_id, "source": source, "sha256": _sha256(raw)})

    outputs: list[dict] = []
    for name, entries in ((TEXT_FILE, text_entries), (IMAGE_FILE, image_entries)):
        if not entries:
            continue
        count = write_table(out_dir / name, encoder.dim, entries)
        outputs.append({"path": name, "dim": encoder.dim, "count": count})

    return ExtractManifest(
        encoder_name=encoder.name,
        encoder_version=str(encoder.version),
        dim=encoder.dim,
        inputs=inputs,
        outputs=outputs,
        errors=errors,
    )
