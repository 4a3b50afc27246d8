"""Binary checkpoints (magic ``TVSC``): config block plus named tensors.

Layout, little-endian: magic, u16 version, u32 config byte length, the
UTF-8 ``key=value`` config lines, u32 tensor count, then per tensor a u16
name length, the name, u8 rank, u32 dims and the float64 payload.  Keys
and names are written sorted, so identical state gives identical bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from storyorder.model import ModelConfig, OrdererModel, RerankConfig, RerankModel
from storyorder.retrieval import RetrievalHead
from storyorder.vq import Codebook

CKPT_MAGIC = b"TVSC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed files or config mismatches on reload."""


def _encode_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _decode_value(raw: str):
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def save_checkpoint(path: str | Path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    lines = []
    for key in sorted(config):
        if "=" in key or "\n" in key:
            raise CheckpointError(f"illegal config key {key!r}")
        lines.append(f"{key}={_encode_value(config[key])}")
    blob = ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<HI", CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_checkpoint(
    path: str | Path, expect: dict | None = None
) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a checkpoint; optionally insist on specific config values."""
    path = Path(path)
    blob = path.read_bytes()
    offset = 0

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"{path.name}: truncated while reading {what} at offset {offset}")
        chunk = blob[offset : offset + n]
        offset += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise CheckpointError(f"{path.name}: bad magic, not a checkpoint")
    version, cfg_len = struct.unpack("<HI", take(6, "header"))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path.name}: unsupported version {version}")
    config: dict = {}
    text = take(cfg_len, "config block").decode("utf-8")
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"{path.name}: malformed config line {line!r}")
        key, raw = line.split("=", 1)
        config[key] = _decode_value(raw)
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "tensor rank"))
        dims = [struct.unpack("<I", take(4, "tensor dim"))[0] for _ in range(rank)]
        n_items = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(take(8 * n_items, f"tensor {name!r}"), dtype="<f8")
        tensors[name] = data.reshape(dims).copy()
    if offset != len(blob):
        raise CheckpointError(f"{path.name}: trailing bytes after {count} tensors")

    if expect:
        problems = []
        for key, want in expect.items():
            have = config.get(key, "<missing>")
            if have != want:
                problems.append(f"{key}: checkpoint has {have!r}, expected {want!r}")
        if problems:
            raise CheckpointError(f"{path.name}: config mismatch: " + "; ".join(problems))
    return config, tensors


# ----------------------------------------------------- typed wrappers


def _codebook_config(cb: Codebook) -> dict:
    return {
        "cb.variant": cb.variant,
        "cb.code_dim": cb.code_dim,
        "cb.size": cb.size,
        "cb.beta": cb.beta,
        "cb.stages": cb.stages,
        "cb.softness": cb.softness,
        "cb.parent_size": cb.parent_size,
    }


def _codebook_tensors(cb: Codebook) -> dict:
    if cb.variant == "hierarchical":
        return {"cb.parents": cb.parents, "cb.children": cb.children}
    return {"cb.codes": cb.codes}


def _codebook_from(config: dict, tensors: dict) -> Codebook:
    variant = config["cb.variant"]
    cb = Codebook(
        variant=variant,
        code_dim=config["cb.code_dim"],
        size=config["cb.size"],
        beta=float(config["cb.beta"]),
        stages=config["cb.stages"],
        softness=float(config["cb.softness"]),
        parent_size=config["cb.parent_size"],
    )
    if variant == "hierarchical":
        cb.parents = tensors["cb.parents"]
        cb.children = tensors["cb.children"]
    else:
        cb.codes = tensors["cb.codes"]
    return cb


def save_orderer(
    path: str | Path,
    model: OrdererModel,
    codebook: Codebook | None,
    extra: dict | None = None,
) -> None:
    config = {"kind": "orderer", "has_codebook": codebook is not None}
    for key, value in model.config.to_dict().items():
        config[f"model.{key}"] = value
    tensors = {f"model.{k}": v for k, v in model.params.items()}
    if codebook is not None:
        config.update(_codebook_config(codebook))
        tensors.update(_codebook_tensors(codebook))
    config.update(extra or {})
    save_checkpoint(path, config, tensors)


def load_orderer(
    path: str | Path, expect: dict | None = None
) -> tuple[OrdererModel, Codebook | None, dict]:
    config, tensors = load_checkpoint(path, expect={"kind": "orderer", **(expect or {})})
    fields = {
        k.split(".", 1)[1]: v for k, v in config.items() if k.startswith("model.")
    }
    model_cfg = ModelConfig(**fields)
    params = {k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith("model.")}
    model = OrdererModel(model_cfg, params)
    codebook = _codebook_from(config, tensors) if config.get("has_codebook") else None
    return model, codebook, config


def save_rerank(path: str | Path, model: RerankModel, extra: dict | None = None) -> None:
    config = {"kind": "rerank"}
    for key, value in model.config.to_dict().items():
        config[f"model.{key}"] = value
    config.update(extra or {})
    save_checkpoint(path, config, {f"model.{k}": v for k, v in model.params.items()})


def load_rerank(path: str | Path, expect: dict | None = None) -> tuple[RerankModel, dict]:
    config, tensors = load_checkpoint(path, expect={"kind": "rerank", **(expect or {})})
    fields = {k.split(".", 1)[1]: v for k, v in config.items() if k.startswith("model.")}
    model = RerankModel(
        RerankConfig(**fields),
        {k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith("model.")},
    )
    return model, config


def save_head(path: str | Path, head: RetrievalHead, extra: dict | None = None) -> None:
    config = {
        "kind": "retrieval_head",
        "head.input_dim": head.input_dim,
        "head.shared_dim": head.shared_dim,
    }
    config.update(extra or {})
    save_checkpoint(path, config, {f"head.{k}": v for k, v in head.params.items()})


def load_head(path: str | Path, expect: dict | None = None) -> tuple[RetrievalHead, dict]:
    config, tensors = load_checkpoint(path, expect={"kind": "retrieval_head", **(expect or {})})
    head = RetrievalHead(
        input_dim=config["head.input_dim"],
        shared_dim=config["head.shared_dim"],
        params={k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith("head.")},
    )
    return head, config
