"""Run configuration files and reproducibility manifests.

Config files are flat UTF-8 ``key = value`` lines grouped into sections;
command-line flags override file values.  Every key a run can consume is
declared here with its default, unknown keys are rejected with the full
offender list, and each command writes a manifest holding the resolved
config, the seed and content hashes of every artifact it produced.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence


class ConfigError(ValueError):
    """Raised on unknown keys or unparseable values; message lists all."""


@dataclass(frozen=True)
class RunConfig:
    # run
    seed: int = 0
    strategy: str = "vq_trans"
    # data
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200
    data_dim: int = 32
    noise: float = 0.3
    token_noise_frac: float = 1.2
    movie_group: int = 20
    anchor_palette: int = 0
    # codebook
    variant: str = "vanilla"
    codebook_size: int = 4096
    code_dim: int = 32
    beta: float = 0.8
    stages: int = 3
    softness: float = 0.1
    parent_size: int = 0
    use_vq: bool = True
    # model
    model_dim: int = 128
    depth: int = 3
    heads: int = 4
    mlp_ratio: int = 4
    conditioning_mode: str = "prefix"
    rerank_depth: int = 2
    # train
    epochs: int = 20
    lr: float = 3e-4
    batch_size: int = 16
    weight_decay: float = 0.05
    warmup_frac: float = 0.1
    lambda_vq: float = 1.0
    dead_code_patience: int = 300
    # eval
    pool_size: int = 500
    order_ks: tuple[int, ...] = (20, 30)
    recall_ks: tuple[int, ...] = (1, 5, 10)
    distractors: int = 500
    beam_width: int = 5
    seg_limit: int = 10000


# File location of each field: "section.key" as written in config files.
_FLAT_OF = {
    "seed": "run.seed",
    "strategy": "run.strategy",
    "n_train": "data.n_train",
    "n_val": "data.n_val",
    "n_test": "data.n_test",
    "data_dim": "data.dim",
    "noise": "data.noise",
    "token_noise_frac": "data.token_noise_frac",
    "movie_group": "data.movie_group",
    "anchor_palette": "data.anchor_palette",
    "variant": "codebook.variant",
    "codebook_size": "codebook.size",
    "code_dim": "codebook.dim",
    "beta": "codebook.beta",
    "stages": "codebook.stages",
    "softness": "codebook.softness",
    "parent_size": "codebook.parent_size",
    "use_vq": "codebook.use_vq",
    "model_dim": "model.model_dim",
    "depth": "model.depth",
    "heads": "model.heads",
    "mlp_ratio": "model.mlp_ratio",
    "conditioning_mode": "model.conditioning_mode",
    "rerank_depth": "model.rerank_depth",
    "epochs": "train.epochs",
    "lr": "train.lr",
    "batch_size": "train.batch_size",
    "weight_decay": "train.weight_decay",
    "warmup_frac": "train.warmup_frac",
    "lambda_vq": "train.lambda_vq",
    "dead_code_patience": "train.dead_code_patience",
    "pool_size": "eval.pool_size",
    "order_ks": "eval.order_ks",
    "recall_ks": "eval.recall_ks",
    "distractors": "eval.distractors",
    "beam_width": "eval.beam_width",
    "seg_limit": "eval.seg_limit",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_FLAT_NAMES = {flat: name for name, flat in _FLAT_OF.items()}


def _parse_value(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "tuple[int, ...]":
        parts = [p for p in raw.replace(",", " ").split() if p]
        if not parts:
            raise ValueError("empty integer list")
        return tuple(int(p) for p in parts)
    return raw


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse a sectioned key=value file into {"section.key": raw string}."""
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file: {exc}") from exc
    out: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[f"{section}.{key}"] = value
    return out


def resolve_config(
    file_values: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> RunConfig:
    """Defaults, then file values, then overrides; rejects unknown keys.

    ``file_values`` uses "section.key" names as read from a file;
    ``overrides`` uses plain field names with already-typed values (CLI
    flags).  Every unknown key and bad value is reported in one error.
    """
    problems: list[str] = []
    resolved: dict[str, object] = {}
    for flat, raw in (file_values or {}).items():
        name = _FLAT_NAMES.get(flat)
        if name is None:
            problems.append(f"unknown config key {flat!r}")
            continue
        try:
            resolved[name] = _parse_value(name, raw)
        except ValueError as exc:
            problems.append(f"bad value for {flat!r}: {exc}")
    for name, value in (overrides or {}).items():
        if name not in _FIELD_TYPES:
            problems.append(f"unknown config key {name!r}")
            continue
        if value is not None:
            resolved[name] = value
    if problems:
        raise ConfigError("; ".join(problems))
    return RunConfig(**resolved)


def config_to_flat(cfg: RunConfig) -> dict[str, str]:
    """Fully resolved config as sorted {"section.key": rendered value}."""
    flat = {
        _FLAT_OF[f.name]: _render_value(getattr(cfg, f.name)) for f in fields(RunConfig)
    }
    return dict(sorted(flat.items()))


def write_config_file(cfg: RunConfig, path: str | Path) -> None:
    """Write the resolved config in the sectioned key=value format."""
    by_section: dict[str, list[tuple[str, str]]] = {}
    for flat, value in config_to_flat(cfg).items():
        section, key = flat.split(".", 1)
        by_section.setdefault(section, []).append((key, value))
    lines = []
    for section in sorted(by_section):
        lines.append(f"[{section}]")
        for key, value in sorted(by_section[section]):
            lines.append(f"{key} = {value}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: str | Path,
    command: str,
    cfg: RunConfig,
    artifacts: Sequence[str | Path],
    inputs: Mapping[str, str] | None = None,
) -> Path:
    """Record everything needed to reproduce a run.

    The manifest holds the command name, the fully resolved config (seed
    included), optional input identifiers and a sha256 per produced
    artifact; artifact paths are stored relative to the run directory.
    """
    out_dir = Path(out_dir)
    entries = {}
    for artifact in artifacts:
        artifact = Path(artifact)
        try:
            label = str(artifact.relative_to(out_dir))
        except ValueError:
            label = artifact.name
        entries[label] = sha256_file(artifact)
    payload = {
        "command": command,
        "config": config_to_flat(cfg),
        "seed": cfg.seed,
        "inputs": dict(sorted((inputs or {}).items())),
        "artifacts": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path
