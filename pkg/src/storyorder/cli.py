"""Command-line harness wiring the library into reproducible runs.

Every command reads an optional sectioned key=value config file, applies
flag overrides, funnels all randomness through the single configured
seed and writes its outputs plus a manifest (resolved config, seed,
artifact hashes) into the run directory, so a run can be reproduced from
the manifest alone.
"""

from __future__ import annotations

import csv
import functools
import json
from dataclasses import replace
from pathlib import Path

import click

from storyorder.baselines import (
    TableSegmentEmbedder,
    order_contextual,
    order_cumulative,
    order_dynamic,
    order_naive,
    order_sliding,
)
from storyorder.checkpoint import (
    CheckpointError,
    load_head,
    load_orderer,
    load_rerank,
    save_head,
    save_orderer,
    save_rerank,
)
from storyorder.config import (
    ConfigError,
    RunConfig,
    read_config_file,
    resolve_config,
    write_manifest,
)
from storyorder.data import (
    DataFormatError,
    EmbeddingTable,
    StoryboardExample,
    load_dataset,
    load_embeddings,
    save_dataset,
    save_embeddings,
    split_dataset,
    validate_references,
)
from storyorder.evaluation import (
    EvalReport,
    build_candidate_pool,
    evaluate_ordering,
    evaluate_retrieval,
    evaluate_retrieve_order,
    render_report_text,
)
from storyorder.model import ModelConfig, OrdererModel, RerankConfig, RerankModel
from storyorder.ordering import OrderingResult, order_rerank, order_vq_trans
from storyorder.retrieval import RetrievalHead, retrieve_topk
from storyorder.stats import corpus_stats, load_concreteness_lexicon
from storyorder.synth import SynthConfig, generate_synthetic
from storyorder.training import TrainConfig, train_orderer, train_rerank, train_retrieval_head
from storyorder.vq import Codebook

BASELINES = ("naive", "sliding", "cumulative", "dynamic", "contextual")
STRATEGIES = BASELINES + ("rerank", "vq_trans")

SWEEP_GRIDS = {
    "capacity": [
        {"code_dim": d, "codebook_size": s}
        for d in (32, 64, 128, 512)
        for s in (1024, 4096, 8192)
    ],
    "variants": [
        {"code_dim": d, "codebook_size": s, "variant": v}
        for d, s in ((32, 4096), (64, 8192), (128, 1024), (512, 8192))
        for v in ("vanilla", "multi_stage", "soft", "hierarchical")
    ],
    "lambda": [{"lambda_vq": lam} for lam in (0.1, 1.0, 10.0)],
}


def _guard(fn):
    """Convert library errors into clean messages with exit status 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ConfigError, DataFormatError, CheckpointError) as exc:
            raise click.ClickException(str(exc)) from exc
        except (ValueError, KeyError, OSError, RuntimeError) as exc:
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc

    return wrapper


def _resolve(config_path: str | None, **overrides) -> RunConfig:
    file_values = read_config_file(config_path) if config_path else None
    return resolve_config(file_values, overrides)


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus(data_dir: str) -> tuple[dict[str, list[StoryboardExample]], EmbeddingTable, EmbeddingTable]:
    root = Path(data_dir)
    splits: dict[str, list[StoryboardExample]] = {}
    for name in ("train", "val", "test"):
        path = root / f"{name}.jsonl"
        splits[name] = load_dataset(path) if path.exists() else []
    if not any(splits.values()):
        raise click.ClickException(f"no train/val/test .jsonl files under {root}")
    text_table = load_embeddings(root / "text.tvse")
    frame_table = load_embeddings(root / "frames.tvse")
    for examples in splits.values():
        validate_references(examples, text_table, frame_table)
    return splits, text_table, frame_table


def _pick_split(splits: dict[str, list[StoryboardExample]], name: str) -> list[StoryboardExample]:
    examples = splits.get(name, [])
    if not examples:
        raise click.ClickException(f"split {name!r} is empty")
    return examples


def _build_codebook(cfg: RunConfig) -> Codebook:
    if cfg.variant == "vanilla":
        return Codebook.vanilla(cfg.codebook_size, cfg.code_dim, cfg.beta, cfg.seed)
    if cfg.variant == "multi_stage":
        return Codebook.multi_stage(cfg.codebook_size, cfg.code_dim, cfg.stages, cfg.beta, cfg.seed)
    if cfg.variant == "soft":
        return Codebook.soft(cfg.codebook_size, cfg.code_dim, cfg.softness, cfg.beta, cfg.seed)
    if cfg.variant == "hierarchical":
        return Codebook.hierarchical(
            cfg.codebook_size, cfg.code_dim, cfg.beta, cfg.seed, cfg.parent_size or None
        )
    raise click.ClickException(f"unknown codebook variant {cfg.variant!r}")


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        weight_decay=cfg.weight_decay,
        warmup_frac=cfg.warmup_frac,
        lambda_vq=cfg.lambda_vq,
        seed=cfg.seed,
        dead_code_patience=cfg.dead_code_patience,
    )


def _order_one(
    strategy: str,
    ex: StoryboardExample,
    pool: list[str],
    text_table: EmbeddingTable,
    frame_table: EmbeddingTable,
    embedder: TableSegmentEmbedder,
    models: dict,
    cfg: RunConfig,
) -> OrderingResult:
    if strategy == "naive":
        return order_naive(ex.text_id, pool, text_table, frame_table)
    if strategy == "sliding":
        return order_sliding(ex.synopsis_text, ex.text_id, pool, embedder, frame_table)
    if strategy == "cumulative":
        return order_cumulative(ex.synopsis_text, ex.text_id, pool, embedder, frame_table)
    if strategy == "dynamic":
        return order_dynamic(
            ex.synopsis_text, ex.text_id, pool, embedder, frame_table,
            limit=cfg.seg_limit, seed=cfg.seed,
        )
    if strategy == "contextual":
        return order_contextual(
            ex.synopsis_text, ex.text_id, pool, embedder, frame_table,
            beam_width=cfg.beam_width,
        )
    if strategy == "rerank":
        if "rerank" not in models:
            raise click.ClickException("strategy 'rerank' needs --ckpt with a rerank checkpoint")
        return order_rerank(models["rerank"], ex.text_id, pool, text_table, frame_table)
    if strategy == "vq_trans":
        if "orderer" not in models:
            raise click.ClickException("strategy 'vq_trans' needs --ckpt with an orderer checkpoint")
        model, codebook = models["orderer"]
        return order_vq_trans(
            model, codebook, ex.text_id, pool, text_table, frame_table,
            allow_eos=models.get("allow_eos", False),
        )
    raise click.ClickException(f"unknown strategy {strategy!r}")


def _load_models_for(strategy: str, ckpt: str | None, rerank_ckpt: str | None = None) -> dict:
    models: dict = {}
    if strategy == "vq_trans":
        if not ckpt:
            raise click.ClickException("strategy 'vq_trans' needs --ckpt")
        model, codebook, _ = load_orderer(ckpt)
        models["orderer"] = (model, codebook)
    elif strategy == "rerank":
        path = rerank_ckpt or ckpt
        if not path:
            raise click.ClickException("strategy 'rerank' needs --rerank-ckpt (or --ckpt)")
        model, _ = load_rerank(path)
        models["rerank"] = model
    return models


def _write_predictions(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _write_reports(out: Path, reports: list[EvalReport]) -> list[Path]:
    report_json = out / "report.json"
    report_txt = out / "report.txt"
    payload = [rep.to_obj() for rep in reports]
    report_json.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    report_txt.write_text(render_report_text(reports), encoding="utf-8")
    return [report_json, report_txt]


@click.group()
def main() -> None:
    """Storyboard ordering experiments: data, training, evaluation."""


# ----------------------------------------------------------------- synth


@main.command()
@click.option("--out", required=True, help="Output data directory.")
@click.option("--config", "config_path", default=None, help="Config file.")
@click.option("--seed", type=int, default=None, help="Override run seed.")
@click.option("--n-train", type=int, default=None)
@click.option("--n-val", type=int, default=None)
@click.option("--n-test", type=int, default=None)
@click.option("--dim", "data_dim", type=int, default=None, help="Embedding dimension.")
@click.option("--noise", type=float, default=None)
@click.option("--token-noise-frac", type=float, default=None,
              help="Per-token noise as a multiple of frame noise.")
@click.option("--anchor-palette", type=int, default=None,
              help="Number of shared anchor directions; 0 = continuous.")
@_guard
def synth(out, config_path, seed, n_train, n_val, n_test, data_dim, noise,
          token_noise_frac, anchor_palette):
    """Generate a planted-order synthetic corpus and split it by movie."""
    cfg = _resolve(
        config_path, seed=seed, n_train=n_train, n_val=n_val, n_test=n_test,
        data_dim=data_dim, noise=noise, token_noise_frac=token_noise_frac,
        anchor_palette=anchor_palette,
    )
    out_dir = _outdir(out)
    total = cfg.n_train + cfg.n_val + cfg.n_test
    synth_cfg = SynthConfig(
        n_examples=total, dim=cfg.data_dim, seed=cfg.seed, noise=cfg.noise,
        token_noise_frac=cfg.token_noise_frac, movie_group=cfg.movie_group,
        anchor_palette=cfg.anchor_palette,
    )
    examples, text_table, frame_table = generate_synthetic(synth_cfg)
    split = split_dataset(examples, (cfg.n_train, cfg.n_val, cfg.n_test), cfg.seed)

    artifacts = []
    for name, part in (("train", split.train), ("val", split.val), ("test", split.test)):
        path = out_dir / f"{name}.jsonl"
        save_dataset(part, path)
        artifacts.append(path)
    save_embeddings(text_table, out_dir / "text.tvse")
    save_embeddings(frame_table, out_dir / "frames.tvse")
    artifacts += [out_dir / "text.tvse", out_dir / "frames.tvse"]
    write_manifest(out_dir, "synth", cfg, artifacts)
    click.echo(
        f"wrote {len(split.train)}/{len(split.val)}/{len(split.test)} "
        f"train/val/test examples to {out_dir}"
    )


# ----------------------------------------------------------------- train


@main.command()
@click.option("--data", "data_dir", required=True, help="Data directory from synth.")
@click.option("--out", required=True, help="Run directory for checkpoints.")
@click.option("--model", "which", type=click.Choice(["vq-trans", "rerank", "retrieval-head"]),
              default="vq-trans", show_default=True)
@click.option("--config", "config_path", default=None, help="Config file.")
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lambda-vq", "lambda_vq", type=float, default=None)
@click.option("--variant", type=click.Choice(["vanilla", "multi_stage", "soft", "hierarchical"]),
              default=None)
@click.option("--codebook-size", type=int, default=None)
@click.option("--code-dim", type=int, default=None)
@click.option("--model-dim", type=int, default=None)
@click.option("--depth", type=int, default=None)
@click.option("--no-vq", "no_vq", is_flag=True, default=False,
              help="Train the continuous ablation without a codebook.")
@click.option("--conditioning-mode", type=click.Choice(["prefix", "cross_attention"]), default=None)
@_guard
def train(data_dir, out, which, config_path, seed, epochs, lr, batch_size, lambda_vq,
          variant, codebook_size, code_dim, model_dim, depth, no_vq, conditioning_mode):
    """Fit a model on the train split and write a checkpoint + curves."""
    cfg = _resolve(
        config_path, seed=seed, epochs=epochs, lr=lr, batch_size=batch_size,
        lambda_vq=lambda_vq, variant=variant, codebook_size=codebook_size,
        code_dim=code_dim, model_dim=model_dim, depth=depth,
        conditioning_mode=conditioning_mode,
        use_vq=False if no_vq else None,
    )
    out_dir = _outdir(out)
    splits, text_table, frame_table = _load_corpus(data_dir)
    train_examples = _pick_split(splits, "train")
    tc = _train_config(cfg)

    if which == "vq-trans":
        model_cfg = ModelConfig(
            input_dim=text_table.dim, code_dim=cfg.code_dim, model_dim=cfg.model_dim,
            depth=cfg.depth, heads=cfg.heads, mlp_ratio=cfg.mlp_ratio,
            conditioning_mode=cfg.conditioning_mode, use_vq=cfg.use_vq,
        )
        model = OrdererModel.init(model_cfg, seed=cfg.seed)
        codebook = _build_codebook(cfg) if cfg.use_vq else None
        result = train_orderer(model, codebook, train_examples, text_table, frame_table, tc)
        ckpt_path = out_dir / "orderer.tvsc"
        save_orderer(ckpt_path, model, codebook)
    elif which == "rerank":
        rr_cfg = RerankConfig(
            input_dim=text_table.dim, model_dim=cfg.model_dim, depth=cfg.rerank_depth,
            heads=cfg.heads, mlp_ratio=cfg.mlp_ratio,
        )
        model = RerankModel.init(rr_cfg, seed=cfg.seed)
        result = train_rerank(model, train_examples, text_table, frame_table, tc)
        ckpt_path = out_dir / "rerank.tvsc"
        save_rerank(ckpt_path, model)
    else:
        head, result = train_retrieval_head(
            train_examples, text_table, frame_table, cfg.code_dim, tc
        )
        ckpt_path = out_dir / "head.tvsc"
        save_head(ckpt_path, head)

    curves_path = out_dir / "curves.json"
    curves_path.write_text(
        json.dumps(
            {
                "loss": result.loss_curve,
                "trans": result.trans_curve,
                "vq": result.vq_curve,
                "steps": result.steps,
                "used_fraction": result.used_fraction,
                "perplexity": result.perplexity,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    write_manifest(out_dir, f"train:{which}", cfg, [ckpt_path, curves_path],
                   inputs={"data": str(Path(data_dir))})
    final = result.loss_curve[-1] if result.loss_curve else float("nan")
    click.echo(f"trained {which} for {result.steps} steps, final loss {final:.4f} -> {ckpt_path}")


# ----------------------------------------------------------------- order


@main.command()
@click.option("--data", "data_dir", required=True)
@click.option("--out", required=True)
@click.option("--strategy", type=click.Choice(STRATEGIES), default="vq_trans", show_default=True)
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--ckpt", default=None, help="Checkpoint for vq_trans / rerank.")
@click.option("--config", "config_path", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--beam-width", type=int, default=None, help="Beam width for contextual.")
@click.option("--seg-limit", type=int, default=None, help="Segmentation budget for dynamic.")
@click.option("--allow-eos", is_flag=True, default=False,
              help="Let the decoder stop early on its stop symbol.")
@_guard
def order(data_dir, out, strategy, split_name, ckpt, config_path, seed,
          beam_width, seg_limit, allow_eos):
    """Order each example's own frames; write predictions.jsonl."""
    cfg = _resolve(config_path, seed=seed, strategy=strategy,
                   beam_width=beam_width, seg_limit=seg_limit)
    out_dir = _outdir(out)
    splits, text_table, frame_table = _load_corpus(data_dir)
    examples = _pick_split(splits, split_name)
    embedder = TableSegmentEmbedder(text_table)
    models = _load_models_for(strategy, ckpt)
    models["allow_eos"] = allow_eos

    rows = []
    for ex in examples:
        pool = sorted(ex.frame_ids)
        result = _order_one(strategy, ex, pool, text_table, frame_table, embedder, models, cfg)
        rows.append(
            {
                "example_id": ex.example_id,
                "ordered_ids": list(result.ordered_ids),
                "stopped_by_eos": result.stopped_by_eos,
            }
        )
    pred_path = out_dir / "predictions.jsonl"
    _write_predictions(pred_path, rows)
    write_manifest(out_dir, "order", cfg, [pred_path],
                   inputs={"data": str(Path(data_dir)), "ckpt": ckpt or "", "split": split_name})
    click.echo(f"ordered {len(rows)} examples with {strategy} -> {pred_path}")


# --------------------------------------------------------- retrieve-order


@main.command("retrieve-order")
@click.option("--data", "data_dir", required=True)
@click.option("--out", required=True)
@click.option("--strategy", type=click.Choice(STRATEGIES), default="vq_trans", show_default=True)
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--ckpt", default=None, help="Checkpoint for vq_trans / rerank.")
@click.option("--head", "head_path", default=None, help="Trained retrieval head checkpoint.")
@click.option("--k", type=int, default=20, show_default=True, help="Frames retrieved per example.")
@click.option("--config", "config_path", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pool-size", type=int, default=None)
@click.option("--beam-width", type=int, default=None, help="Beam width for contextual.")
@click.option("--seg-limit", type=int, default=None, help="Segmentation budget for dynamic.")
@_guard
def retrieve_order(data_dir, out, strategy, split_name, ckpt, head_path, k,
                   config_path, seed, pool_size, beam_width, seg_limit):
    """Retrieve top-k frames from a distractor pool, then order them."""
    cfg = _resolve(config_path, seed=seed, strategy=strategy, pool_size=pool_size,
                   beam_width=beam_width, seg_limit=seg_limit)
    out_dir = _outdir(out)
    splits, text_table, frame_table = _load_corpus(data_dir)
    examples = _pick_split(splits, split_name)
    embedder = TableSegmentEmbedder(text_table)
    models = _load_models_for(strategy, ckpt)
    head = load_head(head_path)[0] if head_path else None
    corpus_ids = frame_table.ids()

    rows = []
    for i, ex in enumerate(examples):
        pool = build_candidate_pool(ex, corpus_ids, cfg.pool_size, cfg.seed + i)
        ranking = retrieve_topk(ex.text_id, pool, text_table, frame_table, k, head=head)
        retrieved = list(ranking.ranked_ids)
        result = _order_one(strategy, ex, retrieved, text_table, frame_table, embedder, models, cfg)
        rows.append(
            {
                "example_id": ex.example_id,
                "ordered_ids": list(result.ordered_ids),
                "stopped_by_eos": result.stopped_by_eos,
            }
        )
    pred_path = out_dir / "predictions.jsonl"
    _write_predictions(pred_path, rows)
    write_manifest(
        out_dir, "retrieve-order", cfg, [pred_path],
        inputs={"data": str(Path(data_dir)), "ckpt": ckpt or "", "head": head_path or "",
                "split": split_name, "k": str(k)},
    )
    click.echo(f"retrieved+ordered {len(rows)} examples at k={k} -> {pred_path}")


# ------------------------------------------------------------------ eval


@main.command("eval")
@click.option("--data", "data_dir", required=True)
@click.option("--out", required=True)
@click.option("--protocol", type=click.Choice(["ordering", "retrieve-order", "retrieval"]),
              default="ordering", show_default=True)
@click.option("--strategy", "strategy_csv", default="vq_trans", show_default=True,
              help="Comma-separated strategies; 'all' = the five training-free baselines.")
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--ckpt", default=None, help="Orderer checkpoint for vq_trans.")
@click.option("--rerank-ckpt", "rerank_ckpt", default=None, help="Rerank checkpoint.")
@click.option("--head", "head_path", default=None, help="Trained retrieval head checkpoint.")
@click.option("--config", "config_path", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--pool-size", type=int, default=None)
@click.option("--beam-width", type=int, default=None, help="Beam width for contextual.")
@click.option("--seg-limit", type=int, default=None, help="Segmentation budget for dynamic.")
@_guard
def eval_cmd(data_dir, out, protocol, strategy_csv, split_name, ckpt, rerank_ckpt,
             head_path, config_path, seed, pool_size, beam_width, seg_limit):
    """Score a protocol on one split; write report.json / report.txt."""
    cfg = _resolve(config_path, seed=seed, pool_size=pool_size,
                   beam_width=beam_width, seg_limit=seg_limit)
    out_dir = _outdir(out)
    splits, text_table, frame_table = _load_corpus(data_dir)
    examples = _pick_split(splits, split_name)
    embedder = TableSegmentEmbedder(text_table)
    artifacts: list[Path] = []
    inputs = {"data": str(Path(data_dir)), "ckpt": ckpt or "", "head": head_path or "",
              "split": split_name}

    if protocol == "ordering":
        names = list(BASELINES) if strategy_csv == "all" else [
            s.strip() for s in strategy_csv.split(",") if s.strip()
        ]
        unknown = [s for s in names if s not in STRATEGIES]
        if unknown:
            raise click.ClickException(f"unknown strategies: {', '.join(unknown)}")
        reports = []
        for name in names:
            models = _load_models_for(name, ckpt, rerank_ckpt)
            models["allow_eos"] = False
            predictions = {}
            rows = []
            for ex in examples:
                pool = sorted(ex.frame_ids)
                result = _order_one(name, ex, pool, text_table, frame_table, embedder, models, cfg)
                predictions[ex.example_id] = list(result.ordered_ids)
                rows.append(
                    {
                        "example_id": ex.example_id,
                        "ordered_ids": list(result.ordered_ids),
                        "stopped_by_eos": result.stopped_by_eos,
                    }
                )
            reports.append(evaluate_ordering(predictions, examples, method=name))
            pred_path = out_dir / (
                "predictions.jsonl" if len(names) == 1 else f"predictions_{name}.jsonl"
            )
            _write_predictions(pred_path, rows)
            artifacts.append(pred_path)
    elif protocol == "retrieve-order":
        strategy = strategy_csv
        if strategy not in STRATEGIES:
            raise click.ClickException(f"unknown strategy {strategy!r}")
        models = _load_models_for(strategy, ckpt, rerank_ckpt)
        models["allow_eos"] = False
        head = load_head(head_path)[0] if head_path else None
        corpus_ids = frame_table.ids()
        reports = []
        for k in cfg.order_ks:
            predictions = {}
            rows = []
            for i, ex in enumerate(examples):
                pool = build_candidate_pool(ex, corpus_ids, cfg.pool_size, cfg.seed + i)
                ranking = retrieve_topk(ex.text_id, pool, text_table, frame_table, k, head=head)
                retrieved = list(ranking.ranked_ids)
                result = _order_one(
                    strategy, ex, retrieved, text_table, frame_table, embedder, models, cfg
                )
                predictions[ex.example_id] = list(result.ordered_ids)
                rows.append(
                    {
                        "example_id": ex.example_id,
                        "ordered_ids": list(result.ordered_ids),
                        "stopped_by_eos": result.stopped_by_eos,
                    }
                )
            reports.append(evaluate_retrieve_order(predictions, examples, k=k, method=strategy))
            pred_path = out_dir / f"predictions_k{k}.jsonl"
            _write_predictions(pred_path, rows)
            artifacts.append(pred_path)
    else:
        head = load_head(head_path)[0] if head_path else None
        corpus_ids = frame_table.ids()
        kmax = max(cfg.recall_ks)
        variants: list[tuple[str, RetrievalHead | None]] = [("zero_shot", None)]
        if head is not None:
            variants.append(("trained", head))
        reports = []
        for method, use_head in variants:
            rankings = {}
            rows = []
            for i, ex in enumerate(examples):
                pool = build_candidate_pool(ex, corpus_ids, cfg.pool_size, cfg.seed + i)
                ranking = retrieve_topk(
                    ex.text_id, pool, text_table, frame_table, kmax, head=use_head
                )
                rankings[ex.example_id] = list(ranking.ranked_ids)
                rows.append({"example_id": ex.example_id, "ranked_ids": list(ranking.ranked_ids)})
            reports.append(evaluate_retrieval(rankings, examples, cfg.recall_ks, method=method))
            pred_path = out_dir / f"rankings_{method}.jsonl"
            _write_predictions(pred_path, rows)
            artifacts.append(pred_path)

    artifacts += _write_reports(out_dir, reports)
    write_manifest(out_dir, f"eval:{protocol}", cfg, artifacts, inputs=inputs)
    click.echo((out_dir / "report.txt").read_text(encoding="utf-8"), nl=False)


# ----------------------------------------------------------------- sweep


@main.command()
@click.option("--data", "data_dir", required=True)
@click.option("--out", required=True)
@click.option("--grid", type=click.Choice(sorted(SWEEP_GRIDS)), required=True)
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@click.option("--config", "config_path", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@_guard
def sweep(data_dir, out, grid, split_name, config_path, seed, epochs):
    """Train and score one model per grid row; write sweep.csv / sweep.json."""
    base_cfg = _resolve(config_path, seed=seed, epochs=epochs)
    out_dir = _outdir(out)
    splits, text_table, frame_table = _load_corpus(data_dir)
    train_examples = _pick_split(splits, "train")
    eval_examples = _pick_split(splits, split_name)
    embedder = TableSegmentEmbedder(text_table)

    rows = []
    for row_cfg in SWEEP_GRIDS[grid]:
        cfg = replace(base_cfg, **row_cfg)
        model_cfg = ModelConfig(
            input_dim=text_table.dim, code_dim=cfg.code_dim, model_dim=cfg.model_dim,
            depth=cfg.depth, heads=cfg.heads, mlp_ratio=cfg.mlp_ratio,
            conditioning_mode=cfg.conditioning_mode, use_vq=cfg.use_vq,
        )
        model = OrdererModel.init(model_cfg, seed=cfg.seed)
        codebook = _build_codebook(cfg) if cfg.use_vq else None
        train_orderer(model, codebook, train_examples, text_table, frame_table, _train_config(cfg))
        models = {"orderer": (model, codebook), "allow_eos": False}
        predictions = {}
        for ex in eval_examples:
            pool = sorted(ex.frame_ids)
            result = _order_one("vq_trans", ex, pool, text_table, frame_table, embedder, models, cfg)
            predictions[ex.example_id] = list(result.ordered_ids)
        report = evaluate_ordering(predictions, eval_examples, method="vq_trans")
        rows.append(
            {
                "grid": grid,
                "variant": cfg.variant,
                "code_dim": cfg.code_dim,
                "codebook_size": cfg.codebook_size,
                "lambda_vq": cfg.lambda_vq,
                "tau": report.metrics["tau"],
                "tau_3_5": report.buckets["3-5"]["mean"],
                "tau_6_11": report.buckets["6-11"]["mean"],
                "n_examples": report.n_examples,
            }
        )
        click.echo(
            f"[{grid}] variant={cfg.variant} dim={cfg.code_dim} size={cfg.codebook_size} "
            f"lambda={cfg.lambda_vq} tau={report.metrics['tau']:.3f}"
        )

    json_path = out_dir / "sweep.json"
    json_path.write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    write_manifest(out_dir, f"sweep:{grid}", base_cfg, [json_path, csv_path],
                   inputs={"data": str(Path(data_dir)), "split": split_name})
    click.echo(f"swept {len(rows)} rows -> {csv_path}")


# ----------------------------------------------------------------- stats


@main.command()
@click.option("--data", "data_dir", required=True)
@click.option("--out", required=True)
@click.option("--lexicon", "lexicon_path", default=None,
              help="word<TAB>rating file for concreteness scoring.")
@click.option("--top-k", type=int, default=20, show_default=True)
@click.option("--config", "config_path", default=None)
@_guard
def stats(data_dir, out, lexicon_path, top_k, config_path):
    """Corpus statistics over all splits' synopsis texts."""
    cfg = _resolve(config_path)
    out_dir = _outdir(out)
    splits, _, _ = _load_corpus(data_dir)
    examples = splits["train"] + splits["val"] + splits["test"]
    lexicon = load_concreteness_lexicon(lexicon_path) if lexicon_path else None
    result = corpus_stats(examples, top_k=top_k, lexicon=lexicon)
    stats_path = out_dir / "stats.json"
    stats_path.write_text(
        json.dumps(result.to_obj(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(
        out_dir, "stats", cfg, [stats_path],
        inputs={"data": str(Path(data_dir)), "lexicon": lexicon_path or "", "top_k": str(top_k)},
    )
    click.echo(f"stats over {result.n_examples} examples -> {stats_path}")


if __name__ == "__main__":
    main()
