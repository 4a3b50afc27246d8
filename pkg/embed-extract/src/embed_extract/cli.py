"""Command-line entry point for the offline embedding exporter."""

from __future__ import annotations

import json
from pathlib import Path

import click

from embed_extract.encoders import EncoderUnavailable, make_encoder
from embed_extract.extract import extract
from embed_extract.spans import even_spans, tokenize
from embed_extract.tvse import ExportError


def _load_jsonl(path: Path) -> list[tuple[int, dict | None, str]]:
    """Rows as (line_number, parsed_or_None, raw_line)."""
    rows = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append((i, json.loads(line), line))
        except json.JSONDecodeError:
            rows.append((i, None, line))
    return rows


@click.command()
@click.option("--texts", "texts_path", default=None, help="JSONL of {id, text} rows.")
@click.option("--images", "images_dir", default=None, help="Directory of keyframe image files.")
@click.option("--segments", "segments_path", default=None,
              help="JSONL of {text_id, start, end} token spans or {text_id, m} even splits.")
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option("--encoder", "encoder_name", default="hashed", show_default=True,
              type=click.Choice(["hashed", "clip"]))
def main(texts_path, images_dir, segments_path, out_dir, encoder_name):
    """Encode texts, segment spans and images into embedding-table files.

    Writes text.tvse / frames.tvse plus manifest.json under --out.  Items
    that cannot be read or encoded are listed under "errors" in the
    manifest and make the exit status nonzero; everything else is still
    written.
    """
    if segments_path is not None and texts_path is None:
        raise click.UsageError("--segments requires --texts")
    if texts_path is None and images_dir is None:
        raise click.UsageError("nothing to do: pass --texts and/or --images")

    try:
        encoder = make_encoder(encoder_name)
    except (EncoderUnavailable, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc

    pre_errors: list[dict] = []
    texts: list[tuple[str, str]] = []
    text_bodies: dict[str, str] = {}
    if texts_path is not None:
        path = Path(texts_path)
        if not path.is_file():
            raise click.ClickException(f"texts file not found: {path}")
        for lineno, row, _raw in _load_jsonl(path):
            source = f"{path.name}:{lineno}"
            if row is None or not isinstance(row, dict):
                pre_errors.append({"source": source, "error": "not a JSON object"})
                continue
            if "id" not in row or "text" not in row:
                pre_errors.append({"source": source, "error": "row needs 'id' and 'text'"})
                continue
            texts.append((row["id"], row["text"]))
            if isinstance(row["id"], str) and isinstance(row["text"], str):
                text_bodies[row["id"]] = row["text"]

    segments: list[tuple[str, int, int]] = []
    if segments_path is not None:
        path = Path(segments_path)
        if not path.is_file():
            raise click.ClickException(f"segments file not found: {path}")
        for lineno, row, _raw in _load_jsonl(path):
            source = f"{path.name}:{lineno}"
            if row is None or not isinstance(row, dict):
                pre_errors.append({"source": source, "error": "not a JSON object"})
                continue
            if "text_id" not in row:
                pre_errors.append({"source": source, "error": "row needs 'text_id'"})
                continue
            tid = row["text_id"]
            if "m" in row:
                body = text_bodies.get(tid)
                if body is None:
                    pre_errors.append({"source": source, "error": f"unknown text id {tid!r}"})
                    continue
                try:
                    for start, end in even_spans(len(tokenize(body)), int(row["m"])):
                        segments.append((tid, start, end))
                except (ValueError, TypeError) as exc:
                    pre_errors.append({"source": source, "error": str(exc)})
            elif "start" in row and "end" in row:
                segments.append((tid, row["start"], row["end"]))
            else:
                pre_errors.append(
                    {"source": source, "error": "row needs 'start'/'end' or 'm'"}
                )

    images: list[Path] = []
    if images_dir is not None:
        root = Path(images_dir)
        if not root.is_dir():
            raise click.ClickException(f"images directory not found: {root}")
        images = sorted(p for p in root.iterdir() if not p.is_dir())

    try:
        manifest = extract(
            texts=texts, images=images, segments=segments, out_dir=out_dir, encoder=encoder
        )
    except (ExportError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc

    obj = manifest.to_obj()
    obj["errors"] = pre_errors + obj["errors"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    n_ok = len(obj["inputs"])
    n_err = len(obj["errors"])
    for err in obj["errors"]:
        click.echo(f"error: {err['source']}: {err['error']}", err=True)
    click.echo(f"encoded {n_ok} items, {n_err} errors -> {out}")
    if n_err:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
