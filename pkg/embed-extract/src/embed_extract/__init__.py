"""Offline exporter producing binary embedding tables from texts and images."""

from embed_extract.encoders import (
    DIM,
    ClipEncoder,
    EncoderUnavailable,
    HashedEncoder,
    make_encoder,
)
from embed_extract.extract import ExtractManifest, extract
from embed_extract.spans import even_spans, span_id, span_text, tokenize
from embed_extract.tvse import ExportError, read_entries, read_header, write_table

__all__ = [
    "DIM",
    "ClipEncoder",
    "EncoderUnavailable",
    "ExportError",
    "ExtractManifest",
    "HashedEncoder",
    "even_spans",
    "extract",
    "make_encoder",
    "read_entries",
    "read_header",
    "span_id",
    "span_text",
    "tokenize",
    "write_table",
]
