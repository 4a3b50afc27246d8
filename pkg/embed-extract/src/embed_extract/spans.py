"""Token-index segment spans over synopsis texts.

A span (start, end) selects tokens[start:end] of the whitespace-split
text, end exclusive.  Segment embeddings are keyed
``<text_id>#s<start>:<end>`` so consumers can look them up without
re-deriving the split.
"""

from __future__ import annotations


def tokenize(text: str) -> list[str]:
    return text.split()


def span_id(text_id: str, start: int, end: int) -> str:
    return f"{text_id}#s{start}:{end}"


def span_text(text: str, start: int, end: int) -> str:
    """The raw text of a span; validates bounds against the token count."""
    tokens = tokenize(text)
    if start < 0 or end <= start or end > len(tokens):
        raise ValueError(
            f"invalid span ({start}, {end}) for a text of {len(tokens)} tokens"
        )
    return " ".join(tokens[start:end])


def even_spans(n_tokens: int, m: int) -> list[tuple[int, int]]:
    """Split n tokens into m contiguous spans of near-equal size.

    Lengths differ by at most one and earlier spans take the remainder,
    so 7 tokens into 3 spans gives lengths 3, 2, 2.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > n_tokens:
        raise ValueError(f"cannot split {n_tokens} tokens into {m} segments")
    base, rem = divmod(n_tokens, m)
    spans: list[tuple[int, int]] = []
    start = 0
    for t in range(m):
        size = base + (1 if t < rem else 0)
        spans.append((start, start + size))
        start += size
    return spans
