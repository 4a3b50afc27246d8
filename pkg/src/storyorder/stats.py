"""Corpus statistics and the concreteness lexicon join."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from storyorder.data import DataFormatError, StoryboardExample

_WORD_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class CorpusStats:
    n_examples: int
    n_movies: int
    length_hist: dict[int, int]
    mean_frames: float
    word_total: int
    word_unique: int
    mean_words: float
    top_ngrams: dict[int, list[tuple[str, int]]]
    concreteness_mean: float | None = None
    concreteness_coverage: float | None = None

    def to_obj(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "n_movies": self.n_movies,
            "length_hist": {str(k): v for k, v in sorted(self.length_hist.items())},
            "mean_frames": self.mean_frames,
            "word_total": self.word_total,
            "word_unique": self.word_unique,
            "mean_words": self.mean_words,
            "top_ngrams": {
                str(n): [[g, c] for g, c in grams] for n, grams in sorted(self.top_ngrams.items())
            },
            "concreteness_mean": self.concreteness_mean,
            "concreteness_coverage": self.concreteness_coverage,
        }


def load_concreteness_lexicon(path: str | Path) -> dict[str, float]:
    """Read a word<TAB>rating file into a dict."""
    path = Path(path)
    lexicon: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path.name}:{lineno}: expected 'word<TAB>rating'")
            word, rating = parts
            try:
                lexicon[word.strip().lower()] = float(rating)
            except ValueError:
                raise DataFormatError(
                    f"{path.name}:{lineno}: rating is not a number: {rating!r}"
                ) from None
    return lexicon


def corpus_stats(
    examples: Sequence[StoryboardExample],
    top_k: int = 20,
    lexicon: dict[str, float] | None = None,
) -> CorpusStats:
    """Aggregate counts, n-gram frequencies and optional concreteness.

    N-grams are counted for n in 1..3 over lowercased word tokens; ties in
    the top lists break toward the lexicographically smaller n-gram.
    Concreteness is the mean lexicon rating over covered tokens, absent
    when no lexicon is given or nothing is covered.
    """
    length_hist: dict[int, int] = {}
    movies: set[str] = set()
    word_total = 0
    vocab: set[str] = set()
    ngram_counts: dict[int, dict[str, int]] = {1: {}, 2: {}, 3: {}}
    conc_sum = 0.0
    conc_hits = 0

    for ex in examples:
        movies.add(ex.movie_id)
        m = len(ex.frame_ids)
        length_hist[m] = length_hist.get(m, 0) + 1
        words = tokenize(ex.synopsis_text)
        word_total += len(words)
        vocab.update(words)
        for n in (1, 2, 3):
            counts = ngram_counts[n]
            for j in range(len(words) - n + 1):
                gram = " ".join(words[j : j + n])
                counts[gram] = counts.get(gram, 0) + 1
        if lexicon is not None:
            for w in words:
                if w in lexicon:
                    conc_sum += lexicon[w]
                    conc_hits += 1

    n_examples = len(examples)
    top_ngrams = {
        n: sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
        for n, counts in ngram_counts.items()
    }
    conc_mean = None
    conc_cov = None
    if lexicon is not None and word_total > 0:
        conc_cov = conc_hits / word_total
        if conc_hits > 0:
            conc_mean = conc_sum / conc_hits
    return CorpusStats(
        n_examples=n_examples,
        n_movies=len(movies),
        length_hist=length_hist,
        mean_frames=(sum(k * v for k, v in length_hist.items()) / n_examples) if n_examples else 0.0,
        word_total=word_total,
        word_unique=len(vocab),
        mean_words=(word_total / n_examples) if n_examples else 0.0,
        top_ngrams=top_ngrams,
        concreteness_mean=conc_mean,
        concreteness_coverage=conc_cov,
    )
