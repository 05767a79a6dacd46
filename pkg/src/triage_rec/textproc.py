"""Email text cleaning, n-gram vocabulary construction and token sequences.

Two term tables live here. The n-gram `Vocabulary` (up to trigrams, document
frequencies, idf weights) backs the tf-idf representation. The word-level
`UnigramTable` (with reserved padding and unknown ids) backs embedding lookups
and fixed-length token sequences.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

QUOTE_MARKER = "original message"
# applied before the delimiter split, which would otherwise destroy the "@"
ADDRESS_RE = re.compile(r"[a-z0-9._%+-]+@[a-z0-9](?:[a-z0-9.-]*[a-z0-9])?")
SPLIT_RE = re.compile(r"[^a-z0-9]+")

PAD_ID = 0
UNK_ID = 1


@dataclass(frozen=True)
class CleanText:
    email_id: str
    tokens: tuple[str, ...]


def clean(
    subject: str,
    body: str,
    blocklist: frozenset[str] = frozenset(),
    include_subject: bool = True,
) -> list[str]:
    """Normalize an email into a token list.

    Truncates at the first quoted-reply marker, lowercases, strips
    email addresses, splits on non-alphanumerics, and drops blocklisted
    tokens and pure numbers.
    """
    text = f"{subject}\n{body}" if include_subject else body
    cut = text.lower().find(QUOTE_MARKER)
    if cut >= 0:
        text = text[:cut]
    text = text.lower()
    text = ADDRESS_RE.sub(" ", text)
    tokens = [t for t in SPLIT_RE.split(text) if t]
    return [t for t in tokens if not t.isdigit() and t not in blocklist]


def load_blocklist(path: str) -> frozenset[str]:
    """One token per line; blank lines and surrounding whitespace ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def ngrams(tokens: Sequence[str], n_max: int) -> list[str]:
    """All word n-grams for n = 1..n_max, space-joined."""
    out = list(tokens)
    for n in range(2, n_max + 1):
        out.extend(" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return out


class Vocabulary:
    """N-gram term table with document frequencies and smoothed idf weights."""

    def __init__(self, terms: list[str], df: np.ndarray, n_docs: int):
        self.terms = terms
        self.df = np.asarray(df, dtype=np.int64)
        self.n_docs = n_docs
        self.index = {t: i for i, t in enumerate(terms)}
        self.idf = np.log((1.0 + n_docs) / (1.0 + self.df)) + 1.0
        self.ngram_max = max((t.count(" ") + 1 for t in terms), default=1)

    def __len__(self) -> int:
        return len(self.terms)

    def to_json(self) -> str:
        payload = {
            "terms": [
                {"t": t, "df": int(d), "idf": float(w)}
                for t, d, w in zip(self.terms, self.df, self.idf)
            ],
            "n_docs": self.n_docs,
        }
        return json.dumps(payload, sort_keys=True)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        terms = [e["t"] for e in payload["terms"]]
        df = np.array([e["df"] for e in payload["terms"]], dtype=np.int64)
        return cls(terms, df, int(payload["n_docs"]))


def build_vocabulary(
    docs: Iterable[Sequence[str]],
    size: int = 10000,
    ngram_max: int = 3,
    stop_df_fraction: float = 0.95,
) -> Vocabulary:
    """Select the `size` most document-frequent n-grams from the given docs.

    Terms occurring in more than `stop_df_fraction` of the documents are
    treated as stop terms and removed before the frequency cut. Ties on
    document frequency break lexicographically. Callers must pass training
    and validation documents only.
    """
    df: dict[str, int] = {}
    n_docs = 0
    for tokens in docs:
        n_docs += 1
        for term in set(ngrams(tokens, ngram_max)):
            df[term] = df.get(term, 0) + 1
    if n_docs < 2:
        raise DataError(f"vocabulary needs at least 2 documents, got {n_docs}")

    threshold = stop_df_fraction * n_docs
    candidates = [(term, count) for term, count in df.items() if count <= threshold]
    candidates.sort(key=lambda tc: (-tc[1], tc[0]))
    selected = candidates[:size]
    terms = [t for t, _ in selected]
    counts = np.array([c for _, c in selected], dtype=np.int64)
    return Vocabulary(terms, counts, n_docs)


class UnigramTable:
    """Word-id table for embeddings; id 0 is padding, id 1 is the unknown token."""

    def __init__(self, tokens: list[str], counts: np.ndarray):
        self.tokens = tokens
        self.counts = np.asarray(counts, dtype=np.int64)
        self.index = {t: i + 2 for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        """Number of ids including the two reserved ones."""
        return len(self.tokens) + 2

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx - 2]

    def id_counts(self) -> np.ndarray:
        """Corpus counts aligned to ids (reserved ids have count 0)."""
        out = np.zeros(len(self), dtype=np.int64)
        out[2:] = self.counts
        return out

    def save(self, path: str) -> None:
        payload = {
            "tokens": [{"t": t, "count": int(c)} for t, c in zip(self.tokens, self.counts)]
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, sort_keys=True))

    @classmethod
    def load(cls, path: str) -> "UnigramTable":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        tokens = [e["t"] for e in payload["tokens"]]
        counts = np.array([e["count"] for e in payload["tokens"]], dtype=np.int64)
        return cls(tokens, counts)


def build_unigram_table(
    docs: Iterable[Sequence[str]],
    max_size: int | None = None,
    min_count: int = 1,
) -> UnigramTable:
    counts: dict[str, int] = {}
    for tokens in docs:
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
    items = [(t, c) for t, c in counts.items() if c >= min_count]
    items.sort(key=lambda tc: (-tc[1], tc[0]))
    if max_size is not None:
        items = items[:max_size]
    return UnigramTable([t for t, _ in items], np.array([c for _, c in items], dtype=np.int64))


def to_sequence(tokens: Sequence[str], table: UnigramTable, length: int) -> np.ndarray:
    """First `length` tokens as ids, unknown tokens mapped to UNK, zero padded."""
    seq = np.full(length, PAD_ID, dtype=np.int32)
    for i, tok in enumerate(tokens[:length]):
        seq[i] = table.id_of(tok)
    return seq
