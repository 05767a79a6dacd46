"""Skip-gram word embeddings with negative sampling, plus text-format I/O.

Embeddings are trained on training+validation text only and stay frozen in
all downstream models. Negative samples follow the usual count^0.75 unigram
distribution. Training is single threaded and fully deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .textproc import PAD_ID, UNK_ID, UnigramTable, build_unigram_table


@dataclass
class SkipGramConfig:
    window: int = 5
    dim: int = 100
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_lr: float = 1e-4
    min_count: int = 5
    seed: int = 0
    train_unk: bool = False

    def __post_init__(self) -> None:
        if self.window < 1:
            raise DataError("skip-gram window must be >= 1")
        if self.negatives < 1:
            raise DataError("skip-gram needs at least one negative sample")
        if self.dim <= 0:
            raise DataError("embedding dimension must be positive")


class EmbeddingTable:
    """Dense vectors per unigram id. The padding row is all-zero and frozen."""

    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if not np.all(np.isfinite(vectors)):
            raise DataError("embedding table contains non-finite values")
        vectors[PAD_ID] = 0.0
        self.vectors = vectors

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        return self.vectors[ids]


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-x))


def sgns_loss_and_grads(
    center: np.ndarray, context: np.ndarray, negatives: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Negative-sampling objective for one (center, context, negatives) triple.

    loss = -log s(u_c . v_w) - sum_k log s(-u_k . v_w)
    Returns (loss, d/d center, d/d context, d/d negatives).
    """
    pos_score = float(context @ center)
    neg_scores = negatives @ center
    loss = -np.log(sigmoid(pos_score)) - np.sum(np.log(sigmoid(-neg_scores)))

    g_pos = sigmoid(pos_score) - 1.0  # d loss / d pos_score
    g_neg = sigmoid(neg_scores)  # d loss / d neg_scores
    grad_center = g_pos * context + negatives.T @ g_neg
    grad_context = g_pos * center
    grad_negatives = np.outer(g_neg, center)
    return float(loss), grad_center, grad_context, grad_negatives


class _NegativeSampler:
    """Samples ids with probability proportional to count^0.75."""

    def __init__(self, ids: np.ndarray, counts: np.ndarray):
        weights = counts.astype(np.float64) ** 0.75
        self.ids = ids
        self.cdf = np.cumsum(weights / weights.sum())

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        return self.ids[np.searchsorted(self.cdf, u, side="right")]


def train_skipgram(
    docs: Iterable[Sequence[str]],
    config: SkipGramConfig,
    table: UnigramTable | None = None,
) -> EmbeddingTable:
    """Train input vectors by SGD over (center, context) pairs inside the window.

    The per-position context width is drawn uniformly from [1, window] as in
    the original formulation. All context pairs of one center position share
    one gradient step. With epochs=0 the randomly initialized table is
    returned unchanged.
    """
    docs = [list(d) for d in docs]
    if not docs or all(len(d) == 0 for d in docs):
        raise DataError("skip-gram training corpus is empty")
    if table is None:
        table = build_unigram_table(docs, min_count=config.min_count)

    n_ids = len(table)
    rng = np.random.default_rng(config.seed)
    vec_in = (rng.random((n_ids, config.dim)) - 0.5) / config.dim
    vec_out = np.zeros((n_ids, config.dim))
    vec_in[PAD_ID] = 0.0
    if not config.train_unk:
        vec_in[UNK_ID] = 0.0

    sequences = []
    for doc in docs:
        if config.train_unk:
            ids = [table.id_of(t) for t in doc]
        else:
            ids = [table.index[t] for t in doc if t in table.index]
        if len(ids) > 1:
            sequences.append(np.array(ids, dtype=np.int64))
    if not sequences:
        return EmbeddingTable(vec_in)

    counts = table.id_counts()
    trainable = np.nonzero(counts > 0)[0]
    if config.train_unk:
        trainable = np.union1d(trainable, [UNK_ID])
    if trainable.size < 2:
        return EmbeddingTable(vec_in)
    sampler = _NegativeSampler(trainable, counts[trainable] + (counts[trainable] == 0))

    total_positions = sum(len(s) for s in sequences) * max(config.epochs, 1)
    lr0 = config.learning_rate
    step = 0
    for _ in range(config.epochs):
        for seq in sequences:
            n = len(seq)
            widths = rng.integers(1, config.window + 1, size=n)
            for i in range(n):
                lr = max(config.min_lr, lr0 * (1.0 - step / total_positions))
                step += 1
                lo = max(0, i - int(widths[i]))
                hi = min(n, i + int(widths[i]) + 1)
                ctx = np.concatenate([seq[lo:i], seq[i + 1 : hi]])
                if ctx.size == 0:
                    continue
                w = seq[i]
                negs = sampler.draw(rng, config.negatives * ctx.size)
                v = vec_in[w]
                # batched over this center's contexts: one accumulated update
                pos_g = sigmoid(vec_out[ctx] @ v) - 1.0
                neg_g = sigmoid(vec_out[negs] @ v)
                grad_v = vec_out[ctx].T @ pos_g + vec_out[negs].T @ neg_g
                vec_out[ctx] += (-lr) * np.outer(pos_g, v)
                np.add.at(vec_out, negs, (-lr) * np.outer(neg_g, v))
                vec_in[w] -= lr * grad_v

    vec_in[PAD_ID] = 0.0
    return EmbeddingTable(vec_in)


@dataclass
class EmbeddingLoadReport:
    matched: int = 0
    unmatched_file_tokens: int = 0
    unmatched_table_tokens: int = 0
    skipped_lines: int = 0
    errors: list[str] = field(default_factory=list)


def save_embeddings(path: str, table: EmbeddingTable, unigrams: UnigramTable) -> None:
    """Write word2vec text format: a `count dim` header then one token per line.

    Floats are written with repr so a reload reproduces the table bit for bit.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(unigrams.tokens)} {table.dim}\n")
        for i, tok in enumerate(unigrams.tokens):
            row = table.vectors[i + 2]
            fh.write(tok + " " + " ".join(repr(x) for x in row) + "\n")


def load_embeddings(
    path: str,
    unigrams: UnigramTable,
    unk: str = "zero",
    seed: int = 0,
) -> tuple[EmbeddingTable, EmbeddingLoadReport]:
    """Load word2vec text vectors, matching rows to the unigram table by token.

    Unmatched unigrams get zero vectors (or small random ones with
    unk="random"); malformed lines are skipped and counted.
    """
    report = EmbeddingLoadReport()
    file_vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"bad embedding header in {path}")
        declared_dim = int(header[1])
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                report.skipped_lines += 1
                continue
            token, rest = parts[0], parts[1:]
            try:
                vec = np.array([float(x) for x in rest], dtype=np.float64)
            except ValueError:
                report.skipped_lines += 1
                continue
            if dim is None:
                dim = vec.size
                if dim != declared_dim:
                    raise DataError(
                        f"embedding dimension {dim} does not match header {declared_dim}"
                    )
            elif vec.size != dim:
                raise DataError(f"inconsistent embedding dimension at line {lineno}")
            file_vectors[token] = vec
    if dim is None:
        dim = declared_dim

    rng = np.random.default_rng(seed)
    vectors = np.zeros((len(unigrams), dim))
    for token, vec in file_vectors.items():
        idx = unigrams.index.get(token)
        if idx is None:
            report.unmatched_file_tokens += 1
            continue
        vectors[idx] = vec
        report.matched += 1
    for token in unigrams.tokens:
        if token not in file_vectors:
            report.unmatched_table_tokens += 1
            if unk == "random":
                vectors[unigrams.index[token]] = (rng.random(dim) - 0.5) / dim
    return EmbeddingTable(vectors), report
