"""Email content representations: tf-idf bag of n-grams, mean embedding, CNN.

All three produce an `EmailVector`. The tf-idf variant is sparse and stays
sparse through the linear and tree learners; the embedding variants are
dense. The CNN (per-width valid convolution, relu, max over time, concat)
carries its own exact backward pass so it can be trained end to end with
frozen word embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingTable
from .errors import DataError
from .textproc import PAD_ID, Vocabulary, ngrams


class EmailVector:
    """Either a sparse (indices, values) pair or a dense vector, plus a tag."""

    __slots__ = ("kind", "dim", "indices", "values", "dense")

    def __init__(self, kind, dim, indices=None, values=None, dense=None):
        self.kind = kind
        self.dim = dim
        self.indices = indices
        self.values = values
        self.dense = dense

    @classmethod
    def sparse(cls, kind: str, dim: int, indices: np.ndarray, values: np.ndarray):
        order = np.argsort(indices, kind="stable")
        return cls(
            kind,
            dim,
            indices=np.asarray(indices, dtype=np.int64)[order],
            values=np.asarray(values, dtype=np.float64)[order],
        )

    @classmethod
    def densevec(cls, kind: str, dense: np.ndarray):
        dense = np.asarray(dense, dtype=np.float64)
        return cls(kind, dense.shape[0], dense=dense)

    @classmethod
    def zeros_like(cls, other: "EmailVector") -> "EmailVector":
        if other.is_sparse:
            return cls.sparse(
                other.kind, other.dim, np.empty(0, np.int64), np.empty(0, np.float64)
            )
        return cls.densevec(other.kind, np.zeros(other.dim))

    @property
    def is_sparse(self) -> bool:
        return self.dense is None

    def to_dense(self) -> np.ndarray:
        if not self.is_sparse:
            return self.dense
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def norm(self) -> float:
        if self.is_sparse:
            return float(np.sqrt(np.sum(self.values**2)))
        return float(np.linalg.norm(self.dense))

    def dot(self, other: "EmailVector") -> float:
        if self.dim != other.dim:
            raise DataError(f"dimension mismatch in dot: {self.dim} vs {other.dim}")
        if self.is_sparse and other.is_sparse:
            _, ia, ib = np.intersect1d(
                self.indices, other.indices, assume_unique=True, return_indices=True
            )
            return float(self.values[ia] @ other.values[ib])
        if self.is_sparse:
            return float(self.values @ other.dense[self.indices])
        if other.is_sparse:
            return float(other.values @ self.dense[other.indices])
        return float(self.dense @ other.dense)


def weighted_sum(vectors: Sequence[EmailVector], weights: np.ndarray) -> EmailVector:
    """sum_t weights[t] * vectors[t]; empty input yields a zero-dim marker."""
    if len(vectors) == 0:
        raise DataError("weighted_sum of no vectors")
    if len(vectors) != len(weights):
        raise DataError("weights and vectors disagree in length")
    dim = vectors[0].dim
    kind = vectors[0].kind
    if any(v.dim != dim for v in vectors):
        raise DataError("dimension mismatch in weighted_sum")
    if all(v.is_sparse for v in vectors):
        idx = np.concatenate([v.indices for v in vectors])
        val = np.concatenate([w * v.values for v, w in zip(vectors, weights)])
        uniq, inverse = np.unique(idx, return_inverse=True)
        summed = np.bincount(inverse, weights=val, minlength=uniq.size)
        keep = summed != 0.0
        return EmailVector.sparse(kind, dim, uniq[keep], summed[keep])
    out = np.zeros(dim)
    for v, w in zip(vectors, weights):
        out += w * v.to_dense()
    return EmailVector.densevec(kind, out)


def tfidf_vector(tokens: Sequence[str], vocab: Vocabulary) -> EmailVector:
    """tf * idf over in-vocabulary n-grams, L2 normalized when nonzero."""
    counts: dict[int, int] = {}
    for term in ngrams(tokens, vocab.ngram_max):
        idx = vocab.index.get(term)
        if idx is not None:
            counts[idx] = counts.get(idx, 0) + 1
    if not counts:
        return EmailVector.sparse(
            "tfidf", len(vocab), np.empty(0, np.int64), np.empty(0, np.float64)
        )
    indices = np.fromiter(counts.keys(), dtype=np.int64, count=len(counts))
    tf = np.fromiter(counts.values(), dtype=np.float64, count=len(counts))
    values = tf * vocab.idf[indices]
    nrm = np.sqrt(np.sum(values**2))
    if nrm > 0:
        values = values / nrm
    return EmailVector.sparse("tfidf", len(vocab), indices, values)


def embed_mean(seq: np.ndarray, table: EmbeddingTable) -> EmailVector:
    """Mean of embedding rows over non-padding positions."""
    mask = seq != PAD_ID
    if not mask.any():
        return EmailVector.densevec("embed", np.zeros(table.dim))
    return EmailVector.densevec("embed", table.vectors[seq[mask]].mean(axis=0))


class CnnParams:
    """Per-width convolution filters shared across incoming and history emails.

    weights[k] has shape (width_k, embed_dim, n_filters_k); the output
    dimension is the total filter count across widths.
    """

    def __init__(
        self,
        widths: Sequence[int],
        n_filters: Sequence[int],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
    ):
        if len(widths) != len(n_filters) or len(widths) != len(weights):
            raise DataError("CNN width/filter/weight lists disagree")
        for w_arr in weights:
            if not np.all(np.isfinite(w_arr)):
                raise DataError("non-finite CNN weight")
        self.widths = tuple(int(w) for w in widths)
        self.n_filters = tuple(int(n) for n in n_filters)
        self.weights = weights
        self.biases = biases

    @property
    def dim(self) -> int:
        return sum(self.n_filters)

    @property
    def embed_dim(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def init(
        cls,
        embed_dim: int,
        widths: Sequence[int] = (1, 2, 3),
        n_filters: Sequence[int] = (256, 128, 64),
        rng: np.random.Generator | None = None,
    ) -> "CnnParams":
        rng = rng or np.random.default_rng(0)
        weights, biases = [], []
        for w, n in zip(widths, n_filters):
            scale = np.sqrt(2.0 / (w * embed_dim))
            weights.append(rng.normal(0.0, scale, size=(w, embed_dim, n)))
            biases.append(np.zeros(n))
        return cls(widths, n_filters, weights, biases)

    def param_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for k, w in enumerate(self.widths):
            out[f"cnn_w{w}_{k}"] = self.weights[k]
            out[f"cnn_b{w}_{k}"] = self.biases[k]
        return out


class CnnCache:
    """Forward activations needed for the exact backward pass."""

    __slots__ = ("embedded", "windows", "pre", "argmax", "batch")

    def __init__(self, embedded, windows, pre, argmax, batch):
        self.embedded = embedded
        self.windows = windows
        self.pre = pre
        self.argmax = argmax
        self.batch = batch


def _window_view(embedded: np.ndarray, width: int) -> np.ndarray:
    """(B, L, d) -> (B, L-width+1, width*d) sliding windows."""
    b, length, d = embedded.shape
    t = length - width + 1
    if width == 1:
        return embedded
    return np.concatenate([embedded[:, j : j + t, :] for j in range(width)], axis=2)


def cnn_forward(
    seqs: np.ndarray,
    table: EmbeddingTable,
    params: CnnParams,
    want_cache: bool = False,
) -> tuple[np.ndarray, CnnCache | None]:
    """Convolve, relu and max-pool a batch of (or a single) token sequence.

    Returns (B, dim) pooled features, plus the cache when requested.
    Max-pool ties resolve to the lowest time index (argmax convention), which
    the backward pass relies on.
    """
    single = seqs.ndim == 1
    if single:
        seqs = seqs[None, :]
    length = seqs.shape[1]
    if length < max(params.widths):
        raise DataError(f"sequence length {length} below max filter width")
    if table.dim != params.embed_dim:
        raise DataError("embedding table dimension does not match CNN filters")
    embedded = table.vectors[seqs]  # (B, L, d)
    pooled_parts = []
    windows_all, pre_all, argmax_all = [], [], []
    for k, width in enumerate(params.widths):
        win = _window_view(embedded, width)  # (B, T, w*d)
        wmat = params.weights[k].reshape(width * params.embed_dim, params.n_filters[k])
        pre = win @ wmat + params.biases[k]  # (B, T, n)
        act = np.maximum(pre, 0.0)
        arg = np.argmax(act, axis=1)  # (B, n) first maximizer wins
        pooled = np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0, :]
        pooled_parts.append(pooled)
        if want_cache:
            windows_all.append(win)
            pre_all.append(pre)
            argmax_all.append(arg)
    out = np.concatenate(pooled_parts, axis=1)
    cache = (
        CnnCache(embedded, windows_all, pre_all, argmax_all, seqs.shape[0])
        if want_cache
        else None
    )
    return (out[0] if single else out), cache


def cnn_backward(
    grad_out: np.ndarray, params: CnnParams, cache: CnnCache
) -> dict[str, np.ndarray]:
    """Exact gradients of the pooled output w.r.t. weights and biases.

    Embeddings are static, so no input gradient is produced. The subgradient
    at a pooling tie goes to the first maximizer only; relu contributes zero
    gradient at or below zero pre-activation.
    """
    if grad_out.ndim == 1:
        grad_out = grad_out[None, :]
    if grad_out.shape[0] != cache.batch:
        raise DataError("upstream gradient batch does not match cache")
    grads: dict[str, np.ndarray] = {}
    offset = 0
    for k, width in enumerate(params.widths):
        n = params.n_filters[k]
        g = grad_out[:, offset : offset + n]  # (B, n)
        offset += n
        arg = cache.argmax[k]  # (B, n)
        pre_at_max = np.take_along_axis(cache.pre[k], arg[:, None, :], axis=1)[:, 0, :]
        g_eff = g * (pre_at_max > 0.0)
        # windows at each filter's maximizing position: (B, n, w*d)
        win = cache.windows[k]
        gathered = np.take_along_axis(
            win, arg[:, :, None].astype(np.intp), axis=1
        ).transpose(0, 2, 1)  # (B, w*d, n) after transpose of (B, n, w*d)
        dw = np.einsum("bdn,bn->dn", gathered, g_eff)
        grads[f"cnn_w{width}_{k}"] = dw.reshape(params.weights[k].shape)
        grads[f"cnn_b{width}_{k}"] = g_eff.sum(axis=0)
    return grads
