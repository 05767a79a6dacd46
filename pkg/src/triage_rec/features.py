"""Classifier input assembly: email vector + user vector(s) + similarity + rate.

The concatenation order is fixed per layout: email block, one or two user
blocks, the similarity block (absent under ablation), the recipient reply
rate, then one missing-history flag per user block. tf-idf rows stay sparse
end to end; dense tails (similarity, rate, flags) are always stored
explicitly so the tree learner can distinguish stored zeros from implicit
sparse zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .corpus import Email, MailboxIndex
from .errors import DataError
from .represent import EmailVector
from .userrep import (
    AttentionParams,
    HistoryConfig,
    SimilarityFeatures,
    UserRepresentation,
    build_user_representation,
    history_indices,
)


@dataclass(frozen=True)
class FeatureLayout:
    content_dim: int
    mode: str  # received | pos | posneg
    similarity: bool

    @property
    def n_user_blocks(self) -> int:
        return 2 if self.mode == "posneg" else 1

    @property
    def n_sim(self) -> int:
        if not self.similarity:
            return 0
        return 3 if self.mode == "posneg" else 1

    @property
    def n_flags(self) -> int:
        return self.n_user_blocks

    @property
    def width(self) -> int:
        d = self.content_dim
        return d * (1 + self.n_user_blocks) + self.n_sim + 1 + self.n_flags

    @property
    def sim_offset(self) -> int:
        return self.content_dim * (1 + self.n_user_blocks)

    @property
    def rate_offset(self) -> int:
        return self.sim_offset + self.n_sim

    @property
    def flags_offset(self) -> int:
        return self.rate_offset + 1

    def describe(self) -> dict:
        return {
            "content_dim": self.content_dim,
            "mode": self.mode,
            "similarity": self.similarity,
            "width": self.width,
        }


class FeatureMatrix:
    """CSR-style sparse matrix with labels; values are float64."""

    def __init__(self, n_cols, indptr, indices, values, labels, layout=None):
        self.n_cols = int(n_cols)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int8)
        self.layout = layout

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def row_ids(self) -> np.ndarray:
        """Row id per stored entry, aligned with indices/values."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_nnz())

    def dot(self, w: np.ndarray) -> np.ndarray:
        """X @ w for a dense weight vector."""
        prod = self.values * w[self.indices]
        return np.bincount(self.row_ids(), weights=prod, minlength=self.n_rows)

    def t_dot(self, dz: np.ndarray) -> np.ndarray:
        """X^T @ dz for a dense per-row vector."""
        contrib = self.values * dz[self.row_ids()]
        return np.bincount(self.indices, weights=contrib, minlength=self.n_cols)

    def take_rows(self, rows: np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        counts = self.row_nnz()[rows]
        starts = self.indptr[rows]
        sel = _ragged_gather(starts, counts)
        indptr = np.zeros(rows.size + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return FeatureMatrix(
            self.n_cols, indptr, self.indices[sel], self.values[sel], self.labels[rows], self.layout
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self.row_ids(), self.indices] = self.values
        return out

    def column(self, j: int) -> np.ndarray:
        """Dense copy of one column (mainly for tests and histograms)."""
        out = np.zeros(self.n_rows)
        mask = self.indices == j
        out[self.row_ids()[mask]] = self.values[mask]
        return out


def _ragged_gather(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenate ranges [starts[i], starts[i]+counts[i]) without a Python loop."""
    keep = counts > 0
    starts = np.asarray(starts, dtype=np.int64)[keep]
    counts = np.asarray(counts, dtype=np.int64)[keep]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    out = np.ones(total, dtype=np.int64)
    out[0] = starts[0]
    ends = np.cumsum(counts)
    out[ends[:-1]] = starts[1:] - starts[:-1] - counts[:-1] + 1
    return np.cumsum(out)


def assemble(
    email_vec: EmailVector,
    user: UserRepresentation,
    sims: SimilarityFeatures | None,
    reply_rate: float,
    layout: FeatureLayout,
) -> tuple[np.ndarray, np.ndarray]:
    """One feature row as (indices, values) in the fixed layout order."""
    if email_vec.dim != layout.content_dim:
        raise DataError("email vector does not match layout width")
    if len(user.vectors) != layout.n_user_blocks:
        raise DataError(f"user representation does not match layout mode {layout.mode}")
    if layout.similarity != (sims is not None):
        raise DataError("similarity block presence disagrees with layout")
    idx_parts, val_parts = [], []

    def push(vec: EmailVector, offset: int) -> None:
        if vec.is_sparse:
            idx_parts.append(vec.indices + offset)
            val_parts.append(vec.values)
        else:
            # dense blocks are stored in full so zeros stay explicit
            idx_parts.append(np.arange(vec.dim, dtype=np.int64) + offset)
            val_parts.append(vec.dense)

    push(email_vec, 0)
    for b, vec in enumerate(user.vectors):
        push(vec, layout.content_dim * (1 + b))
    if sims is not None:
        sim_arr = sims.as_array()
        idx_parts.append(np.arange(sim_arr.size, dtype=np.int64) + layout.sim_offset)
        val_parts.append(sim_arr)
    idx_parts.append(np.array([layout.rate_offset], dtype=np.int64))
    val_parts.append(np.array([reply_rate]))
    flags = np.array([1.0 if m else 0.0 for m in user.missing])
    idx_parts.append(np.arange(flags.size, dtype=np.int64) + layout.flags_offset)
    val_parts.append(flags)
    return np.concatenate(idx_parts), np.concatenate(val_parts)


class ContentProvider:
    """Caches one EmailVector per email id (static representations)."""

    def __init__(self, dim: int, compute: Callable[[Email], EmailVector]):
        self.dim = dim
        self._compute = compute
        self._cache: dict[str, EmailVector] = {}

    def get(self, email: Email) -> EmailVector:
        vec = self._cache.get(email.email_id)
        if vec is None:
            vec = self._compute(email)
            self._cache[email.email_id] = vec
        return vec


@dataclass
class Dataset:
    """Assembled rows plus side arrays used by reports."""

    matrix: FeatureMatrix
    email_ids: list[str]
    sim_features: np.ndarray | None  # (n, n_sim) when similarity on, else None


def build_dataset(
    index: MailboxIndex,
    emails: Sequence[Email],
    provider: ContentProvider,
    history_cfg: HistoryConfig,
    attn: AttentionParams,
    use_similarity: bool,
    rates: dict[str, float],
    default_rate: float,
    audit=None,
) -> Dataset:
    """Assemble one feature row per prediction instance (static content path)."""
    layout = FeatureLayout(provider.dim, history_cfg.mode, use_similarity)
    idx_parts, val_parts, nnz, labels, email_ids = [], [], [], [], []
    sim_rows = [] if use_similarity else None
    for email in emails:
        fvec = provider.get(email)
        sels = history_indices(index, email.recipient_id, email.timestamp, history_cfg)
        timeline = index.timelines[email.recipient_id]
        if audit is not None:
            audit.record_history(email.timestamp, timeline.timestamps, sels)
        hist_vecs = [[provider.get(timeline.emails[i]) for i in sel] for sel in sels]
        user, _ = build_user_representation(hist_vecs, fvec, history_cfg.mode, attn)
        sims = similarity_or_none(fvec, user, use_similarity)
        rate = rates.get(email.recipient_id, default_rate)
        idx, vals = assemble(fvec, user, sims, rate, layout)
        idx_parts.append(idx)
        val_parts.append(vals)
        nnz.append(idx.size)
        labels.append(1 if email.replied else 0)
        email_ids.append(email.email_id)
        if sim_rows is not None:
            sim_rows.append(sims.as_array())
    indptr = np.zeros(len(emails) + 1, dtype=np.int64)
    np.cumsum(nnz, out=indptr[1:])
    matrix = FeatureMatrix(
        layout.width,
        indptr,
        np.concatenate(idx_parts) if idx_parts else np.empty(0, np.int64),
        np.concatenate(val_parts) if val_parts else np.empty(0, np.float64),
        np.array(labels, dtype=np.int8),
        layout,
    )
    sim_arr = np.stack(sim_rows) if sim_rows else None
    return Dataset(matrix, email_ids, sim_arr)


def similarity_or_none(fvec, user, use_similarity: bool):
    from .userrep import similarity

    return similarity(fvec, user) if use_similarity else None


@dataclass
class JointDataset:
    """Token-sequence view of a partition for end-to-end CNN training.

    All referenced emails (instances plus their histories) share one
    deduplicated sequence matrix; per-instance history is stored as row
    indices into it.
    """

    seqs: np.ndarray  # (n_emails, L) int32
    incoming_rows: np.ndarray  # (n,)
    hist_rows: list[list[np.ndarray]]  # per instance, one array per user block
    reply_rate: np.ndarray  # (n,)
    labels: np.ndarray  # (n,)
    mode: str
    email_ids: list[str]

    @property
    def n(self) -> int:
        return self.incoming_rows.size

    @property
    def n_blocks(self) -> int:
        return 2 if self.mode == "posneg" else 1


def build_joint_dataset(
    index: MailboxIndex,
    emails: Sequence[Email],
    seq_of: Callable[[Email], np.ndarray],
    history_cfg: HistoryConfig,
    rates: dict[str, float],
    default_rate: float,
    audit=None,
) -> JointDataset:
    rows: dict[str, int] = {}
    seq_list: list[np.ndarray] = []

    def row_of(email: Email) -> int:
        r = rows.get(email.email_id)
        if r is None:
            r = len(seq_list)
            rows[email.email_id] = r
            seq_list.append(seq_of(email))
        return r

    incoming, hist_rows, labels, rate_arr, email_ids = [], [], [], [], []
    for email in emails:
        incoming.append(row_of(email))
        sels = history_indices(index, email.recipient_id, email.timestamp, history_cfg)
        timeline = index.timelines[email.recipient_id]
        if audit is not None:
            audit.record_history(email.timestamp, timeline.timestamps, sels)
        hist_rows.append(
            [
                np.array([row_of(timeline.emails[i]) for i in sel], dtype=np.int64)
                for sel in sels
            ]
        )
        labels.append(1 if email.replied else 0)
        rate_arr.append(rates.get(email.recipient_id, default_rate))
        email_ids.append(email.email_id)
    return JointDataset(
        seqs=np.stack(seq_list).astype(np.int32),
        incoming_rows=np.array(incoming, dtype=np.int64),
        hist_rows=hist_rows,
        reply_rate=np.array(rate_arr),
        labels=np.array(labels, dtype=np.int8),
        mode=history_cfg.mode,
        email_ids=email_ids,
    )
