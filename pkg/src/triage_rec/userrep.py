"""User representations from received-email history, plus similarity features.

History selection is strictly causal: only emails received before the query
time qualify, and an email counts as positive history only when its reply
also happened before the query time. Aggregation collapses the selected
history into one vector per class via uniform weights, learned global
weights, or attention conditioned on the incoming email.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Email, MailboxIndex
from .errors import DataError
from .represent import EmailVector, weighted_sum

MODES = ("received", "pos", "posneg")
ATTENTION_KINDS = ("uniform", "learned_global", "dot", "concat")


@dataclass(frozen=True)
class HistoryConfig:
    mode: str = "posneg"
    h: int = 10

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise DataError(f"unknown history mode {self.mode!r}")
        if self.h < 1:
            raise DataError("history length must be >= 1")


def history_indices(
    index: MailboxIndex, recipient_id: str, t: int, config: HistoryConfig
) -> list[np.ndarray]:
    """Positions (into the recipient timeline) of the selected history.

    Returns one array for received/pos, two (positive, negative) for posneg.
    Ordering is most recent first. Never includes an email with timestamp >= t.
    """
    timeline = index.timelines.get(recipient_id)
    if timeline is None:
        empty = np.empty(0, dtype=np.int64)
        return [empty, empty] if config.mode == "posneg" else [empty]
    n_prior = int(np.searchsorted(timeline.timestamps, t, side="left"))
    h = config.h
    if config.mode == "received":
        sel = np.arange(max(0, n_prior - h), n_prior, dtype=np.int64)[::-1]
        return [sel]
    replied_before = timeline.replied[:n_prior] & (timeline.reply_ts[:n_prior] < t)
    pos = np.nonzero(replied_before)[0][-h:][::-1]
    if config.mode == "pos":
        return [pos]
    neg = np.nonzero(~replied_before)[0][-h:][::-1]
    return [pos, neg]


def select_history(
    index: MailboxIndex, recipient_id: str, t: int, config: HistoryConfig
) -> list[list[Email]]:
    """Same as `history_indices` but materialized as Email lists."""
    timeline = index.timelines.get(recipient_id)
    out = []
    for sel in history_indices(index, recipient_id, t, config):
        out.append([timeline.emails[i] for i in sel] if timeline is not None else [])
    return out


@dataclass
class AttentionParams:
    """Aggregation weights; `kind` picks the scheme, the rest are its knobs."""

    kind: str = "uniform"
    gamma: float = 1.0
    global_logits: np.ndarray | None = None  # (h,) recency-rank indexed
    v: np.ndarray | None = None  # (a,)
    w: np.ndarray | None = None  # (a, 2*dim)

    def __post_init__(self) -> None:
        if self.kind not in ATTENTION_KINDS:
            raise DataError(f"unknown aggregation kind {self.kind!r}")
        if self.gamma < 0:
            raise DataError("attention temperature must be >= 0")

    @classmethod
    def init(
        cls,
        kind: str,
        dim: int,
        h: int,
        gamma: float = 1.0,
        hidden: int = 32,
        rng: np.random.Generator | None = None,
    ) -> "AttentionParams":
        rng = rng or np.random.default_rng(0)
        params = cls(kind=kind, gamma=gamma)
        if kind == "learned_global":
            params.global_logits = np.zeros(h)
        elif kind == "concat":
            scale = np.sqrt(2.0 / (2 * dim))
            params.w = rng.normal(0.0, scale, size=(hidden, 2 * dim))
            params.v = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden)
        return params

    def param_dict(self) -> dict[str, np.ndarray]:
        out = {}
        if self.kind == "learned_global" and self.global_logits is not None:
            out["attn_logits"] = self.global_logits
        if self.kind == "concat":
            out["attn_v"] = self.v
            out["attn_w"] = self.w
        return out


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - np.max(x)
    e = np.exp(z)
    return e / e.sum()


@dataclass
class AggregateCache:
    """Everything the attention backward pass needs."""

    weights: np.ndarray
    history: list  # dense history matrix rows or EmailVectors
    incoming: object
    scores: np.ndarray | None = None
    concat_pre: np.ndarray | None = None  # (m, a) pre-relu activations


def attention_weights(
    history: Sequence[EmailVector] | np.ndarray,
    incoming: EmailVector | np.ndarray,
    params: AttentionParams,
) -> tuple[np.ndarray, AggregateCache]:
    """Aggregation weights alpha over the m history vectors (sum to 1)."""
    m = len(history)
    if m == 0:
        raise DataError("attention over empty history")
    if params.kind == "uniform":
        w = np.full(m, 1.0 / m)
        return w, AggregateCache(w, list(history), incoming)
    if params.kind == "learned_global":
        if params.global_logits is None or m > params.global_logits.size:
            raise DataError("learned_global logits missing or shorter than history")
        w = softmax(params.global_logits[:m])
        return w, AggregateCache(w, list(history), incoming)

    def as_row(x):
        return x.to_dense() if isinstance(x, EmailVector) else np.asarray(x)

    if params.kind == "dot":
        if isinstance(incoming, EmailVector) and incoming.is_sparse:
            scores = np.array([incoming.dot(hv) for hv in history])
        else:
            hist_mat = np.stack([as_row(h) for h in history])
            scores = hist_mat @ as_row(incoming)
        w = softmax(params.gamma * scores)
        return w, AggregateCache(w, list(history), incoming, scores=scores)

    # concat: score_t = v . relu(W [incoming; history_t])
    if params.v is None or params.w is None:
        raise DataError("concat attention requires v and W")
    inc = as_row(incoming)
    hist_mat = np.stack([as_row(h) for h in history])
    stacked = np.concatenate([np.tile(inc, (m, 1)), hist_mat], axis=1)  # (m, 2d)
    pre = stacked @ params.w.T  # (m, a)
    scores = np.maximum(pre, 0.0) @ params.v
    w = softmax(params.gamma * scores)
    return w, AggregateCache(w, list(history), incoming, scores=scores, concat_pre=pre)


def aggregate(
    history: Sequence[EmailVector],
    incoming: EmailVector,
    params: AttentionParams,
) -> tuple[EmailVector, AggregateCache | None]:
    """G(u) = sum_t alpha_t F(e_t); empty history yields the zero vector."""
    if len(history) == 0:
        return EmailVector.zeros_like(incoming), None
    weights, cache = attention_weights(history, incoming, params)
    return weighted_sum(history, weights), cache


@dataclass
class AttentionGrads:
    d_history: np.ndarray  # (m, dim)
    d_incoming: np.ndarray  # (dim,)
    d_params: dict[str, np.ndarray] = field(default_factory=dict)


def aggregate_backward(
    grad_out: np.ndarray, params: AttentionParams, cache: AggregateCache
) -> AttentionGrads:
    """Backward of `aggregate` for dense history; exact chain rule.

    grad_out is dLoss/dG. Returns gradients w.r.t. each history vector, the
    incoming vector (zero except for attention kinds that look at it), and
    any trainable attention parameters.
    """
    hist_mat = np.stack(
        [h.to_dense() if isinstance(h, EmailVector) else np.asarray(h) for h in cache.history]
    )
    inc = (
        cache.incoming.to_dense()
        if isinstance(cache.incoming, EmailVector)
        else np.asarray(cache.incoming)
    )
    m, dim = hist_mat.shape
    alpha = cache.weights
    d_hist = alpha[:, None] * grad_out[None, :]
    d_inc = np.zeros(dim)
    d_params: dict[str, np.ndarray] = {}

    d_alpha = hist_mat @ grad_out  # (m,)
    if params.kind == "uniform":
        return AttentionGrads(d_hist, d_inc)
    # softmax backward: ds = J_softmax^T d_alpha, then scale by gamma for the
    # kinds whose logits are gamma * score
    ds = alpha * (d_alpha - float(alpha @ d_alpha))
    if params.kind == "learned_global":
        g = np.zeros_like(params.global_logits)
        g[:m] = ds
        d_params["attn_logits"] = g
        return AttentionGrads(d_hist, d_inc, d_params)

    ds = params.gamma * ds
    if params.kind == "dot":
        d_hist += ds[:, None] * inc[None, :]
        d_inc += hist_mat.T @ ds
        return AttentionGrads(d_hist, d_inc, d_params)

    # concat
    relu_mask = (cache.concat_pre > 0.0).astype(np.float64)
    d_pre = ds[:, None] * (params.v[None, :] * relu_mask)  # (m, a)
    stacked = np.concatenate([np.tile(inc, (m, 1)), hist_mat], axis=1)
    d_params["attn_v"] = (np.maximum(cache.concat_pre, 0.0) * ds[:, None]).sum(axis=0)
    d_params["attn_w"] = d_pre.T @ stacked
    d_stacked = d_pre @ params.w  # (m, 2d)
    d_inc += d_stacked[:, :dim].sum(axis=0)
    d_hist += d_stacked[:, dim:]
    return AttentionGrads(d_hist, d_inc, d_params)


@dataclass(frozen=True)
class SimilarityFeatures:
    """Inner products between the incoming email and the user vector(s)."""

    sim: float | None = None  # received / pos
    sim_pos: float | None = None
    sim_neg: float | None = None

    @property
    def contrast(self) -> float | None:
        if self.sim_pos is None or self.sim_neg is None:
            return None
        return self.sim_pos - self.sim_neg

    def as_array(self) -> np.ndarray:
        if self.sim is not None:
            return np.array([self.sim])
        return np.array([self.sim_pos, self.sim_neg, self.contrast])


@dataclass
class UserRepresentation:
    """Aggregated history vector(s): one for received/pos, a pair for posneg."""

    mode: str
    vectors: list[EmailVector]
    counts: list[int]

    @property
    def missing(self) -> list[bool]:
        return [c == 0 for c in self.counts]


def similarity(incoming: EmailVector, user: UserRepresentation) -> SimilarityFeatures:
    """Eq-style inner products; missing-history vectors contribute 0."""
    sims = [incoming.dot(v) for v in user.vectors]
    if user.mode == "posneg":
        return SimilarityFeatures(sim_pos=sims[0], sim_neg=sims[1])
    return SimilarityFeatures(sim=sims[0])


def build_user_representation(
    history_vectors: list[list[EmailVector]],
    incoming: EmailVector,
    mode: str,
    params: AttentionParams,
) -> tuple[UserRepresentation, list[AggregateCache | None]]:
    vectors, caches, counts = [], [], []
    for hv in history_vectors:
        agg, cache = aggregate(hv, incoming, params)
        vectors.append(agg)
        caches.append(cache)
        counts.append(len(hv))
    return UserRepresentation(mode, vectors, counts), caches
