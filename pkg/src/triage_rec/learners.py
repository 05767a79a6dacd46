"""Classifiers over assembled features: logistic regression, MLP, and the
end-to-end path that backpropagates through the MLP, similarity features,
attention aggregation and the CNN (embeddings stay frozen).

All gradient-trained models minimize the class-weighted log-loss with Adam
and early-stop on validation AUROC. The boosted-tree learner lives in
`gbdt.py`.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, TrainingError
from .evaluation import auroc
from .features import FeatureLayout, FeatureMatrix, JointDataset
from .represent import CnnParams, cnn_backward, cnn_forward
from .userrep import AttentionParams, aggregate_backward, attention_weights

PROB_EPS = 1e-12


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_logloss(
    p: np.ndarray, y: np.ndarray, pw: float
) -> tuple[float, np.ndarray]:
    """Mean weighted log-loss and its gradient w.r.t. the logits.

    Per example: -(pw * y * ln p + (1 - y) * ln(1 - p)); probabilities are
    clamped away from {0, 1}. The returned gradient is already divided by the
    batch size so it matches the mean loss.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=np.float64)
    losses = -(pw * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    dz = (pw * y * (p - 1.0) + (1.0 - y) * p) / p.size
    return float(losses.mean()), dz


def resolve_positive_weight(pw, labels: np.ndarray) -> float:
    """'balanced' resolves to N_neg / N_pos on the given labels."""
    if isinstance(pw, str):
        if pw != "balanced":
            raise DataError(f"unknown positive weight {pw!r}")
        n_pos = int(np.sum(labels == 1))
        n_neg = int(np.sum(labels == 0))
        if n_pos == 0 or n_neg == 0:
            raise TrainingError("cannot balance single-class training data")
        return n_neg / n_pos
    return float(pw)


class Adam:
    """Plain Adam over a dict of named parameter arrays, updated in place."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for key, g in grads.items():
            if key not in self.params:
                continue
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[key] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _check_two_classes(labels: np.ndarray) -> None:
    if np.all(labels == labels.flat[0]):
        raise TrainingError("training data contains a single class")


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_val_auroc: float = float("nan")
    best_epoch: int = -1


class _EarlyStopper:
    """Keeps the best validation score and signals after `patience` stale evals."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = -1
        self.stale = 0

    def update(self, score: float, epoch: int) -> bool:
        """Returns True when this is a new best."""
        if score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


# ---------------------------------------------------------------------------
# Logistic regression (sparse-aware)
# ---------------------------------------------------------------------------


@dataclass
class LrModel:
    weights: np.ndarray
    bias: float
    inverse_reg: float
    positive_weight: float
    layout: dict | None = None

    def decision(self, fm: FeatureMatrix) -> np.ndarray:
        return fm.dot(self.weights) + self.bias

    def predict_proba(self, fm: FeatureMatrix) -> np.ndarray:
        return sigmoid(self.decision(fm))

    def to_payload(self) -> dict:
        return {
            "kind": "lr",
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "inverse_reg": self.inverse_reg,
            "positive_weight": self.positive_weight,
            "layout": self.layout,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "LrModel":
        return cls(
            weights=np.array(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            inverse_reg=float(payload["inverse_reg"]),
            positive_weight=float(payload["positive_weight"]),
            layout=payload.get("layout"),
        )


@dataclass
class GradientTrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 40
    patience: int = 5
    seed: int = 0


def train_lr(
    train_fm: FeatureMatrix,
    val_fm: FeatureMatrix | None,
    inverse_reg: float = 1.0,
    positive_weight: float | str = 1.0,
    config: GradientTrainConfig | None = None,
) -> tuple[LrModel, TrainLog]:
    """Adam on weighted log-loss with an L2 penalty of ||w||^2 / (2C)."""
    config = config or GradientTrainConfig()
    _check_two_classes(train_fm.labels)
    pw = resolve_positive_weight(positive_weight, train_fm.labels)
    rng = np.random.default_rng(config.seed)
    n, d = train_fm.n_rows, train_fm.n_cols
    params = {"w": np.zeros(d), "b": np.zeros(1)}
    opt = Adam(params, lr=config.learning_rate)
    stopper = _EarlyStopper(config.patience)
    log = TrainLog()
    best = (params["w"].copy(), float(params["b"][0]))
    y = train_fm.labels.astype(np.float64)

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            rows = order[lo : lo + config.batch_size]
            xb = train_fm.take_rows(rows)
            z = xb.dot(params["w"]) + params["b"][0]
            loss, dz = weighted_logloss(sigmoid(z), y[rows], pw)
            if not np.isfinite(loss):
                raise TrainingError("logistic regression diverged (non-finite loss)")
            gw = xb.t_dot(dz) + params["w"] / inverse_reg
            opt.step({"w": gw, "b": np.array([dz.sum()])})
            epoch_loss += loss
            n_batches += 1
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
        if val_fm is not None:
            val_p = sigmoid(val_fm.dot(params["w"]) + params["b"][0])
            score = auroc(val_p, val_fm.labels)
            entry["val_auroc"] = score
            if stopper.update(score, epoch):
                best = (params["w"].copy(), float(params["b"][0]))
            log.epochs.append(entry)
            if stopper.should_stop:
                break
        else:
            best = (params["w"].copy(), float(params["b"][0]))
            log.epochs.append(entry)

    log.best_val_auroc = stopper.best if val_fm is not None else float("nan")
    log.best_epoch = stopper.best_epoch
    model = LrModel(best[0], best[1], inverse_reg, pw,
                    train_fm.layout.describe() if train_fm.layout else None)
    return model, log


# ---------------------------------------------------------------------------
# MLP on precomputed features
# ---------------------------------------------------------------------------


@dataclass
class MlpConfig:
    hidden: int = 128
    batch_size: int = 128
    learning_rate: float = 0.0005
    dropout_keep: float = 0.5  # keep probability; 1.0 disables dropout
    positive_weight: float | str = 10.0
    epochs: int = 30
    patience: int = 5
    seed: int = 0


@dataclass
class MlpModel:
    w1: np.ndarray  # (hidden, dim)
    b1: np.ndarray
    w2: np.ndarray  # (hidden,)
    b2: float
    dropout_keep: float
    positive_weight: float
    layout: dict | None = None

    def decision(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1.T + self.b1, 0.0)
        return h @ self.w2 + self.b2

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision(x))

    def to_payload(self) -> dict:
        return {
            "kind": "mlp",
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
            "dropout_keep": self.dropout_keep,
            "positive_weight": self.positive_weight,
            "layout": self.layout,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "MlpModel":
        return cls(
            w1=np.array(payload["w1"], dtype=np.float64),
            b1=np.array(payload["b1"], dtype=np.float64),
            w2=np.array(payload["w2"], dtype=np.float64),
            b2=float(payload["b2"]),
            dropout_keep=float(payload["dropout_keep"]),
            positive_weight=float(payload["positive_weight"]),
            layout=payload.get("layout"),
        )


def train_mlp_static(
    train_fm: FeatureMatrix,
    val_fm: FeatureMatrix | None,
    config: MlpConfig | None = None,
) -> tuple[MlpModel, TrainLog]:
    """One-hidden-layer MLP on densified feature rows."""
    config = config or MlpConfig()
    _check_two_classes(train_fm.labels)
    pw = resolve_positive_weight(config.positive_weight, train_fm.labels)
    rng = np.random.default_rng(config.seed)
    x = train_fm.to_dense()
    y = train_fm.labels.astype(np.float64)
    xv = val_fm.to_dense() if val_fm is not None else None
    n, d = x.shape
    hid = config.hidden
    params = {
        "w1": rng.normal(0.0, np.sqrt(2.0 / d), size=(hid, d)),
        "b1": np.zeros(hid),
        "w2": rng.normal(0.0, 1.0 / np.sqrt(hid), size=hid),
        "b2": np.zeros(1),
    }
    opt = Adam(params, lr=config.learning_rate)
    stopper = _EarlyStopper(config.patience)
    log = TrainLog()
    best = {k: v.copy() for k, v in params.items()}
    keep = config.dropout_keep

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            rows = order[lo : lo + config.batch_size]
            xb = x[rows]
            pre = xb @ params["w1"].T + params["b1"]
            h = np.maximum(pre, 0.0)
            if keep < 1.0:
                mask = (rng.random(h.shape) < keep) / keep
                hd = h * mask
            else:
                mask = None
                hd = h
            z = hd @ params["w2"] + params["b2"][0]
            loss, dz = weighted_logloss(sigmoid(z), y[rows], pw)
            if not np.isfinite(loss):
                raise TrainingError("MLP diverged (non-finite loss)")
            g_w2 = hd.T @ dz
            g_b2 = np.array([dz.sum()])
            dh = np.outer(dz, params["w2"])
            if mask is not None:
                dh = dh * mask
            dpre = dh * (pre > 0.0)
            opt.step(
                {
                    "w1": dpre.T @ xb,
                    "b1": dpre.sum(axis=0),
                    "w2": g_w2,
                    "b2": g_b2,
                }
            )
            epoch_loss += loss
            n_batches += 1
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
        if xv is not None:
            h = np.maximum(xv @ params["w1"].T + params["b1"], 0.0)
            score = auroc(sigmoid(h @ params["w2"] + params["b2"][0]), val_fm.labels)
            entry["val_auroc"] = score
            if stopper.update(score, epoch):
                best = {k: v.copy() for k, v in params.items()}
            log.epochs.append(entry)
            if stopper.should_stop:
                break
        else:
            best = {k: v.copy() for k, v in params.items()}
            log.epochs.append(entry)

    log.best_val_auroc = stopper.best if xv is not None else float("nan")
    log.best_epoch = stopper.best_epoch
    model = MlpModel(
        best["w1"], best["b1"], best["w2"], float(best["b2"][0]),
        keep, pw, train_fm.layout.describe() if train_fm.layout else None,
    )
    return model, log


# ---------------------------------------------------------------------------
# End-to-end model: CNN -> attention aggregation -> similarity -> MLP
# ---------------------------------------------------------------------------


@dataclass
class JointConfig:
    hidden: int = 128  # 0 gives the linear (LR) classifier head
    batch_size: int = 128
    learning_rate: float = 0.0005
    dropout_keep: float = 0.5  # applied to the pooled CNN vector while training
    positive_weight: float | str = 10.0
    epochs: int = 10
    patience: int = 5
    seed: int = 0
    cnn_chunk: int = 512  # sequences per CNN forward/backward slab


class JointModel:
    """CNN representations trained jointly with attention, similarity and MLP.

    The word embedding table stays frozen; everything else (convolution
    filters, attention parameters when trainable, classifier weights) lives
    in one flat parameter dict so a single Adam instance drives training and
    finite-difference checks can perturb any named array.
    """

    def __init__(
        self,
        cnn: CnnParams,
        attn: AttentionParams,
        mode: str,
        use_similarity: bool,
        hidden: int,
        dropout_keep: float = 1.0,
        seed: int = 0,
    ):
        self.cnn = cnn
        self.attn = attn
        self.mode = mode
        self.use_similarity = use_similarity
        self.hidden = hidden
        self.dropout_keep = dropout_keep
        self.layout = FeatureLayout(cnn.dim, mode, use_similarity)
        rng = np.random.default_rng(seed)
        d = self.layout.width
        self.params: dict[str, np.ndarray] = {}
        self.params.update(cnn.param_dict())
        self.params.update(attn.param_dict())
        if hidden > 0:
            self.params["mlp_w1"] = rng.normal(0.0, np.sqrt(2.0 / d), size=(hidden, d))
            self.params["mlp_b1"] = np.zeros(hidden)
            self.params["mlp_w2"] = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden)
            self.params["mlp_b2"] = np.zeros(1)
        else:
            self.params["mlp_w"] = np.zeros(d)
            self.params["mlp_b"] = np.zeros(1)

    # -- forward helpers ----------------------------------------------------

    def _cnn_rows(self, dataset: JointDataset, rows: np.ndarray, table, want_cache: bool):
        """CNN outputs for the given sequence rows, chunked; caches per chunk."""
        outs, caches, spans = [], [], []
        chunk = max(1, getattr(self, "cnn_chunk", 512))
        for lo in range(0, rows.size, chunk):
            sub = rows[lo : lo + chunk]
            out, cache = cnn_forward(dataset.seqs[sub], table, self.cnn, want_cache)
            outs.append(out)
            caches.append(cache)
            spans.append((lo, lo + sub.size))
        return np.concatenate(outs, axis=0), caches, spans

    def _compose(self, f_vec, g_vecs, counts, rate):
        """Assemble the classifier input x for one instance."""
        parts = [f_vec]
        parts.extend(g_vecs)
        sims = None
        if self.use_similarity:
            s = [float(f_vec @ g) for g in g_vecs]
            sims = s + ([s[0] - s[1]] if self.mode == "posneg" else [])
            parts.append(np.array(sims))
        parts.append(np.array([rate]))
        parts.append(np.array([1.0 if c == 0 else 0.0 for c in counts]))
        return np.concatenate(parts), sims

    def _head(self, x):
        """Classifier head forward; returns (logit, cache)."""
        if self.hidden > 0:
            pre = self.params["mlp_w1"] @ x + self.params["mlp_b1"]
            h = np.maximum(pre, 0.0)
            z = float(h @ self.params["mlp_w2"] + self.params["mlp_b2"][0])
            return z, (x, pre, h)
        z = float(self.params["mlp_w"] @ x + self.params["mlp_b"][0])
        return z, (x,)

    def _head_backward(self, dz, cache, grads):
        """Accumulate head gradients; returns dLoss/dx."""
        if self.hidden > 0:
            x, pre, h = cache
            grads["mlp_w2"] += dz * h
            grads["mlp_b2"] += dz
            dh = dz * self.params["mlp_w2"]
            dpre = dh * (pre > 0.0)
            grads["mlp_w1"] += np.outer(dpre, x)
            grads["mlp_b1"] += dpre
            return self.params["mlp_w1"].T @ dpre
        (x,) = cache
        grads["mlp_w"] += dz * x
        grads["mlp_b"] += dz
        return dz * self.params["mlp_w"]

    def forward_instances(
        self, dataset: JointDataset, inst: np.ndarray, table, rng=None, train=False,
        want_grads=False,
    ):
        """Logits for the given instances; caches everything for backward."""
        used = [dataset.incoming_rows[inst]]
        for i in inst:
            used.extend(dataset.hist_rows[i])
        rows = np.unique(np.concatenate(used)) if used else np.empty(0, np.int64)
        local = {int(r): k for k, r in enumerate(rows)}
        cnn_out, caches, spans = self._cnn_rows(dataset, rows, table, want_cache=want_grads)
        drop_mask = None
        if train and self.dropout_keep < 1.0:
            drop_mask = (rng.random(cnn_out.shape) < self.dropout_keep) / self.dropout_keep
            cnn_used = cnn_out * drop_mask
        else:
            cnn_used = cnn_out
        zs = np.empty(inst.size)
        inst_caches = []
        for j, i in enumerate(inst):
            f_vec = cnn_used[local[int(dataset.incoming_rows[i])]]
            g_vecs, attn_caches, counts, hist_locs = [], [], [], []
            for block_rows in dataset.hist_rows[i]:
                locs = np.array([local[int(r)] for r in block_rows], dtype=np.int64)
                hist_locs.append(locs)
                counts.append(locs.size)
                if locs.size == 0:
                    g_vecs.append(np.zeros(self.cnn.dim))
                    attn_caches.append(None)
                else:
                    h_mat = cnn_used[locs]
                    w, cache = attention_weights(h_mat, f_vec, self.attn)
                    g_vecs.append(w @ h_mat)
                    attn_caches.append(cache)
            x, _ = self._compose(f_vec, g_vecs, counts, dataset.reply_rate[i])
            z, head_cache = self._head(x)
            zs[j] = z
            inst_caches.append((f_vec, g_vecs, counts, hist_locs, attn_caches, head_cache))
        state = (rows, local, cnn_out, caches, spans, drop_mask, inst_caches)
        return zs, state

    def loss_and_grads(self, dataset: JointDataset, inst: np.ndarray, table, pw,
                       rng=None, train=False):
        """Batch loss plus gradients for every parameter in `self.params`."""
        zs, state = self.forward_instances(
            dataset, inst, table, rng=rng, train=train, want_grads=True
        )
        rows, local, cnn_out, caches, spans, drop_mask, inst_caches = state
        y = dataset.labels[inst].astype(np.float64)
        loss, dz = weighted_logloss(sigmoid(zs), y, pw)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        d_cnn = np.zeros_like(cnn_out)
        nb = self.layout.n_user_blocks
        d = self.cnn.dim
        for j, i in enumerate(inst):
            f_vec, g_vecs, counts, hist_locs, attn_caches, head_cache = inst_caches[j]
            dx = self._head_backward(dz[j], head_cache, grads)
            df = dx[:d].copy()
            dg = [dx[d * (1 + b) : d * (2 + b)].copy() for b in range(nb)]
            if self.use_similarity:
                ds = dx[self.layout.sim_offset : self.layout.sim_offset + self.layout.n_sim]
                if self.mode == "posneg":
                    ds_pos = ds[0] + ds[2]
                    ds_neg = ds[1] - ds[2]
                    df += ds_pos * g_vecs[0] + ds_neg * g_vecs[1]
                    dg[0] += ds_pos * f_vec
                    dg[1] += ds_neg * f_vec
                else:
                    df += ds[0] * g_vecs[0]
                    dg[0] += ds[0] * f_vec
            inc_loc = local[int(dataset.incoming_rows[i])]
            for b in range(nb):
                if counts[b] == 0:
                    continue
                back = aggregate_backward(dg[b], self.attn, attn_caches[b])
                d_cnn[hist_locs[b]] += back.d_history
                df += back.d_incoming
                for key, g in back.d_params.items():
                    grads[key] += g
            d_cnn[inc_loc] += df
        if drop_mask is not None:
            d_cnn *= drop_mask
        for cache, (lo, hi) in zip(caches, spans):
            for key, g in cnn_backward(d_cnn[lo:hi], self.cnn, cache).items():
                grads[key] += g
        return loss, grads

    def predict_proba(self, dataset: JointDataset, table, batch: int = 1024) -> np.ndarray:
        out = np.empty(dataset.n)
        for lo in range(0, dataset.n, batch):
            inst = np.arange(lo, min(lo + batch, dataset.n))
            zs, _ = self.forward_instances(dataset, inst, table, train=False)
            out[lo : lo + inst.size] = sigmoid(zs)
        return out

    def similarity_features(self, dataset: JointDataset, table, batch: int = 1024) -> np.ndarray:
        """(n, n_sim) similarity block values under the current parameters."""
        if not self.use_similarity:
            raise DataError("model was built without similarity features")
        out = np.empty((dataset.n, self.layout.n_sim))
        lo_off = self.layout.sim_offset
        for lo in range(0, dataset.n, batch):
            inst = np.arange(lo, min(lo + batch, dataset.n))
            _, state = self.forward_instances(dataset, inst, table, train=False)
            inst_caches = state[6]
            for j, cache in enumerate(inst_caches):
                head_cache = cache[5]
                x = head_cache[0]
                out[lo + j] = x[lo_off : lo_off + self.layout.n_sim]
        return out

    def content_vectors(self, seqs: np.ndarray, table, chunk: int = 512) -> np.ndarray:
        """Frozen CNN outputs for arbitrary sequences (two-stage classifiers)."""
        outs = []
        for lo in range(0, seqs.shape[0], chunk):
            out, _ = cnn_forward(seqs[lo : lo + chunk], table, self.cnn, False)
            outs.append(out)
        return np.concatenate(outs, axis=0)

    def to_payload(self) -> dict:
        return {
            "kind": "joint",
            "mode": self.mode,
            "use_similarity": self.use_similarity,
            "hidden": self.hidden,
            "dropout_keep": self.dropout_keep,
            "cnn": {
                "widths": list(self.cnn.widths),
                "n_filters": list(self.cnn.n_filters),
                "weights": [w.tolist() for w in self.cnn.weights],
                "biases": [b.tolist() for b in self.cnn.biases],
            },
            "attention": {
                "kind": self.attn.kind,
                "gamma": self.attn.gamma,
                "global_logits": None
                if self.attn.global_logits is None
                else self.attn.global_logits.tolist(),
                "v": None if self.attn.v is None else self.attn.v.tolist(),
                "w": None if self.attn.w is None else self.attn.w.tolist(),
            },
            "head": {k: v.tolist() for k, v in self.params.items() if k.startswith("mlp_")},
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "JointModel":
        cp = payload["cnn"]
        cnn = CnnParams(
            cp["widths"],
            cp["n_filters"],
            [np.array(w, dtype=np.float64) for w in cp["weights"]],
            [np.array(b, dtype=np.float64) for b in cp["biases"]],
        )
        ap = payload["attention"]
        attn = AttentionParams(
            kind=ap["kind"],
            gamma=float(ap["gamma"]),
            global_logits=None
            if ap["global_logits"] is None
            else np.array(ap["global_logits"], dtype=np.float64),
            v=None if ap["v"] is None else np.array(ap["v"], dtype=np.float64),
            w=None if ap["w"] is None else np.array(ap["w"], dtype=np.float64),
        )
        model = cls(
            cnn,
            attn,
            payload["mode"],
            payload["use_similarity"],
            int(payload["hidden"]),
            float(payload["dropout_keep"]),
        )
        for key, val in payload["head"].items():
            model.params[key] = np.array(val, dtype=np.float64)
            if model.params[key].ndim == 0:
                model.params[key] = model.params[key].reshape(1)
        return model


def train_joint(
    train_jd: JointDataset,
    val_jd: JointDataset | None,
    table,
    model: JointModel,
    config: JointConfig | None = None,
) -> tuple[JointModel, TrainLog]:
    """Minibatch Adam over the full differentiable pipeline."""
    config = config or JointConfig()
    _check_two_classes(train_jd.labels)
    pw = resolve_positive_weight(config.positive_weight, train_jd.labels)
    model.cnn_chunk = config.cnn_chunk
    model.dropout_keep = config.dropout_keep
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.params, lr=config.learning_rate)
    stopper = _EarlyStopper(config.patience)
    log = TrainLog()
    best = {k: v.copy() for k, v in model.params.items()}
    n = train_jd.n

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            inst = order[lo : lo + config.batch_size]
            loss, grads = model.loss_and_grads(
                train_jd, inst, table, pw, rng=rng, train=True
            )
            if not np.isfinite(loss):
                raise TrainingError("joint model diverged (non-finite loss)")
            opt.step(grads)
            epoch_loss += loss
            n_batches += 1
        entry = {"epoch": epoch, "train_loss": epoch_loss / max(n_batches, 1)}
        if val_jd is not None:
            score = auroc(model.predict_proba(val_jd, table), val_jd.labels)
            entry["val_auroc"] = score
            if stopper.update(score, epoch):
                best = {k: v.copy() for k, v in model.params.items()}
            log.epochs.append(entry)
            if stopper.should_stop:
                break
        else:
            best = {k: v.copy() for k, v in model.params.items()}
            log.epochs.append(entry)

    for key, val in best.items():
        model.params[key][...] = val
    log.best_val_auroc = stopper.best if val_jd is not None else float("nan")
    log.best_epoch = stopper.best_epoch
    return model, log


def train_mlp(data, *args, **kwargs):
    """MLP entry point: static feature rows or the end-to-end CNN pipeline."""
    if isinstance(data, JointDataset):
        return train_joint(data, *args, **kwargs)
    return train_mlp_static(data, *args, **kwargs)


# ---------------------------------------------------------------------------
# Random hyperparameter search
# ---------------------------------------------------------------------------


def random_search(
    grid: dict[str, Sequence],
    budget: int,
    objective: Callable[[dict], float],
    seed: int = 0,
    log_path: str | None = None,
) -> tuple[dict | None, list[dict]]:
    """Uniform sampling without replacement from the grid's Cartesian product.

    The objective returns validation AUROC; trials raising TrainingError are
    recorded as failed and skipped. Returns (best config, full trial log).
    """
    if budget < 1:
        raise DataError("random search budget must be >= 1")
    keys = sorted(grid)
    sizes = [len(grid[k]) for k in keys]
    if any(s == 0 for s in sizes):
        raise DataError("empty grid axis")
    total = int(np.prod(sizes))
    budget = min(budget, total)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=budget, replace=False)

    entries = []
    best_score, best_config = -np.inf, None
    for trial, flat in enumerate(chosen):
        config = {}
        rem = int(flat)
        for key, size in zip(keys, sizes):
            config[key] = grid[key][rem % size]
            rem //= size
        t0 = time.perf_counter()
        try:
            score = float(objective(config))
            status = "ok"
        except TrainingError as exc:
            score = None
            status = f"failed: {exc}"
        entries.append(
            {
                "trial": trial,
                "config": config,
                "val_auroc": score,
                "status": status,
                "seconds": time.perf_counter() - t0,
            }
        )
        if score is not None and score > best_score:
            best_score, best_config = score, dict(config)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            for e in entries:
                fh.write(json.dumps(e, sort_keys=True) + "\n")
    return best_config, entries
