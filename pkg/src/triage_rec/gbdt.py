"""Gradient boosted decision trees on histogram-binned features.

Second-order boosting on the class-weighted log-loss: each iteration fits a
depth- and leaf-capped tree to per-example gradients and hessians, choosing
splits by the usual gain

    G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - (G_L+G_R)^2 / (H_L+H_R+lambda)

over at most 255 rank-based quantile bins per feature. Features are consumed
in a sparse entry form: values not stored are implicit zeros, which is sound
because assembled feature rows only omit zeros and every sparse block is
nonnegative. Bin edges are actual data values, so predictions are invariant
under strictly monotone feature transforms when binning is recomputed.

Ties in split gain break toward the lowest feature index, then the lowest
bin; the brute-force oracle in the test suite mirrors that rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingError
from .evaluation import auroc
from .features import FeatureMatrix
from .learners import resolve_positive_weight, sigmoid

MAXB = 256  # bins per feature never exceed 255; keys are col * MAXB + bin
GAIN_EPS = 1e-12


def quantile_edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Bin upper edges as actual data values at evenly spaced ranks."""
    distinct = np.unique(values)
    if distinct.size <= n_bins:
        return distinct.astype(np.float64)
    sv = np.sort(values)
    pos = (np.arange(1, n_bins + 1, dtype=np.int64) * sv.size) // n_bins - 1
    return np.unique(sv[pos]).astype(np.float64)


def bin_of(edges: np.ndarray, values: np.ndarray) -> np.ndarray:
    """bin k holds x with edges[k-1] < x <= edges[k]; overflow clips to last."""
    if edges.size == 0:
        return np.zeros(np.shape(values), dtype=np.int64)
    return np.minimum(np.searchsorted(edges, values, side="left"), edges.size - 1)


class Binner:
    """Per-feature quantile bin edges fitted on the training matrix."""

    def __init__(self, edges: list[np.ndarray], n_features: int):
        self.edges = edges
        self.n_features = n_features
        self.zero_bin = np.array(
            [int(bin_of(e, np.array([0.0]))[0]) for e in edges], dtype=np.int64
        )

    @classmethod
    def fit(cls, fm: FeatureMatrix, n_bins: int = 255) -> "Binner":
        if n_bins > MAXB - 1:
            raise DataError(f"at most {MAXB - 1} bins per feature")
        cols = fm.indices
        vals = fm.values
        order = np.argsort(cols, kind="stable")
        cols_s, vals_s = cols[order], vals[order]
        edges: list[np.ndarray] = []
        bounds = np.searchsorted(cols_s, np.arange(fm.n_cols + 1))
        n = fm.n_rows
        for j in range(fm.n_cols):
            seg = vals_s[bounds[j] : bounds[j + 1]]
            if seg.size < n and seg.size and seg.min() < 0.0:
                raise DataError(
                    f"feature {j} mixes implicit zeros with negative stored values"
                )
            edges.append(quantile_edges(seg, n_bins) if seg.size else np.empty(0))
        return cls(edges, fm.n_cols)


@dataclass
class _Entries:
    """Binned nonzeros sorted by key = col * MAXB + bin; rows aligned."""

    keys: np.ndarray
    rows: np.ndarray
    n_rows: int


def bin_entries(fm: FeatureMatrix, binner: Binner) -> _Entries:
    cols = fm.indices
    rows = fm.row_ids()
    order = np.argsort(cols, kind="stable")
    cols_s, vals_s, rows_s = cols[order], fm.values[order], rows[order]
    bins = np.empty(cols_s.size, dtype=np.int64)
    bounds = np.searchsorted(cols_s, np.arange(fm.n_cols + 1))
    for j in range(fm.n_cols):
        lo, hi = bounds[j], bounds[j + 1]
        if hi > lo:
            bins[lo:hi] = bin_of(binner.edges[j], vals_s[lo:hi])
    keys = cols_s * MAXB + bins
    korder = np.argsort(keys, kind="stable")
    return _Entries(keys[korder], rows_s[korder].astype(np.int64), fm.n_rows)


@dataclass
class Tree:
    feature: list[int] = field(default_factory=list)
    split_bin: list[int] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    is_leaf: list[bool] = field(default_factory=list)

    def new_node(self) -> int:
        self.feature.append(-1)
        self.split_bin.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.is_leaf.append(True)
        return len(self.feature) - 1

    @property
    def n_leaves(self) -> int:
        return sum(self.is_leaf)

    def to_payload(self) -> dict:
        return {
            "feature": self.feature,
            "split_bin": self.split_bin,
            "left": self.left,
            "right": self.right,
            "value": self.value,
            "is_leaf": self.is_leaf,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Tree":
        return cls(
            feature=[int(x) for x in payload["feature"]],
            split_bin=[int(x) for x in payload["split_bin"]],
            left=[int(x) for x in payload["left"]],
            right=[int(x) for x in payload["right"]],
            value=[float(x) for x in payload["value"]],
            is_leaf=[bool(x) for x in payload["is_leaf"]],
        )


@dataclass
class _Leaf:
    node_id: int
    depth: int
    rows: np.ndarray
    keys: np.ndarray
    erow: np.ndarray
    g_sum: float
    h_sum: float
    # candidate split: (gain, feature, bin) or None
    cand: tuple[float, int, int] | None = None


class _TreeGrower:
    """Leaf-wise growth capped by leaf count and depth."""

    def __init__(self, entries: _Entries, binner: Binner, g, h, lambda_, max_depth, max_leaves):
        self.entries = entries
        self.binner = binner
        self.g = g
        self.h = h
        self.lambda_ = lambda_
        self.max_depth = max_depth
        self.max_leaves = max_leaves
        self.scratch = np.zeros(entries.n_rows, dtype=bool)

    def best_split(self, leaf: _Leaf) -> tuple[float, int, int] | None:
        if leaf.depth >= self.max_depth or leaf.rows.size < 2 or leaf.keys.size == 0:
            return None
        lam = self.lambda_
        sub_g = self.g[leaf.erow]
        sub_h = self.h[leaf.erow]
        change = np.flatnonzero(np.diff(leaf.keys)) + 1
        starts = np.concatenate([[0], change])
        uk = leaf.keys[starts]
        gk = np.add.reduceat(sub_g, starts)
        hk = np.add.reduceat(sub_h, starts)
        ck = np.diff(np.concatenate([starts, [leaf.keys.size]]))

        feats = uk // MAXB
        bins = uk % MAXB
        fchange = np.flatnonzero(np.diff(feats)) + 1
        fstarts = np.concatenate([[0], fchange])
        f_ids = feats[fstarts]
        gf = np.add.reduceat(gk, fstarts)
        hf = np.add.reduceat(hk, fstarts)
        cf = np.add.reduceat(ck, fstarts)

        # implicit-zero remainder per feature, landing in the bin holding 0.0
        c0 = leaf.rows.size - cf
        zsel = c0 > 0
        zfeats = f_ids[zsel]
        all_feats = np.concatenate([feats, zfeats])
        all_bins = np.concatenate([bins, self.binner.zero_bin[zfeats]])
        all_g = np.concatenate([gk, leaf.g_sum - gf[zsel]])
        all_h = np.concatenate([hk, leaf.h_sum - hf[zsel]])
        all_c = np.concatenate([ck, c0[zsel]])

        mk = all_feats * MAXB + all_bins
        order = np.argsort(mk, kind="stable")
        mk = mk[order]
        all_g, all_h, all_c = all_g[order], all_h[order], all_c[order]
        change2 = np.flatnonzero(np.diff(mk)) + 1
        starts2 = np.concatenate([[0], change2])
        k2 = mk[starts2]
        g2 = np.add.reduceat(all_g, starts2)
        h2 = np.add.reduceat(all_h, starts2)
        c2 = np.add.reduceat(all_c, starts2)

        f2 = k2 // MAXB
        b2 = k2 % MAXB
        fchange2 = np.flatnonzero(np.diff(f2)) + 1
        fstarts2 = np.concatenate([[0], fchange2])
        sizes2 = np.diff(np.concatenate([fstarts2, [k2.size]]))

        cs_g = np.cumsum(g2)
        cs_h = np.cumsum(h2)
        cs_c = np.cumsum(c2)
        base_g = np.where(fstarts2 > 0, cs_g[fstarts2 - 1], 0.0)
        base_h = np.where(fstarts2 > 0, cs_h[fstarts2 - 1], 0.0)
        base_c = np.where(fstarts2 > 0, cs_c[fstarts2 - 1], 0)
        gl = cs_g - np.repeat(base_g, sizes2)
        hl = cs_h - np.repeat(base_h, sizes2)
        cl = cs_c - np.repeat(base_c, sizes2)
        gr = leaf.g_sum - gl
        hr = leaf.h_sum - hl
        cr = leaf.rows.size - cl

        parent_term = leaf.g_sum**2 / (leaf.h_sum + lam)
        gain = gl**2 / (hl + lam) + gr**2 / (hr + lam) - parent_term
        last = np.zeros(k2.size, dtype=bool)
        last[fstarts2 + sizes2 - 1] = True
        gain[last | (cl < 1) | (cr < 1)] = -np.inf
        if gain.size == 0:
            return None
        i = int(np.argmax(gain))
        if not np.isfinite(gain[i]) or gain[i] <= GAIN_EPS:
            return None
        return (float(gain[i]), int(f2[i]), int(b2[i]))

    def partition(self, leaf: _Leaf, feature: int, split_bin: int):
        lo = np.searchsorted(leaf.keys, feature * MAXB)
        hi = np.searchsorted(leaf.keys, (feature + 1) * MAXB)
        frows = leaf.erow[lo:hi]
        fbins = leaf.keys[lo:hi] % MAXB
        zero_left = bool(self.binner.zero_bin[feature] <= split_bin)
        self.scratch[leaf.rows] = zero_left
        self.scratch[frows] = fbins <= split_bin
        row_mask = self.scratch[leaf.rows]
        rows_l, rows_r = leaf.rows[row_mask], leaf.rows[~row_mask]
        emask = self.scratch[leaf.erow]
        parts = []
        for rows, kmask in ((rows_l, emask), (rows_r, ~emask)):
            parts.append(
                dict(
                    rows=rows,
                    keys=leaf.keys[kmask],
                    erow=leaf.erow[kmask],
                    g_sum=float(self.g[rows].sum()),
                    h_sum=float(self.h[rows].sum()),
                )
            )
        return parts

    def grow(self, rows: np.ndarray, keys: np.ndarray, erow: np.ndarray, eta: float) -> tuple[Tree, list[_Leaf]]:
        tree = Tree()
        root = _Leaf(
            node_id=tree.new_node(),
            depth=0,
            rows=rows,
            keys=keys,
            erow=erow,
            g_sum=float(self.g[rows].sum()),
            h_sum=float(self.h[rows].sum()),
        )
        root.cand = self.best_split(root)
        leaves = [root]
        while len(leaves) < self.max_leaves:
            best, best_leaf = -np.inf, None
            for leaf in leaves:  # creation order; strict > keeps the earliest on ties
                if leaf.cand is not None and leaf.cand[0] > best:
                    best, best_leaf = leaf.cand[0], leaf
            if best_leaf is None:
                break
            gain, feature, split_bin = best_leaf.cand
            parts = self.partition(best_leaf, feature, split_bin)
            node = best_leaf.node_id
            tree.is_leaf[node] = False
            tree.feature[node] = feature
            tree.split_bin[node] = split_bin
            children = []
            for part in parts:
                child = _Leaf(node_id=tree.new_node(), depth=best_leaf.depth + 1, **part)
                child.cand = self.best_split(child)
                children.append(child)
            tree.left[node] = children[0].node_id
            tree.right[node] = children[1].node_id
            leaves.remove(best_leaf)
            leaves.extend(children)
        for leaf in leaves:
            tree.value[leaf.node_id] = -eta * leaf.g_sum / (leaf.h_sum + self.lambda_)
        return tree, leaves


class GbdtModel:
    """Boosted trees plus the binner needed to route raw feature values."""

    def __init__(self, binner: Binner, trees: list[Tree], base_score: float,
                 eta: float, positive_weight: float, lambda_: float = 1.0,
                 prior_only: bool = False, layout: dict | None = None):
        self.binner = binner
        self.trees = trees
        self.base_score = base_score
        self.eta = eta
        self.positive_weight = positive_weight
        self.lambda_ = lambda_
        self.prior_only = prior_only
        self.layout = layout

    def _bin_columns(self, fm: FeatureMatrix):
        """Lazy dense bin columns for the features the trees actually test."""
        cols = fm.indices
        order = np.argsort(cols, kind="stable")
        cols_s = cols[order]
        vals_s = fm.values[order]
        rows_s = fm.row_ids()[order]
        bounds = np.searchsorted(cols_s, np.arange(self.binner.n_features + 1))
        cache: dict[int, np.ndarray] = {}

        def column(j: int) -> np.ndarray:
            col = cache.get(j)
            if col is None:
                col = np.full(fm.n_rows, self.binner.zero_bin[j], dtype=np.int64)
                lo, hi = bounds[j], bounds[j + 1]
                if hi > lo:
                    col[rows_s[lo:hi]] = bin_of(self.binner.edges[j], vals_s[lo:hi])
                cache[j] = col
            return col

        return column

    def predict_margin(self, fm: FeatureMatrix) -> np.ndarray:
        if fm.n_cols != self.binner.n_features:
            raise DataError("feature width does not match the trained model")
        margins = np.full(fm.n_rows, self.base_score)
        column = self._bin_columns(fm)
        all_rows = np.arange(fm.n_rows, dtype=np.int64)
        for tree in self.trees:
            stack = [(0, all_rows)]
            while stack:
                node, rows = stack.pop()
                if tree.is_leaf[node]:
                    margins[rows] += tree.value[node]
                    continue
                bins = column(tree.feature[node])[rows]
                mask = bins <= tree.split_bin[node]
                stack.append((tree.left[node], rows[mask]))
                stack.append((tree.right[node], rows[~mask]))
        return margins

    def predict_proba(self, fm: FeatureMatrix) -> np.ndarray:
        return sigmoid(self.predict_margin(fm))

    def to_payload(self) -> dict:
        return {
            "kind": "gbdt",
            "base_score": self.base_score,
            "eta": self.eta,
            "positive_weight": self.positive_weight,
            "lambda": self.lambda_,
            "prior_only": self.prior_only,
            "edges": [e.tolist() for e in self.binner.edges],
            "trees": [t.to_payload() for t in self.trees],
            "layout": self.layout,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "GbdtModel":
        edges = [np.array(e, dtype=np.float64) for e in payload["edges"]]
        binner = Binner(edges, len(edges))
        return cls(
            binner,
            [Tree.from_payload(t) for t in payload["trees"]],
            float(payload["base_score"]),
            float(payload["eta"]),
            float(payload["positive_weight"]),
            float(payload["lambda"]),
            bool(payload["prior_only"]),
            payload.get("layout"),
        )


@dataclass
class GbdtConfig:
    n_trees: int = 500
    max_depth: int = 5
    learning_rate: float = 0.1
    positive_weight: float | str = 5.0
    lambda_: float = 1.0
    n_bins: int = 255

    @property
    def max_leaves(self) -> int:
        # the leaf budget 2^depth - 2 would forbid any split at depth 1
        return max(2, 2**self.max_depth - 2)


def train_gbdt(
    train_fm: FeatureMatrix,
    val_fm: FeatureMatrix | None = None,
    config: GbdtConfig | None = None,
) -> tuple[GbdtModel, dict]:
    """Boost `n_trees` trees; returns the model and a small training log."""
    config = config or GbdtConfig()
    y = train_fm.labels.astype(np.float64)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("GBDT needs both classes in the training data")
    pw = resolve_positive_weight(config.positive_weight, train_fm.labels)

    binner = Binner.fit(train_fm, config.n_bins)
    entries = bin_entries(train_fm, binner)
    base = float(np.log(pw * n_pos / n_neg))
    margins = np.full(train_fm.n_rows, base)
    weight = np.where(y == 1.0, pw, 1.0)

    trees: list[Tree] = []
    prior_only = False
    all_rows = np.arange(train_fm.n_rows, dtype=np.int64)
    for t in range(config.n_trees):
        p = sigmoid(margins)
        g = weight * (p - y)
        h = weight * p * (1.0 - p)
        grower = _TreeGrower(
            entries, binner, g, h, config.lambda_, config.max_depth, config.max_leaves
        )
        tree, leaves = grower.grow(all_rows, entries.keys, entries.rows, config.learning_rate)
        if t == 0 and len(tree.feature) == 1:
            prior_only = True
            break
        if len(tree.feature) == 1:
            break  # no further structure to learn
        for leaf in leaves:
            margins[leaf.rows] += tree.value[leaf.node_id]
        trees.append(tree)

    model = GbdtModel(
        binner,
        trees,
        base,
        config.learning_rate,
        pw,
        config.lambda_,
        prior_only,
        train_fm.layout.describe() if train_fm.layout else None,
    )
    log = {"n_trees": len(trees), "prior_only": prior_only}
    if val_fm is not None:
        log["val_auroc"] = auroc(model.predict_proba(val_fm), val_fm.labels)
    return model, log
