"""Shared wiring from a raw corpus to trained, evaluated models.

`PipelineContext` owns everything derived from one corpus + split: the
labeled index, cleaned text, vocabulary, unigram table, embeddings and reply
rates, with strict train+validation-only fitting for all of them (optionally
proven by a CausalityAudit). `train_cell` runs one experiment cell.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .audit import CausalityAudit
from .corpus import (
    Email,
    IngestReport,
    MailboxIndex,
    RawMessage,
    SplitSpec,
    ingest,
    reply_rates,
    split_emails,
)
from .embeddings import EmbeddingTable, SkipGramConfig, train_skipgram
from .errors import DataError, UsageError
from .evaluation import auroc
from .features import ContentProvider, Dataset, build_dataset, build_joint_dataset
from .gbdt import GbdtConfig, train_gbdt
from .learners import (
    GradientTrainConfig,
    JointConfig,
    JointModel,
    MlpConfig,
    train_joint,
    train_lr,
    train_mlp_static,
)
from .represent import CnnParams, EmailVector, embed_mean, tfidf_vector
from .textproc import (
    UnigramTable,
    Vocabulary,
    build_unigram_table,
    build_vocabulary,
    clean,
    load_blocklist,
    to_sequence,
)
from .userrep import AttentionParams, HistoryConfig

CONTENTS = ("tfidf", "embed", "cnn")
CLASSIFIERS = ("lr", "gbdt", "mlp")


@dataclass(frozen=True)
class CellSpec:
    """One cell of the experiment matrix."""

    content: str = "tfidf"
    user_mode: str = "posneg"
    classifier: str = "gbdt"
    similarity: bool = True
    history_len: int = 10
    aggregation: str | None = None  # None picks the per-content default
    seed: int = 0

    def __post_init__(self) -> None:
        if self.content not in CONTENTS:
            raise UsageError(f"unknown content variant {self.content!r}")
        if self.classifier not in CLASSIFIERS:
            raise UsageError(f"unknown classifier {self.classifier!r}")

    def name(self) -> str:
        sim = "sim" if self.similarity else "nosim"
        return f"{self.content}-{self.classifier}-{self.user_mode}-{sim}-h{self.history_len}"


class PipelineContext:
    """Derived state for one corpus; artifacts are fitted lazily and cached."""

    def __init__(self, index: MailboxIndex, spec: SplitSpec, cfg: dict,
                 report: IngestReport | None = None, audit: CausalityAudit | None = None):
        self.index = index
        self.spec = spec
        self.cfg = cfg
        self.report = report
        self.audit = audit
        self.parts = split_emails(index, spec)
        self.rates, self.default_rate = reply_rates(index, spec)
        tp = cfg["textproc"]
        self.blocklist = (
            load_blocklist(tp["blocklist"]) if tp.get("blocklist") else frozenset()
        )
        self._clean_cache: dict[str, list[str]] = {}
        self._seq_cache: dict[str, np.ndarray] = {}
        self._vocab: Vocabulary | None = None
        self._unigrams: UnigramTable | None = None
        self._embeddings: EmbeddingTable | None = None
        self._providers: dict[str, ContentProvider] = {}
        self._datasets: dict[tuple, dict[str, Dataset]] = {}
        self._joint_datasets: dict[tuple, dict] = {}

    # -- text and tables ------------------------------------------------

    def clean_tokens(self, email: Email) -> list[str]:
        tokens = self._clean_cache.get(email.email_id)
        if tokens is None:
            tokens = clean(
                email.subject,
                email.body,
                self.blocklist,
                self.cfg["textproc"]["include_subject"],
            )
            self._clean_cache[email.email_id] = tokens
        return tokens

    def _fit_docs(self) -> list[list[str]]:
        """Documents legal to fit on: train + validation only."""
        emails = self.parts["train"] + self.parts["validation"]
        if self.audit is not None:
            self.audit.record_docs("fit_corpus", (e.email_id for e in emails))
        return [self.clean_tokens(e) for e in emails]

    @property
    def vocab(self) -> Vocabulary:
        if self._vocab is None:
            tp = self.cfg["textproc"]
            self._vocab = build_vocabulary(
                self._fit_docs(), tp["vocab_size"], tp["ngram_max"], tp["stop_df_fraction"]
            )
        return self._vocab

    @vocab.setter
    def vocab(self, vocab: Vocabulary) -> None:
        self._vocab = vocab

    @property
    def unigrams(self) -> UnigramTable:
        if self._unigrams is None:
            tp = self.cfg["textproc"]
            self._unigrams = build_unigram_table(
                self._fit_docs(), tp["unigram_max_size"], tp["unigram_min_count"]
            )
        return self._unigrams

    @unigrams.setter
    def unigrams(self, table: UnigramTable) -> None:
        self._unigrams = table

    @property
    def embeddings(self) -> EmbeddingTable:
        if self._embeddings is None:
            em = self.cfg["embeddings"]
            sg = SkipGramConfig(
                window=em["window"],
                dim=em["dim"],
                negatives=em["negatives"],
                epochs=em["epochs"],
                learning_rate=em["learning_rate"],
                min_count=em["min_count"],
                seed=self.cfg["seed"],
            )
            self._embeddings = train_skipgram(self._fit_docs(), sg, self.unigrams)
        return self._embeddings

    @embeddings.setter
    def embeddings(self, table: EmbeddingTable) -> None:
        self._embeddings = table

    def sequence(self, email: Email) -> np.ndarray:
        seq = self._seq_cache.get(email.email_id)
        if seq is None:
            seq = to_sequence(
                self.clean_tokens(email),
                self.unigrams,
                self.cfg["textproc"]["sequence_length"],
            )
            self._seq_cache[email.email_id] = seq
        return seq

    # -- feature datasets -------------------------------------------------

    def provider(self, content: str) -> ContentProvider:
        prov = self._providers.get(content)
        if prov is not None:
            return prov
        if content == "tfidf":
            vocab = self.vocab
            prov = ContentProvider(len(vocab), lambda e: tfidf_vector(self.clean_tokens(e), vocab))
        elif content == "embed":
            emb = self.embeddings
            prov = ContentProvider(emb.dim, lambda e: embed_mean(self.sequence(e), emb))
        else:
            raise DataError("the cnn content variant has no static provider")
        self._providers[content] = prov
        return prov

    def attention(self, cell: CellSpec, dim: int) -> AttentionParams:
        agg = self.cfg["aggregation"]
        kind = cell.aggregation or agg[cell.content]
        return AttentionParams.init(
            kind,
            dim=dim,
            h=cell.history_len,
            gamma=agg["gamma"],
            hidden=agg["concat_hidden"],
            rng=np.random.default_rng(cell.seed),
        )

    def datasets(self, cell: CellSpec, provider: ContentProvider | None = None) -> dict[str, Dataset]:
        """Static feature datasets for all three partitions, cached per shape."""
        key = (cell.content, cell.user_mode, cell.similarity, cell.history_len,
               cell.aggregation, id(provider))
        cached = self._datasets.get(key)
        if cached is not None:
            return cached
        provider = provider or self.provider(cell.content)
        hist = HistoryConfig(cell.user_mode, cell.history_len)
        attn = self.attention(cell, provider.dim)
        out = {
            name: build_dataset(
                self.index, self.parts[name], provider, hist, attn,
                cell.similarity, self.rates, self.default_rate, audit=self.audit,
            )
            for name in ("train", "validation", "test")
        }
        if self.audit is not None:
            self.audit.record_docs(
                f"train:{cell.name()}", (e.email_id for e in self.parts["train"])
            )
        self._datasets[key] = out
        return out

    def joint_datasets(self, cell: CellSpec) -> dict:
        key = (cell.user_mode, cell.history_len)
        cached = self._joint_datasets.get(key)
        if cached is not None:
            return cached
        hist = HistoryConfig(cell.user_mode, cell.history_len)
        out = {
            name: build_joint_dataset(
                self.index, self.parts[name], self.sequence, hist,
                self.rates, self.default_rate, audit=self.audit,
            )
            for name in ("train", "validation", "test")
        }
        if self.audit is not None:
            self.audit.record_docs(
                f"train:{cell.name()}", (e.email_id for e in self.parts["train"])
            )
        self._joint_datasets[key] = out
        return out


def prepare_context(
    messages: Sequence[RawMessage],
    spec: SplitSpec,
    cfg: dict,
    audit: CausalityAudit | None = None,
    report: IngestReport | None = None,
) -> PipelineContext:
    index, report = ingest(messages, spec, report)
    if audit is not None:
        audit.test_ids = frozenset(
            e.email_id for e in split_emails(index, spec)["test"]
        )
    return PipelineContext(index, spec, cfg, report, audit)


@dataclass
class CellRun:
    """Everything produced by training and evaluating one cell."""

    cell: CellSpec
    model: object
    val_auroc: float
    test_auroc: float
    test_probs: np.ndarray
    test_labels: np.ndarray
    test_email_ids: list[str]
    seconds: float
    sim_features: np.ndarray | None = None
    train_config: dict = field(default_factory=dict)


def _gbdt_config(cfg: dict, overrides: dict | None) -> GbdtConfig:
    g = dict(cfg["gbdt"])
    g.update(overrides or {})
    return GbdtConfig(
        n_trees=int(g["n_trees"]),
        max_depth=int(g["max_depth"]),
        learning_rate=float(g["learning_rate"]),
        positive_weight=g["positive_weight"],
    )


def train_cell(ctx: PipelineContext, cell: CellSpec, overrides: dict | None = None) -> CellRun:
    """Train one (content, user mode, classifier, ...) cell and score the test set."""
    t0 = time.perf_counter()
    if cell.content == "cnn":
        run = _train_cell_cnn(ctx, cell, overrides)
    else:
        run = _train_cell_static(ctx, cell, overrides)
    run.seconds = time.perf_counter() - t0
    return run


def _train_cell_static(ctx, cell, overrides, provider=None) -> CellRun:
    ds = ctx.datasets(cell, provider=provider)
    train_fm, val_fm, test_fm = (ds[n].matrix for n in ("train", "validation", "test"))
    cfg = ctx.cfg
    if cell.classifier == "gbdt":
        gc = _gbdt_config(cfg, overrides)
        model, log = train_gbdt(train_fm, val_fm, gc)
        val = log.get("val_auroc", float("nan"))
        train_config = gc.__dict__
    elif cell.classifier == "lr":
        p = dict(cfg["lr"])
        p.update(overrides or {})
        model, log = train_lr(
            train_fm,
            val_fm,
            inverse_reg=float(p["inverse_reg"]),
            positive_weight=p["positive_weight"],
            config=GradientTrainConfig(
                learning_rate=float(p["learning_rate"]),
                batch_size=int(p["batch_size"]),
                epochs=int(p["epochs"]),
                patience=int(p["patience"]),
                seed=cell.seed,
            ),
        )
        val = log.best_val_auroc
        train_config = p
    elif cell.classifier == "mlp":
        p = dict(cfg["mlp"])
        p.update(overrides or {})
        model, log = train_mlp_static(
            train_fm,
            val_fm,
            MlpConfig(
                hidden=int(p["hidden"]),
                batch_size=int(p["batch_size"]),
                learning_rate=float(p["learning_rate"]),
                dropout_keep=float(p["dropout_keep"]),
                positive_weight=p["positive_weight"],
                epochs=int(p["epochs"]),
                patience=int(p["patience"]),
                seed=cell.seed,
            ),
        )
        val = log.best_val_auroc
        train_config = p
    else:
        raise UsageError(f"unsupported classifier {cell.classifier}")

    if cell.classifier == "mlp":
        probs = model.predict_proba(test_fm.to_dense())
    else:
        probs = model.predict_proba(test_fm)
    return CellRun(
        cell=cell,
        model=model,
        val_auroc=val,
        test_auroc=auroc(probs, test_fm.labels),
        test_probs=probs,
        test_labels=test_fm.labels.copy(),
        test_email_ids=ds["test"].email_ids,
        seconds=0.0,
        sim_features=ds["test"].sim_features,
        train_config={"cell": cell.name(), **{k: str(v) for k, v in train_config.items()}},
    )


def _train_cell_cnn(ctx, cell, overrides) -> CellRun:
    cfg = ctx.cfg
    p = dict(cfg["mlp"])
    p.update(overrides or {})
    jds = ctx.joint_datasets(cell)
    emb = ctx.embeddings
    cnn_cfg = cfg["cnn"]
    cnn = CnnParams.init(
        emb.dim,
        widths=tuple(cnn_cfg["widths"]),
        n_filters=tuple(cnn_cfg["n_filters"]),
        rng=np.random.default_rng(cell.seed),
    )
    attn = ctx.attention(cell, cnn.dim)
    hidden = int(p["hidden"]) if cell.classifier in ("mlp", "gbdt") else 0
    model = JointModel(
        cnn, attn, cell.user_mode, cell.similarity,
        hidden=hidden, dropout_keep=float(p["dropout_keep"]), seed=cell.seed,
    )
    jc = JointConfig(
        hidden=hidden,
        batch_size=int(p["batch_size"]),
        learning_rate=float(p["learning_rate"]),
        dropout_keep=float(p["dropout_keep"]),
        positive_weight=p["positive_weight"],
        epochs=int(p["epochs"]),
        patience=int(p["patience"]),
        seed=cell.seed,
    )
    model, log = train_joint(jds["train"], jds["validation"], emb, model, jc)

    if cell.classifier == "gbdt":
        # two-stage: GBDT on the learned, now frozen, CNN representations
        rep_cache: dict[str, EmailVector] = {}

        def rep_of(email):
            vec = rep_cache.get(email.email_id)
            if vec is None:
                out = model.content_vectors(ctx.sequence(email)[None, :], emb)[0]
                vec = EmailVector.densevec("cnn", out)
                rep_cache[email.email_id] = vec
            return vec

        provider = ContentProvider(cnn.dim, rep_of)
        return _train_cell_static(cell=cell, ctx=ctx, overrides=overrides, provider=provider)

    probs = model.predict_proba(jds["test"], emb)
    sims = model.similarity_features(jds["test"], emb) if cell.similarity else None
    return CellRun(
        cell=cell,
        model=model,
        val_auroc=log.best_val_auroc,
        test_auroc=auroc(probs, jds["test"].labels),
        test_probs=probs,
        test_labels=jds["test"].labels.copy(),
        test_email_ids=jds["test"].email_ids,
        seconds=0.0,
        sim_features=sims,
        train_config={"cell": cell.name(), **{k: str(v) for k, v in jc.__dict__.items()}},
    )
