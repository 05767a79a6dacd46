"""Deterministic synthetic mailbox generator with a known reply process.

Each email mixes two main topics rendered as words; each user likes some
topics and avoids others. The reply probability is a logistic function of
topic match minus topic aversion, so content is genuinely predictive and the
negative history is informative in its own right: positive history reveals
what a user likes, but only the negative side reveals what they avoid, which
is exactly the regime where the contrastive similarity term earns its keep.
The hidden true probabilities give a Bayes AUROC ceiling for acceptance
thresholds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .corpus import RawMessage, make_email_id
from .errors import DataError
from .evaluation import auroc


@dataclass
class GeneratorConfig:
    n_users: int = 50
    n_topics: int = 8
    vocab_size: int = 400
    n_roots: int = 7000  # first-in-thread messages
    recipients_min: int = 1
    recipients_max: int = 2
    body_tokens: int = 30
    subject_tokens: int = 4
    start_ts: int = 1_000_000_000
    span_seconds: int = 365 * 24 * 3600
    topics_per_email: int = 2
    topic_sharpness: float = 0.92  # mass an email keeps on its main topics
    favorites_per_user: int = 2
    dislikes_per_user: int = 2
    affinity_mass: float = 0.9  # mass on the favorite (and disliked) topics
    w_match: float = 13.0
    w_avoid: float = 13.0
    bias: float = -4.4
    reply_delay_max: int = 36 * 3600
    seed: int = 7

    def __post_init__(self) -> None:
        if self.n_topics < 1:
            raise DataError("generator needs at least one topic")
        if self.vocab_size < self.n_topics:
            raise DataError("vocabulary must cover all topics")
        if not (1 <= self.recipients_min <= self.recipients_max):
            raise DataError("bad recipient count range")
        if self.favorites_per_user + self.dislikes_per_user > self.n_topics:
            raise DataError("favorite and disliked topics exceed the topic count")
        if not (1 <= self.topics_per_email <= self.n_topics):
            raise DataError("bad topics_per_email")


@dataclass
class GeneratedCorpus:
    messages: list[RawMessage]
    # hidden ground truth: email_id -> true reply probability
    true_probs: dict[str, float]
    labels: dict[str, int]
    config: GeneratorConfig
    positive_ratio: float = 0.0
    bayes: float = 0.0

    def manifest(self) -> dict:
        return {
            "config": asdict(self.config),
            "seed": self.config.seed,
            "n_messages": len(self.messages),
            "n_instances": len(self.true_probs),
            "positive_ratio": self.positive_ratio,
            "bayes_auroc": self.bayes,
        }


def bayes_auroc(true_probs: dict[str, float], labels: dict[str, int]) -> float:
    """AUROC of the true generative probabilities against the sampled labels."""
    keys = sorted(true_probs)
    p = np.array([true_probs[k] for k in keys])
    y = np.array([labels[k] for k in keys])
    return auroc(p, y)


def _topic_word_dists(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Each topic concentrates on its own block of the vocabulary."""
    k, w = cfg.n_topics, cfg.vocab_size
    block = w // k
    dists = np.full((k, w), 0.08 / w)
    for t in range(k):
        lo = t * block
        hi = w if t == k - 1 else lo + block
        within = rng.dirichlet(np.full(hi - lo, 0.5))
        dists[t, lo:hi] += 0.92 * within
    return dists / dists.sum(axis=1, keepdims=True)


def _preference_vector(idx: np.ndarray, mass: float, k: int) -> np.ndarray:
    out = np.full(k, (1.0 - mass) / max(k - idx.size, 1))
    out[idx] = mass / idx.size
    return out


def generate(cfg: GeneratorConfig) -> GeneratedCorpus:
    """Emit the message stream plus the hidden probability table.

    Deterministic per seed. If sampling lands on a single-class label set the
    bias is nudged and the whole draw is repeated.
    """
    bias = cfg.bias
    for _ in range(6):
        corpus = _generate_once(cfg, bias)
        labels = np.array(list(corpus.labels.values()))
        if 0 < labels.sum() < labels.size:
            corpus.positive_ratio = float(labels.mean())
            corpus.bayes = bayes_auroc(corpus.true_probs, corpus.labels)
            return corpus
        bias += 0.5 if labels.sum() == 0 else -0.5
    raise DataError("generator could not produce a two-class corpus")


def _generate_once(cfg: GeneratorConfig, bias: float) -> GeneratedCorpus:
    rng = np.random.default_rng(cfg.seed)
    topics = _topic_word_dists(cfg, rng)
    words = np.array([f"w{i:04d}" for i in range(cfg.vocab_size)])

    likes = np.zeros((cfg.n_users, cfg.n_topics))
    avoids = np.zeros((cfg.n_users, cfg.n_topics))
    for u in range(cfg.n_users):
        perm = rng.permutation(cfg.n_topics)
        fav = perm[: cfg.favorites_per_user]
        dis = perm[cfg.favorites_per_user : cfg.favorites_per_user + cfg.dislikes_per_user]
        likes[u] = _preference_vector(fav, cfg.affinity_mass, cfg.n_topics)
        avoids[u] = _preference_vector(dis, cfg.affinity_mass, cfg.n_topics)

    root_ts = np.sort(rng.integers(cfg.start_ts, cfg.start_ts + cfg.span_seconds, cfg.n_roots))
    users = [f"user{u:03d}" for u in range(cfg.n_users)]

    messages: list[RawMessage] = []
    true_probs: dict[str, float] = {}
    labels: dict[str, int] = {}

    for i in range(cfg.n_roots):
        sender = int(rng.integers(0, cfg.n_users))
        n_rcpt = int(rng.integers(cfg.recipients_min, cfg.recipients_max + 1))
        others = [u for u in range(cfg.n_users) if u != sender]
        rcpts = rng.choice(others, size=min(n_rcpt, len(others)), replace=False)

        main = rng.choice(cfg.n_topics, size=cfg.topics_per_email, replace=False)
        theta = np.full(
            cfg.n_topics,
            (1.0 - cfg.topic_sharpness) / max(cfg.n_topics - main.size, 1),
        )
        theta[main] = cfg.topic_sharpness / main.size
        word_dist = theta @ topics
        body_ids = rng.choice(cfg.vocab_size, size=cfg.body_tokens, p=word_dist)
        subj_ids = rng.choice(cfg.vocab_size, size=cfg.subject_tokens, p=word_dist)
        mid = f"m{i:06d}"
        ts = int(root_ts[i])
        messages.append(
            RawMessage(
                message_id=mid,
                timestamp=ts,
                sender=users[sender],
                recipients=tuple(users[r] for r in rcpts),
                subject=" ".join(words[subj_ids]),
                body=" ".join(words[body_ids]),
                reply_to=None,
            )
        )
        for r in rcpts:
            logit = (
                cfg.w_match * float(theta @ likes[r])
                - cfg.w_avoid * float(theta @ avoids[r])
                + bias
            )
            p = 1.0 / (1.0 + np.exp(-logit))
            eid = make_email_id(mid, users[r])
            true_probs[eid] = float(p)
            replied = bool(rng.random() < p)
            labels[eid] = int(replied)
            if replied:
                delay = int(rng.integers(60, cfg.reply_delay_max))
                reply_word_ids = rng.choice(cfg.vocab_size, size=6, p=likes[r] @ topics)
                messages.append(
                    RawMessage(
                        message_id=f"{mid}r{r:03d}",
                        timestamp=ts + delay,
                        sender=users[r],
                        recipients=(users[sender],),
                        subject="re " + " ".join(words[subj_ids[:2]]),
                        body=" ".join(words[reply_word_ids]),
                        reply_to=mid,
                    )
                )

    messages.sort(key=lambda m: (m.timestamp, m.message_id))
    return GeneratedCorpus(messages, true_probs, labels, cfg)


def write_corpus(corpus: GeneratedCorpus, jsonl_path: str, manifest_path: str | None = None) -> None:
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for msg in corpus.messages:
            fh.write(msg.to_json() + "\n")
    if manifest_path is not None:
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(corpus.manifest(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def default_split(cfg: GeneratorConfig):
    """Temporal boundaries at 70% / 80% of the generated span."""
    from .corpus import SplitSpec

    return SplitSpec(
        train_end=cfg.start_ts + int(0.7 * cfg.span_seconds),
        validation_end=cfg.start_ts + int(0.8 * cfg.span_seconds),
        test_end=cfg.start_ts + cfg.span_seconds,
    )
