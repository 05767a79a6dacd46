"""Shared fixtures: hand-built corpora and a small synthetic mailbox."""

import numpy as np
import pytest

from triage_rec.corpus import RawMessage, SplitSpec, ingest
from triage_rec.features import FeatureMatrix
from triage_rec.synthgen import GeneratorConfig, default_split, generate


def msg(mid, ts, sender, recipients, subject="s", body="b", reply_to=None):
    return RawMessage(
        message_id=mid,
        timestamp=ts,
        sender=sender,
        recipients=tuple(recipients),
        subject=subject,
        body=body,
        reply_to=reply_to,
    )


def dense_fm(x, y, layout=None) -> FeatureMatrix:
    """FeatureMatrix with every cell stored explicitly."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    rows, cols = np.nonzero(np.ones_like(x, dtype=bool))
    indptr = np.arange(n + 1, dtype=np.int64) * d
    return FeatureMatrix(d, indptr, cols, x.ravel(), np.asarray(y, dtype=np.int8), layout)


@pytest.fixture(scope="session")
def small_gen_config():
    return GeneratorConfig(
        n_users=20,
        n_topics=5,
        vocab_size=120,
        n_roots=700,
        body_tokens=18,
        subject_tokens=3,
        span_seconds=120 * 24 * 3600,
        seed=13,
    )


@pytest.fixture(scope="session")
def small_corpus(small_gen_config):
    return generate(small_gen_config)


@pytest.fixture(scope="session")
def small_split(small_gen_config):
    return default_split(small_gen_config)


@pytest.fixture(scope="session")
def small_index(small_corpus, small_split):
    index, report = ingest(small_corpus.messages, small_split)
    return index


@pytest.fixture()
def thread_fixture():
    """1 root to two recipients; recipient a replies, b does not."""
    messages = [
        msg("root", 100, "boss", ["a", "b"]),
        msg("reply-a", 200, "a", ["boss"], reply_to="root"),
        # unrelated mail so b qualifies as a replier elsewhere
        msg("other", 150, "boss", ["b"]),
        msg("reply-b-other", 220, "b", ["boss"], reply_to="other"),
        msg("noise", 300, "carol", ["a"]),
    ]
    return messages, SplitSpec(train_end=250, validation_end=400, test_end=500)
