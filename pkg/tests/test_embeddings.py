"""Skip-gram training and word2vec-format I/O."""

import numpy as np
import pytest

from triage_rec.embeddings import (
    EmbeddingTable,
    SkipGramConfig,
    load_embeddings,
    save_embeddings,
    sgns_loss_and_grads,
    train_skipgram,
)
from triage_rec.errors import DataError
from triage_rec.textproc import PAD_ID, build_unigram_table


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12))


class TestObjectiveGradients:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            d = int(rng.integers(3, 10))
            k = int(rng.integers(1, 6))
            center = rng.normal(size=d)
            context = rng.normal(size=d)
            negs = rng.normal(size=(k, d))
            _, g_c, g_x, g_n = sgns_loss_and_grads(center, context, negs)
            eps = 1e-6

            def loss(c=center, x=context, n=negs):
                return sgns_loss_and_grads(c, x, n)[0]

            for arr, grad in ((center, g_c), (context, g_x), (negs, g_n)):
                flat = arr.reshape(-1)
                gflat = np.asarray(grad).reshape(-1)
                idx = rng.integers(0, flat.size)
                orig = flat[idx]
                flat[idx] = orig + eps
                up = loss()
                flat[idx] = orig - eps
                down = loss()
                flat[idx] = orig
                num = (up - down) / (2 * eps)
                assert abs(num - gflat[idx]) / max(abs(num), abs(gflat[idx]), 1e-10) < 1e-4


class TestTraining:
    def test_zero_epochs_equals_random_init(self):
        docs = [["a", "b", "a", "b"]]
        cfg0 = SkipGramConfig(dim=8, epochs=0, min_count=1, seed=3)
        table = build_unigram_table(docs)
        t0 = train_skipgram(docs, cfg0, table)
        t0_again = train_skipgram(docs, cfg0, table)
        assert np.array_equal(t0.vectors, t0_again.vectors)

    def test_alternating_corpus_binds_cooccurring_tokens(self):
        docs = [["a", "b"] * 500]
        table = build_unigram_table(docs + [["ctrl"]])
        cfg = SkipGramConfig(dim=8, epochs=3, window=2, min_count=1, seed=3)
        trained = train_skipgram(docs + [["ctrl"]], cfg, table)
        a = trained.vectors[table.id_of("a")]
        b = trained.vectors[table.id_of("b")]
        ctrl = trained.vectors[table.id_of("ctrl")]  # never updated beyond init
        assert cosine(a, b) > cosine(a, ctrl)

    def test_disjoint_sublanguages_cluster(self):
        rng = np.random.default_rng(1)
        g1, g2 = ["a", "b", "c"], ["x", "y", "z"]
        docs = []
        for _ in range(300):
            grp = g1 if rng.random() < 0.5 else g2
            docs.append(list(rng.choice(grp, size=8)))
        table = build_unigram_table(docs)
        cfg = SkipGramConfig(dim=12, epochs=4, window=3, min_count=1, seed=5)
        emb = train_skipgram(docs, cfg, table)

        def mean_cos(pairs):
            return np.mean(
                [cosine(emb.vectors[table.id_of(u)], emb.vectors[table.id_of(v)])
                 for u, v in pairs]
            )

        within = mean_cos([("a", "b"), ("b", "c"), ("x", "y"), ("y", "z")])
        across = mean_cos([("a", "x"), ("b", "y"), ("c", "z"), ("a", "z")])
        assert within > across

    def test_seeded_runs_identical(self):
        docs = [["a", "b", "c", "a", "c"], ["b", "c", "b"]]
        table = build_unigram_table(docs)
        cfg = SkipGramConfig(dim=6, epochs=2, min_count=1, seed=9)
        t1 = train_skipgram(docs, cfg, table)
        t2 = train_skipgram(docs, cfg, table)
        assert np.array_equal(t1.vectors, t2.vectors)

    def test_padding_row_stays_zero(self):
        docs = [["a", "b"] * 50]
        table = build_unigram_table(docs)
        emb = train_skipgram(docs, SkipGramConfig(dim=4, epochs=1, min_count=1, seed=0), table)
        assert np.all(emb.vectors[PAD_ID] == 0.0)

    def test_empty_corpus_raises(self):
        with pytest.raises(DataError):
            train_skipgram([], SkipGramConfig(dim=4, min_count=1))

    def test_bad_dimension_raises(self):
        with pytest.raises(DataError):
            SkipGramConfig(dim=0)


class TestIO:
    def test_save_load_round_trip_bit_exact(self, tmp_path):
        docs = [["alpha", "beta", "gamma"] * 20]
        table = build_unigram_table(docs)
        emb = train_skipgram(docs, SkipGramConfig(dim=5, epochs=1, min_count=1, seed=2), table)
        path = tmp_path / "emb.vec"
        save_embeddings(str(path), emb, table)
        loaded, report = load_embeddings(str(path), table)
        assert np.array_equal(loaded.vectors[2:], emb.vectors[2:])
        assert report.matched == len(table.tokens)

    def test_basic_file_load(self, tmp_path):
        path = tmp_path / "v.vec"
        path.write_text("2 3\nfoo 1.0 2.0 3.0\nbar 0.5 0.25 0.125\n")
        table = build_unigram_table([["foo", "bar"]])
        emb, report = load_embeddings(str(path), table)
        assert emb.dim == 3
        assert emb.vectors[table.id_of("foo")].tolist() == [1.0, 2.0, 3.0]
        assert report.matched == 2

    def test_unknown_file_token_counted(self, tmp_path):
        path = tmp_path / "v.vec"
        path.write_text("2 2\nfoo 1 2\nstranger 3 4\n")
        table = build_unigram_table([["foo"]])
        emb, report = load_embeddings(str(path), table)
        assert report.unmatched_file_tokens == 1
        assert report.matched == 1

    def test_missing_table_token_zero_or_random(self, tmp_path):
        path = tmp_path / "v.vec"
        path.write_text("1 2\nfoo 1 2\n")
        table = build_unigram_table([["foo", "nowhere"]])
        emb_zero, rep = load_embeddings(str(path), table, unk="zero")
        assert rep.unmatched_table_tokens == 1
        assert np.all(emb_zero.vectors[table.id_of("nowhere")] == 0)
        emb_rand, _ = load_embeddings(str(path), table, unk="random", seed=1)
        assert np.any(emb_rand.vectors[table.id_of("nowhere")] != 0)

    def test_malformed_line_skipped(self, tmp_path):
        path = tmp_path / "v.vec"
        path.write_text("2 2\nfoo 1 2\nbar oops nope\n")
        table = build_unigram_table([["foo", "bar"]])
        _, report = load_embeddings(str(path), table)
        assert report.skipped_lines == 1

    def test_dimension_mismatch_raises(self, tmp_path):
        path = tmp_path / "v.vec"
        path.write_text("2 2\nfoo 1 2\nbar 1 2 3\n")
        table = build_unigram_table([["foo", "bar"]])
        with pytest.raises(DataError):
            load_embeddings(str(path), table)
