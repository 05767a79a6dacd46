"""Email representations against direct-arithmetic and naive-convolution oracles."""

import math

import numpy as np
import pytest

from triage_rec.embeddings import EmbeddingTable
from triage_rec.errors import DataError
from triage_rec.represent import (
    CnnParams,
    EmailVector,
    cnn_backward,
    cnn_forward,
    embed_mean,
    tfidf_vector,
    weighted_sum,
)
from triage_rec.textproc import build_vocabulary


@pytest.fixture()
def vocab_ab():
    return build_vocabulary([["a", "b"], ["a", "c"]], size=10, ngram_max=1,
                            stop_df_fraction=1.0)


class TestTfidf:
    def test_out_of_vocabulary_gives_zero_vector(self, vocab_ab):
        v = tfidf_vector(["zzz", "qqq"], vocab_ab)
        assert v.norm() == 0.0
        assert v.indices.size == 0

    def test_hand_computed_weights(self, vocab_ab):
        v = tfidf_vector(["a", "a", "b"], vocab_ab)
        raw = np.zeros(len(vocab_ab))
        raw[vocab_ab.index["a"]] = 2.0 * 1.0
        raw[vocab_ab.index["b"]] = 1.0 * (math.log(3 / 2) + 1)
        np.testing.assert_allclose(v.to_dense(), raw / np.linalg.norm(raw), atol=1e-12)

    def test_deterministic(self, vocab_ab):
        a = tfidf_vector(["a", "b", "a"], vocab_ab)
        b = tfidf_vector(["a", "b", "a"], vocab_ab)
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.values, b.values)

    def test_norm_zero_or_one(self, vocab_ab):
        for tokens in (["a"], ["a", "b", "c", "a"], ["none"], []):
            v = tfidf_vector(tokens, vocab_ab)
            assert v.norm() == pytest.approx(0.0) or v.norm() == pytest.approx(1.0)

    def test_ngrams_counted(self):
        vocab = build_vocabulary([["x", "y"], ["x", "z"]], size=10, ngram_max=2,
                                 stop_df_fraction=1.0)
        v = tfidf_vector(["x", "y"], vocab)
        assert vocab.index["x y"] in v.indices


class TestEmbedMean:
    def make_table(self):
        vecs = np.zeros((5, 3))
        vecs[2] = [1.0, 2.0, 3.0]
        vecs[3] = [-1.0, -2.0, -3.0]
        vecs[4] = [3.0, 0.0, 3.0]
        return EmbeddingTable(vecs)

    def test_single_token(self):
        t = self.make_table()
        v = embed_mean(np.array([2, 0, 0]), t)
        np.testing.assert_array_equal(v.dense, [1.0, 2.0, 3.0])

    def test_opposite_vectors_cancel(self):
        t = self.make_table()
        v = embed_mean(np.array([2, 3, 0, 0]), t)
        np.testing.assert_array_equal(v.dense, [0.0, 0.0, 0.0])

    def test_three_token_mean_oracle(self):
        t = self.make_table()
        v = embed_mean(np.array([2, 3, 4]), t)
        expect = (t.vectors[2] + t.vectors[3] + t.vectors[4]) / 3.0
        np.testing.assert_allclose(v.dense, expect, atol=1e-15)

    def test_all_padding_zero(self):
        t = self.make_table()
        v = embed_mean(np.array([0, 0]), t)
        assert v.norm() == 0.0

    def test_permutation_invariance_exact(self):
        t = self.make_table()
        a = embed_mean(np.array([2, 3, 4]), t)
        b = embed_mean(np.array([4, 2, 3]), t)
        np.testing.assert_array_equal(a.dense, b.dense)


def naive_cnn(seq, table, params):
    """Direct sliding-window reference implementation."""
    emb = table.vectors[seq]
    out = []
    for k, w in enumerate(params.widths):
        for f in range(params.n_filters[k]):
            best = -np.inf
            for t in range(len(seq) - w + 1):
                pre = float((emb[t : t + w] * params.weights[k][:, :, f]).sum()) + params.biases[k][f]
                best = max(best, max(pre, 0.0))
            out.append(best)
    return np.array(out)


class TestCnn:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.table = EmbeddingTable(rng.normal(size=(12, 4)))
        self.rng = rng

    def test_zero_embeddings_zero_bias_gives_zeros(self):
        table = EmbeddingTable(np.zeros((6, 4)))
        params = CnnParams.init(4, widths=[1, 2], n_filters=[3, 2], rng=self.rng)
        out, _ = cnn_forward(np.array([1, 2, 3, 4, 5], dtype=np.int32), table, params)
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_one_hot_width1_filter_takes_axis_max(self):
        params = CnnParams.init(4, widths=[1], n_filters=[1], rng=self.rng)
        params.weights[0][:] = 0.0
        params.weights[0][0, 2, 0] = 1.0  # pick embedding axis 2
        params.biases[0][:] = 0.0
        seq = np.array([1, 2, 3], dtype=np.int32)
        out, _ = cnn_forward(seq, self.table, params)
        expect = max(self.table.vectors[seq][:, 2].max(), 0.0)
        assert out[0] == pytest.approx(expect)

    def test_matches_naive_oracle(self):
        params = CnnParams.init(4, widths=[1, 2, 3], n_filters=[3, 2, 2], rng=self.rng)
        seq = np.array([1, 4, 7, 2, 9], dtype=np.int32)
        out, _ = cnn_forward(seq, self.table, params)
        np.testing.assert_allclose(out, naive_cnn(seq, self.table, params), atol=1e-12)

    def test_output_dim_independent_of_length(self):
        params = CnnParams.init(4, widths=[1, 2], n_filters=[3, 2], rng=self.rng)
        for L in (2, 5, 9):
            seq = np.arange(1, L + 1, dtype=np.int32) % 11 + 1
            out, _ = cnn_forward(seq, self.table, params)
            assert out.shape == (5,)

    def test_permutation_sensitivity_counterexample(self):
        params = CnnParams.init(4, widths=[2], n_filters=[4], rng=self.rng)
        a, _ = cnn_forward(np.array([1, 2, 3], dtype=np.int32), self.table, params)
        b, _ = cnn_forward(np.array([2, 1, 3], dtype=np.int32), self.table, params)
        assert not np.allclose(a, b)

    def test_short_sequence_raises(self):
        params = CnnParams.init(4, widths=[3], n_filters=[2], rng=self.rng)
        with pytest.raises(DataError):
            cnn_forward(np.array([1, 2], dtype=np.int32), self.table, params)

    def test_nonfinite_params_rejected(self):
        with pytest.raises(DataError):
            CnnParams([1], [1], [np.array([[[np.nan]]])], [np.zeros(1)])

    def test_zero_upstream_gives_zero_grads(self):
        params = CnnParams.init(4, widths=[2], n_filters=[3], rng=self.rng)
        seq = np.array([[1, 2, 3, 4]], dtype=np.int32)
        _, cache = cnn_forward(seq, self.table, params, want_cache=True)
        grads = cnn_backward(np.zeros((1, 3)), params, cache)
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_backward_matches_finite_differences(self):
        params = CnnParams.init(4, widths=[1, 2], n_filters=[2, 2], rng=self.rng)
        seqs = np.array([[1, 2, 3, 4, 5], [6, 7, 8, 9, 1]], dtype=np.int32)
        g_out = self.rng.normal(size=(2, 4))
        _, cache = cnn_forward(seqs, self.table, params, want_cache=True)
        grads = cnn_backward(g_out, params, cache)
        eps = 1e-6
        for key in grads:
            arr = params.weights[0] if key == "cnn_w1_0" else None
            # walk the underlying param via name lookup
            pd = params.param_dict()
            arr = pd[key]
            flat = arr.reshape(-1)
            for idx in self.rng.choice(flat.size, size=min(5, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + eps
                up, _ = cnn_forward(seqs, self.table, params)
                flat[idx] = orig - eps
                down, _ = cnn_forward(seqs, self.table, params)
                flat[idx] = orig
                num = float((((up - down) / (2 * eps)) * g_out).sum())
                ana = grads[key].reshape(-1)[idx]
                assert abs(num - ana) / max(abs(num), abs(ana), 1e-9) < 1e-4, key

    def test_pool_tie_routes_to_first_maximizer(self):
        # identical embedding rows make every window tie; argmax picks index 0
        vecs = np.zeros((4, 2))
        vecs[1] = [1.0, 1.0]
        table = EmbeddingTable(vecs)
        params = CnnParams([1], [1], [np.ones((1, 2, 1))], [np.zeros(1)])
        seq = np.array([[1, 1, 1]], dtype=np.int32)
        out, cache = cnn_forward(seq, table, params, want_cache=True)
        assert cache.argmax[0][0, 0] == 0
        grads = cnn_backward(np.ones((1, 1)), params, cache)
        # gradient flows from the first window only: dW = emb[first window]
        np.testing.assert_array_equal(grads["cnn_w1_0"][0, :, 0], [1.0, 1.0])


class TestWeightedSum:
    def test_sparse_merge(self):
        a = EmailVector.sparse("tfidf", 5, np.array([0, 2]), np.array([1.0, 1.0]))
        b = EmailVector.sparse("tfidf", 5, np.array([2, 4]), np.array([1.0, 2.0]))
        out = weighted_sum([a, b], np.array([0.5, 0.5]))
        np.testing.assert_allclose(out.to_dense(), [0.5, 0, 1.0, 0, 1.0])

    def test_dense_and_dimension_mismatch(self):
        a = EmailVector.densevec("embed", np.array([1.0, 2.0]))
        b = EmailVector.densevec("embed", np.array([3.0, 4.0]))
        out = weighted_sum([a, b], np.array([1.0, 1.0]))
        np.testing.assert_array_equal(out.dense, [4.0, 6.0])
        c = EmailVector.densevec("embed", np.array([1.0]))
        with pytest.raises(DataError):
            weighted_sum([a, c], np.array([1.0, 1.0]))

    def test_dot_sparse_dense_combinations(self):
        s = EmailVector.sparse("tfidf", 4, np.array([1, 3]), np.array([2.0, 1.0]))
        d = EmailVector.densevec("x", np.array([1.0, 1.0, 1.0, 2.0]))
        assert s.dot(d) == pytest.approx(4.0)
        assert d.dot(s) == pytest.approx(4.0)
        s2 = EmailVector.sparse("tfidf", 4, np.array([3]), np.array([5.0]))
        assert s.dot(s2) == pytest.approx(5.0)
