import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dyhatr.errors import ContractError, ShapeError
from dyhatr.tensor import Tensor
from dyhatr.temporal import (
    RnnParams,
    TemporalAttentionParams,
    attention_mask,
    encode_sequences,
    run_rnn,
    temporal_self_attention,
)

from gradcheck import check


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def vsig(v):
    return np.array([sig(x) for x in v])


def lstm_oracle(hs, W, b):
    """Gate by gate for one node; W[g] stored (2D, D) so the gate is W[g].T @ [h || s]."""
    D = b["i"].shape[0]
    s, c = np.zeros(D), np.zeros(D)
    out = []
    for h in hs:
        x = np.concatenate([h, s])
        i = vsig(W["i"].T @ x + b["i"])
        f = vsig(W["f"].T @ x + b["f"])
        o = vsig(W["o"].T @ x + b["o"])
        ct = np.tanh(W["c"].T @ x + b["c"])
        c = f * c + i * ct
        s = o * np.tanh(c)
        out.append(s)
    return out


def gru_oracle(hs, W, b):
    D = b["z"].shape[0]
    s = np.zeros(D)
    out = []
    for h in hs:
        x = np.concatenate([h, s])
        z = vsig(W["z"].T @ x + b["z"])
        r = vsig(W["r"].T @ x + b["r"])
        st_ = np.tanh(W["s"].T @ np.concatenate([h, r * s]) + b["s"])
        s = (1 - z) * s + z * st_
        out.append(s)
    return out


def attention_oracle(S, Wq, Wk, Wv, orientation):
    """Loop transcription of softmax(QK^T / sqrt(D') + M) V for one node and one head."""
    T = S.shape[0]
    d = Wq.shape[1]
    Q, K, V = S @ Wq, S @ Wk, S @ Wv
    G = np.zeros((T, T))
    for u in range(T):
        allowed = [v for v in range(T) if (u <= v if orientation == "eq7" else u >= v)]
        logits = {v: float(Q[u] @ K[v]) / math.sqrt(d) for v in allowed}
        top = max(logits.values())
        z = sum(math.exp(l - top) for l in logits.values())
        for v in allowed:
            G[u, v] = math.exp(logits[v] - top) / z
    return G, G @ V


def rnn_params(variant, F, D, seed):
    rng = np.random.default_rng(seed)
    p = RnnParams.init(rng, variant, F, D)
    for g in p.b:
        p.b[g].data[:] = rng.normal(scale=0.5, size=D)
    return p


class TestRecurrences:
    @pytest.mark.parametrize("variant, oracle", [("lstm", lstm_oracle), ("gru", gru_oracle)])
    def test_oracle(self, variant, oracle):
        rng = np.random.default_rng(0)
        p = rnn_params(variant, 4, 4, 1)
        H = rng.normal(size=(5, 3, 4))          # T, N, F
        states = run_rnn([Tensor(h) for h in H], p)
        W = {g: p.W[g].data for g in p.W}
        b = {g: p.b[g].data for g in p.b}
        for n in range(3):
            expected = oracle(H[:, n, :], W, b)
            for t in range(5):
                np.testing.assert_allclose(states[t].data[n], expected[t], rtol=0, atol=1e-10)

    def test_projection_when_widths_differ(self):
        p = rnn_params("gru", 6, 4, 2)
        assert p.proj.shape == (6, 4)
        out = run_rnn([Tensor(np.ones((2, 6)))], p)
        assert out[0].shape == (2, 4)

    def test_width_mismatch_without_projection(self):
        p = rnn_params("gru", 4, 4, 2)
        with pytest.raises(ShapeError):
            run_rnn([Tensor(np.ones((2, 5)))], p)

    def test_unknown_variant(self):
        with pytest.raises(ContractError):
            RnnParams.init(np.random.default_rng(0), "rnn", 2, 2)

    @pytest.mark.parametrize("variant", ["lstm", "gru"])
    def test_gradients(self, variant):
        rng = np.random.default_rng(3)
        p = rnn_params(variant, 3, 3, 4)
        H = [Tensor(rng.normal(size=(2, 3)), requires_grad=True, name=f"h{t}") for t in range(3)]
        w = rng.normal(size=(2, 3))
        f = lambda: (run_rnn(H, p)[-1] * w).sum()
        err = check(f, [t for _, t in p.named()] + H)
        assert max(err.values()) < 1e-6


class TestMask:
    @pytest.mark.parametrize("T", [1, 2, 5, 9])
    def test_orientation(self, T):
        u, v = np.indices((T, T))
        eq7 = attention_mask(T, "eq7")
        causal = attention_mask(T, "causal")
        assert (eq7[u <= v] == 0).all() and np.isneginf(eq7[u > v]).all()
        assert (causal[u >= v] == 0).all() and np.isneginf(causal[u < v]).all()

    def test_unknown(self):
        with pytest.raises(ContractError):
            attention_mask(3, "future")


class TestTemporalAttention:
    @pytest.mark.parametrize("orientation", ["eq7", "causal"])
    def test_oracle_single_head(self, orientation):
        rng = np.random.default_rng(5)
        S = rng.normal(size=(6, 4))
        Wq, Wk, Wv = (rng.normal(size=(4, 3)) for _ in range(3))
        Z, G = temporal_self_attention(
            Tensor(S), Tensor(Wq), Tensor(Wk), Tensor(Wv), attention_mask(6, orientation)
        )
        G_or, Z_or = attention_oracle(S, Wq, Wk, Wv, orientation)
        np.testing.assert_allclose(G.data[0], G_or, rtol=0, atol=1e-10)
        np.testing.assert_allclose(Z.data, Z_or, rtol=0, atol=1e-10)

    def test_packed_heads_match_per_head(self):
        rng = np.random.default_rng(6)
        p = TemporalAttentionParams.init(rng, 4, 2, 3)
        S = rng.normal(size=(5, 4, 4))
        M = attention_mask(4, "eq7")
        Z, G = temporal_self_attention(Tensor(S), p.W_q, p.W_k, p.W_v, M, p.heads)
        assert Z.shape == (5, 4, 6) and G.shape == (5, 3, 4, 4)
        for h in range(3):
            Wq, Wk, Wv = (w.data for w in p.head(h))
            for n in range(5):
                G_or, Z_or = attention_oracle(S[n], Wq, Wk, Wv, "eq7")
                np.testing.assert_allclose(G.data[n, h], G_or, atol=1e-10)
                np.testing.assert_allclose(Z.data[n, :, 2 * h : 2 * h + 2], Z_or, atol=1e-10)

    def test_eq7_last_row_only_sees_itself(self):
        rng = np.random.default_rng(7)
        p = TemporalAttentionParams.init(rng, 3, 3, 1)
        S = rng.normal(size=(2, 4, 3))
        Z, G = temporal_self_attention(Tensor(S), p.W_q, p.W_k, p.W_v, attention_mask(4, "eq7"))
        np.testing.assert_array_equal(G.data[:, 0, -1], [[0, 0, 0, 1]] * 2)
        np.testing.assert_allclose(Z.data[:, -1], S[:, -1] @ p.W_v.data, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(8)
        p = TemporalAttentionParams.init(rng, 3, 2, 2)
        S = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True, name="S")
        w = rng.normal(size=(2, 4, 4))
        for orientation in ("eq7", "causal"):
            M = attention_mask(4, orientation)
            f = lambda: (temporal_self_attention(S, p.W_q, p.W_k, p.W_v, M, 2)[0] * w).sum()
            err = check(f, [S, p.W_q, p.W_k, p.W_v])
            assert max(err.values()) < 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.sampled_from(["eq7", "causal"]))
    def test_rows_normalised_and_masked(self, seed, T, orientation):
        rng = np.random.default_rng(seed)
        p = TemporalAttentionParams.init(rng, 3, 2, 2)
        S = Tensor(rng.normal(scale=4, size=(3, T, 3)))
        M = attention_mask(T, orientation)
        _, G = temporal_self_attention(S, p.W_q, p.W_k, p.W_v, M, 2)
        np.testing.assert_allclose(G.data.sum(axis=-1), 1.0, atol=1e-9)
        assert (G.data[..., np.isneginf(M)] == 0.0).all()


class TestEncodeSequences:
    def setup_method(self):
        rng = np.random.default_rng(9)
        self.inputs = [Tensor(rng.normal(size=(3, 4))) for _ in range(4)]
        self.rnn = rnn_params("gru", 4, 4, 10)
        self.att = TemporalAttentionParams.init(rng, 4, 2, 2)

    def test_concat(self):
        out = encode_sequences(self.inputs, None, None)
        assert out.z.shape == (3, 16)
        np.testing.assert_array_equal(out.z.data[:, 4:8], self.inputs[1].data)

    def test_last_state(self):
        out = encode_sequences(self.inputs, self.rnn, None)
        np.testing.assert_array_equal(out.z.data, run_rnn(self.inputs, self.rnn)[-1].data)

    def test_attention_only_and_full(self):
        for rnn in (None, self.rnn):
            out = encode_sequences(self.inputs, rnn, self.att, "causal")
            assert out.z.shape == (3, 4)
            np.testing.assert_array_equal(out.z.data, out.Z.data[:, -1])

    def test_empty(self):
        with pytest.raises(ContractError):
            encode_sequences([], None, None)
