import numpy as np
import pytest

from panemo import autodiff as ad
from panemo.autodiff import Tensor
from panemo.model import (
    AttentionParams,
    GruDirectionParams,
    ModelConfig,
    attention_pool,
    bigru_layer,
    embed,
    forward,
    gru_cell,
    init_params,
)
from panemo.textprep import random_embeddings
from panemo.verify import build_downsized


def zero_gru(d_in, hidden):
    z = lambda *s: Tensor(np.zeros(s), trainable=True)
    return GruDirectionParams(
        W_ir=z(d_in, hidden), W_iz=z(d_in, hidden), W_in=z(d_in, hidden),
        W_hr=z(hidden, hidden), W_hz=z(hidden, hidden), W_hn=z(hidden, hidden),
        b_ir=z(hidden), b_iz=z(hidden), b_in=z(hidden),
        b_hr=z(hidden), b_hz=z(hidden), b_hn=z(hidden),
    )


def random_gru(rng, d_in, hidden, scale=0.5):
    r = lambda *s: Tensor(rng.uniform(-scale, scale, s), trainable=True)
    return GruDirectionParams(
        W_ir=r(d_in, hidden), W_iz=r(d_in, hidden), W_in=r(d_in, hidden),
        W_hr=r(hidden, hidden), W_hz=r(hidden, hidden), W_hn=r(hidden, hidden),
        b_ir=r(hidden), b_iz=r(hidden), b_in=r(hidden),
        b_hr=r(hidden), b_hz=r(hidden), b_hn=r(hidden),
    )


class TestEmbed:
    def test_pad_row_is_zero(self):
        emb = Tensor(random_embeddings(10, 4, seed=0).weights)
        xs = embed(np.array([[0, 3]]), emb)
        np.testing.assert_array_equal(xs[0].data, np.zeros((1, 4)))

    def test_equivalent_to_one_hot_matmul(self):
        emb = Tensor(random_embeddings(12, 5, seed=1).weights)
        rng = np.random.default_rng(2)
        idx = rng.integers(0, 12, size=(1, 20))
        xs = embed(idx, emb)
        for t in range(20):
            one_hot = np.zeros((1, 12))
            one_hot[0, idx[0, t]] = 1.0
            np.testing.assert_array_equal(xs[t].data, one_hot @ emb.data)

    def test_identical_sequences_identical_slices(self):
        emb = Tensor(random_embeddings(8, 3, seed=3).weights)
        idx = np.array([[2, 4, 6], [2, 4, 6]])
        xs = embed(idx, emb)
        for x in xs:
            np.testing.assert_array_equal(x.data[0], x.data[1])

    def test_out_of_range_index(self):
        emb = Tensor(random_embeddings(5, 3, seed=0).weights)
        with pytest.raises(IndexError):
            embed(np.array([[7]]), emb)


class TestGruCell:
    def test_zero_weights(self):
        p = zero_gru(3, 4)
        h_prev = Tensor(np.full((1, 4), 0.8))
        h = gru_cell(Tensor(np.ones((1, 3))), h_prev, p)
        # r = z = sigmoid(0) = 0.5, n = tanh(0) = 0, h = 0.5 * h_prev
        np.testing.assert_allclose(h.data, np.full((1, 4), 0.4), atol=1e-15)

    def test_update_gate_saturated_keeps_state(self):
        p = zero_gru(3, 4)
        p.b_iz.data[...] = 30.0
        p.b_hz.data[...] = 30.0
        h_prev = Tensor(np.array([[0.1, -0.2, 0.3, 0.5]]))
        h = gru_cell(Tensor(np.ones((1, 3))), h_prev, p)
        np.testing.assert_allclose(h.data, h_prev.data, atol=1e-12)

    def test_against_straight_line_transcription(self):
        rng = np.random.default_rng(6)
        p = random_gru(rng, 3, 4, scale=0.3)
        x = rng.uniform(-1, 1, (2, 3))
        h0 = rng.uniform(-1, 1, (2, 4))
        got = gru_cell(Tensor(x), Tensor(h0), p).data

        # independent transcription of the gate equations
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        r = sig(x @ p.W_ir.data + p.b_ir.data + h0 @ p.W_hr.data + p.b_hr.data)
        z = sig(x @ p.W_iz.data + p.b_iz.data + h0 @ p.W_hz.data + p.b_hz.data)
        n = np.tanh(x @ p.W_in.data + p.b_in.data + r * (h0 @ p.W_hn.data + p.b_hn.data))
        expected = (1.0 - z) * n + z * h0
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_gate_ranges_and_bounded_state(self):
        rng = np.random.default_rng(7)
        p = random_gru(rng, 3, 4, scale=2.0)
        h = Tensor(np.zeros((1, 4)))
        for _ in range(10):
            h = gru_cell(Tensor(rng.uniform(-1, 1, (1, 3))), h, p)
            assert np.all(np.abs(h.data) < 1.0)  # convex combination from h0 = 0


class TestBigruLayer:
    def test_single_step(self):
        rng = np.random.default_rng(8)
        fwd, bwd = random_gru(rng, 3, 4), random_gru(rng, 3, 4)
        x = Tensor(rng.uniform(-1, 1, (1, 3)))
        out = bigru_layer([x], fwd, bwd, np.ones((1, 1)))
        h0 = Tensor(np.zeros((1, 4)))
        expected = np.concatenate(
            [gru_cell(x, h0, fwd).data, gru_cell(x, h0, bwd).data], axis=1
        )
        np.testing.assert_allclose(out[0].data, expected, atol=1e-15)

    def test_masked_suffix_matches_short_sequence(self):
        rng = np.random.default_rng(9)
        fwd, bwd = random_gru(rng, 3, 4), random_gru(rng, 3, 4)
        xs_short = [Tensor(rng.uniform(-1, 1, (1, 3))) for _ in range(3)]
        pad = [Tensor(np.zeros((1, 3))) for _ in range(2)]
        out_short = bigru_layer(xs_short, fwd, bwd, np.ones((1, 3)))
        out_padded = bigru_layer(
            xs_short + pad, fwd, bwd, np.array([[1.0, 1.0, 1.0, 0.0, 0.0]])
        )
        for t in range(3):
            np.testing.assert_allclose(out_padded[t].data, out_short[t].data, atol=1e-12)
        for t in (3, 4):
            np.testing.assert_array_equal(out_padded[t].data, np.zeros((1, 8)))

    def test_zero_input_zero_params(self):
        fwd, bwd = zero_gru(3, 4), zero_gru(3, 4)
        xs = [Tensor(np.zeros((2, 3))) for _ in range(4)]
        out = bigru_layer(xs, fwd, bwd, np.ones((2, 4)))
        for o in out:
            np.testing.assert_array_equal(o.data, np.zeros((2, 8)))


class TestAttentionPool:
    def make_params(self, rng, d):
        return AttentionParams(
            w_a=Tensor(rng.uniform(-1, 1, (d, 1)), trainable=True),
            b=Tensor(rng.uniform(-1, 1, 1), trainable=True),
        )

    def test_single_position(self):
        rng = np.random.default_rng(10)
        u = Tensor(rng.uniform(-1, 1, (1, 5)))
        v, a = attention_pool([u], self.make_params(rng, 5), np.ones((1, 1)))
        np.testing.assert_allclose(v.data, u.data, atol=1e-15)
        np.testing.assert_allclose(a, [[1.0]])

    def test_identical_rows(self):
        rng = np.random.default_rng(11)
        row = rng.uniform(-1, 1, (1, 4))
        us = [Tensor(row) for _ in range(5)]
        v, _ = attention_pool(us, self.make_params(rng, 4), np.ones((1, 5)))
        np.testing.assert_allclose(v.data, row, atol=1e-12)

    def test_hand_set_scores(self):
        # scores ln2 and 0 -> weights 2/3, 1/3
        u1, u2 = np.array([[1.0, 0.0]]), np.array([[0.0, 3.0]])
        p = AttentionParams(w_a=Tensor(np.zeros((2, 1))), b=Tensor(np.zeros(1)))
        us = [Tensor(u1), Tensor(u2)]
        # score u1 via w_a so that e1 = ln2, e2 = 0
        p.w_a.data[0, 0] = np.log(2.0)
        v, a = attention_pool(us, p, np.ones((1, 2)))
        np.testing.assert_allclose(a, [[2 / 3, 1 / 3]], atol=1e-15)
        np.testing.assert_allclose(v.data, (2 / 3) * u1 + (1 / 3) * u2, atol=1e-15)

    def test_bias_shift_invariance(self):
        rng = np.random.default_rng(12)
        us = [Tensor(rng.uniform(-1, 1, (1, 4))) for _ in range(4)]
        p = self.make_params(rng, 4)
        v1, a1 = attention_pool(us, p, np.ones((1, 4)))
        p.b.data[...] += 17.0
        v2, a2 = attention_pool(us, p, np.ones((1, 4)))
        np.testing.assert_allclose(a1, a2, atol=1e-12)
        np.testing.assert_allclose(v1.data, v2.data, atol=1e-12)

    def test_convex_hull(self):
        rng = np.random.default_rng(13)
        us = [Tensor(rng.uniform(-2, 2, (1, 3))) for _ in range(6)]
        v, _ = attention_pool(us, self.make_params(rng, 3), np.ones((1, 6)))
        stacked = np.stack([u.data[0] for u in us])
        assert np.all(v.data[0] >= stacked.min(axis=0) - 1e-12)
        assert np.all(v.data[0] <= stacked.max(axis=0) + 1e-12)


class TestForward:
    def test_zero_head_gives_half(self):
        params = build_downsized(seed=0)
        params.W_d.data[...] = 0.0
        params.b_d.data[...] = 0.0
        yhat, _, _ = forward(np.array([[2, 3, 4, 0, 0]]), np.array([[1, 1, 1, 0, 0]]), params)
        np.testing.assert_allclose(yhat.data, np.full((1, 11), 0.5), atol=1e-15)

    def test_shapes(self):
        params = build_downsized(seed=0)
        rng = np.random.default_rng(14)
        idx = rng.integers(2, 20, size=(2, 7))
        yhat, a1, a2 = forward(idx, np.ones((2, 7)), params)
        assert yhat.data.shape == (2, 11)
        assert a1.shape == (2, 7) and a2.shape == (2, 7)
        assert np.all((yhat.data > 0) & (yhat.data < 1))

    def test_padding_invariance_eval(self):
        params = build_downsized(seed=0)
        rng = np.random.default_rng(15)
        idx = rng.integers(2, 20, size=(1, 4))
        y1, _, _ = forward(idx, np.ones((1, 4)), params)
        idx_p = np.concatenate([idx, np.zeros((1, 3), dtype=np.int64)], axis=1)
        msk_p = np.concatenate([np.ones((1, 4)), np.zeros((1, 3))], axis=1)
        y2, _, _ = forward(idx_p, msk_p, params)
        assert np.abs(y1.data - y2.data).max() < 1e-12

    def test_eval_deterministic(self):
        params = build_downsized(seed=0)
        idx = np.array([[2, 5, 9]])
        msk = np.ones((1, 3))
        y1, _, _ = forward(idx, msk, params)
        y2, _, _ = forward(idx, msk, params)
        assert y1.data.tobytes() == y2.data.tobytes()

    def test_bad_mode(self):
        params = build_downsized(seed=0)
        with pytest.raises(ValueError):
            forward(np.array([[2]]), np.ones((1, 1)), params, mode="test")

    def test_dimension_chain_full_size(self):
        config = ModelConfig()  # d_emb 300, hidden 50
        assert config.d_h == 100
        assert config.d_u1 == 400
        assert config.d_u2 == 500
        assert config.d_v == 900
        params = init_params(random_embeddings(30, 300, seed=0), config, seed=0)
        assert params.attn1.w_a.data.shape == (400, 1)
        assert params.attn2.w_a.data.shape == (500, 1)
        assert params.W_d.data.shape == (900, 11)

    def test_init_deterministic(self):
        a = build_downsized(seed=5)
        b = build_downsized(seed=5)
        for (n1, t1), (n2, t2) in zip(a.named_parameters(), b.named_parameters()):
            assert n1 == n2
            assert t1.data.tobytes() == t2.data.tobytes()


def test_full_model_gradients_vs_finite_differences_small():
    """A very small taped end-to-end gradient check (full check in acceptance)."""
    params = build_downsized(seed=2, T=3)
    idx = np.array([[2, 3, 0]])
    msk = np.array([[1.0, 1.0, 0.0]])

    def f():
        yhat, _, _ = forward(idx, msk, params)
        return ad.tensor_sum(yhat)

    subset = [params.gru1_fwd.W_hn, params.attn1.w_a, params.W_d, params.gru2_bwd.b_hz]
    # end-to-end tolerance; per-op checks at 1e-6 live in test_autodiff
    assert ad.grad_check(f, subset, eps=1e-5) < 1e-4
