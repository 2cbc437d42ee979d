import math

import numpy as np
import pytest

from graphslt.alignment import group_pseudo_labels
from graphslt.encoder import (
    EncoderConfig,
    FusionLayer,
    GraphEncoder,
    OutputMode,
    SpatialEmbedding,
    WordEmbedding,
    add_positional_encoding,
    cross_modal_gated_fusion,
    make_encoder_batch,
)
from graphslt.errors import ContractError, DimensionError, VocabularyError
from graphslt.graph import build_graph, empty_graph
from graphslt.nn import MultiHeadAttention
from graphslt.tensor import Parameter, Tensor, check_gradients

TRACED = [7, 7, 0, 7, 0, 5, 5, 0]


def small_cfg(**kw):
    base = dict(d_input=5, d_model=8, n_heads=2, d_ff=12, n_fusion_layers=2, gloss_vocab=9, dropout=0.0)
    base.update(kw)
    return EncoderConfig(**base)


def traced_batch(rng, d_in=5):
    graph = build_graph(len(TRACED), group_pseudo_labels(TRACED))
    return make_encoder_batch([rng.normal(size=(len(TRACED), d_in))], [graph])


def np_layer_norm(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def naive_attention(mha, h):
    """Loop over heads and queries with explicit weights."""
    k_rows, d = h.shape
    heads = mha.n_heads
    dh = d // heads
    q = h @ mha.query.weight.data + mha.query.bias.data
    k = h @ mha.key.weight.data
    v = h @ mha.value.weight.data + mha.value.bias.data
    ctx = np.zeros((k_rows, d))
    for head in range(heads):
        cols = slice(head * dh, (head + 1) * dh)
        for i in range(k_rows):
            scores = [float(q[i, cols] @ k[j, cols]) / math.sqrt(dh) for j in range(k_rows)]
            top = max(scores)
            w = [math.exp(s - top) for s in scores]
            z = sum(w)
            for j in range(k_rows):
                ctx[i, cols] += (w[j] / z) * v[j, cols]
    return ctx @ mha.output.weight.data + mha.output.bias.data


def naive_fusion(c_x, c_o, edges, wx1, wx2, wo1, wo2):
    m_x = np.zeros_like(c_x)
    m_o = np.zeros_like(c_o)
    for t, v in edges:
        alpha = 1.0 / (1.0 + np.exp(-(c_x[t] @ wx1 + c_o[v] @ wx2)))
        m_x[t] += alpha * c_o[v]
        beta = 1.0 / (1.0 + np.exp(-(c_o[v] @ wo1 + c_x[t] @ wo2)))
        m_o[v] += beta * c_x[t]
    return m_x, m_o


class TestSpatialEmbedding:
    def test_zero_features_zero_weights(self):
        emb = SpatialEmbedding(3, 4, np.random.default_rng(0), norm=False)
        emb.proj.weight.data[...] = 0.0
        assert np.array_equal(emb(Tensor(np.zeros((1, 2, 3)))).data, np.zeros((1, 2, 4)))

    def test_identity_passthrough(self):
        emb = SpatialEmbedding(4, 4, np.random.default_rng(0), norm=False)
        emb.proj.weight.data[...] = np.eye(4)
        x = np.abs(np.random.default_rng(1).normal(size=(1, 3, 4))) + 0.1
        np.testing.assert_array_equal(emb(Tensor(x)).data, x)

    def test_composed_oracle(self):
        rng = np.random.default_rng(2)
        emb = SpatialEmbedding(3, 4, rng)
        emb.norm.gain.data[...] = rng.normal(size=4)
        emb.norm.bias.data[...] = rng.normal(size=4)
        x = rng.normal(size=(2, 5, 3))
        mask = np.array([[1, 1, 1, 1, 0], [1, 1, 1, 1, 1]], dtype=bool)
        a = x @ emb.proj.weight.data
        valid = a[mask]
        norm = (a - valid.mean(axis=0)) / np.sqrt(valid.var(axis=0) + 1e-5)
        expected = np.maximum(norm * emb.norm.gain.data + emb.norm.bias.data, 0.0)
        got = emb(Tensor(x), mask).data
        np.testing.assert_allclose(got[mask], expected[mask], atol=1e-9, rtol=0)

    def test_no_bias_before_norm(self):
        assert SpatialEmbedding(3, 4, np.random.default_rng(0)).proj.bias is None
        assert SpatialEmbedding(3, 4, np.random.default_rng(0), norm=False).proj.bias is not None

    def test_width_mismatch(self):
        emb = SpatialEmbedding(3, 4, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            emb(Tensor(np.zeros((1, 2, 5))))


class TestWordEmbedding:
    def test_lookup(self):
        emb = WordEmbedding(6, 4, np.random.default_rng(0))
        ids = [3, 1, 3]
        out = emb(ids).data
        np.testing.assert_array_equal(out, emb.table.data[ids])
        assert np.array_equal(out[0], out[2])

    def test_unknown_id(self):
        with pytest.raises(VocabularyError):
            WordEmbedding(6, 4, np.random.default_rng(0))([6])


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = add_positional_encoding(Tensor(np.zeros((3, 6)))).data
        assert pe[0].tolist() == [0.0, 1.0] * 3

    def test_input_independent(self):
        x = np.random.default_rng(0).normal(size=(4, 6))
        a = add_positional_encoding(Tensor(x)).data - x
        b = add_positional_encoding(Tensor(np.zeros((4, 6)))).data
        np.testing.assert_allclose(a, b, atol=1e-15)

    def test_direct_formula(self):
        pe = add_positional_encoding(Tensor(np.zeros((2, 4)))).data[1]
        expected = [math.sin(1.0), math.cos(1.0), math.sin(1.0 / 100.0), math.cos(1.0 / 100.0)]
        np.testing.assert_allclose(pe, expected, atol=1e-12, rtol=0)


class TestAttention:
    def test_single_node(self):
        rng = np.random.default_rng(0)
        mha = MultiHeadAttention(4, 2, rng)
        h = rng.normal(size=(1, 1, 4))
        out = mha(Tensor(h), Tensor(h)).data[0]
        v = h[0] @ mha.value.weight.data + mha.value.bias.data
        np.testing.assert_allclose(out, v @ mha.output.weight.data + mha.output.bias.data, atol=1e-12)

    def test_identical_rows(self):
        mha = MultiHeadAttention(4, 2, np.random.default_rng(1))
        h = np.tile(np.random.default_rng(2).normal(size=4), (1, 3, 1))
        out = mha(Tensor(h), Tensor(h)).data[0]
        np.testing.assert_allclose(out[0], out[1], atol=1e-12)
        np.testing.assert_allclose(out[0], out[2], atol=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(3)
        mha = MultiHeadAttention(6, 2, rng)
        h = rng.normal(size=(5, 6))
        out = mha(Tensor(h[None]), Tensor(h[None])).data[0]
        np.testing.assert_allclose(out, naive_attention(mha, h), atol=1e-9, rtol=0)
        np.testing.assert_allclose(mha.last_weights.sum(axis=-1), 1.0, atol=1e-9)

    def test_padding_is_ignored(self):
        rng = np.random.default_rng(4)
        mha = MultiHeadAttention(6, 3, rng)
        h = rng.normal(size=(1, 4, 6))
        padded = np.concatenate([h, rng.normal(size=(1, 2, 6))], axis=1)
        mask = np.array([[True] * 4 + [False] * 2])
        a = mha(Tensor(h), Tensor(h)).data
        b = mha(Tensor(padded), Tensor(padded), mask).data[:, :4]
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestGatedFusion:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.graph = build_graph(len(TRACED), group_pseudo_labels(TRACED))
        self.c_x = rng.normal(size=(3, 4))
        self.c_o = rng.normal(size=(8, 4))
        self.edges = np.array([(0, t, v) for t, v in self.graph.inter_edges])
        self.w = [rng.normal(size=(4, 4)) for _ in range(4)]

    def run(self, w):
        m_x, m_o = cross_modal_gated_fusion(
            Tensor(self.c_x[None]), Tensor(self.c_o[None]), self.edges,
            (Tensor(w[0]), Tensor(w[1])), (Tensor(w[2]), Tensor(w[3])),
        )
        return m_x.data[0], m_o.data[0]

    def test_zero_weights_give_half(self):
        zero = [np.zeros((4, 4))] * 4
        m_x, _ = self.run(zero)
        for t in range(3):
            expected = 0.5 * sum(self.c_o[v] for v in self.graph.visual_neighbors(t))
            np.testing.assert_allclose(m_x[t], expected, atol=1e-15)

    def test_pad_frames_get_zero(self):
        _, m_o = self.run(self.w)
        for v in (2, 4, 7):
            assert np.array_equal(m_o[v], np.zeros(4))

    def test_matches_edge_loop(self):
        m_x, m_o = self.run(self.w)
        ex, eo = naive_fusion(self.c_x, self.c_o, self.graph.inter_edges, *self.w)
        np.testing.assert_allclose(m_x, ex, atol=1e-9, rtol=0)
        np.testing.assert_allclose(m_o, eo, atol=1e-9, rtol=0)

    def test_no_edges(self):
        m_x, m_o = cross_modal_gated_fusion(
            None, Tensor(self.c_o[None]), np.zeros((0, 3), dtype=int),
            (Tensor(self.w[0]), Tensor(self.w[1])), (Tensor(self.w[2]), Tensor(self.w[3])),
        )
        assert m_x is None and np.array_equal(m_o.data, np.zeros((1, 8, 4)))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            cross_modal_gated_fusion(
                Tensor(np.zeros((1, 3, 5))), Tensor(self.c_o[None]), self.edges,
                (Tensor(self.w[0]), Tensor(self.w[1])), (Tensor(self.w[2]), Tensor(self.w[3])),
            )


class TestFusionLayer:
    def test_zero_init_passthrough(self):
        rng = np.random.default_rng(6)
        layer = FusionLayer(small_cfg(), rng).eval()
        for mha in (layer.attn_x, layer.attn_o):
            for lin in (mha.value, mha.output):
                lin.weight.data[...] = 0.0
                lin.bias.data[...] = 0.0
        for ffn in (layer.ffn_x, layer.ffn_o):
            ffn.outer.weight.data[...] = 0.0
            ffn.outer.bias.data[...] = 0.0
        batch = traced_batch(rng)
        h_x = rng.normal(size=(1, 3, 8))
        h_o = rng.normal(size=(1, 8, 8))
        new_x, new_o = layer(Tensor(h_x), Tensor(h_o), batch)
        np.testing.assert_allclose(new_o.data, np_layer_norm(np_layer_norm(h_o)), atol=1e-12)
        np.testing.assert_allclose(new_x.data, np_layer_norm(np_layer_norm(h_x)), atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(7)
        layer = FusionLayer(small_cfg(d_model=4, d_ff=6), rng).eval()
        batch = traced_batch(rng)
        h_x = Parameter(rng.normal(size=(1, 3, 4)), "h_x")
        h_o = Parameter(rng.normal(size=(1, 8, 4)), "h_o")
        wx = rng.normal(size=(1, 3, 4))
        wo = rng.normal(size=(1, 8, 4))

        def loss():
            x, o = layer(h_x, h_o, batch)
            return (x * wx).sum() + (o * wo).sum()

        params = [h_x, h_o] + [p for _, p in layer.named_parameters()]
        errors = check_gradients(loss, params)
        assert max(errors.values()) < 1e-4, errors

    def test_visual_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        enc = GraphEncoder(small_cfg(positional_encoding=False), rng).eval()
        graph = build_graph(len(TRACED), group_pseudo_labels(TRACED))
        frames = rng.normal(size=(8, 5))
        perm = rng.permutation(8)
        inverse = np.argsort(perm)
        permuted_graph = type(graph)(8, graph.textual_glosses, tuple(sorted((t, int(inverse[v])) for t, v in graph.inter_edges)))
        a = enc.node_states(make_encoder_batch([frames], [graph]))
        b = enc.node_states(make_encoder_batch([frames[perm]], [permuted_graph]))
        np.testing.assert_allclose(b.h_o.data[0], a.h_o.data[0][perm], atol=1e-10)
        np.testing.assert_allclose(b.h_x.data, a.h_x.data, atol=1e-10)


class TestGraphEncoder:
    def test_output_modes(self):
        rng = np.random.default_rng(9)
        enc = GraphEncoder(small_cfg(), rng).eval()
        batch = traced_batch(rng)
        rows, mask = enc(batch, OutputMode.VISUAL)
        assert rows.shape == (1, 8, 8) and mask.sum() == 8
        rows, mask = enc(batch, OutputMode.TEXTUAL)
        assert rows.shape == (1, 3, 8)
        rows, mask = enc(batch, OutputMode.CONCAT)
        assert mask.sum() == 11

    def test_mode_is_read_only_selector(self):
        rng = np.random.default_rng(10)
        enc = GraphEncoder(small_cfg(), rng).eval()
        batch = traced_batch(rng)
        vis, _ = enc(batch, "visual")
        txt, _ = enc(batch, "textual")
        both, _ = enc(batch, "concat")
        np.testing.assert_array_equal(both.data[0, :8], vis.data[0])
        np.testing.assert_array_equal(both.data[0, 8:], txt.data[0])

    def test_concat_repacks_padded_records(self):
        rng = np.random.default_rng(11)
        enc = GraphEncoder(small_cfg(), rng).eval()
        g1 = build_graph(8, group_pseudo_labels(TRACED))
        g2 = build_graph(4, group_pseudo_labels([1, 1, 0, 2]))
        batch = make_encoder_batch([rng.normal(size=(8, 5)), rng.normal(size=(4, 5))], [g1, g2])
        rows, mask = enc(batch, "concat")
        assert mask.sum(axis=1).tolist() == [11, 6]
        states = enc.last_states
        np.testing.assert_array_equal(rows.data[1, :4], states.h_o.data[1, :4])
        np.testing.assert_array_equal(rows.data[1, 4:6], states.h_x.data[1, :2])

    def test_textual_mode_without_glosses(self):
        rng = np.random.default_rng(12)
        enc = GraphEncoder(small_cfg(), rng)
        batch = make_encoder_batch([rng.normal(size=(4, 5))], [empty_graph(4)])
        with pytest.raises(ContractError, match="no textual nodes"):
            enc(batch, "textual")
        rows, _ = enc(batch, "visual")
        assert rows.shape == (1, 4, 8)

    def test_invariants_on_trace(self):
        rng = np.random.default_rng(13)
        enc = GraphEncoder(small_cfg(), rng).eval()
        states = enc.node_states(traced_batch(rng), trace=True)
        assert len(states.history) == 2
        for rec in states.history:
            np.testing.assert_allclose(rec["attn_o"].sum(axis=-1), 1.0, atol=1e-9)
            np.testing.assert_allclose(rec["attn_x"].sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(np.isfinite(states.h_o.data)) and np.all(np.isfinite(states.h_x.data))

    def test_full_encoder_gradients(self):
        rng = np.random.default_rng(14)
        enc = GraphEncoder(small_cfg(d_model=4, d_ff=6, n_fusion_layers=1), rng).eval()
        batch = traced_batch(rng)
        w = rng.normal(size=(1, 11, 4))

        def loss():
            rows, _ = enc(batch, "concat")
            return (rows * w).sum()

        errors = check_gradients(loss, enc.parameters())
        assert max(errors.values()) < 1e-4, errors

    def test_config_validation(self):
        with pytest.raises(ContractError):
            EncoderConfig(d_model=10, n_heads=4)
        with pytest.raises(ContractError):
            EncoderConfig(n_fusion_layers=0)
