import numpy as np
import pytest

from pgb import (
    PruneConfig,
    PrunedLayer,
    PrunedModel,
    ShapeError,
    discrepancy,
    encoder_forward,
    ffn_forward,
    grouped_weight_pruning,
    layerwise_discrepancy,
    linear_macs,
    matmul,
    mha_forward,
    pgb_compress,
    pgb_linear,
    random_grouping,
    repermute_dense,
    synthetic_activations,
    synthetic_model,
)
from pgb.infer import gelu, layer_norm, masked_dense_oracle
from pgb.model import iter_weights, tensor_name

from conftest import random_grouped_matrix


def _pruned_identity(model):
    """Prune with everything kept (G=1) so outputs must match the dense model."""
    imps = {tensor_name(i, s): np.square(w) for i, s, w in iter_weights(model)}
    return pgb_compress(model, imps, PruneConfig(gamma=1.0, tau=0.0))


class TestPgbLinear:
    def test_single_group_equals_dense(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(6, 9)) + 1.0
        gm = grouped_weight_pruning(w, np.abs(w), PruneConfig(gamma=1.0, tau=0.0))
        x = rng.normal(size=(4, 6))
        np.testing.assert_allclose(pgb_linear(x, gm), matmul(x, w), atol=1e-12)

    def test_worked_example_identity_input(self, worked_example):
        gm = grouped_weight_pruning(
            worked_example, worked_example.copy(), PruneConfig(gamma=1.0, tau=0.5)
        )
        out = pgb_linear(np.eye(4), gm)
        np.testing.assert_array_equal(out, repermute_dense(gm).values)

    def test_matches_masked_dense_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            gm, x = random_grouped_matrix(rng)
            np.testing.assert_allclose(
                pgb_linear(x, gm), masked_dense_oracle(x, gm), atol=1e-8
            )

    def test_width_mismatch_raises(self):
        rng = np.random.default_rng(2)
        gm = random_grouping(rng.normal(size=(6, 6)), 2, rng)
        with pytest.raises(ShapeError):
            pgb_linear(np.zeros((3, 5)), gm)

    def test_mac_counts(self):
        rng = np.random.default_rng(3)
        for g in (1, 2, 3, 6):
            gm = random_grouping(rng.normal(size=(768, 768)), g, rng)
            assert linear_macs(128, gm) == 128 * 768 * 768 // g
        assert linear_macs(128, rng.normal(size=(768, 768))) == 128 * 768 * 768
        assert linear_macs(128, None) == 0


class TestActivations:
    def test_gelu_fixed_points(self):
        assert gelu(np.array([[0.0]]))[0, 0] == 0.0
        x = np.array([[10.0, -10.0]])
        out = gelu(x)
        np.testing.assert_allclose(out[0, 0], 10.0, atol=1e-6)
        np.testing.assert_allclose(out[0, 1], 0.0, atol=1e-6)

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(4)
        out = layer_norm(rng.normal(2.0, 3.0, size=(5, 64)))
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)


class TestMhaForward:
    def test_zero_queries_give_uniform_attention(self):
        rng = np.random.default_rng(5)
        d, s = 6, 5
        model = synthetic_model(1, d, 2 * d, 1, seed=0)
        layer = model.layers[0]
        layer.wq = np.zeros((d, d))
        layer.wk = np.zeros((d, d))
        x = rng.normal(size=(s, d))
        out = mha_forward(x, layer, n_heads=1)
        pooled = (x @ layer.wv).mean(axis=0) @ layer.wo
        np.testing.assert_allclose(out, np.tile(pooled, (s, 1)), atol=1e-10)

    def test_matches_naive_two_head_oracle(self):
        rng = np.random.default_rng(6)
        d, s, heads = 8, 4, 2
        model = synthetic_model(1, d, 2 * d, heads, seed=1)
        layer = model.layers[0]
        x = rng.normal(size=(s, d))
        out = mha_forward(x, layer, n_heads=heads)

        dh = d // heads
        expected = np.zeros((s, d))
        for h in range(heads):
            q = x @ layer.wq[:, h * dh : (h + 1) * dh]
            k = x @ layer.wk[:, h * dh : (h + 1) * dh]
            v = x @ layer.wv[:, h * dh : (h + 1) * dh]
            logits = q @ k.T / np.sqrt(dh)
            att = np.exp(logits - logits.max(axis=1, keepdims=True))
            att /= att.sum(axis=1, keepdims=True)
            expected += (att @ v) @ layer.wo[h * dh : (h + 1) * dh, :]
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_identity_grouping_matches_dense(self):
        model = synthetic_model(1, 16, 64, 4, seed=2)
        pruned = _pruned_identity(model)
        x = synthetic_activations(5, 16, seed=3)
        dense_out = mha_forward(x, model.layers[0], 4)
        pruned_out = mha_forward(x, pruned.layers[0], 4)
        np.testing.assert_allclose(pruned_out, dense_out, atol=1e-6)

    def test_indivisible_heads_raise(self):
        model = synthetic_model(1, 16, 64, 4, seed=2)
        with pytest.raises(ShapeError):
            mha_forward(np.zeros((2, 16)), model.layers[0], n_heads=5)


class TestFfnForward:
    def test_zero_weights_zero_output(self):
        layer = PrunedLayer(
            wq=None, wk=None, wv=None, wo=None,
            w1=random_grouping(np.zeros((4, 8)), 1, np.random.default_rng(0)),
            w2=random_grouping(np.zeros((8, 4)), 1, np.random.default_rng(0)),
            b1=np.zeros(8), b2=np.zeros(4), ffn_selected=True,
        )
        out = ffn_forward(np.ones((3, 4)), layer)
        np.testing.assert_array_equal(out, np.zeros((3, 4)))

    def test_matches_direct_formula(self):
        model = synthetic_model(1, 8, 32, 2, seed=4)
        layer = model.layers[0]
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5, 8))
        expected = gelu(a @ layer.w1 + layer.b1) @ layer.w2 + layer.b2
        np.testing.assert_allclose(ffn_forward(a, layer), expected, atol=1e-10)

    def test_identity_regime_with_scaled_identity_weights(self):
        # large positive pre-activations put the nonlinearity in its linear regime
        d = 6
        layer = synthetic_model(1, d, d, 1, seed=5).layers[0]
        layer.w1 = np.eye(d) * 2.0
        layer.w2 = np.eye(d) * 0.5
        layer.b1 = np.zeros(d)
        layer.b2 = np.zeros(d)
        a = np.full((3, d), 20.0)
        np.testing.assert_allclose(ffn_forward(a, layer), a @ layer.w1 @ layer.w2, rtol=1e-6)

    def test_grouped_matches_masked_dense(self):
        rng = np.random.default_rng(8)
        model = synthetic_model(1, 8, 16, 2, seed=6)
        layer = model.layers[0]
        w1g = random_grouping(layer.w1, 2, rng)
        w2g = random_grouping(layer.w2, 2, rng)
        pruned_layer = PrunedLayer(
            wq=None, wk=None, wv=None, wo=None, w1=w1g, w2=w2g,
            b1=layer.b1, b2=layer.b2, ffn_selected=True,
        )
        masked_layer = synthetic_model(1, 8, 16, 2, seed=6).layers[0]
        masked_layer.w1 = repermute_dense(w1g).values
        masked_layer.w2 = repermute_dense(w2g).values
        a = rng.normal(size=(4, 8))
        np.testing.assert_allclose(
            ffn_forward(a, pruned_layer), ffn_forward(a, masked_layer), atol=1e-5
        )

    def test_dropped_block_is_identity(self):
        layer = PrunedLayer(
            wq=None, wk=None, wv=None, wo=None, w1=None, w2=None,
            b1=np.zeros(8), b2=np.zeros(4), ffn_selected=False,
        )
        a = np.random.default_rng(9).normal(size=(3, 4))
        np.testing.assert_array_equal(ffn_forward(a, layer), a)


class TestEncoderForward:
    def test_noop_compression_matches_dense(self):
        model = synthetic_model(2, 16, 64, 2, seed=10)
        pruned = _pruned_identity(model)
        x = synthetic_activations(6, 16, seed=11)
        np.testing.assert_allclose(
            encoder_forward(x, pruned), encoder_forward(x, model), atol=1e-5
        )

    def test_all_ffn_dropped_equals_attention_only_stack(self):
        model = synthetic_model(2, 16, 64, 2, seed=12)
        pruned = _pruned_identity(model)
        for layer in pruned.layers:
            layer.w1 = None
            layer.w2 = None
            layer.ffn_selected = False
        x = synthetic_activations(6, 16, seed=13)

        from pgb.infer import layer_norm as ln

        h = np.asarray(x, dtype=np.float64)
        for layer in pruned.layers:
            h = ln(h + mha_forward(h, layer, 2))
        np.testing.assert_allclose(encoder_forward(x, pruned), h, atol=1e-10)

    def test_width_mismatch_raises(self):
        model = synthetic_model(1, 16, 64, 2, seed=14)
        with pytest.raises(ShapeError):
            encoder_forward(np.zeros((3, 8)), model)

    def test_capture_records_linear_inputs(self):
        model = synthetic_model(2, 16, 64, 2, seed=15)
        x = synthetic_activations(5, 16, seed=16)
        captures = []
        encoder_forward(x, model, capture=captures)
        assert len(captures) == 2
        assert set(captures[0]) == {"wq", "wk", "wv", "wo", "w1", "w2"}
        np.testing.assert_array_equal(captures[0]["wq"], np.asarray(x, dtype=np.float64))
        assert captures[0]["w2"].shape == (5, 64)

    def test_discrepancy_properties(self):
        rng = np.random.default_rng(17)
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        assert discrepancy(a, a) == 0.0
        assert discrepancy(a, b) > 0.0
        with pytest.raises(ShapeError):
            discrepancy(a, np.zeros((3, 3)))

    def test_layerwise_uses_teacher_forcing(self):
        model = synthetic_model(2, 16, 64, 2, seed=18)
        pruned = _pruned_identity(model)
        x = synthetic_activations(5, 16, seed=19)
        gaps = layerwise_discrepancy(x, model, pruned)
        assert len(gaps) == 2
        np.testing.assert_allclose(gaps, 0.0, atol=1e-10)
