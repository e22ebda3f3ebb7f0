import numpy as np
import pytest

from pgb import (
    LayerWeights,
    ModelSpec,
    PruneConfig,
    ShapeError,
    grouped_weight_pruning,
    model_flops,
    model_param_count,
    synthetic_activations,
    synthetic_model,
)
from pgb.model import env_seed, iter_weights, tensor_name


class TestSyntheticModel:
    def test_shapes_and_dims(self):
        m = synthetic_model(2, 32, 128, 4, seed=0)
        assert m.n_layers == 2 and m.d == 32 and m.d_ffn == 128 and m.n_heads == 4
        layer = m.layers[0]
        assert layer.wq.shape == (32, 32) and layer.w1.shape == (32, 128)
        assert layer.w2.shape == (128, 32)
        assert layer.b1.shape == (128,) and layer.b2.shape == (32,)

    def test_seed_reproducible(self):
        a = synthetic_model(1, 16, 64, 2, seed=9)
        b = synthetic_model(1, 16, 64, 2, seed=9)
        np.testing.assert_array_equal(a.layers[0].w1, b.layers[0].w1)

    def test_activations(self):
        x = synthetic_activations(8, 32, seed=1)
        assert x.shape == (8, 32)
        np.testing.assert_array_equal(x, synthetic_activations(8, 32, seed=1))

    def test_env_seed(self, monkeypatch):
        monkeypatch.delenv("PGB_SEED", raising=False)
        assert env_seed(3) == 3
        monkeypatch.setenv("PGB_SEED", "42")
        assert env_seed(3) == 42


class TestModelValidation:
    def test_wrong_attention_shape_raises(self):
        m = synthetic_model(1, 16, 64, 2, seed=0)
        bad = LayerWeights(
            wq=np.zeros((8, 16), dtype=np.float32),
            wk=m.layers[0].wk,
            wv=m.layers[0].wv,
            wo=m.layers[0].wo,
            w1=m.layers[0].w1,
            w2=m.layers[0].w2,
            b1=m.layers[0].b1,
            b2=m.layers[0].b2,
        )
        with pytest.raises(ShapeError):
            ModelSpec(layers=[bad], d=16, d_ffn=64, n_heads=2)

    def test_heads_must_divide_width(self):
        m = synthetic_model(1, 16, 64, 2, seed=0)
        with pytest.raises(ShapeError):
            ModelSpec(layers=m.layers, d=16, d_ffn=64, n_heads=3)


class TestCounting:
    def test_bert_base_shape_total(self):
        # 12 layers of 4 d*d attention matrices and 2 d*d_ffn feed-forward
        # matrices at d=768, d_ffn=3072
        per_layer = 4 * 768 * 768 + 2 * 768 * 3072
        assert 12 * per_layer == 84_934_656

    def test_param_count_walks_all_slots(self):
        m = synthetic_model(2, 32, 128, 4, seed=0)
        assert model_param_count(m) == 2 * (4 * 32 * 32 + 2 * 32 * 128) == 24_576
        assert len(list(iter_weights(m))) == 12

    def test_flops_dense(self):
        m = synthetic_model(1, 32, 128, 4, seed=0)
        expected = 16 * (4 * 32 * 32 + 2 * 32 * 128)
        assert model_flops(m, 16) == expected

    def test_flops_grouped_and_dropped(self):
        m = synthetic_model(1, 32, 128, 4, seed=2)
        imps = {
            tensor_name(i, slot): np.square(w) for i, slot, w in iter_weights(m)
        }
        from pgb import pgb_compress

        pm = pgb_compress(m, imps, PruneConfig(gamma=1.0))
        expected = 0
        for _, _, v in iter_weights(pm):
            if v is None:
                continue
            br, bc = v.block_shape
            expected += 16 * br * bc * v.group_count
        assert model_flops(pm, 16) == expected

    def test_single_matrix_mac_arithmetic(self):
        w = np.ones((768, 768), dtype=np.float32) * 0.1
        gm = grouped_weight_pruning(
            w, np.square(w), PruneConfig(gamma=1.0, tau=0.0, g_max=6)
        )
        assert gm.group_count == 1
        # the arithmetic the grouped operator promises at G=6
        assert 128 * 768 * 768 == 75_497_472
        assert 128 * 768 * 768 // 6 == 12_582_912
