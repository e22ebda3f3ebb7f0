"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
import pytest

from pgb import GroupedMatrix, PrunedLayer, PrunedModel, random_grouping
from pgb.model import FFN_SLOTS, MHA_SLOTS


@pytest.fixture
def worked_example():
    """4x4 importance matrix whose optimal 2x2 top-left capture is 6 (of 10 total)."""
    return np.array(
        [[1, 0, 0, 2], [0, 1, 1, 0], [2, 0, 0, 1], [0, 1, 1, 0]], dtype=np.float64
    )


def naive_matmul(x, w):
    """Triple-loop product, independent of numpy's matmul."""
    s, m = x.shape
    m2, n = w.shape
    assert m == m2
    out = np.zeros((s, n), dtype=np.float64)
    for i in range(s):
        for j in range(n):
            acc = 0.0
            for k in range(m):
                acc += float(x[i, k]) * float(w[k, j])
            out[i, j] = acc
    return out


def finite_difference_gradient(loss, w, eps=1e-6):
    """Central-difference gradient of a scalar loss; only for tiny matrices."""
    w = np.asarray(w, dtype=np.float64)
    assert w.shape[0] <= 8 and w.shape[1] <= 8, "finite differences only at toy scale"
    g = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        wp = w.copy()
        wp[idx] += eps
        wm = w.copy()
        wm[idx] -= eps
        g[idx] = (loss(wp) - loss(wm)) / (2 * eps)
    return g


def random_grouped_matrix(rng, g=None, max_block=12, max_seq=8):
    """A grouped matrix with random blocks and permutations, plus a matching input."""
    g = int(rng.integers(1, 7)) if g is None else g
    m = g * int(rng.integers(1, max_block + 1))
    n = g * int(rng.integers(1, max_block + 1))
    w = rng.normal(0.0, 1.0, size=(m, n))
    gm = random_grouping(w, g, rng)
    x = rng.uniform(-10.0, 10.0, size=(int(rng.integers(1, max_seq + 1)), m))
    return gm, x


def random_baseline_model(pruned: PrunedModel, dense, rng) -> PrunedModel:
    """Same group counts and layer selection as ``pruned``, but random permutations."""
    layers = []
    for i, layer in enumerate(pruned.layers):
        slots = {}
        for slot in MHA_SLOTS + FFN_SLOTS:
            value = getattr(layer, slot)
            if isinstance(value, GroupedMatrix):
                slots[slot] = random_grouping(
                    getattr(dense.layers[i], slot), value.group_count, rng
                )
            else:
                slots[slot] = None
        layers.append(
            PrunedLayer(
                b1=layer.b1, b2=layer.b2, ffn_selected=layer.ffn_selected, **slots
            )
        )
    return PrunedModel(
        layers=layers, d=pruned.d, d_ffn=pruned.d_ffn, n_heads=pruned.n_heads
    )
