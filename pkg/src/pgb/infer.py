"""Grouped linear inference and a minimal encoder forward pass.

``pgb_linear`` multiplies through only the ``G`` diagonal blocks of a
grouped matrix, costing ``S*M*N/G`` multiply-accumulates instead of the
dense ``S*M*N`` while producing the same output as the masked dense
matrix. The encoder forward (attention + feed-forward with residual
connections and layer normalization) routes every linear through it when
the weight is grouped, so dense and pruned models are directly comparable
on the same inputs.
"""

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .grouping import GroupedMatrix, repermute_dense
from .tensor import check_matrix, inverse_permutation, matmul

LAYER_NORM_EPS = 1e-12


def pgb_linear(x, gm: GroupedMatrix) -> np.ndarray:
    """Grouped product: gather input columns, multiply per block, scatter output.

    The input's width axis contracts with the weight's rows, so it is
    gathered by the stored row permutation; each width slice multiplies its
    diagonal block; the concatenated result is gathered back by the inverse
    column permutation. Equals ``x @ repermute_dense(gm).values`` up to
    accumulation order.
    """
    x = check_matrix(x, "x")
    if x.shape[1] != gm.orig_rows:
        raise ShapeError(
            f"input width {x.shape[1]} does not match weight rows {gm.orig_rows}"
        )
    br = gm.block_shape[0]
    xt = x[:, gm.pr]
    outs = [xt[:, j * br : (j + 1) * br] @ b for j, b in enumerate(gm.blocks)]
    return np.concatenate(outs, axis=1)[:, inverse_permutation(gm.pc)]


def linear_macs(seq_len: int, weight) -> int:
    """Multiply-accumulates of one linear: ``S*M*N/G``; dropped weights cost 0."""
    if weight is None:
        return 0
    if isinstance(weight, GroupedMatrix):
        br, bc = weight.block_shape
        return seq_len * br * bc * weight.group_count
    return seq_len * int(weight.shape[0]) * int(weight.shape[1])


def gelu(x) -> np.ndarray:
    """Exact GeLU ``x * Phi(x)`` via erf (the tanh approximation deviates < 1e-3)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def layer_norm(x, eps: float = LAYER_NORM_EPS) -> np.ndarray:
    """Parameter-free layer normalization over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps)


def _softmax(x) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _linear(x, weight, out_dim: int) -> np.ndarray:
    """Dispatch on the weight slot: dense matmul, grouped product, or zeros if dropped."""
    if weight is None:
        return np.zeros((x.shape[0], out_dim), dtype=np.float64)
    if isinstance(weight, GroupedMatrix):
        return pgb_linear(x, weight)
    return matmul(x, np.asarray(weight, dtype=np.float64))


def _ffn_dropped(layer) -> bool:
    return not getattr(layer, "ffn_selected", True)


def mha_forward(x, layer, n_heads: int, record: dict | None = None) -> np.ndarray:
    """Multi-head self-attention: per-head scaled dot-product, summed over heads.

    Head ``h`` attends with the ``h``-th column slice of Q/K/V and projects
    through the matching row slice of the output matrix, which equals the
    standard concat-then-project form.
    """
    x = check_matrix(x, "x")
    d = x.shape[1]
    if d % n_heads:
        raise ShapeError(f"width {d} is not divisible by n_heads={n_heads}")
    q = _linear(x, layer.wq, d)
    k = _linear(x, layer.wk, d)
    v = _linear(x, layer.wv, d)
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)
    heads = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        att = _softmax((q[:, sl] @ k[:, sl].T) * scale)
        heads.append(att @ v[:, sl])
    concat = np.concatenate(heads, axis=1)
    if record is not None:
        record["wq"] = record["wk"] = record["wv"] = np.asarray(x, dtype=np.float64)
        record["wo"] = concat
    return _linear(concat, layer.wo, d)


def ffn_forward(a, layer, record: dict | None = None) -> np.ndarray:
    """Feed-forward ``GeLU(a @ w1 + b1) @ w2 + b2``; a dropped block returns ``a`` unchanged."""
    a = check_matrix(a, "a")
    if _ffn_dropped(layer):
        return np.asarray(a, dtype=np.float64)
    d_ffn = layer.b1.shape[0]
    d = layer.b2.shape[0]
    hidden = gelu(_linear(a, layer.w1, d_ffn) + layer.b1)
    if record is not None:
        record["w1"] = np.asarray(a, dtype=np.float64)
        record["w2"] = hidden
    return _linear(hidden, layer.w2, d) + layer.b2


def layer_forward(x, layer, n_heads: int, record: dict | None = None) -> np.ndarray:
    """One encoder layer: attention and feed-forward, each with residual + layer norm.

    An unselected feed-forward block is a pure passthrough (its residual
    wrapper is skipped too), so dropping a layer never changes tensor shapes.
    """
    a = layer_norm(x + mha_forward(x, layer, n_heads, record=record))
    if _ffn_dropped(layer):
        return a
    return layer_norm(a + ffn_forward(a, layer, record=record))


def encoder_forward(x, model, capture: list | None = None) -> np.ndarray:
    """Run all layers in order; optionally capture each linear's input activations.

    When ``capture`` is a list, one dict per layer is appended mapping slot
    names (wq, wk, wv, wo, w1, w2) to the activation matrix that feeds that
    linear; these are the calibration inputs for weight compensation.
    """
    x = check_matrix(x, "x")
    if x.shape[1] != model.d:
        raise ShapeError(f"input width {x.shape[1]} does not match model d={model.d}")
    h = np.asarray(x, dtype=np.float64)
    for layer in model.layers:
        record: dict | None = {} if capture is not None else None
        h = layer_forward(h, layer, model.n_heads, record=record)
        if capture is not None:
            capture.append(record)
    return h


def discrepancy(a, b) -> float:
    """Frobenius norm of the difference between two activation matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare shapes {a.shape} and {b.shape}")
    return float(np.linalg.norm(a - b))


def layerwise_discrepancy(x, dense_model, pruned_model) -> list[float]:
    """Per-layer output gap with each layer fed the dense model's layer input."""
    if dense_model.n_layers != pruned_model.n_layers:
        raise ShapeError("models have different layer counts")
    h = np.asarray(check_matrix(x, "x"), dtype=np.float64)
    gaps = []
    for dense_layer, pruned_layer in zip(dense_model.layers, pruned_model.layers):
        d_out = layer_forward(h, dense_layer, dense_model.n_heads)
        p_out = layer_forward(h, pruned_layer, pruned_model.n_heads)
        gaps.append(discrepancy(d_out, p_out))
        h = d_out
    return gaps


def masked_dense_oracle(x, gm: GroupedMatrix) -> np.ndarray:
    """Reference output of a grouped matrix: dense product with the re-permuted weights."""
    return matmul(x, repermute_dense(gm).values)
