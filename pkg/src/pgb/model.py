"""Encoder model containers, parameter/MAC accounting, and synthetic model generation.

A model is an ordered stack of layers; each layer holds four attention
projection matrices (``d x d``), two feed-forward matrices (``d x d_ffn``
and ``d_ffn x d``) and the two feed-forward biases. Only the six weight
matrices are prunable; biases never are.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .grouping import GroupedMatrix, PruneOutcome, param_count
from .tensor import check_matrix

MHA_SLOTS = ("wq", "wk", "wv", "wo")
FFN_SLOTS = ("w1", "w2")
WEIGHT_SLOTS = MHA_SLOTS + FFN_SLOTS
BIAS_SLOTS = ("b1", "b2")

SEED_ENV_VAR = "PGB_SEED"


def tensor_name(layer: int, slot: str) -> str:
    return f"layer{layer}.{slot}"


def _check_bias(b, size: int, name: str) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (size,):
        raise ShapeError(f"{name} must have shape ({size},), got {b.shape}")
    if not np.isfinite(b).all():
        raise ValidationError(f"{name} contains NaN or Inf")
    return b


@dataclass
class LayerWeights:
    """Dense weights of one encoder layer."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray


@dataclass
class ModelSpec:
    """A dense encoder: ``layers`` plus the dimensions shared by all of them."""

    layers: list[LayerWeights]
    d: int
    d_ffn: int
    n_heads: int

    def __post_init__(self):
        if self.d < 1 or self.d_ffn < 1 or self.n_heads < 1:
            raise ValidationError("model dimensions must be positive")
        if self.d % self.n_heads:
            raise ShapeError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        for i, layer in enumerate(self.layers):
            for slot in MHA_SLOTS:
                w = check_matrix(getattr(layer, slot), tensor_name(i, slot))
                if w.shape != (self.d, self.d):
                    raise ShapeError(
                        f"{tensor_name(i, slot)} has shape {w.shape}, "
                        f"expected {(self.d, self.d)}"
                    )
            w1 = check_matrix(layer.w1, tensor_name(i, "w1"))
            if w1.shape != (self.d, self.d_ffn):
                raise ShapeError(
                    f"{tensor_name(i, 'w1')} has shape {w1.shape}, "
                    f"expected {(self.d, self.d_ffn)}"
                )
            w2 = check_matrix(layer.w2, tensor_name(i, "w2"))
            if w2.shape != (self.d_ffn, self.d):
                raise ShapeError(
                    f"{tensor_name(i, 'w2')} has shape {w2.shape}, "
                    f"expected {(self.d_ffn, self.d)}"
                )
            layer.b1 = _check_bias(layer.b1, self.d_ffn, tensor_name(i, "b1"))
            layer.b2 = _check_bias(layer.b2, self.d, tensor_name(i, "b2"))

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass
class PrunedLayer:
    """Prune outcomes for one layer; a slot holding ``None`` was dropped.

    ``ffn_selected`` records whether the feed-forward block was picked by the
    budget loop at all; an unselected feed-forward is skipped as identity at
    inference, whereas an individually dropped matrix contributes zeros.
    """

    wq: PruneOutcome
    wk: PruneOutcome
    wv: PruneOutcome
    wo: PruneOutcome
    w1: PruneOutcome
    w2: PruneOutcome
    b1: np.ndarray
    b2: np.ndarray
    ffn_selected: bool = True


@dataclass
class PrunedModel:
    """A pruned encoder with the same slot structure as its source model."""

    layers: list[PrunedLayer]
    d: int
    d_ffn: int
    n_heads: int
    provenance: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def iter_weights(model):
    """Yield ``(layer_index, slot, value)`` for every prunable weight slot."""
    for i, layer in enumerate(model.layers):
        for slot in WEIGHT_SLOTS:
            yield i, slot, getattr(layer, slot)


def _slot_params(value) -> int:
    if value is None:
        return 0
    if isinstance(value, GroupedMatrix):
        return param_count(value)
    return int(value.shape[0] * value.shape[1])


def _slot_macs(value, seq_len: int) -> int:
    if value is None:
        return 0
    if isinstance(value, GroupedMatrix):
        br, bc = value.block_shape
        return seq_len * br * bc * value.group_count
    return seq_len * int(value.shape[0]) * int(value.shape[1])


def model_param_count(model) -> int:
    """Prunable parameters of a dense or pruned model (weight matrices only)."""
    return sum(_slot_params(v) for _, _, v in iter_weights(model))


def model_flops(model, seq_len: int) -> int:
    """Multiply-accumulate count of all weight-matrix products at sequence length ``seq_len``.

    Each linear costs ``S * M * N / G`` (dense matrices have ``G = 1``,
    dropped ones cost nothing); attention score/value products are excluded,
    mirroring the parameter accounting.
    """
    if seq_len < 1:
        raise ValidationError(f"seq_len must be >= 1, got {seq_len}")
    return sum(_slot_macs(v, seq_len) for _, _, v in iter_weights(model))


def env_seed(default: int = 0) -> int:
    """Seed for synthetic generation, overridable via the PGB_SEED env var."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ValidationError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc


def _two_scale_matrix(rng, shape, heavy_fraction, light_scale, heavy_scale):
    w = rng.standard_normal(shape, dtype=np.float32)
    w *= np.float32(light_scale)
    heavy = rng.random(shape, dtype=np.float32) < heavy_fraction
    n_heavy = int(heavy.sum())
    w[heavy] = rng.standard_normal(n_heavy, dtype=np.float32) * np.float32(heavy_scale)
    return w


def synthetic_model(
    n_layers: int,
    d: int,
    d_ffn: int,
    n_heads: int,
    seed: int = 0,
    heavy_fraction: tuple[float, float] = (0.25, 0.55),
    light_scale: float = 3e-4,
    heavy_scale: float = 5e-2,
) -> ModelSpec:
    """Random encoder whose weights mix two magnitude scales.

    A per-matrix fraction of entries (drawn from ``heavy_fraction``) is
    sampled at ``heavy_scale`` and the rest near zero, giving each matrix a
    sparse set of important weights like a trained network, so the adaptive
    group count and the permutation search have real structure to exploit.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(n_layers):
        frac = rng.uniform(*heavy_fraction)
        layers.append(
            LayerWeights(
                wq=_two_scale_matrix(rng, (d, d), frac, light_scale, heavy_scale),
                wk=_two_scale_matrix(rng, (d, d), frac, light_scale, heavy_scale),
                wv=_two_scale_matrix(rng, (d, d), frac, light_scale, heavy_scale),
                wo=_two_scale_matrix(rng, (d, d), frac, light_scale, heavy_scale),
                w1=_two_scale_matrix(rng, (d, d_ffn), frac, light_scale, heavy_scale),
                w2=_two_scale_matrix(rng, (d_ffn, d), frac, light_scale, heavy_scale),
                b1=rng.standard_normal(d_ffn, dtype=np.float32) * np.float32(1e-2),
                b2=rng.standard_normal(d, dtype=np.float32) * np.float32(1e-2),
            )
        )
    return ModelSpec(layers=layers, d=d, d_ffn=d_ffn, n_heads=n_heads)


def synthetic_activations(seq_len: int, d: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, size=(seq_len, d)).astype(np.float32)
