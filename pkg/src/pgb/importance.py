"""Per-weight importance scores.

Two providers are available: a data-free squared-magnitude score, and an
empirical-Fisher saliency ``w^2 * E[g^2] / 2`` built from per-sample
gradients (a diagonal second-order estimate in the optimal-brain-damage
tradition). Both return scores shaped like the weight matrix.
"""

from typing import Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import check_matrix

PROVIDERS = ("magnitude2", "fisher")


def check_importance(scores, shape: tuple[int, int] | None = None) -> np.ndarray:
    s = check_matrix(scores, "importance scores")
    if shape is not None and s.shape != tuple(shape):
        raise ShapeError(f"importance shape {s.shape} does not match weights {tuple(shape)}")
    if (s < 0).any():
        raise ValidationError("importance scores must be non-negative")
    return s


def importance_magnitude_sq(w) -> np.ndarray:
    """Squared weight magnitude; the data-free fallback provider."""
    w = check_matrix(w, "weights")
    return np.square(w)


def importance_empirical_fisher(w, samples: Sequence[np.ndarray]) -> np.ndarray:
    """Diagonal-Fisher saliency ``w^2 * mean_k(g_k^2) / 2`` over gradient samples."""
    w = check_matrix(w, "weights")
    if len(samples) == 0:
        raise ValidationError("empirical Fisher needs at least one gradient sample")
    mean_sq = np.zeros(w.shape, dtype=np.float64)
    for k, g in enumerate(samples):
        g = check_matrix(g, f"gradient sample {k}")
        if g.shape != w.shape:
            raise ShapeError(
                f"gradient sample {k} has shape {g.shape}, expected {w.shape}"
            )
        mean_sq += np.square(g, dtype=np.float64)
    mean_sq /= len(samples)
    return np.square(w) * mean_sq / 2.0


def region_importance(scores, rows: tuple[int, int], cols: tuple[int, int]) -> float:
    """Sum of scores in the half-open rectangle ``rows x cols``."""
    s = check_importance(scores)
    r0, r1 = rows
    c0, c1 = cols
    if not (0 <= r0 <= r1 <= s.shape[0] and 0 <= c0 <= c1 <= s.shape[1]):
        raise ShapeError(f"region {rows} x {cols} outside matrix of shape {s.shape}")
    return float(s[r0:r1, c0:c1].sum(dtype=np.float64))


def ffn_layer_score(scores_in, scores_out) -> float:
    """Layer ranking key: total importance of both feed-forward matrices."""
    s1 = check_importance(scores_in)
    s2 = check_importance(scores_out)
    return float(s1.sum(dtype=np.float64) + s2.sum(dtype=np.float64))
