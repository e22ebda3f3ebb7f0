"""Dense 2-D matrices and index permutations.

All permutation vectors use gather semantics: ``result[i] = source[p[i]]``,
so ``p`` names, for each destination slot, the source index it pulls from.
Vectors are 0-indexed.
"""

import zlib

import numpy as np

from .errors import ShapeError, ValidationError


def check_matrix(w, name: str = "matrix") -> np.ndarray:
    """Validate a 2-D numeric matrix with at least one row and column."""
    w = np.asarray(w)
    if w.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={w.ndim}")
    if w.shape[0] < 1 or w.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {w.shape}")
    if np.issubdtype(w.dtype, np.floating) and not np.isfinite(w).all():
        raise ValidationError(f"{name} contains NaN or Inf")
    return w


def check_permutation(p, size: int | None = None, name: str = "permutation") -> np.ndarray:
    """Validate that ``p`` is a bijection on [0, len(p))."""
    p = np.asarray(p)
    if p.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got ndim={p.ndim}")
    if not np.issubdtype(p.dtype, np.integer):
        raise ValidationError(f"{name} must hold integers, got dtype {p.dtype}")
    n = p.shape[0]
    if size is not None and n != size:
        raise ShapeError(f"{name} has length {n}, expected {size}")
    seen = np.zeros(n, dtype=bool)
    if n and (p.min() < 0 or p.max() >= n):
        raise ValidationError(f"{name} has entries outside [0, {n})")
    seen[p] = True
    if not seen.all():
        raise ValidationError(f"{name} is not a bijection on [0, {n})")
    return p.astype(np.int64, copy=False)


def identity_permutation(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)


def apply_permutation(w, pr, pc) -> np.ndarray:
    """Gather rows by ``pr`` and columns by ``pc``: ``out[i, j] = w[pr[i], pc[j]]``."""
    w = check_matrix(w)
    pr = check_permutation(pr, size=w.shape[0], name="row permutation")
    pc = check_permutation(pc, size=w.shape[1], name="column permutation")
    return w[np.ix_(pr, pc)]


def inverse_permutation(p) -> np.ndarray:
    """Return the vector ``q`` with ``q[p[i]] = i``, undoing a gather by ``p``."""
    p = check_permutation(p)
    inv = np.empty_like(p)
    inv[p] = np.arange(p.shape[0], dtype=np.int64)
    return inv


def matmul(x, w) -> np.ndarray:
    """Dense product ``x @ w``; the ground truth the grouped operator is checked against."""
    x = check_matrix(x, "x")
    w = check_matrix(w, "w")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {x.shape} @ {w.shape}")
    return x @ w


def permutation_checksum(p) -> str:
    """Stable hex checksum of a permutation, for archive inspection output."""
    p = check_permutation(p)
    return f"{zlib.crc32(p.astype('<i8').tobytes()) & 0xFFFFFFFF:08x}"
