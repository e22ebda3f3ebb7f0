"""Grouped weight pruning: adaptive group count, permute-extract-shrink, re-permutation.

A matrix is reduced to ``G`` diagonal blocks of its permuted form; every
weight outside the blocks is pruned. ``G`` adapts to the number of
weights whose importance clears the threshold, and a matrix with too few
important weights is dropped entirely (returned as ``None``).
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .config import PruneConfig
from .errors import ShapeError, ValidationError
from .importance import check_importance
from .permute import alternating_sort, compose_residual_permutation, identity_plan
from .tensor import apply_permutation, check_matrix, check_permutation, inverse_permutation

# A dropped matrix is represented as None; at inference it contributes zeros.
PruneOutcome = Optional["GroupedMatrix"]


@dataclass(frozen=True)
class GroupedMatrix:
    """``G`` diagonal blocks of a permuted matrix plus the global gather vectors.

    ``apply_permutation(w, pr, pc)`` lays the retained weights out
    block-diagonally; the blocks are stored in diagonal order. The original
    shape is recoverable from the permutation lengths.
    """

    blocks: tuple[np.ndarray, ...]
    pr: np.ndarray
    pc: np.ndarray

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ValidationError("grouped matrix needs at least one block")
        object.__setattr__(self, "pr", check_permutation(self.pr, name="row permutation"))
        object.__setattr__(self, "pc", check_permutation(self.pc, name="column permutation"))
        g = len(self.blocks)
        m, n = len(self.pr), len(self.pc)
        if m % g or n % g:
            raise ShapeError(f"group count {g} does not divide shape {(m, n)}")
        shape = (m // g, n // g)
        blocks = []
        for i, b in enumerate(self.blocks):
            b = check_matrix(b, f"block {i}")
            if b.shape != shape:
                raise ShapeError(f"block {i} has shape {b.shape}, expected {shape}")
            blocks.append(b)
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def orig_rows(self) -> int:
        return len(self.pr)

    @property
    def orig_cols(self) -> int:
        return len(self.pc)

    @property
    def group_count(self) -> int:
        return len(self.blocks)

    @property
    def block_shape(self) -> tuple[int, int]:
        return self.blocks[0].shape

    @property
    def stored_params(self) -> int:
        return self.orig_rows * self.orig_cols // self.group_count


class MaskedMatrix(NamedTuple):
    """A dense matrix together with the boolean mask of retained positions."""

    values: np.ndarray
    mask: np.ndarray


def determine_group_count(scores, tau: float, g_max: int) -> int:
    """Adaptive group count from the number of weights above ``tau``; 0 means drop.

    With ``n`` weights scoring above the threshold, a ``G``-grouped matrix
    stores ``M*N/G`` weights, so covering all of them needs ``G <= M*N/n``.
    If even ``g_max`` groups could not cover them proportionally
    (``M*N/n > g_max``) the matrix is dropped. Otherwise ``G`` is the
    largest common divisor of ``M`` and ``N`` not exceeding
    ``min(g_max, floor(M*N/n))``.
    """
    s = check_importance(scores)
    if tau < 0.0:
        raise ValidationError(f"tau must be >= 0, got {tau}")
    if g_max < 1:
        raise ValidationError(f"g_max must be >= 1, got {g_max}")
    m, n = s.shape
    n_tau = int((s > tau).sum())
    if n_tau == 0 or m * n > g_max * n_tau:
        return 0
    cap = min(g_max, (m * n) // n_tau)
    for g in range(cap, 0, -1):
        if m % g == 0 and n % g == 0:
            return g
    return 1


def grouped_weight_pruning(w, scores, cfg: PruneConfig) -> PruneOutcome:
    """Prune one matrix into permuted block-diagonal form.

    Determines ``G`` from the importance scores, then iterates ``G`` times:
    plan a permutation of the current residual concentrating importance in
    its top-left ``(M/G) x (N/G)`` corner, fold the plan into the global
    permutations, extract that corner as the next diagonal block, and shrink
    the residual by the block's rows and columns. Returns ``None`` when the
    matrix is dropped.
    """
    w = check_matrix(w, "weights")
    s = check_importance(scores, shape=w.shape)
    g = determine_group_count(s, cfg.tau, cfg.g_max)
    if g == 0:
        return None
    m, n = w.shape
    br, bc = m // g, n // g
    plan = identity_plan(m, n)
    res_w, res_s = w, s
    blocks = []
    for i in range(g):
        part = alternating_sort(res_s, br, bc, cfg.n_perm)
        plan = compose_residual_permutation(plan, part, i * br, i * bc)
        blocks.append(res_w[np.ix_(part.pr[:br], part.pc[:bc])].copy())
        res_w = res_w[np.ix_(part.pr[br:], part.pc[bc:])]
        res_s = res_s[np.ix_(part.pr[br:], part.pc[bc:])]
    return GroupedMatrix(tuple(blocks), plan.pr, plan.pc)


def repermute_dense(gm: GroupedMatrix) -> MaskedMatrix:
    """Expand blocks along the diagonal and gather every weight back to its original slot."""
    m, n = gm.orig_rows, gm.orig_cols
    br, bc = gm.block_shape
    dense = np.zeros((m, n), dtype=np.result_type(*gm.blocks))
    mask = np.zeros((m, n), dtype=bool)
    for j, b in enumerate(gm.blocks):
        dense[j * br : (j + 1) * br, j * bc : (j + 1) * bc] = b
        mask[j * br : (j + 1) * br, j * bc : (j + 1) * bc] = True
    inv_r = inverse_permutation(gm.pr)
    inv_c = inverse_permutation(gm.pc)
    return MaskedMatrix(
        apply_permutation(dense, inv_r, inv_c), apply_permutation(mask, inv_r, inv_c)
    )


def param_count(outcome: PruneOutcome) -> int:
    """Stored parameters of a prune outcome; a dropped matrix stores none."""
    return 0 if outcome is None else outcome.stored_params


def random_grouping(w, g: int, rng) -> GroupedMatrix:
    """Group ``w`` under uniformly random permutations.

    Retains exactly as many parameters as an importance-driven grouping with
    the same ``g``; serves as the baseline in quality comparisons and as a
    cheap generator for benchmarks.
    """
    w = check_matrix(w, "weights")
    m, n = w.shape
    if g < 1 or m % g or n % g:
        raise ShapeError(f"group count {g} does not divide shape {(m, n)}")
    pr = rng.permutation(m).astype(np.int64)
    pc = rng.permutation(n).astype(np.int64)
    arranged = apply_permutation(w, pr, pc)
    br, bc = m // g, n // g
    blocks = tuple(
        arranged[j * br : (j + 1) * br, j * bc : (j + 1) * bc].copy() for j in range(g)
    )
    return GroupedMatrix(blocks, pr, pc)
