"""Row/column permutation search that concentrates importance in the top-left block.

Two planners:

* ``alternating_sort`` — the fast heuristic used by the pruning pipeline.
  It alternately reorders columns and rows by their score mass inside the
  current leading strip. Each individual sort is the exact maximizer of the
  block objective over permutations of that one axis (the other held
  fixed), so the captured importance never decreases step to step.
* ``bruteforce_block_selection`` — exhaustive over row/column subsets, used
  as an oracle in tests and guarded against combinatorial blow-up.

Both return the selected block rows/columns in ascending original order;
only the subset choice affects the objective, so the canonical order makes
plans deterministic and directly comparable.
"""

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .errors import ShapeError, ValidationError
from .importance import check_importance
from .tensor import check_permutation, identity_permutation

DEFAULT_N_PERM = 6


@dataclass(frozen=True)
class PermutationPlan:
    """A pair of gather vectors plus the importance they pin into diagonal blocks.

    ``captured`` is the score mass inside the leading block for a single-block
    plan, or the cumulative mass over all fixed diagonal blocks for plans
    composed across pruning iterations. ``step_captures`` traces the block
    mass after every individual sort step of the heuristic.
    """

    pr: np.ndarray
    pc: np.ndarray
    captured: float
    step_captures: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pr", check_permutation(self.pr, name="plan rows"))
        object.__setattr__(self, "pc", check_permutation(self.pc, name="plan columns"))


def identity_plan(rows: int, cols: int, captured: float = 0.0) -> PermutationPlan:
    return PermutationPlan(identity_permutation(rows), identity_permutation(cols), captured)


def _block_sum(scores, pr, pc, block_rows, block_cols) -> float:
    return float(
        scores[np.ix_(pr[:block_rows], pc[:block_cols])].sum(dtype=np.float64)
    )


def _check_block(scores, block_rows: int, block_cols: int) -> np.ndarray:
    s = check_importance(scores)
    if block_rows < 1 or block_cols < 1:
        raise ShapeError(f"block must be non-empty, got {block_rows}x{block_cols}")
    if block_rows > s.shape[0] or block_cols > s.shape[1]:
        raise ShapeError(
            f"block {block_rows}x{block_cols} exceeds matrix of shape {s.shape}"
        )
    return s


def _canonicalize(p: np.ndarray, block: int) -> np.ndarray:
    # Order within the leading block does not change the objective; pin it
    # to ascending original index so plans are deterministic.
    return np.concatenate([np.sort(p[:block]), p[block:]])


def alternating_sort(
    scores, block_rows: int, block_cols: int, n_perm: int = DEFAULT_N_PERM
) -> PermutationPlan:
    """Heuristic search for permutations maximizing the top-left block mass.

    Starting from identity, repeat ``n_perm`` times: stably sort columns in
    descending order of their score sum over the current top ``block_rows``
    rows, then stably sort rows in descending order of their score sum over
    the current left ``block_cols`` columns. Ties keep the lower original
    index.
    """
    s = _check_block(scores, block_rows, block_cols)
    if n_perm < 1:
        raise ValidationError(f"n_perm must be >= 1, got {n_perm}")
    m, n = s.shape
    pr = identity_permutation(m)
    pc = identity_permutation(n)
    steps: list[float] = []
    for _ in range(n_perm):
        col_keys = s[np.ix_(pr[:block_rows], pc)].sum(axis=0, dtype=np.float64)
        order = np.argsort(-col_keys, kind="stable")
        pc = pc[order]
        # a column's key is its mass inside the block rows, so the block sum
        # after the sort is the sum of the leading keys
        steps.append(float(col_keys[order[:block_cols]].sum()))
        row_keys = s[np.ix_(pr, pc[:block_cols])].sum(axis=1, dtype=np.float64)
        order = np.argsort(-row_keys, kind="stable")
        pr = pr[order]
        steps.append(float(row_keys[order[:block_rows]].sum()))
    pr = _canonicalize(pr, block_rows)
    pc = _canonicalize(pc, block_cols)
    captured = _block_sum(s, pr, pc, block_rows, block_cols)
    return PermutationPlan(pr, pc, captured, tuple(steps))


def bruteforce_block_selection(
    scores, block_rows: int, block_cols: int, max_combinations: int = 1_000_000
) -> PermutationPlan:
    """Exact maximizer of the top-left block mass over row/column subsets.

    Enumerates row subsets; for each, the best column subset is the
    ``block_cols`` columns with the largest sums over the chosen rows.
    Refuses instances with more than ``max_combinations`` subset pairs.
    """
    s = _check_block(scores, block_rows, block_cols)
    m, n = s.shape
    if comb(m, block_rows) * comb(n, block_cols) > max_combinations:
        raise ValidationError(
            f"instance too large: C({m},{block_rows})*C({n},{block_cols}) "
            f"exceeds {max_combinations}"
        )
    best_cap = -1.0
    best_rows: tuple[int, ...] = ()
    best_cols: list[int] = []
    for rows in combinations(range(m), block_rows):
        col_sums = s[list(rows)].sum(axis=0, dtype=np.float64)
        order = np.argsort(-col_sums, kind="stable")[:block_cols]
        cap = float(col_sums[order].sum())
        if cap > best_cap:
            best_cap = cap
            best_rows = rows
            best_cols = sorted(int(j) for j in order)
    pr = np.array(
        list(best_rows) + [i for i in range(m) if i not in set(best_rows)], dtype=np.int64
    )
    pc = np.array(
        best_cols + [j for j in range(n) if j not in set(best_cols)], dtype=np.int64
    )
    captured = _block_sum(s, pr, pc, block_rows, block_cols)
    return PermutationPlan(pr, pc, captured)


def compose_residual_permutation(
    outer: PermutationPlan, partial: PermutationPlan, offset_r: int, offset_c: int
) -> PermutationPlan:
    """Fold a plan over the residual (indices past the offsets) into a global plan.

    ``partial`` is expressed in residual-local indices; positions before the
    offsets stay fixed. Applying the returned plan to the original matrix
    reproduces the arrangement reached by applying ``outer`` first and then
    ``partial`` on the remaining rows/columns.
    """
    if offset_r < 0 or offset_c < 0:
        raise ValidationError("offsets must be non-negative")
    if offset_r + len(partial.pr) != len(outer.pr) or offset_c + len(partial.pc) != len(outer.pc):
        raise ValidationError(
            "partial plan overlaps the fixed prefix or leaves indices uncovered: "
            f"residual {len(partial.pr)}x{len(partial.pc)} at offsets "
            f"({offset_r}, {offset_c}) inside {len(outer.pr)}x{len(outer.pc)}"
        )
    pr = np.concatenate([outer.pr[:offset_r], outer.pr[offset_r:][partial.pr]])
    pc = np.concatenate([outer.pc[:offset_c], outer.pc[offset_c:][partial.pc]])
    return PermutationPlan(pr, pc, outer.captured + partial.captured)
