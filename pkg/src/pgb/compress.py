"""Whole-model budgeted compression and post-hoc weight compensation.

Compression runs in two phases against a parameter budget
``gamma * total``: every attention matrix is pruned first with its
threshold-driven group count (never forced by the budget), then
feed-forward blocks are pruned layer by layer in descending order of
total importance until the remaining budget is spent; unselected
feed-forward layers are dropped whole. Compensation then re-solves the
retained weights of each grouped matrix against calibration activations
so the pruned linear reproduces the dense one as closely as possible.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .archive import TensorArchive
from .config import PruneConfig
from .errors import BudgetError, ShapeError, ValidationError
from .grouping import GroupedMatrix, grouped_weight_pruning, param_count, repermute_dense
from .importance import (
    ffn_layer_score,
    importance_empirical_fisher,
    importance_magnitude_sq,
)
from .infer import encoder_forward
from .model import (
    FFN_SLOTS,
    MHA_SLOTS,
    ModelSpec,
    PrunedLayer,
    PrunedModel,
    iter_weights,
    model_param_count,
    tensor_name,
)
from .tensor import check_matrix, inverse_permutation

logger = logging.getLogger(__name__)

_FALLBACK_RIDGE = 1e-6


def gradient_samples(archive: TensorArchive, name: str) -> list[np.ndarray]:
    """Collect ``<name>.grad.<k>`` tensors from a gradient archive, ordered by k."""
    prefix = f"{name}.grad."
    found = []
    for key, value in archive.tensors.items():
        if key.startswith(prefix):
            suffix = key[len(prefix) :]
            if suffix.isdigit():
                found.append((int(suffix), value))
    return [v for _, v in sorted(found, key=lambda kv: kv[0])]


def model_importances(
    model: ModelSpec, provider: str = "magnitude2", grad_archive: TensorArchive | None = None
) -> dict[str, np.ndarray]:
    """Importance scores for every prunable matrix, keyed by tensor name."""
    scores = {}
    for i, slot, w in iter_weights(model):
        name = tensor_name(i, slot)
        if provider == "magnitude2":
            scores[name] = importance_magnitude_sq(w)
        elif provider == "fisher":
            if grad_archive is None:
                raise ValidationError("fisher importance requires a gradient archive")
            samples = gradient_samples(grad_archive, name)
            if not samples:
                raise ValidationError(f"gradient archive has no samples for {name!r}")
            scores[name] = importance_empirical_fisher(w, samples)
        else:
            raise ValidationError(f"unknown importance provider {provider!r}")
    return scores


def pgb_compress(
    model: ModelSpec,
    importances: dict[str, np.ndarray],
    cfg: PruneConfig,
    provider: str = "magnitude2",
    threads: int = 1,
) -> PrunedModel:
    """Compress a dense model to roughly ``gamma`` of its prunable parameters.

    Phase 1 prunes every attention matrix independently; if those alone
    already exceed the budget a ``BudgetError`` reports the overshoot.
    Phase 2 repeatedly picks the unused layer with the largest total
    feed-forward importance and prunes both its matrices, stopping once the
    budget is exhausted (the final pick may overshoot by its own size, which
    stays in the model). Remaining layers keep no feed-forward weights.
    """
    for i, slot, w in iter_weights(model):
        name = tensor_name(i, slot)
        if name not in importances:
            raise ValidationError(f"missing importance scores for {name!r}")

    total = model_param_count(model)
    budget = cfg.gamma * total

    mha_jobs = [(i, slot) for i in range(model.n_layers) for slot in MHA_SLOTS]

    def prune_one(job):
        i, slot = job
        w = getattr(model.layers[i], slot)
        return grouped_weight_pruning(w, importances[tensor_name(i, slot)], cfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            mha_outcomes = list(pool.map(prune_one, mha_jobs))
    else:
        mha_outcomes = [prune_one(job) for job in mha_jobs]
    outcomes = dict(zip(mha_jobs, mha_outcomes))

    budget -= sum(param_count(o) for o in mha_outcomes)
    if budget < 0:
        raise BudgetError(overshoot=math.ceil(-budget))

    ranked = sorted(
        range(model.n_layers),
        key=lambda i: (
            -ffn_layer_score(
                importances[tensor_name(i, "w1")], importances[tensor_name(i, "w2")]
            ),
            i,
        ),
    )
    selected = []
    for i in ranked:
        if budget <= 0:
            break
        selected.append(i)
        for slot in FFN_SLOTS:
            outcome = prune_one((i, slot))
            outcomes[(i, slot)] = outcome
            budget -= param_count(outcome)

    selected_set = set(selected)
    layers = []
    for i, layer in enumerate(model.layers):
        layers.append(
            PrunedLayer(
                wq=outcomes[(i, "wq")],
                wk=outcomes[(i, "wk")],
                wv=outcomes[(i, "wv")],
                wo=outcomes[(i, "wo")],
                w1=outcomes.get((i, "w1")),
                w2=outcomes.get((i, "w2")),
                b1=layer.b1.copy(),
                b2=layer.b2.copy(),
                ffn_selected=i in selected_set,
            )
        )
    provenance = {
        "config": cfg.as_dict(),
        "importance": provider,
        "ffn_selected": sorted(selected),
        "compensated": False,
    }
    return PrunedModel(
        layers=layers, d=model.d, d_ffn=model.d_ffn, n_heads=model.n_heads,
        provenance=provenance,
    )


def _solve_anchored(a: np.ndarray, y: np.ndarray, z0: np.ndarray, lam: float):
    """Minimize ``||a z - y||^2 + lam ||z - z0||^2`` via the normal equations.

    A singular or badly conditioned system at ``lam = 0`` falls back to a
    trace-scaled ridge; because the ridge anchors to ``z0``, directions the
    calibration data cannot determine keep their current values instead of
    blowing up. Returns the solution and whether the fallback was taken.
    """
    k = a.shape[1]
    ata = a.T @ a
    aty = a.T @ y
    eye = np.eye(k)
    fallback_lam = _FALLBACK_RIDGE * (float(np.trace(ata)) / k or 1.0)
    fallback = False
    if lam == 0.0 and (a.shape[0] < k or np.linalg.cond(ata) > 1e8):
        lam = fallback_lam
        fallback = True
    try:
        z = np.linalg.solve(ata + lam * eye, aty + lam * z0)
    except np.linalg.LinAlgError:
        lam += fallback_lam
        z = np.linalg.solve(ata + lam * eye, aty + lam * z0)
        fallback = True
    return z, fallback


def weight_compensation(
    gm: GroupedMatrix, w_orig, x, lam: float = 0.0
) -> GroupedMatrix:
    """Re-solve the retained weights so the grouped linear best matches the dense one.

    For each diagonal block, with ``R`` the retained input rows shared by the
    block's output columns, the new entries minimize
    ``||x[:, R] @ z - x @ w_orig[:, c]||^2 + lam * ||z - z0||^2`` per output
    column ``c`` (``z0`` the current entries), via the normal equations. The
    anchored objective guarantees the reconstruction error never increases.
    """
    w_orig = check_matrix(w_orig, "original weights")
    x = check_matrix(x, "calibration activations")
    if lam < 0.0:
        raise ValidationError(f"lam must be >= 0, got {lam}")
    if w_orig.shape != (gm.orig_rows, gm.orig_cols):
        raise ShapeError(
            f"original weights {w_orig.shape} do not match grouped shape "
            f"{(gm.orig_rows, gm.orig_cols)}"
        )
    if x.shape[1] != gm.orig_rows:
        raise ShapeError(
            f"calibration width {x.shape[1]} does not match weight rows {gm.orig_rows}"
        )
    x = np.asarray(x, dtype=np.float64)
    w_orig = np.asarray(w_orig, dtype=np.float64)
    br, bc = gm.block_shape
    fallbacks = 0
    new_blocks = []
    for j, block in enumerate(gm.blocks):
        rows = gm.pr[j * br : (j + 1) * br]
        cols = gm.pc[j * bc : (j + 1) * bc]
        a = x[:, rows]
        y = x @ w_orig[:, cols]
        z0 = np.asarray(block, dtype=np.float64)
        z, fell_back = _solve_anchored(a.T @ a, a.T @ y, z0, lam)
        fallbacks += fell_back
        new_blocks.append(z)
    if fallbacks:
        logger.warning(
            "compensation fell back to ridge %g on %d of %d blocks (singular system)",
            _FALLBACK_RIDGE, fallbacks, gm.group_count,
        )
    return GroupedMatrix(tuple(new_blocks), gm.pr, gm.pc)


def reconstruction_error(gm: GroupedMatrix, w_orig, x) -> float:
    """Frobenius gap ``||x @ w_hat - x @ w_orig||`` of a grouped matrix on ``x``."""
    w_orig = check_matrix(w_orig, "original weights")
    x = np.asarray(check_matrix(x, "calibration activations"), dtype=np.float64)
    w_hat = repermute_dense(gm).values
    return float(np.linalg.norm(x @ w_hat - x @ np.asarray(w_orig, dtype=np.float64)))


def compensate_model(
    pruned: PrunedModel,
    dense: ModelSpec,
    x,
    lam: float = 0.0,
    threads: int = 1,
) -> PrunedModel:
    """Compensate every grouped matrix using activations captured from the dense model.

    Runs the dense forward pass on ``x`` once, recording the input of each
    linear, then solves each grouped slot against its own calibration input.
    Returns a new pruned model; dropped slots and biases are untouched.
    """
    if pruned.n_layers != dense.n_layers:
        raise ShapeError("pruned and dense models have different layer counts")
    captures: list[dict] = []
    encoder_forward(x, dense, capture=captures)

    jobs = []
    for i, layer in enumerate(pruned.layers):
        for slot, value in zip(
            MHA_SLOTS + FFN_SLOTS,
            (layer.wq, layer.wk, layer.wv, layer.wo, layer.w1, layer.w2),
        ):
            if isinstance(value, GroupedMatrix) and slot in captures[i]:
                jobs.append((i, slot, value))

    def solve(job):
        i, slot, gm = job
        return weight_compensation(
            gm, getattr(dense.layers[i], slot), captures[i][slot], lam
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solved = list(pool.map(solve, jobs))
    else:
        solved = [solve(job) for job in jobs]

    replacements = {(i, slot): gm for (i, slot, _), gm in zip(jobs, solved)}
    layers = []
    for i, layer in enumerate(pruned.layers):
        kwargs = {
            slot: replacements.get((i, slot), getattr(layer, slot))
            for slot in MHA_SLOTS + FFN_SLOTS
        }
        layers.append(
            PrunedLayer(
                b1=layer.b1, b2=layer.b2, ffn_selected=layer.ffn_selected, **kwargs
            )
        )
    provenance = dict(pruned.provenance)
    provenance["compensated"] = True
    provenance["ridge"] = lam
    return PrunedModel(
        layers=layers, d=pruned.d, d_ffn=pruned.d_ffn, n_heads=pruned.n_heads,
        provenance=provenance,
    )


def model_reconstruction_error(pruned: PrunedModel, dense: ModelSpec, x) -> float:
    """Sum of per-linear reconstruction gaps on ``x``; the quantity compensation minimizes."""
    captures: list[dict] = []
    encoder_forward(x, dense, capture=captures)
    total = 0.0
    for i, layer in enumerate(pruned.layers):
        for slot in MHA_SLOTS + FFN_SLOTS:
            value = getattr(layer, slot)
            if isinstance(value, GroupedMatrix) and slot in captures[i]:
                total += reconstruction_error(
                    value, getattr(dense.layers[i], slot), captures[i][slot]
                )
    return total
