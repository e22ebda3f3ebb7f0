"""Model archive conventions on top of the raw ``.pgbt`` format.

Dense models store one tensor per slot under ``layer<i>.<slot>`` plus a
``meta.model`` block with the dimensions. Pruned models store each kept
matrix as its diagonal blocks (``layer<i>.<slot>.block<j>``) with a
``meta.grouping`` entry per tensor carrying the group count, block shape
and both permutation vectors, or ``{"dropped": true}`` for tombstones;
``meta.model`` additionally carries the compression provenance.
"""

import numpy as np

from .archive import TensorArchive
from .errors import ArchiveError
from .grouping import GroupedMatrix
from .model import (
    BIAS_SLOTS,
    WEIGHT_SLOTS,
    LayerWeights,
    ModelSpec,
    PrunedLayer,
    PrunedModel,
    tensor_name,
)
from .tensor import check_permutation

SCHEMA_VERSION = 1
KIND_DENSE = "dense"
KIND_PRUNED = "pruned"


def _model_meta(model, kind: str) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": kind,
        "layers": model.n_layers,
        "d": model.d,
        "d_ffn": model.d_ffn,
        "n_heads": model.n_heads,
    }


def model_to_archive(model: ModelSpec) -> TensorArchive:
    archive = TensorArchive(meta={"model": _model_meta(model, KIND_DENSE)})
    for i, layer in enumerate(model.layers):
        for slot in WEIGHT_SLOTS + BIAS_SLOTS:
            archive.add(tensor_name(i, slot), getattr(layer, slot))
    return archive


def _require(archive: TensorArchive, name: str) -> np.ndarray:
    if name not in archive.tensors:
        raise ArchiveError(f"model archive is missing tensor {name!r}")
    return archive.tensors[name]


def _require_meta(archive: TensorArchive) -> dict:
    meta = archive.meta.get("model")
    if not isinstance(meta, dict):
        raise ArchiveError("archive has no 'model' metadata block")
    try:
        return {
            "kind": meta["kind"],
            "layers": int(meta["layers"]),
            "d": int(meta["d"]),
            "d_ffn": int(meta["d_ffn"]),
            "n_heads": int(meta["n_heads"]),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"malformed 'model' metadata: {exc}") from exc


def archive_to_model(archive: TensorArchive) -> ModelSpec:
    meta = _require_meta(archive)
    if meta["kind"] != KIND_DENSE:
        raise ArchiveError(f"expected a dense model archive, got kind {meta['kind']!r}")
    layers = []
    for i in range(meta["layers"]):
        layers.append(
            LayerWeights(
                **{slot: _require(archive, tensor_name(i, slot)) for slot in WEIGHT_SLOTS},
                b1=_require(archive, tensor_name(i, "b1")),
                b2=_require(archive, tensor_name(i, "b2")),
            )
        )
    return ModelSpec(
        layers=layers, d=meta["d"], d_ffn=meta["d_ffn"], n_heads=meta["n_heads"]
    )


def pruned_to_archive(model: PrunedModel) -> TensorArchive:
    meta_model = _model_meta(model, KIND_PRUNED)
    meta_model["provenance"] = model.provenance
    grouping: dict[str, dict] = {}
    archive = TensorArchive(meta={"model": meta_model, "grouping": grouping})
    for i, layer in enumerate(model.layers):
        for slot in WEIGHT_SLOTS:
            name = tensor_name(i, slot)
            value = getattr(layer, slot)
            if value is None:
                grouping[name] = {"dropped": True}
                continue
            br, bc = value.block_shape
            grouping[name] = {
                "g": value.group_count,
                "block_shape": [br, bc],
                "shape": [value.orig_rows, value.orig_cols],
                "pr": [int(p) for p in value.pr],
                "pc": [int(p) for p in value.pc],
            }
            for j, block in enumerate(value.blocks):
                archive.add(f"{name}.block{j}", block)
        archive.add(tensor_name(i, "b1"), layer.b1)
        archive.add(tensor_name(i, "b2"), layer.b2)
    return archive


def _grouped_from_entry(archive: TensorArchive, name: str, entry: dict) -> GroupedMatrix:
    try:
        g = int(entry["g"])
        pr = np.asarray(entry["pr"], dtype=np.int64)
        pc = np.asarray(entry["pc"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ArchiveError(f"malformed grouping entry for {name!r}: {exc}") from exc
    check_permutation(pr, name=f"{name} row permutation")
    check_permutation(pc, name=f"{name} column permutation")
    blocks = tuple(_require(archive, f"{name}.block{j}") for j in range(g))
    return GroupedMatrix(blocks, pr, pc)


def archive_to_pruned(archive: TensorArchive) -> PrunedModel:
    meta = _require_meta(archive)
    if meta["kind"] != KIND_PRUNED:
        raise ArchiveError(f"expected a pruned model archive, got kind {meta['kind']!r}")
    grouping = archive.meta.get("grouping")
    if not isinstance(grouping, dict):
        raise ArchiveError("pruned archive has no 'grouping' metadata block")
    provenance = archive.meta["model"].get("provenance", {})
    selected = set(provenance.get("ffn_selected", []))
    layers = []
    for i in range(meta["layers"]):
        slots: dict[str, GroupedMatrix | None] = {}
        for slot in WEIGHT_SLOTS:
            name = tensor_name(i, slot)
            entry = grouping.get(name)
            if entry is None:
                raise ArchiveError(f"pruned archive is missing grouping entry for {name!r}")
            slots[slot] = None if entry.get("dropped") else _grouped_from_entry(
                archive, name, entry
            )
        layers.append(
            PrunedLayer(
                **slots,
                b1=np.asarray(_require(archive, tensor_name(i, "b1")), dtype=np.float64),
                b2=np.asarray(_require(archive, tensor_name(i, "b2")), dtype=np.float64),
                ffn_selected=i in selected,
            )
        )
    return PrunedModel(
        layers=layers, d=meta["d"], d_ffn=meta["d_ffn"], n_heads=meta["n_heads"],
        provenance=provenance,
    )


def load_any_model(archive: TensorArchive) -> ModelSpec | PrunedModel:
    meta = _require_meta(archive)
    if meta["kind"] == KIND_DENSE:
        return archive_to_model(archive)
    if meta["kind"] == KIND_PRUNED:
        return archive_to_pruned(archive)
    raise ArchiveError(f"unknown model kind {meta['kind']!r}")


def activations_to_archive(x, name: str = "x") -> TensorArchive:
    archive = TensorArchive()
    archive.add(name, x)
    return archive


def archive_to_activations(archive: TensorArchive, name: str = "x") -> np.ndarray:
    if name not in archive.tensors:
        raise ArchiveError(f"activations archive is missing tensor {name!r}")
    return archive.tensors[name]
