"""The ``.pgbt`` tensor archive.

Layout: an 8-byte little-endian unsigned manifest length, a UTF-8 JSON
manifest ``{"tensors": [{name, shape, dtype, offset}], "meta": {...}}``,
then the raw payload. Tensors are little-endian IEEE-754 float32 in
row-major order; offsets are relative to the payload start. Round-trips
are bit-exact.
"""

import json
import struct
from dataclasses import dataclass, field
from math import prod

import numpy as np

from .errors import ArchiveError

_HEADER = struct.Struct("<Q")
_DTYPES = {"f32": np.dtype("<f4")}


@dataclass
class TensorArchive:
    """Named float32 tensors (1-D or 2-D) plus a free-form JSON metadata block."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, name: str, array) -> None:
        a = np.ascontiguousarray(array, dtype="<f4")
        if a.ndim not in (1, 2):
            raise ArchiveError(f"tensor {name!r} must be 1-D or 2-D, got ndim={a.ndim}")
        if name in self.tensors:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        self.tensors[name] = a

    def names(self) -> list[str]:
        return list(self.tensors)


def save_archive(archive: TensorArchive, path) -> None:
    """Write ``archive`` to ``path`` in the format described above."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in archive.tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        if a.ndim not in (1, 2):
            raise ArchiveError(f"tensor {name!r} must be 1-D or 2-D, got ndim={a.ndim}")
        entries.append(
            {"name": name, "shape": [int(s) for s in a.shape], "dtype": "f32", "offset": offset}
        )
        chunk = a.tobytes()
        chunks.append(chunk)
        offset += len(chunk)
    manifest: dict = {"tensors": entries}
    if archive.meta:
        manifest["meta"] = archive.meta
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(len(blob)))
        f.write(blob)
        for chunk in chunks:
            f.write(chunk)


def load_archive(path) -> TensorArchive:
    """Read a ``.pgbt`` file, validating the manifest against the payload."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ArchiveError("truncated header")
        (manifest_len,) = _HEADER.unpack(head)
        blob = f.read(manifest_len)
        if len(blob) != manifest_len:
            raise ArchiveError("truncated manifest")
        payload = f.read()
    try:
        manifest = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"malformed manifest: {exc}") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("tensors"), list):
        raise ArchiveError("malformed manifest: missing 'tensors' list")

    tensors: dict[str, np.ndarray] = {}
    spans = []
    for entry in manifest["tensors"]:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            dtype = entry["dtype"]
            offset = int(entry["offset"])
        except (TypeError, KeyError, ValueError) as exc:
            raise ArchiveError(f"malformed manifest entry: {entry!r}") from exc
        if dtype not in _DTYPES:
            raise ArchiveError(f"tensor {name!r} has unknown dtype {dtype!r}")
        if name in tensors:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        if len(shape) not in (1, 2) or any(s < 1 for s in shape):
            raise ArchiveError(f"tensor {name!r} has invalid shape {shape}")
        nbytes = prod(shape) * _DTYPES[dtype].itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise ArchiveError(f"tensor {name!r} extends past end of payload")
        spans.append((offset, offset + nbytes, name))
        data = np.frombuffer(payload, dtype=_DTYPES[dtype], count=prod(shape), offset=offset)
        tensors[name] = data.reshape(shape).copy()

    spans.sort()
    for (_, prev_end, prev_name), (start, _, name) in zip(spans, spans[1:]):
        if start < prev_end:
            raise ArchiveError(f"tensors {prev_name!r} and {name!r} overlap in payload")

    meta = manifest.get("meta", {})
    if not isinstance(meta, dict):
        raise ArchiveError("malformed manifest: 'meta' must be an object")
    return TensorArchive(tensors=tensors, meta=meta)
