"""Flat tensor archive reader/writer.

Layout: an unsigned 64-bit little-endian header length N, then N bytes of
JSON mapping tensor names to ``{"dtype", "shape", "data_offsets"}`` entries
(offsets relative to the first payload byte), then the raw little-endian
tensor payloads, contiguous and non-overlapping. A top-level
``"__metadata__"`` string-to-string object is permitted and ignored on read.

Archives are always written as F32; F16 inputs are widened to F32 on read so
every downstream computation works over a single precision.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArchiveError

TensorMap = dict[str, np.ndarray]

_DTYPES = {"F32": np.dtype("<f4"), "F16": np.dtype("<f2")}


@dataclass(frozen=True)
class TensorInfo:
    """Header-level description of one stored tensor."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    n_bytes: int


def _reject_duplicate_names(pairs: list[tuple[str, object]]) -> dict:
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise ArchiveError(f"duplicate tensor name in header: {key!r}")
        seen.add(key)
    return dict(pairs)


def _parse_header(blob: bytes) -> tuple[dict, int]:
    """Split an archive blob into its validated JSON header and payload start."""
    if len(blob) < 8:
        raise ArchiveError("malformed header: file shorter than the 8-byte length field")
    (header_len,) = struct.unpack("<Q", blob[:8])
    if 8 + header_len > len(blob):
        raise ArchiveError(
            f"malformed header: header length {header_len} exceeds file size {len(blob)}"
        )
    try:
        header = json.loads(
            blob[8 : 8 + header_len].decode("utf-8"),
            object_pairs_hook=_reject_duplicate_names,
        )
    except ArchiveError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise ArchiveError("malformed header: top level is not a JSON object")
    return header, 8 + header_len


def _validate_entry(name: str, entry: object, payload_size: int) -> tuple[str, tuple[int, ...], int, int]:
    if not name:
        raise ArchiveError("malformed header: empty tensor name")
    if not isinstance(entry, dict) or set(entry) != {"dtype", "shape", "data_offsets"}:
        raise ArchiveError(f"malformed header: bad entry for {name!r}")
    dtype = entry["dtype"]
    if dtype not in _DTYPES:
        raise ArchiveError(f"unsupported dtype {dtype!r} for tensor {name!r}")
    shape = entry["shape"]
    if not isinstance(shape, list) or any(not isinstance(d, int) or d < 0 for d in shape):
        raise ArchiveError(f"malformed header: bad shape for {name!r}")
    offsets = entry["data_offsets"]
    if (
        not isinstance(offsets, list)
        or len(offsets) != 2
        or any(not isinstance(o, int) or o < 0 for o in offsets)
        or offsets[1] < offsets[0]
    ):
        raise ArchiveError(f"malformed header: bad data_offsets for {name!r}")
    begin, end = offsets
    expected = math.prod(shape) * _DTYPES[dtype].itemsize
    if end - begin != expected:
        raise ArchiveError(
            f"malformed header: {name!r} spans {end - begin} bytes, shape demands {expected}"
        )
    if end > payload_size:
        raise ArchiveError(
            f"truncated payload: {name!r} ends at byte {end}, only {payload_size} available"
        )
    return dtype, tuple(shape), begin, end


def _validate_metadata(meta: object) -> None:
    if not isinstance(meta, dict) or any(
        not isinstance(k, str) or not isinstance(v, str) for k, v in meta.items()
    ):
        raise ArchiveError("malformed header: __metadata__ must map strings to strings")


def _check_contiguous(spans: list[tuple[str, int, int]], payload_size: int) -> None:
    cursor = 0
    for name, begin, end in sorted(spans, key=lambda s: (s[1], s[2])):
        if begin != cursor:
            raise ArchiveError(
                f"malformed header: payload for {name!r} is not contiguous at byte {begin}"
            )
        cursor = end
    if cursor != payload_size:
        raise ArchiveError(
            f"malformed header: payload holds {payload_size} bytes, header accounts for {cursor}"
        )


def read_archive(path: str | Path) -> TensorMap:
    """Read a tensor archive into a name -> float32 ndarray mapping.

    F16 tensors are widened to F32. Raises :class:`ArchiveError` on a
    malformed header, truncated payload, unsupported dtype, duplicate name,
    or any non-finite value.
    """
    blob = Path(path).read_bytes()
    header, payload_start = _parse_header(blob)
    payload_size = len(blob) - payload_start

    spans: list[tuple[str, int, int]] = []
    tensors: TensorMap = {}
    for name, entry in header.items():
        if name == "__metadata__":
            _validate_metadata(entry)
            continue
        dtype, shape, begin, end = _validate_entry(name, entry, payload_size)
        spans.append((name, begin, end))
        raw = blob[payload_start + begin : payload_start + end]
        arr = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape)
        arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ArchiveError(f"non-finite value detected in tensor {name!r}")
        tensors[name] = arr
    _check_contiguous(spans, payload_size)
    if not tensors:
        raise ArchiveError("archive holds no tensors")
    return tensors


def archive_info(path: str | Path) -> tuple[list[TensorInfo], dict[str, str]]:
    """Describe an archive's tensors and metadata without decoding payloads."""
    blob = Path(path).read_bytes()
    header, payload_start = _parse_header(blob)
    payload_size = len(blob) - payload_start

    infos: list[TensorInfo] = []
    metadata: dict[str, str] = {}
    for name, entry in header.items():
        if name == "__metadata__":
            _validate_metadata(entry)
            metadata = dict(entry)
            continue
        dtype, shape, begin, end = _validate_entry(name, entry, payload_size)
        infos.append(TensorInfo(name=name, dtype=dtype, shape=shape, n_bytes=end - begin))
    return sorted(infos, key=lambda t: t.name), metadata


def validate_tensor_map(tensors: Mapping[str, np.ndarray]) -> None:
    """Check the in-memory invariants: non-empty map, named finite tensors."""
    if not tensors:
        raise ArchiveError("tensor map must contain at least one tensor")
    for name, arr in tensors.items():
        if not isinstance(name, str) or not name:
            raise ArchiveError(f"tensor name must be non-empty text, got {name!r}")
        if not np.all(np.isfinite(arr)):
            raise ArchiveError(f"non-finite value detected in tensor {name!r}")


def write_archive(
    tensors: Mapping[str, np.ndarray],
    path: str | Path,
    metadata: Mapping[str, str] | None = None,
) -> None:
    """Write tensors as an F32 archive, byte-deterministically.

    Names are serialized in lexicographic order and the file is replaced
    atomically. ``metadata`` becomes the ``__metadata__`` header entry.
    """
    validate_tensor_map(tensors)

    header: dict[str, object] = {}
    if metadata is not None:
        if any(not isinstance(k, str) or not isinstance(v, str) for k, v in metadata.items()):
            raise ArchiveError("metadata must map strings to strings")
        header["__metadata__"] = {k: metadata[k] for k in sorted(metadata)}

    blobs: list[bytes] = []
    cursor = 0
    for name in sorted(tensors):
        try:
            name.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise ArchiveError(f"unencodable tensor name {name!r}: {exc}") from exc
        arr = np.asarray(tensors[name], dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise ArchiveError(f"tensor {name!r} is not finite at 32-bit precision")
        raw = arr.tobytes(order="C")
        header[name] = {
            "dtype": "F32",
            "shape": [int(d) for d in arr.shape],
            "data_offsets": [cursor, cursor + len(raw)],
        }
        blobs.append(raw)
        cursor += len(raw)

    header_bytes = json.dumps(header, separators=(",", ":"), ensure_ascii=True).encode("utf-8")

    target = Path(path)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=target.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(struct.pack("<Q", len(header_bytes)))
            f.write(header_bytes)
            for raw in blobs:
                f.write(raw)
        os.replace(tmp_name, target)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
