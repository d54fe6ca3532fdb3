"""Reading and writing safetensors-layout tensor archives.

Layout: an 8-byte little-endian u64 header length ``H``, ``H`` bytes of
UTF-8 JSON, then the raw little-endian tensor payloads. The JSON maps each
tensor name to ``{"dtype", "shape", "data_offsets"}`` with offsets relative
to the end of the header, plus an optional ``"__metadata__"`` string map.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

__all__ = [
    "ArchiveFormatError",
    "NamedTensor",
    "TensorArchive",
    "read_archive",
    "write_archive",
    "to_f32",
    "from_f32",
]

METADATA_KEY = "__metadata__"

# BF16 has no numpy dtype; its payload is carried as raw uint16 words.
_STORAGE = {
    "F32": np.dtype("<f4"),
    "F16": np.dtype("<f2"),
    "BF16": np.dtype("<u2"),
    "I32": np.dtype("<i4"),
    "I64": np.dtype("<i8"),
}
FLOAT_DTYPES = ("F32", "F16", "BF16")


class ArchiveFormatError(ValueError):
    """Malformed archive. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(eq=False)
class NamedTensor:
    name: str
    dtype: str
    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ValueError("tensor name must be non-empty")
        if self.dtype not in _STORAGE:
            raise ValueError(f"unsupported dtype {self.dtype!r} for tensor {self.name!r}")
        self.shape = tuple(int(s) for s in self.shape)
        if any(s < 0 for s in self.shape):
            raise ValueError(f"negative dimension in shape {self.shape} of {self.name!r}")
        data = np.ascontiguousarray(self.data, dtype=_STORAGE[self.dtype])
        if data.size != int(np.prod(self.shape, dtype=np.int64)):
            raise ValueError(
                f"tensor {self.name!r}: shape {self.shape} needs "
                f"{int(np.prod(self.shape))} scalars, got {data.size}"
            )
        self.data = data.reshape(self.shape)

    @classmethod
    def from_array(cls, name: str, array: np.ndarray, dtype: Optional[str] = None) -> "NamedTensor":
        """Wrap a numpy array, narrowing floats to ``dtype`` when given."""
        array = np.asarray(array)
        if dtype is None:
            dtype = _dtype_tag(array.dtype)
        if dtype in FLOAT_DTYPES:
            return from_f32(name, array.astype(np.float32, copy=False), dtype)
        return cls(name, dtype, array.shape, array)

    def tobytes(self) -> bytes:
        return self.data.tobytes(order="C")

    def numpy(self) -> np.ndarray:
        """Values as a numpy array; BF16 is widened to float32."""
        if self.dtype == "BF16":
            return to_f32(self).data
        return self.data

    def __eq__(self, other):
        if not isinstance(other, NamedTensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.dtype == other.dtype
            and self.shape == other.shape
            and self.tobytes() == other.tobytes()
        )

    def __repr__(self):
        return f"NamedTensor(name={self.name!r}, dtype={self.dtype}, shape={self.shape})"


def _dtype_tag(dt: np.dtype) -> str:
    dt = np.dtype(dt)
    if dt == np.float32:
        return "F32"
    if dt == np.float16:
        return "F16"
    if dt == np.int32:
        return "I32"
    if dt == np.int64:
        return "I64"
    if dt == np.float64:
        return "F32"
    raise ValueError(f"no archive dtype for numpy dtype {dt}")


@dataclass
class TensorArchive:
    tensors: Dict[str, NamedTensor] = field(default_factory=dict)
    metadata: Dict[str, str] = field(default_factory=dict)

    def add(self, tensor: NamedTensor) -> None:
        if tensor.name in self.tensors:
            raise ValueError(f"duplicate tensor name {tensor.name!r}")
        if tensor.name == METADATA_KEY:
            raise ValueError(f"{METADATA_KEY!r} is reserved")
        self.tensors[tensor.name] = tensor

    def add_array(self, name: str, array: np.ndarray, dtype: Optional[str] = None) -> None:
        self.add(NamedTensor.from_array(name, array, dtype))

    def __getitem__(self, name: str) -> NamedTensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list:
        return list(self.tensors)

    def array(self, name: str) -> np.ndarray:
        """Tensor ``name`` widened to float32 (integers returned as stored)."""
        t = self.tensors[name]
        if t.dtype in FLOAT_DTYPES:
            return to_f32(t).data
        return t.data

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], metadata=None) -> "TensorArchive":
        archive = cls(metadata=dict(metadata or {}))
        for name, arr in arrays.items():
            archive.add_array(name, arr)
        return archive


def to_f32(t: NamedTensor) -> NamedTensor:
    """Value-preserving widening to float32. F32 input is returned as is."""
    if t.dtype == "F32":
        return t
    if t.dtype == "F16":
        return NamedTensor(t.name, "F32", t.shape, t.data.astype(np.float32))
    if t.dtype == "BF16":
        bits = t.data.astype(np.uint32) << np.uint32(16)
        return NamedTensor(t.name, "F32", t.shape, bits.view(np.float32))
    raise ValueError(f"tensor {t.name!r} has non-float dtype {t.dtype}")


def from_f32(name: str, values: np.ndarray, dtype: str = "F32") -> NamedTensor:
    """Narrow float32 values to ``dtype`` with round-to-nearest-even."""
    values = np.ascontiguousarray(values, dtype=np.float32)
    if dtype == "F32":
        return NamedTensor(name, "F32", values.shape, values)
    if dtype == "F16":
        return NamedTensor(name, "F16", values.shape, values.astype(np.float16))
    if dtype == "BF16":
        bits = values.view(np.uint32)
        lsb = (bits >> np.uint32(16)) & np.uint32(1)
        rounded = ((bits + np.uint32(0x7FFF) + lsb) >> np.uint32(16)).astype(np.uint16)
        nan = np.isnan(values)
        if nan.any():
            rounded[nan] = ((bits[nan] >> np.uint32(16)) | np.uint32(0x0040)).astype(np.uint16)
        return NamedTensor(name, "BF16", values.shape, rounded)
    raise ValueError(f"cannot narrow to dtype {dtype!r}")


def _header_bytes(archive: TensorArchive) -> tuple[bytes, list]:
    header: dict = {}
    if archive.metadata:
        for k, v in archive.metadata.items():
            if not isinstance(k, str) or not isinstance(v, str):
                raise ValueError("archive metadata must map str to str")
        header[METADATA_KEY] = dict(archive.metadata)
    payloads = []
    offset = 0
    for name, t in archive.tensors.items():
        if name != t.name:
            raise ValueError(f"archive key {name!r} does not match tensor name {t.name!r}")
        raw = t.tobytes()
        header[name] = {
            "dtype": t.dtype,
            "shape": list(t.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        payloads.append(raw)
        offset += len(raw)
    text = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    # pad with spaces so the data region starts 8-byte aligned
    text += b" " * (-(len(text) + 8) % 8)
    return text, payloads


def serialize(archive: TensorArchive) -> bytes:
    header, payloads = _header_bytes(archive)
    return b"".join([struct.pack("<Q", len(header)), header, *payloads])


def write_archive(archive: TensorArchive, path) -> None:
    """Write ``archive`` to ``path``. Same archive content gives the same bytes."""
    names = [t.name for t in archive.tensors.values()]
    if len(set(names)) != len(names):
        raise ValueError("duplicate tensor names in archive")
    blob = serialize(archive)
    path = Path(path)
    with open(path, "wb") as f:
        f.write(blob)


def deserialize(blob: bytes) -> TensorArchive:
    if len(blob) < 8:
        raise ArchiveFormatError("file too short for header length", len(blob))
    (hlen,) = struct.unpack("<Q", blob[:8])
    if hlen > len(blob) - 8:
        raise ArchiveFormatError(f"header length {hlen} exceeds file size {len(blob)}", 0)
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", None) or getattr(exc, "start", 0)
        raise ArchiveFormatError(f"malformed header JSON: {exc}", 8 + pos) from None
    if not isinstance(header, dict):
        raise ArchiveFormatError("header is not a JSON object", 8)

    data_start = 8 + hlen
    data_len = len(blob) - data_start
    metadata = header.pop(METADATA_KEY, None) or {}
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise ArchiveFormatError("__metadata__ must map strings to strings", 8)

    entries = []
    for name, info in header.items():
        if not isinstance(info, dict):
            raise ArchiveFormatError(f"entry for {name!r} is not an object", 8)
        dtype = info.get("dtype")
        if dtype not in _STORAGE:
            raise ArchiveFormatError(f"unsupported dtype {dtype!r} for tensor {name!r}", 8)
        shape = info.get("shape")
        offsets = info.get("data_offsets")
        if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
            raise ArchiveFormatError(f"bad shape {shape!r} for tensor {name!r}", 8)
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) for o in offsets)
        ):
            raise ArchiveFormatError(f"bad data_offsets {offsets!r} for tensor {name!r}", 8)
        begin, end = offsets
        nbytes = int(np.prod(shape, dtype=np.int64)) * _STORAGE[dtype].itemsize
        if begin < 0 or end < begin or end - begin != nbytes:
            raise ArchiveFormatError(
                f"tensor {name!r}: span [{begin}, {end}) does not hold {nbytes} bytes",
                data_start + max(begin, 0),
            )
        if end > data_len:
            raise ArchiveFormatError(
                f"tensor {name!r}: span [{begin}, {end}) runs past end of file (truncated?)",
                data_start + end,
            )
        entries.append((begin, end, name, dtype, shape))

    entries.sort(key=lambda e: (e[0], e[1]))
    cursor = 0
    for begin, end, name, _, _ in entries:
        if begin < cursor:
            raise ArchiveFormatError(f"tensor {name!r} overlaps the previous tensor", data_start + begin)
        if begin > cursor:
            raise ArchiveFormatError(f"gap before tensor {name!r}", data_start + cursor)
        cursor = end
    if cursor != data_len:
        raise ArchiveFormatError(
            f"{data_len - cursor} trailing bytes not covered by any tensor", data_start + cursor
        )

    archive = TensorArchive(metadata=dict(metadata))
    for begin, end, name, dtype, shape in entries:
        arr = np.frombuffer(blob, dtype=_STORAGE[dtype], count=(end - begin) // _STORAGE[dtype].itemsize,
                            offset=data_start + begin).copy()
        archive.add(NamedTensor(name, dtype, shape, arr))
    return archive


def read_archive(path) -> TensorArchive:
    """Read a tensor archive. Payloads are returned in their stored dtype."""
    with open(os.fspath(path), "rb") as f:
        blob = f.read()
    return deserialize(blob)


def concat(archives: Iterable[TensorArchive]) -> TensorArchive:
    out = TensorArchive()
    for a in archives:
        for t in a.tensors.values():
            out.add(t)
        out.metadata.update(a.metadata)
    return out
