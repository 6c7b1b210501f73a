"""Dense-tensor foundation: the MQT1 file format and masked sequence batches.

All arithmetic in this package runs on 64-bit floats. The on-disk format
stores 32-bit floats; values are widened on load and narrowed on store.
Masks are floats restricted to {0.0, 1.0} so the pooling arithmetic stays
literal.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptySequenceError,
    MaskDomainError,
    ShapeError,
    TensorFormatError,
    TensorLengthError,
)

MAGIC = b"MQT1"
_MAX_NDIM = 32


@dataclass(frozen=True)
class Tensor:
    """A dense tensor: shape plus a flat row-major float64 buffer.

    Immutable from the caller's perspective; safe to share across threads
    for reading.
    """

    dims: tuple[int, ...]
    data: np.ndarray  # flat, float64, row-major

    def __post_init__(self):
        if any(d <= 0 for d in self.dims):
            raise ShapeError(f"dims must be positive, got {self.dims}")
        n = int(np.prod(self.dims, dtype=np.int64)) if self.dims else 1
        if self.data.ndim != 1 or self.data.size != n:
            raise ShapeError(
                f"flat data of length {self.data.size} does not match dims {self.dims}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        a = np.ascontiguousarray(arr, dtype=np.float64)
        return cls(tuple(int(d) for d in a.shape), a.reshape(-1))

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.dims)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)


def tensor_write(t: Tensor, path) -> None:
    """Write `t` in the MQT1 format (little-endian, f32 payload).

    Layout: magic "MQT1" | u32 ndim | ndim x u32 dims | prod(dims) x f32,
    row-major, no padding. Deterministic bytes for identical input.
    """
    header = MAGIC + struct.pack("<I", len(t.dims))
    header += struct.pack(f"<{len(t.dims)}I", *t.dims)
    payload = t.data.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def tensor_read(path) -> Tensor:
    """Read an MQT1 file; values are widened to float64."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    if ndim > _MAX_NDIM:
        raise TensorFormatError(f"{path}: implausible ndim {ndim}")
    header_end = 8 + 4 * ndim
    if len(raw) < header_end:
        raise TensorFormatError(f"{path}: truncated dims header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: zero dim in {dims}")
    count = 1
    for d in dims:
        count *= d
    expected = header_end + 4 * count
    if len(raw) < expected:
        raise TensorLengthError(
            f"{path}: payload holds {(len(raw) - header_end) // 4} of {count} values"
        )
    if len(raw) > expected:
        raise TensorLengthError(f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=header_end)
    return Tensor(tuple(int(d) for d in dims), data.astype(np.float64))


def write_array(arr: np.ndarray, path) -> None:
    tensor_write(Tensor.from_array(arr), path)


def read_array(path) -> np.ndarray:
    return tensor_read(path).to_array()


@dataclass
class SequenceBatch:
    """Batched variable-length frame features with a validity mask.

    features: [B, T, K] float64; mask: [B, T] float64 in {0, 1}. Mask
    patterns may be arbitrary (validity need not be a prefix), but every
    row must keep at least one valid frame.
    """

    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=np.float64)
        if self.features.ndim != 3:
            raise ShapeError(f"features must be [B,T,K], got {self.features.shape}")
        if self.mask.shape != self.features.shape[:2]:
            raise ShapeError(
                f"mask {self.mask.shape} does not match features {self.features.shape}"
            )

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]

    @property
    def max_frames(self) -> int:
        return self.features.shape[1]

    @property
    def feature_size(self) -> int:
        return self.features.shape[2]


def validate_batch(batch: SequenceBatch) -> None:
    """Check SequenceBatch invariants; raise on the first violation."""
    m = batch.mask
    bad = (m != 0.0) & (m != 1.0)
    if bad.any():
        b, t = np.argwhere(bad)[0]
        raise MaskDomainError(f"mask[{b},{t}] = {m[b, t]} is not 0 or 1")
    valid = m.sum(axis=1)
    if (valid < 1).any():
        row = int(np.argmin(valid))
        raise EmptySequenceError(f"batch row {row} has no valid frame")


def seeded_rng(seed: int, name: str) -> np.random.Generator:
    """Named deterministic generator: independent streams per (seed, name)."""
    return np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(name.encode())])
