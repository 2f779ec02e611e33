"""Dense and sparse vector containers plus file loaders.

Dense vectors are plain float64 numpy arrays throughout the package;
this module only adds validation helpers, the index/value sparse
container produced by sparsifiers, and the two on-disk formats
(CSV with one value per cell, and little-endian f64 with an 8-byte
length header).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SparseVector",
    "as_vector",
    "check_finite",
    "load_vector_csv",
    "save_vector_csv",
    "load_vector_f64",
    "save_vector_f64",
]


def as_vector(x) -> np.ndarray:
    """Coerce to a finite 1-D float64 array of length >= 1."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"expected a 1-D vector of length >= 1, got shape {v.shape}")
    check_finite(v)
    return v


def check_finite(v: np.ndarray) -> None:
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains NaN or Inf entries")


@dataclass(frozen=True)
class SparseVector:
    """Index/value vector with strictly increasing indices in [0, dim)."""

    dim: int
    idx: np.ndarray = field(repr=False)
    val: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.idx, dtype=np.int64)
        val = np.asarray(self.val, dtype=np.float64)
        object.__setattr__(self, "idx", idx)
        object.__setattr__(self, "val", val)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("idx and val must be 1-D arrays of equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("index out of range")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly increasing")
        check_finite(val)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.val))

    @classmethod
    def from_dense(cls, v: np.ndarray) -> "SparseVector":
        v = as_vector(v)
        idx = np.flatnonzero(v)
        return cls(dim=v.size, idx=idx, val=v[idx])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.idx] = self.val
        return out

    def dot(self, w: np.ndarray) -> float:
        if w.shape != (self.dim,):
            raise ValueError("dimension mismatch")
        return float(self.val @ w[self.idx])


def load_vector_csv(path) -> np.ndarray:
    """Read a vector from CSV, one value per cell, row-major."""
    values = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            values.extend(float(cell) for cell in row if cell.strip() != "")
    return as_vector(values)


def save_vector_csv(v: np.ndarray, path) -> None:
    v = as_vector(v)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for x in v:
            writer.writerow([repr(float(x))])


def load_vector_f64(path) -> np.ndarray:
    """Binary format: u64-LE length header followed by length f64-LE values."""
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError("truncated header")
        (n,) = struct.unpack("<Q", header)
        data = fh.read(8 * n)
        if len(data) != 8 * n:
            raise ValueError("truncated payload")
    return as_vector(np.frombuffer(data, dtype="<f8"))


def save_vector_f64(v: np.ndarray, path) -> None:
    v = as_vector(v)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", v.size))
        fh.write(v.astype("<f8").tobytes())
