"""Hard-thresholding projections onto sparsity patterns.

Three patterns are supported: global top-k (``LayerWise``), the same
per-row budget ``k // rows`` in each row (``RowWise``), and N-of-M groups
along the input dimension (``NofM``). Ties on magnitude go to the lowest
row-major index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "LayerWise",
    "RowWise",
    "NofM",
    "SparsityPattern",
    "MaskedMatrix",
    "hard_threshold",
    "pattern_from_dict",
]


@dataclass(frozen=True)
class LayerWise:
    k: int

    def nnz(self, shape) -> int:
        return min(int(self.k), shape[0] * shape[1])

    def validate(self, shape) -> None:
        if self.k < 0:
            raise ValueError(f"LayerWise k must be >= 0, got {self.k}")

    def to_dict(self) -> dict:
        return {"kind": "LayerWise", "k": int(self.k)}


@dataclass(frozen=True)
class RowWise:
    """``k`` is the whole-matrix budget; each row keeps ``k // rows``.

    The remainder ``k - rows * (k // rows)`` is dropped, not redistributed.
    """

    k: int

    def per_row(self, shape) -> int:
        return min(int(self.k) // shape[0], shape[1]) if shape[0] else 0

    def nnz(self, shape) -> int:
        return shape[0] * self.per_row(shape)

    def validate(self, shape) -> None:
        if self.k < 0:
            raise ValueError(f"RowWise k must be >= 0, got {self.k}")

    def to_dict(self) -> dict:
        return {"kind": "RowWise", "k": int(self.k)}


@dataclass(frozen=True)
class NofM:
    n: int
    m: int

    def nnz(self, shape) -> int:
        return shape[0] * (shape[1] // self.m) * self.n

    def validate(self, shape) -> None:
        if not 0 < self.n <= self.m:
            raise ValueError(f"N:M pattern needs 0 < n <= m, got {self.n}:{self.m}")
        if shape[1] % self.m:
            raise ValueError(f"{shape[1]} columns are not divisible by group size m={self.m}")

    def to_dict(self) -> dict:
        return {"kind": "NofM", "n": int(self.n), "m": int(self.m)}


SparsityPattern = Union[LayerWise, RowWise, NofM]


def pattern_from_dict(d: dict) -> SparsityPattern:
    kind = d["kind"]
    if kind == "LayerWise":
        return LayerWise(int(d["k"]))
    if kind == "RowWise":
        return RowWise(int(d["k"]))
    if kind == "NofM":
        return NofM(int(d["n"]), int(d["m"]))
    raise ValueError(f"unknown sparsity pattern {kind!r}")


@dataclass
class MaskedMatrix:
    values: np.ndarray
    mask: np.ndarray

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.mask))


def _topk_last_axis(mag: np.ndarray, keep: int) -> np.ndarray:
    """Mask of the ``keep`` largest entries along the last axis, ties to lower index."""
    width = mag.shape[-1]
    if keep <= 0:
        return np.zeros(mag.shape, dtype=bool)
    if keep >= width:
        return np.ones(mag.shape, dtype=bool)
    kth = np.partition(mag, width - keep, axis=-1)[..., width - keep : width - keep + 1]
    above = mag > kth
    need = keep - above.sum(axis=-1, keepdims=True)
    tied = mag == kth
    return above | (tied & (np.cumsum(tied, axis=-1) <= need))


def hard_threshold(A: np.ndarray, pattern: SparsityPattern) -> MaskedMatrix:
    """Frobenius projection of ``A`` onto the sparsity set of ``pattern``.

    Kept entries are copied from ``A`` unchanged; the mask popcount equals
    ``pattern.nnz(A.shape)`` exactly, even when some kept values are zero.
    """
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    pattern.validate(A.shape)
    mag = np.abs(A)
    rows, cols = A.shape
    if isinstance(pattern, LayerWise):
        mask = _topk_last_axis(mag.reshape(1, -1), pattern.nnz(A.shape)).reshape(A.shape)
    elif isinstance(pattern, RowWise):
        mask = _topk_last_axis(mag, pattern.per_row(A.shape))
    elif isinstance(pattern, NofM):
        grouped = mag.reshape(rows, cols // pattern.m, pattern.m)
        mask = _topk_last_axis(grouped, pattern.n).reshape(A.shape)
    else:
        raise TypeError(f"not a sparsity pattern: {pattern!r}")
    values = np.where(mask, A, np.zeros((), dtype=A.dtype))
    return MaskedMatrix(values, mask)
