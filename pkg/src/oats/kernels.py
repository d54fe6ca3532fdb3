"""CPU apply kernels for dense, CSR, N:M and sparse plus low-rank layers.

Every kernel computes ``Y = X @ W.T`` for a batch ``X`` of shape
``(batch, d_in)``. Sparse kernels accumulate in float64 and return float32.
The ``parallel`` variants split output rows across numba worker threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np

# numba falls back to another threading layer when TBB is too old; the notice is not actionable
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

__all__ = [
    "CsrMatrix",
    "NmMatrix",
    "dense_apply",
    "csr_apply",
    "nm_apply",
    "slr_apply",
    "set_workers",
]


@dataclass
class CsrMatrix:
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    shape: tuple

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_mask(cls, values: np.ndarray, mask: np.ndarray) -> "CsrMatrix":
        """Store every masked position, including explicit zeros, row by row."""
        rows, cols = np.nonzero(mask)
        indptr = np.zeros(mask.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=mask.shape[0]), out=indptr[1:])
        return cls(indptr, cols.astype(np.int64), np.ascontiguousarray(values[rows, cols]), mask.shape)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "CsrMatrix":
        return cls.from_mask(dense, dense != 0)

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        rows = np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        out[rows, self.indices] = self.values
        return out

    def validate(self) -> None:
        d_out, d_in = self.shape
        if self.indptr.shape != (d_out + 1,) or self.indptr[0] != 0:
            raise ValueError("indptr must have length d_out + 1 and start at 0")
        if np.any(np.diff(self.indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if self.indices.shape[0] != self.nnz or self.values.shape[0] != self.nnz:
            raise ValueError("indices/values length must equal indptr[-1]")
        if self.nnz and (self.indices.min() < 0 or self.indices.max() >= d_in):
            raise ValueError("column index out of range")
        for i in range(d_out):
            row = self.indices[self.indptr[i] : self.indptr[i + 1]]
            if np.any(np.diff(row) <= 0):
                raise ValueError(f"row {i}: column indices must be strictly increasing")


@dataclass
class NmMatrix:
    """N:M storage: ``n`` values and their columns for every group of ``m`` inputs."""

    values: np.ndarray  # (d_out, d_in // m * n)
    columns: np.ndarray  # same shape, absolute column index
    n: int
    m: int
    shape: tuple

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_mask(cls, values: np.ndarray, mask: np.ndarray, n: int, m: int) -> "NmMatrix":
        d_out, d_in = mask.shape
        counts = mask.reshape(d_out, d_in // m, m).sum(axis=-1)
        if np.any(counts != n):
            raise ValueError(f"mask is not an exact {n}:{m} pattern")
        rows, cols = np.nonzero(mask)
        width = d_in // m * n
        return cls(
            np.ascontiguousarray(values[rows, cols].reshape(d_out, width)),
            cols.reshape(d_out, width).astype(np.int64),
            n,
            m,
            (d_out, d_in),
        )

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.values.dtype)
        np.put_along_axis(out, self.columns, self.values, axis=1)
        return out


def set_workers(workers: int) -> int:
    """Cap numba's thread pool; returns the count actually in effect."""
    workers = max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(workers)
    return workers


@numba.njit(cache=True)
def _csr_rows(indptr, indices, values, xt, out_t, lo, hi):
    batch = xt.shape[1]
    if batch == 1:
        for i in range(lo, hi):
            s = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                s += np.float64(values[p]) * xt[indices[p], 0]
            out_t[i, 0] = s
        return
    acc = np.empty(batch, dtype=np.float64)
    for i in range(lo, hi):
        acc[:] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            v = np.float64(values[p])
            col = indices[p]
            for b in range(batch):
                acc[b] += v * xt[col, b]
        for b in range(batch):
            out_t[i, b] = acc[b]


@numba.njit(cache=True)
def _csr_serial(indptr, indices, values, xt, out_t):
    _csr_rows(indptr, indices, values, xt, out_t, 0, out_t.shape[0])


@numba.njit(cache=True, parallel=True)
def _csr_parallel(indptr, indices, values, xt, out_t, chunks):
    rows = out_t.shape[0]
    step = (rows + chunks - 1) // chunks
    for c in numba.prange(chunks):
        lo = c * step
        hi = min(rows, lo + step)
        if lo < hi:
            _csr_rows(indptr, indices, values, xt, out_t, lo, hi)


@numba.njit(cache=True)
def _nm_rows(values, columns, xt, out_t, lo, hi):
    batch = xt.shape[1]
    width = values.shape[1]
    if batch == 1:
        for i in range(lo, hi):
            s = 0.0
            for p in range(width):
                s += np.float64(values[i, p]) * xt[columns[i, p], 0]
            out_t[i, 0] = s
        return
    acc = np.empty(batch, dtype=np.float64)
    for i in range(lo, hi):
        acc[:] = 0.0
        for p in range(width):
            v = np.float64(values[i, p])
            col = columns[i, p]
            for b in range(batch):
                acc[b] += v * xt[col, b]
        for b in range(batch):
            out_t[i, b] = acc[b]


@numba.njit(cache=True)
def _nm_serial(values, columns, xt, out_t):
    _nm_rows(values, columns, xt, out_t, 0, out_t.shape[0])


@numba.njit(cache=True, parallel=True)
def _nm_parallel(values, columns, xt, out_t, chunks):
    rows = out_t.shape[0]
    step = (rows + chunks - 1) // chunks
    for c in numba.prange(chunks):
        lo = c * step
        hi = min(rows, lo + step)
        if lo < hi:
            _nm_rows(values, columns, xt, out_t, lo, hi)


def _as_batch(X: np.ndarray, d_in: int):
    X = np.asarray(X, dtype=np.float32)
    vector = X.ndim == 1
    X2 = X.reshape(1, -1) if vector else X
    if X2.ndim != 2 or X2.shape[1] != d_in:
        raise ValueError(f"input of shape {X.shape} does not match d_in={d_in}")
    return X2, vector


def dense_apply(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    X2, vector = _as_batch(X, W.shape[1])
    out = X2 @ np.asarray(W, dtype=np.float32).T
    return out[0] if vector else out


def csr_apply(csr: CsrMatrix, X: np.ndarray, parallel: bool = False) -> np.ndarray:
    X2, vector = _as_batch(X, csr.shape[1])
    xt = np.ascontiguousarray(X2.T)
    out_t = np.empty((csr.shape[0], X2.shape[0]), dtype=np.float32)
    if parallel:
        _csr_parallel(csr.indptr, csr.indices, csr.values, xt, out_t, numba.get_num_threads() * 4)
    else:
        _csr_serial(csr.indptr, csr.indices, csr.values, xt, out_t)
    return out_t[:, 0] if vector else out_t.T


def nm_apply(nm: NmMatrix, X: np.ndarray, parallel: bool = False) -> np.ndarray:
    X2, vector = _as_batch(X, nm.shape[1])
    xt = np.ascontiguousarray(X2.T)
    out_t = np.empty((nm.shape[0], X2.shape[0]), dtype=np.float32)
    if parallel:
        _nm_parallel(nm.values, nm.columns, xt, out_t, numba.get_num_threads() * 4)
    else:
        _nm_serial(nm.values, nm.columns, xt, out_t)
    return out_t[:, 0] if vector else out_t.T


def slr_apply(csr: CsrMatrix, U: np.ndarray, SVt: np.ndarray, X: np.ndarray, parallel: bool = False) -> np.ndarray:
    """``X @ S.T + (X @ SVt.T) @ U.T``."""
    out = csr_apply(csr, X, parallel=parallel)
    if U.shape[1]:
        X2, vector = _as_batch(X, csr.shape[1])
        low = (X2 @ SVt.T) @ U.T
        out = out + (low[0] if vector else low)
    return out
