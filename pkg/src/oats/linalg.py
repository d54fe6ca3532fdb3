"""Dense kernels used by the decomposition: truncated SVD and norms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["SvdTruncation", "truncated_svd", "reconstruct", "frob_norm_sq", "randomized_svd"]


@dataclass
class SvdTruncation:
    """Rank-``r`` factors ``U`` (m x r), ``singular_values`` (r,), ``Vt`` (r x n)."""

    U: np.ndarray
    singular_values: np.ndarray
    Vt: np.ndarray

    @property
    def rank(self) -> int:
        return self.singular_values.shape[0]

    @property
    def shape(self) -> tuple:
        return (self.U.shape[0], self.Vt.shape[1])

    def reconstruct(self) -> np.ndarray:
        return reconstruct(self)

    @classmethod
    def zeros(cls, m: int, n: int, dtype=np.float32) -> "SvdTruncation":
        return cls(np.zeros((m, 0), dtype), np.zeros(0, dtype), np.zeros((0, n), dtype))


def _fix_signs(U: np.ndarray, Vt: np.ndarray) -> None:
    """Flip factor pairs in place so the first nonzero entry of each U column is >= 0."""
    if U.shape[1] == 0:
        return
    nonzero = U != 0
    first = np.argmax(nonzero, axis=0)
    lead = U[first, np.arange(U.shape[1])]
    flip = lead < 0
    if flip.any():
        U[:, flip] *= -1
        Vt[flip, :] *= -1


def truncated_svd(
    A: np.ndarray,
    r: int,
    method: str = "exact",
    rng: Optional[np.random.Generator] = None,
) -> SvdTruncation:
    """Best rank-``r`` approximation factors of ``A``.

    ``method="exact"`` runs a full thin SVD (LAPACK divide and conquer).
    ``method="randomized"`` uses a range finder with 10 oversampling columns
    and two power iterations; it is approximate.
    """
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    m, n = A.shape
    r = int(r)
    if not 0 <= r <= min(m, n):
        raise ValueError(f"rank {r} outside [0, {min(m, n)}] for a {m}x{n} matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    dtype = A.dtype if A.dtype in (np.float32, np.float64) else np.float32
    if r == 0:
        return SvdTruncation.zeros(m, n, dtype)
    if method == "exact":
        U, s, Vt = np.linalg.svd(A.astype(dtype, copy=False), full_matrices=False)
        U, s, Vt = U[:, :r].copy(), s[:r].copy(), Vt[:r].copy()
    elif method == "randomized":
        U, s, Vt = randomized_svd(A.astype(dtype, copy=False), r, rng=rng)
    else:
        raise ValueError(f"unknown svd method {method!r}")
    _fix_signs(U, Vt)
    return SvdTruncation(U, s, Vt)


def randomized_svd(A, r, oversample=10, power_iters=2, rng=None):
    """Halko-style randomized SVD, returning the top ``r`` triplets."""
    rng = np.random.default_rng(0) if rng is None else rng
    m, n = A.shape
    width = min(r + oversample, min(m, n))
    omega = rng.standard_normal((n, width)).astype(A.dtype)
    Q, _ = np.linalg.qr(A @ omega)
    for _ in range(power_iters):
        Q, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ Q)
    Ub, s, Vt = np.linalg.svd(Q.T @ A, full_matrices=False)
    U = Q @ Ub
    return U[:, :r].copy(), s[:r].copy(), Vt[:r].copy()


def reconstruct(t: SvdTruncation) -> np.ndarray:
    """``U @ diag(s) @ Vt``; an empty truncation gives the zero matrix."""
    m, n = t.shape
    if t.rank == 0:
        return np.zeros((m, n), dtype=t.U.dtype)
    return (t.U * t.singular_values) @ t.Vt


def frob_norm_sq(A: np.ndarray) -> float:
    """Sum of squared entries, accumulated in float64."""
    a = np.asarray(A, dtype=np.float64).ravel()
    return float(a @ a)
