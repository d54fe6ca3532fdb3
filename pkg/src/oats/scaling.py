"""Outlier-aware diagonal scaling computed from calibration activations."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

__all__ = [
    "ScalingMode",
    "ActivationMoments",
    "ScalingDiag",
    "accumulate",
    "build_diag",
    "scale_weights",
    "unscale",
    "RESERVOIR_SIZE",
]

RESERVOIR_SIZE = 65536
CLAMP_RELATIVE = 1e-8
CLAMP_ABSOLUTE = 1e-12


class ScalingMode(str, Enum):
    SECOND_MOMENT = "SecondMoment"
    ROBUST_MEDIAN = "RobustMedian"
    IDENTITY = "Identity"


@dataclass
class ActivationMoments:
    """Running per-feature statistics of layer inputs.

    ``abs_samples`` is a row reservoir of ``|X|`` kept only when
    ``keep_samples`` is set (needed for the robust median).
    """

    d_in: int
    sum_sq: np.ndarray = None
    count: int = 0
    keep_samples: bool = False
    abs_samples: Optional[np.ndarray] = None
    reservoir_size: int = RESERVOIR_SIZE
    seed: int = 0
    _rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.sum_sq is None:
            self.sum_sq = np.zeros(self.d_in, dtype=np.float64)
        if self.keep_samples and self.abs_samples is None:
            self.abs_samples = np.zeros((0, self.d_in), dtype=np.float32)
        if self._rng is None:
            self._rng = np.random.default_rng(self.seed)


def accumulate(m: ActivationMoments, X: np.ndarray) -> ActivationMoments:
    """Add the rows of ``X`` (B x d_in) into ``m`` in place and return it."""
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != m.d_in:
        raise ValueError(f"activations of shape {X.shape} do not match d_in={m.d_in}")
    if not np.all(np.isfinite(X)):
        raise ValueError("activations contain non-finite values")
    X64 = X.astype(np.float64, copy=False)
    m.sum_sq += np.einsum("bj,bj->j", X64, X64)
    if m.keep_samples:
        _reservoir_add(m, np.abs(X).astype(np.float32))
    m.count += X.shape[0]
    return m


def _reservoir_add(m: ActivationMoments, rows: np.ndarray) -> None:
    # Algorithm R over rows; every feature shares the same sampled rows.
    seen = m.count
    room = m.reservoir_size - m.abs_samples.shape[0]
    if room > 0:
        head = rows[:room]
        m.abs_samples = np.concatenate([m.abs_samples, head])
        rows = rows[len(head):]
        seen += len(head)
    if not len(rows):
        return
    slots = m._rng.integers(0, seen + 1 + np.arange(len(rows)))
    for i in np.flatnonzero(slots < m.reservoir_size):
        m.abs_samples[slots[i]] = rows[i]


@dataclass(frozen=True)
class ScalingDiag:
    d: np.ndarray
    d_inv: np.ndarray
    mode: ScalingMode

    @property
    def clamp_floor(self) -> float:
        return _clamp_floor(self.d)

    @classmethod
    def identity(cls, d_in: int) -> "ScalingDiag":
        ones = np.ones(d_in, dtype=np.float32)
        return cls(ones, ones.copy(), ScalingMode.IDENTITY)


def _clamp_floor(d: np.ndarray) -> float:
    top = float(np.max(d)) if d.size else 0.0
    return CLAMP_RELATIVE * top if top > 0 else CLAMP_ABSOLUTE


def build_diag(m: ActivationMoments, mode=ScalingMode.SECOND_MOMENT) -> ScalingDiag:
    """Diagonal of D and its inverse, clamped below at ``1e-8 * max(d)``."""
    mode = ScalingMode(mode)
    if mode is ScalingMode.IDENTITY:
        return ScalingDiag.identity(m.d_in)
    if m.count == 0:
        raise ValueError("no activations accumulated")
    if mode is ScalingMode.SECOND_MOMENT:
        d = np.sqrt(m.sum_sq)
    else:
        if m.abs_samples is None:
            raise ValueError("robust median scaling needs moments built with keep_samples=True")
        d = np.median(m.abs_samples.astype(np.float64), axis=0)
    d = d.astype(np.float32)
    eps = _clamp_floor(d)
    d_inv = (1.0 / np.maximum(d.astype(np.float64), eps)).astype(np.float32)
    return ScalingDiag(d, d_inv, mode)


def diag_from_activations(X: np.ndarray, mode=ScalingMode.SECOND_MOMENT, seed: int = 0) -> ScalingDiag:
    mode = ScalingMode(mode)
    X = np.asarray(X)
    m = ActivationMoments(X.shape[1], keep_samples=mode is ScalingMode.ROBUST_MEDIAN, seed=seed)
    return build_diag(accumulate(m, X), mode)


def _check_cols(M: np.ndarray, v: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[1] != v.shape[0]:
        raise ValueError(f"matrix of shape {M.shape} does not match scaling of length {v.shape[0]}")


def scale_weights(W: np.ndarray, s: ScalingDiag) -> np.ndarray:
    """``W @ diag(d)``: column j of ``W`` times ``d[j]``."""
    W = np.asarray(W)
    _check_cols(W, s.d)
    return W * s.d.astype(W.dtype, copy=False)


def unscale(M: np.ndarray, s: ScalingDiag) -> np.ndarray:
    """``M @ diag(d_inv)``; zero entries stay zero."""
    M = np.asarray(M)
    _check_cols(M, s.d_inv)
    return M * s.d_inv.astype(M.dtype, copy=False)
