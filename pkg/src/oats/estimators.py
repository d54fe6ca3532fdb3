"""scikit-learn compatible wrappers.

``OATSLinear`` compresses one linear layer from calibration activations and
then acts as a transformer computing the compressed layer's outputs. Because
``fit_transform`` returns activations of the *compressed* layer, chaining
several of them in a :class:`sklearn.pipeline.Pipeline` propagates the
calibration set through prior compressed layers::

    pipe = make_pipeline(OATSLinear(weight=W1), FunctionTransformer(relu),
                         OATSLinear(weight=W2))
    pipe.fit(X_calib)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .decompose import DecomposeOptions, LayerBudget, alternating_thresholding, budget_for_nm, solve_budget
from .linalg import reconstruct
from .pipeline import apply_compressed, compress_layer
from .scaling import ScalingDiag, ScalingMode, diag_from_activations
from .thresholding import LayerWise, NofM, RowWise

__all__ = ["SparseLowRankApproximation", "OATSLinear"]


def _pattern(kind, k, nm):
    if kind == "LayerWise":
        return LayerWise(k)
    if kind == "RowWise":
        return RowWise(k)
    if kind == "NofM":
        return NofM(*nm)
    raise ValueError(f"unknown pattern {kind!r}")


def _check_matrix(A, name="matrix"):
    return check_array(A, dtype=[np.float32, np.float64], ensure_all_finite=True, input_name=name)


class SparseLowRankApproximation(BaseEstimator):
    """Approximate a matrix as sparse plus low-rank by alternating thresholding.

    Parameters
    ----------
    rank : int
        Maximum rank of the low-rank term.
    n_nonzero : int
        Sparse budget ``k`` (whole-matrix budget for ``"RowWise"``).
    pattern : {"LayerWise", "RowWise", "NofM"}
    nm : tuple of int, optional
        ``(n, m)`` for the N:M pattern.
    n_iter : int
    order : {"SvdFirst", "HardThresholdFirst"}
    svd_mode : {"exact", "randomized"}
    random_state : int

    Attributes
    ----------
    sparse_ : ndarray of shape (m, n)
    low_rank_ : ndarray of shape (m, n)
    U_, singular_values_, Vt_ : low-rank factors
    objective_trace_ : ndarray of shape (n_iter,)
    """

    def __init__(self, rank=1, n_nonzero=0, pattern="LayerWise", nm=None, n_iter=80,
                 order="SvdFirst", svd_mode="exact", random_state=0):
        self.rank = rank
        self.n_nonzero = n_nonzero
        self.pattern = pattern
        self.nm = nm
        self.n_iter = n_iter
        self.order = order
        self.svd_mode = svd_mode
        self.random_state = random_state

    def fit(self, X, y=None):
        A = validate_data(self, X, dtype=[np.float32, np.float64])
        budget = LayerBudget(int(self.rank), int(self.n_nonzero), _pattern(self.pattern, int(self.n_nonzero), self.nm))
        opts = DecomposeOptions(iterations=self.n_iter, order=self.order, svd_mode=self.svd_mode,
                                seed=self.random_state,
                                precision="f64" if A.dtype == np.float64 else "f32")
        result = alternating_thresholding(A, budget, opts)
        self.sparse_ = result.S.values
        self.mask_ = result.S.mask
        self.U_ = result.L.U
        self.singular_values_ = result.L.singular_values
        self.Vt_ = result.L.Vt
        self.low_rank_ = reconstruct(result.L)
        self.objective_trace_ = result.objective_trace
        return self

    def approximation(self):
        check_is_fitted(self, "sparse_")
        return self.sparse_ + self.low_rank_


class OATSLinear(TransformerMixin, BaseEstimator):
    """One linear layer ``y = x W^T + b`` compressed to sparse plus low-rank.

    ``fit(X)`` takes calibration inputs ``X`` of shape ``(n_samples, d_in)``,
    builds the scaling diagonal from them and decomposes ``W D``.
    ``transform(X)`` applies the compressed layer.

    Parameters
    ----------
    weight : array of shape (d_out, d_in)
    bias : array of shape (d_out,), optional
    rho : float, compression rate in (0, 1); ignored for N:M patterns
    kappa : float, share of retained parameters in the low-rank term
    n_iter : int
    pattern : {"RowWise", "LayerWise", "NofM"}
    nm : tuple, ``(n, m)`` for ``pattern="NofM"``
    scaling : {"SecondMoment", "RobustMedian", "Identity"}
    order : {"SvdFirst", "HardThresholdFirst"}
    sparse_step : {"Scaled", "Unscaled"}
    svd_mode : {"exact", "randomized"}
    random_state : int
    """

    def __init__(self, weight=None, bias=None, rho=0.5, kappa=0.25, n_iter=80, pattern="RowWise",
                 nm=None, scaling="SecondMoment", order="SvdFirst", sparse_step="Scaled",
                 svd_mode="exact", random_state=0):
        self.weight = weight
        self.bias = bias
        self.rho = rho
        self.kappa = kappa
        self.n_iter = n_iter
        self.pattern = pattern
        self.nm = nm
        self.scaling = scaling
        self.order = order
        self.sparse_step = sparse_step
        self.svd_mode = svd_mode
        self.random_state = random_state

    def _budget(self, d_out, d_in):
        if self.pattern == "NofM":
            return budget_for_nm(d_out, d_in, self.nm[0], self.nm[1], self.kappa)
        return solve_budget(d_out, d_in, self.rho, self.kappa, self.pattern)

    def fit(self, X, y=None):
        if self.weight is None:
            raise ValueError("OATSLinear needs a weight matrix")
        W = _check_matrix(self.weight, "weight").astype(np.float32)
        d_out, d_in = W.shape
        X = validate_data(self, X, dtype=[np.float32, np.float64])
        if X.shape[1] != d_in:
            raise ValueError(f"X has {X.shape[1]} features, weight expects {d_in}")
        bias = None
        if self.bias is not None:
            bias = np.asarray(self.bias, dtype=np.float32)
            if bias.shape != (d_out,):
                raise ValueError(f"bias shape {bias.shape} does not match d_out={d_out}")
        mode = ScalingMode(self.scaling)
        if mode is ScalingMode.IDENTITY:
            self.scaling_ = ScalingDiag.identity(d_in)
        else:
            self.scaling_ = diag_from_activations(X, mode, seed=self.random_state)
        self.budget_ = self._budget(d_out, d_in)
        opts = DecomposeOptions(iterations=self.n_iter, order=self.order,
                                sparse_step_scaling=self.sparse_step, svd_mode=self.svd_mode,
                                seed=self.random_state)
        self.layer_, result = compress_layer("layer", W, self.budget_, self.scaling_, opts, bias)
        self.objective_trace_ = result.objective_trace
        self.compression_rate_ = 1.0 - self.layer_.n_params() / (d_out * d_in)
        return self

    def transform(self, X):
        check_is_fitted(self, "layer_")
        X = validate_data(self, X, reset=False, dtype=[np.float32, np.float64])
        return apply_compressed(self.layer_, X)

    def compressed_weight(self):
        """Dense ``(S + L) D^-1``."""
        check_is_fitted(self, "layer_")
        return self.layer_.dense()
