"""Sparse plus low-rank compression of linear layers with outlier-aware scaling."""

from .decompose import (
    PRESETS,
    DecomposeOptions,
    DecompositionResult,
    LayerBudget,
    alternating_thresholding,
    budget_for_nm,
    solve_budget,
)
from .estimators import OATSLinear, SparseLowRankApproximation
from .linalg import SvdTruncation, frob_norm_sq, reconstruct, truncated_svd
from .pipeline import (
    CompressionPlan,
    CompressionReport,
    ModelGraph,
    SparseLowRankLayer,
    apply_compressed,
    compress_model,
    read_compressed,
    write_compressed,
)
from .scaling import ScalingDiag, ScalingMode, build_diag
from .tensor_store import NamedTensor, TensorArchive, read_archive, write_archive
from .thresholding import LayerWise, NofM, RowWise, hard_threshold

__version__ = "0.1.0"

__all__ = [
    "PRESETS",
    "DecomposeOptions",
    "DecompositionResult",
    "LayerBudget",
    "alternating_thresholding",
    "budget_for_nm",
    "solve_budget",
    "OATSLinear",
    "SparseLowRankApproximation",
    "SvdTruncation",
    "frob_norm_sq",
    "reconstruct",
    "truncated_svd",
    "CompressionPlan",
    "CompressionReport",
    "ModelGraph",
    "SparseLowRankLayer",
    "apply_compressed",
    "compress_model",
    "read_compressed",
    "write_compressed",
    "ScalingDiag",
    "ScalingMode",
    "build_diag",
    "NamedTensor",
    "TensorArchive",
    "read_archive",
    "write_archive",
    "LayerWise",
    "NofM",
    "RowWise",
    "hard_threshold",
]
