"""Whole-model compression: scaling, decomposition and calibration propagation.

Blocks are compressed in order. Every layer builds its scaling diagonal from
inputs that already went through the compressed earlier blocks (and through
compressed layers that feed it inside the same block), so the calibration
set sees the model as it will be deployed.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .decompose import (
    DecomposeOptions,
    LayerBudget,
    Order,
    SparseStepScaling,
    alternating_thresholding,
    budget_for_nm,
    solve_budget,
)
from .kernels import CsrMatrix, csr_apply
from .scaling import ScalingDiag, ScalingMode, diag_from_activations, scale_weights, unscale
from .tensor_store import FLOAT_DTYPES, NamedTensor, TensorArchive, from_f32, read_archive, write_archive

__all__ = [
    "CompressionPlan",
    "LayerSpec",
    "Block",
    "ModelGraph",
    "SparseLowRankLayer",
    "LayerReport",
    "CompressionReport",
    "CompressedModel",
    "compress_layer",
    "compress_model",
    "apply_compressed",
    "forward",
    "record_activations",
    "write_compressed",
    "read_compressed",
]

log = logging.getLogger(__name__)

ARTIFACT_FORMAT = "oats-slr/1"
DEFAULT_EXCLUDE = ("*embed*", "*lm_head*")


@dataclass
class CompressionPlan:
    rho: float = 0.5
    kappa: float = 0.25
    iterations: int = 80
    pattern_kind: str = "RowWise"
    nm: Optional[tuple] = None
    scaling_mode: str = "SecondMoment"
    order: str = "SvdFirst"
    sparse_step_scaling: str = "Scaled"
    per_layer_rho: Dict[str, float] = field(default_factory=dict)
    exclude: List[str] = field(default_factory=lambda: list(DEFAULT_EXCLUDE))
    svd_mode: str = "exact"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0 <= self.kappa < 1:
            raise ValueError(f"kappa must lie in [0, 1), got {self.kappa}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.pattern_kind not in ("LayerWise", "RowWise", "NofM"):
            raise ValueError(f"unknown pattern_kind {self.pattern_kind!r}")
        if self.pattern_kind == "NofM":
            if self.nm is None or len(self.nm) != 2:
                raise ValueError("pattern_kind NofM needs nm = [n, m]")
            self.nm = (int(self.nm[0]), int(self.nm[1]))
        ScalingMode(self.scaling_mode)
        Order(self.order)
        SparseStepScaling(self.sparse_step_scaling)
        for name, value in self.per_layer_rho.items():
            if not 0 < value < 1:
                raise ValueError(f"per_layer_rho[{name!r}] = {value} outside (0, 1)")
        self.exclude = list(self.exclude)

    @property
    def mode(self) -> str:
        return "wanda-equivalent" if self.kappa == 0 else "oats"

    @property
    def needs_calibration(self) -> bool:
        return ScalingMode(self.scaling_mode) is not ScalingMode.IDENTITY

    def rho_for(self, layer: str) -> float:
        return self.per_layer_rho.get(layer, self.rho)

    def is_excluded(self, layer: str) -> bool:
        return any(fnmatch.fnmatchcase(layer, pat) for pat in self.exclude)

    def budget(self, layer: str, d_out: int, d_in: int) -> LayerBudget:
        if self.pattern_kind == "NofM":
            return budget_for_nm(d_out, d_in, self.nm[0], self.nm[1], self.kappa)
        return solve_budget(d_out, d_in, self.rho_for(layer), self.kappa, self.pattern_kind)

    def decompose_options(self) -> DecomposeOptions:
        return DecomposeOptions(
            iterations=self.iterations,
            order=self.order,
            sparse_step_scaling=self.sparse_step_scaling,
            svd_mode=self.svd_mode,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["nm"] = list(self.nm) if self.nm is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionPlan":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CompressionPlan":
        with open(path) as f:
            return cls.from_dict(json.load(f))


ACTIVATIONS = ("identity", "relu", "gelu")


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return x
    if kind == "relu":
        return np.maximum(x, np.float32(0))
    if kind == "gelu":
        # tanh approximation
        c = np.float32(np.sqrt(2.0 / np.pi))
        return np.float32(0.5) * x * (np.float32(1) + np.tanh(c * (x + np.float32(0.044715) * x**3)))
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class LayerSpec:
    """One linear layer. ``input`` names an earlier layer of the same block
    whose (activated) output feeds this one; ``None`` means the block input."""

    name: str
    d_out: int
    d_in: int
    weight: str
    bias: Optional[str] = None
    input: Optional[str] = None
    activation: Optional[str] = None


@dataclass
class Block:
    """Linear layers plus an elementwise activation applied to each layer output.

    The block output is the last layer's activated output, plus the block
    input when ``residual`` is set.
    """

    layers: List[LayerSpec]
    activation: str = "identity"
    residual: bool = False

    def layer_activation(self, layer: LayerSpec) -> str:
        return layer.activation or self.activation


@dataclass
class ModelGraph:
    blocks: List[Block]

    def __post_init__(self):
        names = [l.name for b in self.blocks for l in b.layers]
        if len(set(names)) != len(names):
            raise ValueError("layer names must be unique")
        width = None
        for bi, block in enumerate(self.blocks):
            if not block.layers:
                raise ValueError(f"block {bi} has no layers")
            if block.activation not in ACTIVATIONS:
                raise ValueError(f"block {bi}: unknown activation {block.activation!r}")
            seen = {}
            for layer in block.layers:
                if layer.activation is not None and layer.activation not in ACTIVATIONS:
                    raise ValueError(f"{layer.name}: unknown activation {layer.activation!r}")
                if layer.input is None:
                    if width is not None and layer.d_in != width:
                        raise ValueError(f"{layer.name}: d_in={layer.d_in} but block input has width {width}")
                else:
                    if layer.input not in seen:
                        raise ValueError(f"{layer.name}: input {layer.input!r} is not an earlier layer of its block")
                    if seen[layer.input].d_out != layer.d_in:
                        raise ValueError(f"{layer.name}: d_in={layer.d_in} != d_out of {layer.input!r}")
                seen[layer.name] = layer
            block_in = width if width is not None else block.layers[0].d_in
            out = block.layers[-1].d_out
            if block.residual and out != block_in:
                raise ValueError(f"block {bi}: residual needs output width {out} == input width {block_in}")
            width = out

    @property
    def layers(self) -> List[LayerSpec]:
        return [l for b in self.blocks for l in b.layers]

    @property
    def input_name(self) -> str:
        return self.blocks[0].layers[0].name

    @property
    def d_in(self) -> int:
        return self.blocks[0].layers[0].d_in

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "blocks": [
                {
                    "activation": b.activation,
                    "residual": b.residual,
                    "layers": [{k: v for k, v in asdict(l).items() if v is not None} for l in b.layers],
                }
                for b in self.blocks
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelGraph":
        blocks = []
        for b in d["blocks"]:
            layers = [LayerSpec(**l) for l in b["layers"]]
            blocks.append(Block(layers, b.get("activation", "identity"), bool(b.get("residual", False))))
        return cls(blocks)

    @classmethod
    def from_json(cls, path) -> "ModelGraph":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def check_weights(self, weights: TensorArchive) -> None:
        for l in self.layers:
            if l.weight not in weights:
                raise ValueError(f"weight tensor {l.weight!r} for layer {l.name!r} not found")
            shape = weights[l.weight].shape
            if shape != (l.d_out, l.d_in):
                raise ValueError(f"{l.name}: weight shape {shape} != ({l.d_out}, {l.d_in})")
            if l.bias is not None:
                if l.bias not in weights:
                    raise ValueError(f"bias tensor {l.bias!r} for layer {l.name!r} not found")
                if weights[l.bias].shape != (l.d_out,):
                    raise ValueError(f"{l.name}: bias shape {weights[l.bias].shape} != ({l.d_out},)")


@dataclass
class SparseLowRankLayer:
    """Deployable layer ``x -> x S^T + (x SVt^T) U^T + bias``.

    ``csr_*`` encode the sparse term ``S D^-1`` and ``SVt`` holds
    ``Sigma_r V_r^T D^-1``; the scaling is already folded in.
    """

    name: str
    csr_indptr: np.ndarray
    csr_indices: np.ndarray
    csr_values: np.ndarray
    U: np.ndarray
    SVt: np.ndarray
    bias: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return (self.U.shape[0], self.SVt.shape[1])

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.csr_indptr[-1])

    @property
    def csr(self) -> CsrMatrix:
        return CsrMatrix(self.csr_indptr, self.csr_indices, self.csr_values, self.shape)

    def n_params(self) -> int:
        d_out, d_in = self.shape
        return self.nnz + self.rank * (d_out + d_in)

    def sparse_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def dense(self) -> np.ndarray:
        """Materialized weight ``(S + L) D^-1``."""
        out = self.sparse_dense().astype(np.float32)
        if self.rank:
            out += self.U.astype(np.float32) @ self.SVt.astype(np.float32)
        return out

    def validate(self) -> None:
        self.csr.validate()
        if self.U.shape[1] != self.SVt.shape[0]:
            raise ValueError(f"{self.name}: factor shapes {self.U.shape} and {self.SVt.shape} disagree")
        if self.bias is not None and self.bias.shape != (self.shape[0],):
            raise ValueError(f"{self.name}: bias shape {self.bias.shape} does not match d_out")


def apply_compressed(layer: SparseLowRankLayer, x: np.ndarray) -> np.ndarray:
    """Apply the compressed layer to a vector ``(d_in,)`` or batch ``(B, d_in)``."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != layer.shape[1] or x.ndim not in (1, 2):
        raise ValueError(f"input of shape {x.shape} does not match d_in={layer.shape[1]}")
    out = csr_apply(layer.csr, x)
    if layer.rank:
        out = out + (x @ layer.SVt.T.astype(np.float32)) @ layer.U.T.astype(np.float32)
    if layer.bias is not None:
        out = out + layer.bias.astype(np.float32)
    return out


def compress_layer(
    name: str,
    W: np.ndarray,
    budget: LayerBudget,
    scaling: ScalingDiag,
    opts: DecomposeOptions,
    bias: Optional[np.ndarray] = None,
):
    """Decompose ``W D`` and fold ``D^-1`` back in. Returns ``(layer, result)``."""
    W = np.asarray(W, dtype=np.float32)
    Wd = scale_weights(W, scaling)
    result = alternating_thresholding(Wd, budget, opts, scaling=scaling)
    S_unscaled = unscale(result.S.values.astype(np.float32), scaling)
    csr = CsrMatrix.from_mask(S_unscaled, result.S.mask)
    L = result.L
    SVt = unscale((L.singular_values[:, None] * L.Vt).astype(np.float32), scaling)
    layer = SparseLowRankLayer(
        name,
        csr.indptr,
        csr.indices,
        csr.values.astype(np.float32),
        np.ascontiguousarray(L.U, dtype=np.float32),
        np.ascontiguousarray(SVt, dtype=np.float32),
        None if bias is None else np.asarray(bias, dtype=np.float32),
    )
    return layer, result


@dataclass
class LayerReport:
    name: str
    d_out: int
    d_in: int
    r: int
    k: int
    nnz: int
    requested_rho: float
    achieved_rho: float
    final_objective: float
    iterations: int
    mode: str
    excluded: bool = False
    wall_time_s: float = 0.0


@dataclass
class CompressionReport:
    layers: List[LayerReport] = field(default_factory=list)
    mode: str = "oats"
    layer_inputs: Dict[str, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def layer(self, name: str) -> LayerReport:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    @property
    def total_params(self) -> int:
        return sum(l.d_out * l.d_in for l in self.layers if not l.excluded)

    @property
    def retained_params(self) -> int:
        return sum(l.nnz + l.r * (l.d_out + l.d_in) for l in self.layers if not l.excluded)

    @property
    def achieved_compression(self) -> float:
        total = self.total_params
        return 1.0 - self.retained_params / total if total else 0.0

    def to_dict(self, timings: bool = True) -> dict:
        layers = []
        for l in self.layers:
            d = asdict(l)
            if not timings:
                d.pop("wall_time_s")
            layers.append(d)
        return {
            "mode": self.mode,
            "achieved_compression": self.achieved_compression,
            "total_params": self.total_params,
            "retained_params": self.retained_params,
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionReport":
        return cls([LayerReport(**l) for l in d["layers"]], d.get("mode", "oats"))


def _dense_layer_fn(weights: TensorArchive):
    def run(spec: LayerSpec, x: np.ndarray) -> np.ndarray:
        out = x @ weights.array(spec.weight).T
        if spec.bias is not None:
            out = out + weights.array(spec.bias)
        return out

    return run


def _run_block(block: Block, x: np.ndarray, layer_fn, record: Optional[dict] = None) -> np.ndarray:
    outputs = {}
    for spec in block.layers:
        inp = x if spec.input is None else outputs[spec.input]
        if record is not None:
            record[spec.name] = inp
        outputs[spec.name] = activate(layer_fn(spec, inp).astype(np.float32), block.layer_activation(spec))
    out = outputs[block.layers[-1].name]
    return out + x if block.residual else out


def forward(graph: ModelGraph, layer_fn, x: np.ndarray, record: Optional[dict] = None) -> np.ndarray:
    """Run the graph with ``layer_fn(spec, inputs) -> outputs`` for each linear layer."""
    x = np.asarray(x, dtype=np.float32)
    for block in graph.blocks:
        x = _run_block(block, x, layer_fn, record)
    return x


def record_activations(weights: TensorArchive, graph: ModelGraph, x: np.ndarray) -> TensorArchive:
    """Dense forward pass; returns ``<layer>.input`` tensors for every layer."""
    record: dict = {}
    forward(graph, _dense_layer_fn(weights), x, record)
    out = TensorArchive()
    for name, value in record.items():
        out.add_array(f"{name}.input", value)
    return out


def calibration_input(calib: TensorArchive, graph: ModelGraph) -> np.ndarray:
    key = f"{graph.input_name}.input"
    if key in calib:
        x = calib.array(key)
    elif len(calib) == 1:
        x = calib.array(calib.names()[0])
    else:
        raise ValueError(f"calibration archive has no {key!r} tensor")
    if x.ndim != 2 or x.shape[1] != graph.d_in:
        raise ValueError(f"calibration input of shape {x.shape} does not match d_in={graph.d_in}")
    return x.astype(np.float32, copy=False)


def _waves(block: Block) -> List[List[LayerSpec]]:
    """Group a block's layers so each group only depends on earlier groups."""
    level: Dict[str, int] = {}
    for spec in block.layers:
        level[spec.name] = 0 if spec.input is None else level[spec.input] + 1
    groups: Dict[int, List[LayerSpec]] = {}
    for spec in block.layers:
        groups.setdefault(level[spec.name], []).append(spec)
    return [groups[i] for i in sorted(groups)]


def compress_model(
    weights: TensorArchive,
    graph: ModelGraph,
    calib: Optional[TensorArchive],
    plan: CompressionPlan,
    threads: int = 1,
):
    """Compress every non-excluded layer of ``graph``.

    Returns ``(artifact, report)``; ``report.layer_inputs`` keeps the
    propagated inputs each layer was compressed with.
    """
    graph.check_weights(weights)
    if calib is None and plan.needs_calibration:
        raise ValueError(f"scaling mode {plan.scaling_mode} needs calibration activations")
    x = calibration_input(calib, graph) if calib is not None else None
    for spec in graph.layers:
        if not plan.is_excluded(spec.name):
            plan.budget(spec.name, spec.d_out, spec.d_in).check((spec.d_out, spec.d_in))

    opts = plan.decompose_options()
    mode = ScalingMode(plan.scaling_mode)
    compressed: Dict[str, SparseLowRankLayer] = {}
    reports: Dict[str, LayerReport] = {}
    report = CompressionReport(mode=plan.mode)

    def work(spec: LayerSpec, inp: Optional[np.ndarray]):
        t0 = time.perf_counter()
        W = weights.array(spec.weight)
        bias = weights.array(spec.bias) if spec.bias is not None else None
        shape = (spec.d_out, spec.d_in)
        if plan.is_excluded(spec.name):
            rep = LayerReport(spec.name, *shape, r=0, k=spec.d_out * spec.d_in, nnz=spec.d_out * spec.d_in,
                              requested_rho=0.0, achieved_rho=0.0, final_objective=0.0, iterations=0,
                              mode="excluded", excluded=True)
            return None, rep
        if mode is ScalingMode.IDENTITY or inp is None:
            scaling = ScalingDiag.identity(spec.d_in)
        else:
            scaling = diag_from_activations(inp, mode, seed=plan.seed)
        budget = plan.budget(spec.name, *shape)
        layer, result = compress_layer(spec.name, W, budget, scaling, opts, bias)
        requested = (
            budget.compression_rate(shape) if plan.pattern_kind == "NofM" else plan.rho_for(spec.name)
        )
        rep = LayerReport(
            spec.name, *shape, r=budget.r, k=budget.k, nnz=layer.nnz,
            requested_rho=float(requested),
            achieved_rho=1.0 - layer.n_params() / (spec.d_out * spec.d_in),
            final_objective=result.objective, iterations=result.iterations,
            mode=plan.mode, wall_time_s=time.perf_counter() - t0,
        )
        return layer, rep

    def layer_fn(spec: LayerSpec, inp: np.ndarray) -> np.ndarray:
        if spec.name in compressed:
            return apply_compressed(compressed[spec.name], inp)
        return _dense_layer_fn(weights)(spec, inp)

    pool = ThreadPoolExecutor(max_workers=max(1, threads)) if threads > 1 else None
    try:
        for bi, block in enumerate(graph.blocks):
            outputs: Dict[str, np.ndarray] = {}
            for wave in _waves(block):
                inputs = {}
                for spec in wave:
                    src = x if spec.input is None else outputs.get(spec.input)
                    inputs[spec.name] = src
                    if src is not None:
                        report.layer_inputs[spec.name] = src
                if pool is not None:
                    results = list(pool.map(lambda s: work(s, inputs[s.name]), wave))
                else:
                    results = [work(s, inputs[s.name]) for s in wave]
                for spec, (layer, rep) in zip(wave, results):
                    if layer is not None:
                        compressed[spec.name] = layer
                    reports[spec.name] = rep
                    log.info("%s: r=%d nnz=%d rho=%.4f obj=%.4g", spec.name, rep.r, rep.nnz,
                             rep.achieved_rho, rep.final_objective)
                    if inputs[spec.name] is not None:
                        out = layer_fn(spec, inputs[spec.name]).astype(np.float32)
                        outputs[spec.name] = activate(out, block.layer_activation(spec))
            if x is not None:
                out = outputs[block.layers[-1].name]
                x = out + x if block.residual else out
    finally:
        if pool is not None:
            pool.shutdown()

    report.layers = [reports[spec.name] for spec in graph.layers]
    artifact = build_artifact(weights, graph, plan, compressed, report)
    return artifact, report


def _store(archive: TensorArchive, name: str, values: np.ndarray, dtype: str) -> None:
    if dtype in FLOAT_DTYPES:
        archive.add(from_f32(name, np.asarray(values, dtype=np.float32), dtype))
    else:
        archive.add(NamedTensor(name, dtype, values.shape, values))


def build_artifact(weights, graph, plan, compressed, report) -> TensorArchive:
    artifact = TensorArchive()
    for spec in graph.layers:
        dtype = weights[spec.weight].dtype
        if spec.name in compressed:
            layer = compressed[spec.name]
            _store(artifact, f"{spec.name}.csr.indptr", layer.csr_indptr.astype(np.int64), "I64")
            _store(artifact, f"{spec.name}.csr.indices", layer.csr_indices.astype(np.int64), "I64")
            _store(artifact, f"{spec.name}.csr.values", layer.csr_values, dtype)
            _store(artifact, f"{spec.name}.lowrank.U", layer.U, dtype)
            _store(artifact, f"{spec.name}.lowrank.SVt", layer.SVt, dtype)
            if spec.bias is not None:
                src = weights[spec.bias]
                artifact.add(NamedTensor(f"{spec.name}.bias", src.dtype, src.shape, src.data))
        else:
            src = weights[spec.weight]
            artifact.add(NamedTensor(f"{spec.name}.weight", src.dtype, src.shape, src.data))
            if spec.bias is not None:
                src = weights[spec.bias]
                artifact.add(NamedTensor(f"{spec.name}.bias", src.dtype, src.shape, src.data))
    artifact.metadata = _metadata(plan, graph, report)
    return artifact


def _metadata(plan: CompressionPlan, graph: ModelGraph, report: CompressionReport) -> Dict[str, str]:
    # timings stay out of the artifact so identical runs give identical bytes
    dump = lambda obj: json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return {
        "format": ARTIFACT_FORMAT,
        "plan": dump(plan.to_dict()),
        "graph": dump(graph.to_dict()),
        "report": dump(report.to_dict(timings=False)),
    }


@dataclass
class CompressedModel:
    layers: Dict[str, SparseLowRankLayer]
    dense: Dict[str, tuple]
    plan: Optional[CompressionPlan]
    graph: Optional[ModelGraph]
    report: Optional[CompressionReport]

    def names(self) -> List[str]:
        if self.graph is not None:
            return [l.name for l in self.graph.layers]
        return sorted(set(self.layers) | set(self.dense))

    def layer_fn(self):
        def run(spec: LayerSpec, x: np.ndarray) -> np.ndarray:
            if spec.name in self.layers:
                return apply_compressed(self.layers[spec.name], x)
            W, b = self.dense[spec.name]
            out = x @ W.T
            return out if b is None else out + b

        return run

    def materialize(self, name: str) -> np.ndarray:
        if name in self.layers:
            return self.layers[name].dense()
        return self.dense[name][0]


_SUFFIXES = (".csr.indptr", ".csr.indices", ".csr.values", ".lowrank.U", ".lowrank.SVt", ".bias", ".weight")


def _strip_suffix(name: str) -> str:
    for suffix in _SUFFIXES:
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def write_compressed(artifact: TensorArchive, path) -> None:
    write_archive(artifact, path)


def read_compressed(path) -> CompressedModel:
    archive = read_archive(path) if not isinstance(path, TensorArchive) else path
    meta = archive.metadata
    if meta.get("format") != ARTIFACT_FORMAT:
        raise ValueError(f"not a compressed artifact (format={meta.get('format')!r})")
    plan = CompressionPlan.from_dict(json.loads(meta["plan"])) if "plan" in meta else None
    graph = ModelGraph.from_dict(json.loads(meta["graph"])) if "graph" in meta else None
    report = CompressionReport.from_dict(json.loads(meta["report"])) if "report" in meta else None
    layers: Dict[str, SparseLowRankLayer] = {}
    dense: Dict[str, tuple] = {}
    names = [l.name for l in graph.layers] if graph is not None else None
    if names is None:
        names = sorted({_strip_suffix(n) for n in archive.names()})
    for name in names:
        bias_key = f"{name}.bias"
        bias = archive.array(bias_key) if bias_key in archive else None
        if f"{name}.csr.indptr" in archive:
            layer = SparseLowRankLayer(
                name,
                archive.array(f"{name}.csr.indptr"),
                archive.array(f"{name}.csr.indices"),
                archive.array(f"{name}.csr.values"),
                archive.array(f"{name}.lowrank.U"),
                archive.array(f"{name}.lowrank.SVt"),
                bias,
            )
            layer.validate()
            layers[name] = layer
        elif f"{name}.weight" in archive:
            dense[name] = (archive.array(f"{name}.weight"), bias)
    return CompressedModel(layers, dense, plan, graph, report)
