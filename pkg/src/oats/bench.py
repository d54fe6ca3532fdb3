"""Micro-benchmarks of the apply kernels against dense matmul.

These are single-layer kernel timings, a much finer granularity than
end-to-end token throughput. Reference end-to-end CPU speedups of the
sparse plus low-rank format over dense (1.38x / 1.73x / 2.06x at 30 / 40 /
50% compression) are written next to the CSV for comparison only.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numba
import numpy as np

from .decompose import LayerBudget, budget_for_nm, solve_budget
from .kernels import CsrMatrix, NmMatrix, csr_apply, dense_apply, nm_apply, set_workers, slr_apply
from .thresholding import hard_threshold

__all__ = ["BenchConfig", "BenchRecord", "CSV_COLUMNS", "flops", "run_bench", "write_csv", "machine_info"]

CSV_COLUMNS = [
    "kernel", "d_out", "d_in", "batch", "rho", "kappa", "nnz", "r",
    "flops", "ns_median", "gflops", "speedup_vs_dense",
]

REFERENCE_SPEEDUPS = {"0.3": 1.38, "0.4": 1.73, "0.5": 2.06}
CORRECTNESS_RTOL = 1e-5


@dataclass
class BenchConfig:
    shapes: List[tuple] = field(default_factory=lambda: [(512, 512), (1024, 1024)])
    batch: int = 1
    rho: List[float] = field(default_factory=lambda: [0.3, 0.4, 0.5])
    kappa: List[float] = field(default_factory=lambda: [0.25])
    nm: List[tuple] = field(default_factory=lambda: [(2, 4)])
    repetitions: int = 5
    warmup: int = 2
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.shapes = [tuple(int(v) for v in s) for s in self.shapes]
        self.nm = [tuple(int(v) for v in p) for p in self.nm]
        if self.repetitions < 3:
            raise ValueError(f"repetitions must be >= 3, got {self.repetitions}")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not self.shapes or any(len(s) != 2 or min(s) < 1 for s in self.shapes):
            raise ValueError(f"bad shapes {self.shapes}")
        if any(not 0 < r < 1 for r in self.rho):
            raise ValueError("rho values must lie in (0, 1)")
        if any(not 0 <= k < 1 for k in self.kappa):
            raise ValueError("kappa values must lie in [0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown bench config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class BenchRecord:
    kernel: str
    d_out: int
    d_in: int
    batch: int
    rho: float
    kappa: float
    nnz: int
    r: int
    flops: int
    ns_median: float
    gflops: float
    speedup_vs_dense: float
    workers: int = 1

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


def flops(kernel: str, shape, budget: Optional[LayerBudget] = None, batch: int = 1) -> int:
    """Multiply-add count (2 per MAC) of one apply over ``batch`` rows."""
    d_out, d_in = shape
    base = kernel.split("-")[0]
    if base == "dense":
        return 2 * d_out * d_in * batch
    if budget is None:
        raise ValueError(f"kernel {kernel!r} needs a budget")
    nnz = budget.nnz(shape)
    if base == "csr" or base.startswith("nm"):
        return 2 * nnz * batch
    if base == "slr":
        return 2 * (nnz + budget.r * (d_out + d_in)) * batch
    raise ValueError(f"unknown kernel {kernel!r}")


def machine_info() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "cpu_count": os.cpu_count(),
        "numba_threads": numba.get_num_threads(),
    }


def _time(fn, warmup: int, repetitions: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return float(np.median(samples))


def _check(name, out, dense, X):
    ref = X.astype(np.float64) @ dense.astype(np.float64).T
    err = np.linalg.norm(out - ref) / max(np.linalg.norm(ref), np.finfo(np.float64).tiny)
    if err > CORRECTNESS_RTOL:
        raise RuntimeError(f"kernel {name} disagrees with the dense oracle (rel err {err:.3g})")
    return err


def _cases(W, cfg, rng):
    """Yield (kernel, rho, kappa, budget, dense_equivalent, apply_fn)."""
    d_out, d_in = W.shape
    par = cfg.workers > 1
    for rho in cfg.rho:
        b = solve_budget(d_out, d_in, rho, 0.0)
        S = hard_threshold(W, b.pattern)
        csr = CsrMatrix.from_mask(S.values, S.mask)
        yield "csr", rho, 0.0, b, S.values, lambda X, c=csr: csr_apply(c, X)
        if par:
            yield f"csr-par{cfg.workers}", rho, 0.0, b, S.values, lambda X, c=csr: csr_apply(c, X, parallel=True)
        for kappa in cfg.kappa:
            b = solve_budget(d_out, d_in, rho, kappa)
            S = hard_threshold(W, b.pattern)
            csr = CsrMatrix.from_mask(S.values, S.mask)
            U = (rng.standard_normal((d_out, b.r)) / np.sqrt(max(b.r, 1))).astype(np.float32)
            SVt = (rng.standard_normal((b.r, d_in)) / np.sqrt(d_in)).astype(np.float32)
            dense = S.values + U @ SVt
            yield "slr", rho, kappa, b, dense, lambda X, c=csr, U=U, V=SVt: slr_apply(c, U, V, X)
            if par:
                yield (f"slr-par{cfg.workers}", rho, kappa, b, dense,
                       lambda X, c=csr, U=U, V=SVt: slr_apply(c, U, V, X, parallel=True))
    for n, m in cfg.nm:
        if d_in % m:
            continue
        b = budget_for_nm(d_out, d_in, n, m, 0.0)
        S = hard_threshold(W, b.pattern)
        nm = NmMatrix.from_mask(S.values, S.mask, n, m)
        rho = 1.0 - n / m
        yield f"nm{n}:{m}", rho, 0.0, b, S.values, lambda X, z=nm: nm_apply(z, X)
        if par:
            yield f"nm{n}:{m}-par{cfg.workers}", rho, 0.0, b, S.values, lambda X, z=nm: nm_apply(z, X, parallel=True)


def run_bench(cfg: BenchConfig) -> List[BenchRecord]:
    """Validate every kernel against the dense oracle, then time it."""
    rng = np.random.default_rng(cfg.seed)
    workers = set_workers(cfg.workers) if cfg.workers > 1 else 1
    records: List[BenchRecord] = []
    for shape in cfg.shapes:
        d_out, d_in = shape
        W = rng.standard_normal(shape).astype(np.float32)
        X = rng.standard_normal((cfg.batch, d_in)).astype(np.float32)
        _check("dense", dense_apply(W, X), W, X)
        dense_ns = _time(lambda: dense_apply(W, X), cfg.warmup, cfg.repetitions)
        fl = flops("dense", shape, batch=cfg.batch)
        records.append(BenchRecord("dense", d_out, d_in, cfg.batch, 0.0, 0.0, d_out * d_in, 0, fl,
                                   dense_ns, fl / dense_ns, 1.0))
        cases = list(_cases(W, cfg, rng))
        for kernel, _, _, _, dense, fn in cases:
            _check(kernel, fn(X), dense, X)
        for kernel, rho, kappa, budget, _, fn in cases:
            ns = _time(lambda: fn(X), cfg.warmup, cfg.repetitions)
            fl = flops(kernel, shape, budget, cfg.batch)
            records.append(BenchRecord(
                kernel, d_out, d_in, cfg.batch, float(rho), float(kappa), budget.nnz(shape), budget.r,
                fl, ns, fl / ns, dense_ns / ns, workers if "-par" in kernel else 1,
            ))
    return records


def write_csv(records: List[BenchRecord], path, meta: Optional[dict] = None) -> None:
    """CSV with ``CSV_COLUMNS``; machine info goes to ``<path>.meta.json``."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow(rec.row())
    info = {
        "machine": machine_info(),
        "granularity": "single-layer apply kernel (not end-to-end token throughput)",
        "reference_end_to_end_speedup": REFERENCE_SPEEDUPS,
        "workers": sorted({r.workers for r in records}),
    }
    if meta:
        info.update(meta)
    with open(path.with_name(path.name + ".meta.json"), "w") as f:
        json.dump(info, f, indent=2, sort_keys=True)


def summary(records: List[BenchRecord]) -> str:
    lines = [f"{'kernel':<14}{'shape':>12}{'rho':>6}{'kappa':>7}{'ns':>14}{'GFLOP/s':>9}{'speedup':>9}"]
    for r in records:
        ref = REFERENCE_SPEEDUPS.get(f"{r.rho:g}") if r.kernel.startswith("slr") else None
        tail = f"  (end-to-end ref {ref:.2f}x)" if ref else ""
        lines.append(
            f"{r.kernel:<14}{f'{r.d_out}x{r.d_in}':>12}{r.rho:>6.2f}{r.kappa:>7.2f}"
            f"{r.ns_median:>14.0f}{r.gflops:>9.2f}{r.speedup_vs_dense:>8.2f}x{tail}"
        )
    return "\n".join(lines)
