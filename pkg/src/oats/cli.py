"""``oats`` command line: compress, inspect, eval-recon and bench.

Exit codes are 0 on success, 1 when a step fails at run time (unreadable
archive, shape mismatch, unwritable output) and 2 for usage errors (bad
flags, malformed plan or bench config, missing calibration data).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bench import BenchConfig, run_bench, summary, write_csv
from .decompose import PRESETS
from .pipeline import (
    CompressionPlan,
    ModelGraph,
    calibration_input,
    compress_model,
    read_compressed,
    record_activations,
    write_compressed,
)
from .tensor_store import read_archive

log = logging.getLogger("oats")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _threads(flag) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("OATS_THREADS")
    if not env:
        return 1
    try:
        value = int(env)
    except ValueError:
        raise UsageError(f"OATS_THREADS must be an integer, got {env!r}")
    if value < 1:
        raise UsageError("OATS_THREADS must be >= 1")
    return value


def _load_json(path, what):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}")


def _load_plan(args) -> CompressionPlan:
    raw = _load_json(args.plan, "plan") if args.plan else {}
    if not isinstance(raw, dict):
        raise UsageError("plan must be a JSON object")
    if args.preset:
        raw = {**raw, **PRESETS[args.preset]}
    try:
        return CompressionPlan.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid plan: {exc}")


def cmd_compress(args) -> int:
    plan = _load_plan(args)
    threads = _threads(args.threads)
    if args.calib is None and plan.needs_calibration:
        raise UsageError(f"--calib is required for scaling_mode={plan.scaling_mode}")
    try:
        graph = ModelGraph.from_dict(_load_json(args.graph, "graph"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"invalid graph: {exc}")
    weights = read_archive(args.weights)
    calib = read_archive(args.calib) if args.calib else None
    artifact, report = compress_model(weights, graph, calib, plan, threads=threads)

    out = Path(args.out)
    write_compressed(artifact, out)
    report_path = out.with_name("report.json")
    with open(report_path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {out} ({len(artifact)} tensors) and {report_path}")
    print(f"mode={report.mode} achieved_compression={report.achieved_compression:.4f} "
          f"retained={report.retained_params}/{report.total_params}")
    return EXIT_OK


def _layer_rows(model):
    rows = []
    reported = {l.name: l for l in model.report.layers} if model.report else {}
    for name in model.names():
        rep = reported.get(name)
        if name in model.layers:
            layer = model.layers[name]
            d_out, d_in = layer.shape
            rows.append({
                "name": name, "d_out": d_out, "d_in": d_in, "r": layer.rank, "nnz": layer.nnz,
                "achieved_rho": 1.0 - layer.n_params() / (d_out * d_in),
                "final_objective": rep.final_objective if rep else None,
                "excluded": False,
            })
        elif name in model.dense:
            d_out, d_in = model.dense[name][0].shape
            rows.append({
                "name": name, "d_out": d_out, "d_in": d_in, "r": 0, "nnz": d_out * d_in,
                "achieved_rho": 0.0, "final_objective": None, "excluded": True,
            })
    return rows


def cmd_inspect(args) -> int:
    model = read_compressed(args.artifact)
    rows = _layer_rows(model)
    if args.layer is not None:
        if args.layer not in model.names():
            print(f"error: no layer {args.layer!r}; available: {', '.join(model.names())}", file=sys.stderr)
            return EXIT_RUNTIME
        rows = [r for r in rows if r["name"] == args.layer]
    included = [r for r in rows if not r["excluded"]]
    total = sum(r["d_out"] * r["d_in"] for r in included)
    retained = sum(r["nnz"] + r["r"] * (r["d_out"] + r["d_in"]) for r in included)
    doc = {
        "mode": model.report.mode if model.report else None,
        "total_params": total,
        "retained_params": retained,
        "achieved_compression": 1.0 - retained / total if total else 0.0,
        "layers": rows,
    }
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    print(f"{'layer':<28}{'shape':>12}{'r':>6}{'nnz':>10}{'rho':>8}{'objective':>13}")
    for r in rows:
        obj = "excluded" if r["excluded"] else f"{r['final_objective']:.4g}"
        shape = f"{r['d_out']}x{r['d_in']}"
        print(f"{r['name']:<28}{shape:>12}{r['r']:>6}{r['nnz']:>10}{r['achieved_rho']:>8.4f}{obj:>13}")
    print(f"mode={doc['mode']} achieved_compression={doc['achieved_compression']:.4f} "
          f"retained={retained}/{total}")
    return EXIT_OK


def recon_errors(weights, model, calib):
    """Per-layer ``||X W^T - X W_hat^T||_F / ||X W^T||_F`` plus the pooled aggregate."""
    graph = model.graph
    if graph is None:
        raise ValueError("artifact carries no graph metadata")
    inputs = {}
    missing = [s.name for s in graph.layers if f"{s.name}.input" not in calib]
    if missing:
        recorded = record_activations(weights, graph, calibration_input(calib, graph))
    for spec in graph.layers:
        key = f"{spec.name}.input"
        inputs[spec.name] = calib.array(key) if key in calib else recorded.array(key)
    rows, num_sq, den_sq = [], 0.0, 0.0
    for spec in graph.layers:
        X = inputs[spec.name].astype(np.float64)
        W = weights.array(spec.weight).astype(np.float64)
        W_hat = model.materialize(spec.name).astype(np.float64)
        if X.ndim != 2 or X.shape[1] != W.shape[1] or W_hat.shape != W.shape:
            raise ValueError(f"{spec.name}: input {X.shape}, weight {W.shape}, artifact {W_hat.shape} do not match")
        ref = X @ W.T
        num = float(np.linalg.norm(ref - X @ W_hat.T))
        den = float(np.linalg.norm(ref))
        num_sq += num * num
        den_sq += den * den
        rows.append({"name": spec.name, "rel_error": num / den if den else 0.0})
    aggregate = float(np.sqrt(num_sq / den_sq)) if den_sq else 0.0
    return rows, aggregate


def cmd_eval_recon(args) -> int:
    weights = read_archive(args.weights)
    model = read_compressed(args.artifact)
    calib = read_archive(args.calib)
    rows, aggregate = recon_errors(weights, model, calib)
    if args.json:
        print(json.dumps({"layers": rows, "aggregate": aggregate}, indent=2, sort_keys=True))
        return EXIT_OK
    for r in rows:
        print(f"{r['name']:<28}{r['rel_error']:>14.6e}")
    print(f"{'aggregate':<28}{aggregate:>14.6e}")
    return EXIT_OK


def cmd_bench(args) -> int:
    raw = _load_json(args.config, "bench config") if args.config else {}
    if not isinstance(raw, dict):
        raise UsageError("bench config must be a JSON object")
    threads = _threads(args.threads) if (args.threads is not None or os.environ.get("OATS_THREADS")) else None
    if threads is not None:
        raw = {**raw, "workers": threads}
    try:
        cfg = BenchConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid bench config: {exc}")
    # fail on an unwritable destination before spending time on timings
    with open(args.out, "a"):
        pass
    records = run_bench(cfg)
    write_csv(records, args.out)
    print(summary(records))
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oats", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-layer progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{compress,inspect,eval-recon,bench}")

    p = sub.add_parser("compress", help="compress a model into a sparse plus low-rank artifact")
    p.add_argument("--weights", required=True, help="tensor archive with the dense weights")
    p.add_argument("--graph", required=True, help="model graph JSON")
    p.add_argument("--calib", help="tensor archive with the calibration input")
    p.add_argument("--plan", help="compression plan JSON (defaults apply when omitted)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="fill iterations and kappa from a named preset")
    p.add_argument("--out", required=True, help="output artifact; report.json is written next to it")
    p.add_argument("--threads", type=int, help="worker threads (falls back to OATS_THREADS)")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("inspect", help="summarize a compressed artifact")
    p.add_argument("--artifact", required=True, help="compressed artifact to read")
    p.add_argument("--layer", help="show a single layer")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("eval-recon", help="relative output error of a compressed artifact")
    p.add_argument("--weights", required=True, help="tensor archive with the original dense weights")
    p.add_argument("--artifact", required=True, help="compressed artifact to evaluate")
    p.add_argument("--calib", required=True, help="tensor archive with the evaluation input")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON")
    p.set_defaults(func=cmd_eval_recon)

    p = sub.add_parser("bench", help="time apply kernels against dense matmul")
    p.add_argument("--config", help="bench config JSON (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="CSV destination")
    p.add_argument("--threads", type=int, help="worker threads for the parallel kernels")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
