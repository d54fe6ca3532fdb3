"""Small synthetic models for tests, demos and ablations."""

from __future__ import annotations

import numpy as np

from .pipeline import Block, LayerSpec, ModelGraph
from .tensor_store import TensorArchive


def planted_weight(rng, d_out, d_in, rank, spikes, noise=0.05, spike_scale=4.0):
    """Low-rank plus sparse plus small dense noise, entries of order one."""
    low = rng.standard_normal((d_out, rank)) @ rng.standard_normal((rank, d_in)) / np.sqrt(rank)
    # the same number of spikes in every row
    sparse = np.zeros((d_out, d_in))
    per_row = spikes // d_out
    for i in range(d_out):
        cols = rng.choice(d_in, per_row, replace=False)
        sparse[i, cols] = spike_scale * rng.standard_normal(per_row)
    W = low + sparse + noise * rng.standard_normal((d_out, d_in))
    return (W / np.sqrt(d_in)).astype(np.float32)


def calibration_batch(rng, batch, d_in, outliers=4, outlier_scale=20.0):
    """Gaussian activations with a few large-magnitude feature columns."""
    X = rng.standard_normal((batch, d_in))
    cols = rng.choice(d_in, outliers, replace=False)
    X[:, cols] *= outlier_scale
    return X.astype(np.float32)


def toy_mlp(seed=0, dims=(32, 64, 32), blocks=2, batch=512, rank=4, spike_frac=0.05,
            activation="relu", residual=True):
    """A stack of ``blocks`` MLP blocks ``d -> hidden -> d``.

    Returns ``(weights, graph, calib)``; ``calib`` holds the model input as
    ``<first layer>.input``.
    """
    rng = np.random.default_rng(seed)
    d, hidden, d_out = dims
    if residual and d_out != d:
        raise ValueError("residual blocks need matching input and output width")
    weights = TensorArchive()
    graph_blocks = []
    width = d
    for b in range(blocks):
        up, down = f"blocks.{b}.fc1", f"blocks.{b}.fc2"
        weights.add_array(f"{up}.weight", planted_weight(rng, hidden, width, rank, int(spike_frac * hidden * width)))
        weights.add_array(f"{up}.bias", (0.1 * rng.standard_normal(hidden)).astype(np.float32))
        weights.add_array(f"{down}.weight", planted_weight(rng, d_out, hidden, rank, int(spike_frac * hidden * d_out)))
        weights.add_array(f"{down}.bias", (0.1 * rng.standard_normal(d_out)).astype(np.float32))
        graph_blocks.append(
            Block(
                [
                    LayerSpec(up, hidden, width, f"{up}.weight", f"{up}.bias"),
                    LayerSpec(down, d_out, hidden, f"{down}.weight", f"{down}.bias", input=up,
                              activation="identity"),
                ],
                activation=activation,
                residual=residual,
            )
        )
        width = d_out
    graph = ModelGraph(graph_blocks)
    calib = TensorArchive()
    calib.add_array(f"{graph.input_name}.input", calibration_batch(rng, batch, d))
    return weights, graph, calib
