import json
import sys

import numpy as np
import pytest

from oats.tensor_store import write_archive
from oats.toy import toy_mlp


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy():
    return toy_mlp(seed=0)


@pytest.fixture
def toy_files(tmp_path, toy):
    """The toy MLP on disk: weights, calibration, graph and a default plan."""
    weights, graph, calib = toy
    paths = {
        "weights": tmp_path / "weights.safetensors",
        "calib": tmp_path / "calib.safetensors",
        "graph": tmp_path / "graph.json",
        "plan": tmp_path / "plan.json",
    }
    write_archive(weights, paths["weights"])
    write_archive(calib, paths["calib"])
    paths["graph"].write_text(json.dumps(graph.to_dict()))
    paths["plan"].write_text(json.dumps({"rho": 0.5, "kappa": 0.25, "iterations": 20}))
    return paths


def pytest_terminal_summary(terminalreporter):
    lines = [line for name, mod in list(sys.modules.items()) if name.endswith("test_acceptance")
             for line in getattr(mod, "VERDICTS", [])]
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
