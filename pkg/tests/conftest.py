import numpy as np
import pytest

from qllm.circuit import INPUT, OUTPUT, CircuitLayout, brickwork
from qllm.mpo import SiteSpec, mpo_from_matrix
from qllm.planted import PlantedSpec, plant_instance
from qllm.tensor import EXACT


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def random_circuit(k, layers, seed, side=OUTPUT, dims=None):
    return brickwork(CircuitLayout(k, layers), "haar", seed, dims, side)


def dense_mpo(w, spec=None):
    spec = spec or SiteSpec.for_shape(*w.shape)
    m, _ = mpo_from_matrix(w, spec, EXACT)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def planted_k4():
    """Seed-7 planted instance: k=4 qubits, one layer each side, chi 2 core."""
    return plant_instance(PlantedSpec(k=4, layers_u=1, layers_v=1, chi_core=2, seed=7))


__all__ = ["crandn", "rel", "random_circuit", "dense_mpo", "INPUT", "OUTPUT"]


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = {}
    for mod in list(sys.modules.values()):
        lines.update(getattr(mod, "ACCEPTANCE_RESULTS", None) or {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
