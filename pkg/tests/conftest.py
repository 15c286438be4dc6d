import numpy as np
import pytest

from thermocq.config import RunConfig
from thermocq.mesh import load_mesh, mesh_from_arrays


@pytest.fixture(scope="session")
def hexagon():
    return load_mesh(RunConfig(mesh="hexagon", study="freq-h").mesh_path())


@pytest.fixture(scope="session")
def pentagon():
    return load_mesh(RunConfig(mesh="pentagon", study="scatter").mesh_path())


@pytest.fixture
def square_mesh():
    """Unit square split into 8 triangles around its center."""
    v = np.array([[0, 0], [0.5, 0], [1, 0], [0, 0.5], [0.5, 0.5], [1, 0.5], [0, 1], [0.5, 1], [1, 1.0]])
    t = np.array([[0, 1, 4], [0, 4, 3], [1, 2, 5], [1, 5, 4], [3, 4, 7], [3, 7, 6], [4, 5, 8], [4, 8, 7]])
    return mesh_from_arrays(v, t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
