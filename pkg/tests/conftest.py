import numpy as np
import pytest

from nsvopt.mesh import build_structured, refine_uniform
from nsvopt.space import MixedSpace
from nsvopt.verification import build_case


@pytest.fixture(scope="session")
def square_meshes():
    """Nested unit-square hierarchy n = 2, 4, 8, 16."""
    meshes = [build_structured([(0, 1), (0, 1)], 2)]
    for _ in range(3):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes


@pytest.fixture(scope="session")
def square_spaces(square_meshes):
    return [MixedSpace(m) for m in square_meshes]


@pytest.fixture(scope="session")
def space8(square_spaces):
    """8x8 unit-square Taylor-Hood space."""
    return square_spaces[2]


@pytest.fixture(scope="session")
def cube_mesh():
    return build_structured([(0, 1), (0, 1), (0, 1)], 1)


@pytest.fixture(scope="session")
def case_poly():
    return build_case("stream-poly-2d", nu=0.05, alpha=0.2)


@pytest.fixture(scope="session")
def case_tg():
    return build_case("taylor-green-2d", nu=0.05, alpha=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
