import numpy as np
import pytest

from afw3d import interp, tensor_ops
from afw3d.mesh import OrderMap, build_complex, unit_cube_mesh


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def single_tet():
    verts = np.array(
        [[0.0, 0.0, 0.0], [1.1, 0.1, 0.0], [0.2, 0.9, 0.05], [0.1, 0.2, 1.3]]
    )
    return build_complex(verts, np.array([[0, 1, 2, 3]]))


@pytest.fixture(scope="session")
def two_tets():
    verts = np.array(
        [[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1.1, 1.0, 0.9]]
    )
    return build_complex(verts, np.array([[0, 1, 2, 3], [1, 2, 3, 4]]))


@pytest.fixture(scope="session")
def cube1():
    return unit_cube_mesh(1)


@pytest.fixture(scope="session")
def cube2():
    return unit_cube_mesh(2)


@pytest.fixture(scope="session")
def material():
    return tensor_ops.Material(1.0, 1.0)


def random_matrix_poly(rng, deg, scale=1.0):
    from afw3d import monomials as mo

    return interp.FieldSample.from_poly(
        scale * rng.standard_normal((3, 3, mo.count(3, deg))), deg
    )
