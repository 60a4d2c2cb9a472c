"""Mixed finite elements for 3D linear elasticity with weakly imposed
symmetry on tetrahedral meshes of variable polynomial order."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    assembly,
    interp,
    linalg,
    mesh,
    monomials,
    polyspace,
    quadrature,
    stability_lab,
    tensor_ops,
)
