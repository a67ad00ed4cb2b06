"""folheat: a finite-element operator-learning surrogate for transient heat conduction.

The package trains small MLP time-steppers on the implicit-Euler FE residual
(no labeled data) and validates them against its own FE solver.
"""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    FingerprintError,
    FolheatError,
    MeshFormatError,
    NumericalError,
    ValidationError,
)
from .mesh import (
    DirichletSpec,
    DofMap,
    Mesh,
    build_dof_map,
    build_structured_grid,
    demo_irregular_mesh,
    load_mesh,
    serialize_mesh,
    validate_mesh,
)

__all__ = [
    "ConvergenceError",
    "DirichletSpec",
    "DofMap",
    "FingerprintError",
    "FolheatError",
    "Mesh",
    "MeshFormatError",
    "NumericalError",
    "ValidationError",
    "build_dof_map",
    "build_structured_grid",
    "demo_irregular_mesh",
    "load_mesh",
    "serialize_mesh",
    "validate_mesh",
]
