"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1,
NumericalError -> 2, OSError -> 3.
"""


class FolheatError(Exception):
    """Base class for all package errors."""


class ValidationError(FolheatError):
    """Bad inputs: malformed meshes, mismatched sizes, invalid options."""


class MeshFormatError(ValidationError):
    """Mesh file could not be parsed; message carries the line number."""


class FingerprintError(ValidationError):
    """A model or sample set was built against a different mesh/dof layout."""


class NumericalError(FolheatError):
    """Numerical failure: solver non-convergence, singular system, diverged loss."""


class ConvergenceError(NumericalError):
    """Iterative solver exhausted its iteration budget."""
