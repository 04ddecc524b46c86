"""Isogeometric BEM-shell engine.

Thin NURBS Kirchhoff-Love shells immersed in creeping (Stokes) flow.  The
fluid enters the structural equations only through a damping operator built
from a collocated single-layer boundary integral equation, so no volume
fluid mesh exists anywhere in the package.
"""

__version__ = "0.1.0"

from .errors import (
    BemShellError,
    BemSingularError,
    CollocationDegeneracyError,
    ConfigError,
    DegenerateGeometryError,
    DomainError,
    ElementDegeneracyError,
    NearSingularOverflowError,
    NearSurfaceError,
    StepFailureError,
)

__all__ = [
    "BemShellError",
    "BemSingularError",
    "CollocationDegeneracyError",
    "ConfigError",
    "DegenerateGeometryError",
    "DomainError",
    "ElementDegeneracyError",
    "NearSingularOverflowError",
    "NearSurfaceError",
    "StepFailureError",
    "__version__",
]
