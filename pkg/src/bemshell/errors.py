"""Exception types shared across the package."""


class BemShellError(Exception):
    """Base class for all package-specific errors."""


class DomainError(BemShellError, ValueError):
    """Parametric coordinate outside the knot range."""


class ConfigError(BemShellError, ValueError):
    """Invalid scenario or solver configuration."""


class DegenerateGeometryError(BemShellError):
    """Surface parameterization is singular at an evaluation point."""


class CollocationDegeneracyError(BemShellError):
    """Two collocation abscissae collapsed onto (nearly) the same point."""


class NearSingularOverflowError(BemShellError):
    """Subdivision depth limit hit: a collocation point sits pathologically
    close to an element that does not own it."""


class BemSingularError(BemShellError):
    """Single-layer matrix factorization broke down."""

    def __init__(self, message, collocation_index=None, point=None):
        super().__init__(message)
        self.collocation_index = collocation_index
        self.point = point


class NearSurfaceError(BemShellError):
    """Off-surface evaluation requested too close to the surface."""


class ElementDegeneracyError(DegenerateGeometryError):
    """Deformed configuration became singular at a quadrature point."""


class StepFailureError(BemShellError):
    """Newton iteration failed to converge within the iteration budget."""

    def __init__(self, message, residual_norm=None, step=None, time=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.step = step
        self.time = time
