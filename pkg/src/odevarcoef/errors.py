"""Exception hierarchy shared by all modules."""


class OdeVarCoefError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(OdeVarCoefError, ValueError):
    """Invalid scenario, plan, or smoother configuration.

    ``path`` names the offending field (e.g. ``"noise.sigma"``) when known.
    """

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class SingularMatrixError(OdeVarCoefError, ArithmeticError):
    """A system matrix is numerically rank deficient."""


class InsufficientLocalDataError(OdeVarCoefError):
    """Too few design points carry positive kernel weight around a center."""


class NonfiniteStateError(OdeVarCoefError, ArithmeticError):
    """ODE integration blew up."""


class RegimeNotCoveredError(OdeVarCoefError):
    """A rate report does not contain the cells a verdict needs."""
