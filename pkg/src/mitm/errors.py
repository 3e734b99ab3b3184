"""Exception types shared across the package."""


class MitmError(Exception):
    """Base class for all errors raised by this package."""


class DistributionError(MitmError, ValueError):
    """A probability vector or density failed validation."""


class ParameterError(MitmError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ShapeError(MitmError, ValueError):
    """Two inputs have incompatible lengths or shapes."""


class AbsoluteContinuityError(MitmError, ValueError):
    """KL divergence requested where P is not absolutely continuous w.r.t. Q."""


class InfeasiblePerturbationError(MitmError, ValueError):
    """A perturbed density goes negative on the quadrature grid."""


class NumericalDomainError(MitmError, ArithmeticError):
    """An integrand or logarithm left its finite domain."""


class OptimizationError(MitmError, RuntimeError):
    """Simplex optimizer exhausted its budget; carries the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
