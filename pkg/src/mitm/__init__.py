"""Message importance measure (MIM) and message importance transfer measure (MITM).

Discrete and continuous measures, transfer capacity, M/M/s/k queue analytics
with buffer sizing, and a discrete-event simulator for balking queues.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AbsoluteContinuityError,
    DistributionError,
    InfeasiblePerturbationError,
    MitmError,
    NumericalDomainError,
    OptimizationError,
    ParameterError,
    ShapeError,
)
from .measures import ProbVector, TransferConstraint, kl_divergence, l1_distance, mim, mim_weighted, mitm  # noqa: E402

__all__ = [
    "__version__",
    "AbsoluteContinuityError",
    "DistributionError",
    "InfeasiblePerturbationError",
    "MitmError",
    "NumericalDomainError",
    "OptimizationError",
    "ParameterError",
    "ShapeError",
    "ProbVector",
    "TransferConstraint",
    "kl_divergence",
    "l1_distance",
    "mim",
    "mim_weighted",
    "mitm",
]
