"""Discrete message-importance measures.

All logarithms are natural. Zero-probability entries contribute nothing to
the importance sums (``0 * exp(-0) = 0``) and KL follows ``0 * ln(0/q) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

from .errors import AbsoluteContinuityError, DistributionError, ParameterError, ShapeError

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class ProbVector:
    """Finite discrete distribution. The array is read-only after construction."""

    probs: np.ndarray
    tol: float = DEFAULT_TOL
    renormalize: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).ravel()
        if p.size < 1:
            raise DistributionError("distribution must have at least one entry")
        if not np.all(np.isfinite(p)):
            raise DistributionError("distribution contains non-finite entries")
        if np.any(p < 0):
            raise DistributionError(f"negative probability {p.min():.3g}")
        total = p.sum()
        if self.renormalize:
            if total <= 0:
                raise DistributionError("cannot renormalize an all-zero vector")
            p = p / total
        elif abs(total - 1.0) > self.tol:
            raise DistributionError(f"normalization: entries sum to {total:.12g}, not 1")
        if np.any(p > 1.0 + self.tol):
            raise DistributionError("probability above 1")
        p = np.minimum(p, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __iter__(self):
        return iter(self.probs.tolist())

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def padded(self, n: int) -> "ProbVector":
        """Zero-pad up to length ``n`` (used for nested supports)."""
        if n < len(self):
            raise ShapeError(f"cannot pad length {len(self)} down to {n}")
        if n == len(self):
            return self
        return ProbVector(np.concatenate([self.probs, np.zeros(n - len(self))]), tol=self.tol)

    @classmethod
    def uniform(cls, n: int) -> "ProbVector":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class TransferConstraint:
    """Lipschitz bound ``|H(P) - H(Q)| <= lam * ||P - Q||_1``."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterError(f"Lipschitz constant must be positive, got {self.lam}")


DistLike = Union[ProbVector, Iterable[float], np.ndarray]


def as_prob(p: DistLike, tol: float = DEFAULT_TOL) -> ProbVector:
    if isinstance(p, ProbVector):
        return p
    return ProbVector(np.asarray(p, dtype=float), tol=tol)


def align(p: DistLike, q: DistLike, pad: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Return both distributions as arrays of equal length, zero-padding the shorter."""
    p, q = as_prob(p), as_prob(q)
    if len(p) != len(q):
        if not pad:
            raise ShapeError(f"length mismatch: {len(p)} vs {len(q)}")
        n = max(len(p), len(q))
        p, q = p.padded(n), q.padded(n)
    return p.probs, q.probs


def _importance_terms(p: np.ndarray) -> np.ndarray:
    return p * np.exp(-p)


def mim(p: DistLike) -> float:
    """Message importance measure ``sum_i p_i exp(-p_i)``."""
    return float(_importance_terms(as_prob(p).probs).sum())


def mim_weighted(p: DistLike, varpi: float) -> float:
    """Importance-coefficient form ``ln sum_i p_i exp(varpi (1 - p_i))``."""
    if varpi < 0:
        raise ParameterError(f"importance coefficient must be >= 0, got {varpi}")
    probs = as_prob(p).probs
    # shift by the smallest positive mass so neither exp overflows nor underflows
    m = probs[probs > 0].min()
    return float(varpi * (1.0 - m) + np.log(np.sum(probs * np.exp(-varpi * (probs - m)))))


def mitm(q: DistLike, p: DistLike, pad: bool = True) -> float:
    """Message importance transfer measure ``D_I(Q||P) = mim(Q) - mim(P)``.

    Signed and antisymmetric. Distributions over nested supports are
    zero-padded to the longer length unless ``pad`` is False.
    """
    qa, pa = align(q, p, pad=pad)
    return float(np.sum(_importance_terms(qa) - _importance_terms(pa)))


def kl_divergence(p: DistLike, q: DistLike, pad: bool = True) -> float:
    """KL divergence ``D(P||Q)`` in nats."""
    pa, qa = align(p, q, pad=pad)
    support = pa > 0
    if np.any(qa[support] == 0):
        idx = int(np.flatnonzero(support & (qa == 0))[0])
        raise AbsoluteContinuityError(f"p[{idx}] > 0 where q[{idx}] = 0")
    ps, qs = pa[support], qa[support]
    return float(max(np.sum(ps * np.log(ps / qs)), 0.0))


def l1_distance(p: DistLike, q: DistLike, pad: bool = True) -> float:
    pa, qa = align(p, q, pad=pad)
    return float(np.abs(pa - qa).sum())


def lipschitz_check(
    h_p: float, h_q: float, p: DistLike, q: DistLike, constraint: TransferConstraint
) -> bool:
    """True iff the measure gap respects the transfer constraint."""
    return abs(h_p - h_q) <= constraint.lam * l1_distance(p, q)


def product(p: DistLike, q: DistLike) -> ProbVector:
    """Joint distribution of two independent variables, flattened."""
    return ProbVector(np.outer(as_prob(p).probs, as_prob(q).probs).ravel())


def to_base(value_nats: float, base: float) -> float:
    """Re-express a natural-log quantity in another logarithm base (reporting only)."""
    if base <= 0 or base == 1:
        raise ParameterError(f"invalid logarithm base {base}")
    return float(value_nats / math.log(base))
