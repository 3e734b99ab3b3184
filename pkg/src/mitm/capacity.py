"""Message importance transfer capacity.

The capacity of a transfer matrix ``W`` (rows ``p(y|x_i)``) is

    max_{p(x)}  L(Y) - L(Y|X)

where ``L(Y)`` is the importance measure of the output marginal ``p(x) W``
and ``L(Y|X) = sum_i p(x_i) sum_j W_ij exp(-W_ij)``. A disturbance model
averages per-disturbance capacities with the disturbance weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DistributionError, OptimizationError, ParameterError, ShapeError
from .measures import DEFAULT_TOL, DistLike, ProbVector, as_prob


@dataclass(frozen=True)
class TransferChannel:
    """Row-stochastic conditional matrix ``p(y_j | x_i)``."""

    matrix: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        w = np.array(self.matrix, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ShapeError(f"transfer matrix must be 2-D and non-empty, got shape {w.shape}")
        for i, row in enumerate(w):
            try:
                ProbVector(row, tol=self.tol)
            except DistributionError as exc:
                raise DistributionError(f"row {i}: {exc}") from None
        w.setflags(write=False)
        object.__setattr__(self, "matrix", w)

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[1]

    @property
    def row_mim(self) -> np.ndarray:
        w = self.matrix
        return np.sum(w * np.exp(-w), axis=1)

    @classmethod
    def binary_symmetric(cls, beta: float) -> "TransferChannel":
        return cls(np.array([[1 - beta, beta], [beta, 1 - beta]]))

    @classmethod
    def strongly_symmetric(cls, K: int, beta: float) -> "TransferChannel":
        if K < 2:
            raise ParameterError(f"alphabet size must be >= 2, got {K}")
        w = np.full((K, K), beta / (K - 1))
        np.fill_diagonal(w, 1 - beta)
        return cls(w)


@dataclass(frozen=True)
class DisturbanceModel:
    """Disturbance outcomes, their weights, and the channel each one induces."""

    outcomes: Sequence
    weights: ProbVector
    channels: Sequence[TransferChannel]

    def __post_init__(self):
        object.__setattr__(self, "weights", as_prob(self.weights))
        if not (len(self.outcomes) == len(self.weights) == len(self.channels)):
            raise ShapeError("outcomes, weights and channels must have equal length")
        widths = {ch.n_outputs for ch in self.channels}
        if len(widths) > 1:
            raise ShapeError(f"channels disagree on output alphabet size: {sorted(widths)}")

    def channel_for(self, outcome) -> TransferChannel:
        return self.channels[list(self.outcomes).index(outcome)]

    @classmethod
    def constant(cls, channel: TransferChannel, weights: DistLike) -> "DisturbanceModel":
        w = as_prob(weights)
        return cls(tuple(range(len(w))), w, (channel,) * len(w))


@dataclass(frozen=True)
class OptimizerSettings:
    tol: float = 1e-9
    max_iter: int = 5000
    n_random: int = 2
    seed: int = 0


@dataclass(frozen=True)
class CapacityResult:
    value: float
    argmax: ProbVector
    lambda_min: float
    spread: float = 0.0
    start_values: tuple = field(default=(), repr=False)


def _check_input(px: DistLike, ch: TransferChannel) -> np.ndarray:
    p = as_prob(px).probs
    if p.size != ch.n_inputs:
        raise ShapeError(f"input distribution has {p.size} entries, channel has {ch.n_inputs} rows")
    return p


def output_distribution(px: DistLike, ch: TransferChannel) -> np.ndarray:
    return _check_input(px, ch) @ ch.matrix


def conditional_mim(px: DistLike, ch: TransferChannel) -> float:
    """``L(Y|X) = sum_i p(x_i) sum_j W_ij exp(-W_ij)``."""
    return float(_check_input(px, ch) @ ch.row_mim)


def output_mim(px: DistLike, ch: TransferChannel) -> float:
    q = output_distribution(px, ch)
    return float(np.sum(q * np.exp(-q)))


def transfer_gap(px: DistLike, ch: TransferChannel) -> float:
    """Objective ``L(Y) - L(Y|X)`` at a given input distribution."""
    return output_mim(px, ch) - conditional_mim(px, ch)


def lambda_min(px: DistLike, ch: TransferChannel) -> float:
    """Smallest Lipschitz constant satisfying the row-wise transfer constraint.

    The constraint is evaluated between the output marginal and every row of
    the matrix; the binding row is the one closest to the marginal.
    """
    q = output_distribution(px, ch)
    gap = abs(transfer_gap(px, ch))
    dist = float(np.abs(ch.matrix - q).sum(axis=1).min())
    if gap <= 1e-15:
        return 0.0
    if dist == 0.0:
        return math.inf
    return gap / dist


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _ascend(p0: np.ndarray, w: np.ndarray, c: np.ndarray, opt: OptimizerSettings):
    def value(p):
        q = p @ w
        return float(np.sum(q * np.exp(-q)) - p @ c)

    def grad(p):
        q = p @ w
        return w @ ((1.0 - q) * np.exp(-q)) - c

    # Hessian of the objective is W diag((q-2)e^-q) W^T, bounded by 2 ||W||_2^2
    step0 = 1.0 / max(2.0 * np.linalg.norm(w, 2) ** 2, 1e-12)
    p = project_simplex(p0)
    f = value(p)
    step = step0
    for it in range(opt.max_iter):
        g = grad(p)
        # let the step grow after each accepted move; flat objectives need it
        step = min(step * 4.0, 1e6 * step0)
        while True:
            cand = project_simplex(p + step * g)
            fc = value(cand)
            # Armijo condition for projected gradient
            if fc >= f + 1e-4 * g @ (cand - p) or step < 1e-16:
                break
            step *= 0.5
        moved = np.abs(cand - p).sum()
        improved = fc - f
        p, f = cand, max(fc, f)
        if moved <= opt.tol or (improved <= opt.tol * 1e-3 and moved <= math.sqrt(opt.tol)):
            return p, f, True
    return p, f, False


def capacity_numeric(ch: TransferChannel, opt: OptimizerSettings | None = None) -> CapacityResult:
    """Maximize the transfer gap over the input simplex.

    Starts from every vertex, the uniform distribution, and ``opt.n_random``
    Dirichlet draws; the best start wins, ties going to the lowest start index.
    """
    opt = opt or OptimizerSettings()
    w = ch.matrix
    c = ch.row_mim
    n = ch.n_inputs
    rng = np.random.default_rng(opt.seed)
    starts = [np.eye(n)[i] for i in range(n)] + [np.full(n, 1.0 / n)]
    starts += list(rng.dirichlet(np.ones(n), size=opt.n_random))

    runs = [_ascend(s, w, c, opt) for s in starts]
    values = [f for _, f, _ in runs]
    best = int(np.argmax(values))
    p_best, f_best, converged = runs[best]
    if not converged:
        raise OptimizationError(
            f"no convergence within {opt.max_iter} iterations (best value {f_best:.12g})",
            best=(ProbVector(p_best / p_best.sum()), f_best),
        )
    argmax = ProbVector(p_best / p_best.sum())
    return CapacityResult(
        value=f_best,
        argmax=argmax,
        lambda_min=lambda_min(argmax, ch),
        spread=float(max(values) - min(values)),
        start_values=tuple(values),
    )


def capacity_averaged(dm: DisturbanceModel, opt: OptimizerSettings | None = None) -> float:
    total = 0.0
    for outcome, weight, ch in zip(dm.outcomes, dm.weights.probs, dm.channels):
        try:
            total += weight * capacity_numeric(ch, opt).value
        except OptimizationError as exc:
            raise OptimizationError(f"disturbance {outcome!r}: {exc}", best=exc.best) from exc
    return float(total)


def _check_beta(beta: float):
    if not 0.0 < beta < 1.0:
        raise ParameterError(f"crossover must lie in (0, 1), got {beta}")


def bsc_conditional(beta: float) -> float:
    return beta * math.exp(-beta) + (1 - beta) * math.exp(-(1 - beta))


def capacity_bsc(beta: float) -> float:
    """Closed-form capacity of the binary symmetric transfer matrix."""
    _check_beta(beta)
    return math.exp(-0.5) - bsc_conditional(beta)


def bsc_lambda_min(beta: float) -> float:
    """Minimal Lipschitz constant at the optimum; 0 where the gap vanishes."""
    _check_beta(beta)
    denom = abs(1 - 2 * beta)
    if denom == 0:
        return 0.0
    return capacity_bsc(beta) / denom


def capacity_strong_symmetric(K: int, beta: float) -> float:
    """Closed-form capacity of the K-ary strongly symmetric transfer matrix."""
    if K < 2 or int(K) != K:
        raise ParameterError(f"alphabet size must be an integer >= 2, got {K}")
    _check_beta(beta)
    return math.exp(-1.0 / K) - ((1 - beta) * math.exp(-(1 - beta)) + beta * math.exp(-beta / (K - 1)))


def strong_symmetric_lambda_min(K: int, beta: float) -> float:
    denom = 2 * abs(1 - beta - 1.0 / K)
    if denom < 1e-15:
        return 0.0
    return capacity_strong_symmetric(K, beta) / denom
