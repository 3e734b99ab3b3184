"""Continuous importance measures and the small-perturbation expansion.

Densities live on a bounded interval and are integrated with a fixed
quadrature rule. The perturbation model is ``g0 = f0 + eps * f0**alpha * u``
with ``integral(eps * f0**alpha * u) = 0``, and ``mitm_series`` evaluates the
first- and second-order terms of the expansion of ``L(g0) - L(f0)``:

    eps   * sum_i (-1)^i (i+1)/i!     * integral(f0^(i+alpha) u)
  + eps^2/2 * sum_i (-1)^i (i+1)/(i-1)! * integral(f0^(i-1+2 alpha) u^2)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    DistributionError,
    InfeasiblePerturbationError,
    NumericalDomainError,
    ShapeError,
)

DEFAULT_NODES = 4096
DENSITY_TOL = 1e-8
COEF_CUTOFF = 1e-12
RULES = ("simpson", "gauss")

Func = Callable[[np.ndarray], np.ndarray]


@lru_cache(maxsize=64)
def _rule(lo: float, hi: float, n: int, kind: str) -> tuple[np.ndarray, np.ndarray]:
    if kind == "simpson":
        n = n + 1 if n % 2 == 0 else n
        n = max(n, 3)
        x = np.linspace(lo, hi, n)
        h = (hi - lo) / (n - 1)
        w = np.full(n, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        w *= h / 3.0
    elif kind == "gauss":
        # composite 16-point Gauss-Legendre panels
        panels = max(1, n // 16)
        t, wt = np.polynomial.legendre.leggauss(16)
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        w = (half[:, None] * wt[None, :]).ravel()
    else:
        raise ValueError(f"unknown quadrature rule {kind!r}; expected one of {RULES}")
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def quadrature_nodes(lo: float, hi: float, n: int = DEFAULT_NODES, kind: str = "simpson"):
    return _rule(float(lo), float(hi), int(n), kind)


@dataclass(frozen=True)
class Density:
    """A probability density on ``[lo, hi]`` given as a vectorized callable."""

    support: tuple[float, float]
    func: Func
    n_nodes: int = DEFAULT_NODES
    rule: str = "simpson"
    tol: float = DENSITY_TOL
    truncation_mass: float = 0.0
    validate: bool = True

    def __post_init__(self):
        lo, hi = map(float, self.support)
        if not hi > lo:
            raise DistributionError(f"empty support [{lo}, {hi}]")
        object.__setattr__(self, "support", (lo, hi))
        if self.validate:
            v = self.values()
            if not np.all(np.isfinite(v)):
                raise DistributionError("density is not finite on the quadrature grid")
            if np.any(v < 0):
                raise DistributionError(f"density negative on the grid (min {v.min():.3g})")
            mass = self.integrate(v)
            if abs(mass - 1.0) > self.tol:
                raise DistributionError(f"density integrates to {mass:.12g}, not 1")

    @property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        return quadrature_nodes(*self.support, self.n_nodes, self.rule)

    def values(self) -> np.ndarray:
        x, _ = self.nodes
        return np.asarray(self.func(x), dtype=float) * np.ones_like(x)

    def integrate(self, integrand_values: np.ndarray) -> float:
        _, w = self.nodes
        return float(np.dot(w, integrand_values))

    def with_grid(self, n_nodes: int | None = None, rule: str | None = None) -> "Density":
        return Density(
            self.support,
            self.func,
            n_nodes=n_nodes or self.n_nodes,
            rule=rule or self.rule,
            tol=self.tol,
            truncation_mass=self.truncation_mass,
        )

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0, **kw) -> "Density":
        height = 1.0 / (hi - lo)
        return cls((lo, hi), lambda x: np.full_like(x, height), **kw)


def truncated_normal(lo: float, hi: float, mean: float = 0.0, sd: float = 1.0, **kw) -> Density:
    """Normal density restricted to ``[lo, hi]`` and renormalized.

    The discarded probability mass is stored as ``truncation_mass``.
    """
    inside = float(ndtr((hi - mean) / sd) - ndtr((lo - mean) / sd))
    c = 1.0 / (sd * math.sqrt(2 * math.pi) * inside)

    def f(x):
        return c * np.exp(-0.5 * ((x - mean) / sd) ** 2)

    return Density((lo, hi), f, truncation_mass=1.0 - inside, **kw)


def triangular_decreasing(**kw) -> Density:
    """Density ``2 - 2x`` on ``[0, 1]``."""
    return Density((0.0, 1.0), lambda x: 2.0 - 2.0 * x, **kw)


def _importance_integrand(v: np.ndarray) -> np.ndarray:
    return v * np.exp(-v)


def mim_continuous(f: Density) -> float:
    """Quadrature estimate of ``integral f exp(-f) dx``."""
    return f.integrate(_importance_integrand(f.values()))


def _check_shared(g: Density, f: Density):
    if g.support != f.support:
        raise ShapeError(f"support mismatch: {g.support} vs {f.support}")


def mitm_continuous(g: Density, f: Density) -> float:
    """``L(g) - L(f)``, integrated as one difference on ``g``'s grid."""
    _check_shared(g, f)
    x, _ = g.nodes
    gv = g.values()
    fv = np.asarray(f.func(x), dtype=float) * np.ones_like(x)
    return g.integrate(_importance_integrand(gv) - _importance_integrand(fv))


def _fpow(fv: np.ndarray, power: float, where: np.ndarray | None = None) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.power(fv, power)
    if where is not None:
        out = np.where(where, out, 0.0)
    return out


@dataclass(frozen=True)
class PerturbationFamily:
    """``g0 = f0 + epsilon * f0**alpha * u`` on the support of ``f0``."""

    f0: Density
    u: Func
    alpha: float
    epsilon: float
    tol: float = DENSITY_TOL

    def u_values(self) -> np.ndarray:
        x, _ = self.f0.nodes
        return np.asarray(self.u(x), dtype=float) * np.ones_like(x)

    def shift_values(self) -> np.ndarray:
        """``epsilon * f0**alpha * u`` on the nodes; zero wherever ``u`` is."""
        uv = self.u_values()
        return self.epsilon * _fpow(self.f0.values(), self.alpha, where=uv != 0) * uv

    def constraint_residual(self) -> float:
        return self.f0.integrate(self.shift_values())

    def check(self):
        shift = self.shift_values()
        if not np.all(np.isfinite(shift)):
            raise NumericalDomainError("f0**alpha * u is not finite on the grid")
        g = self.f0.values() + shift
        if np.any(g < 0):
            raise InfeasiblePerturbationError(
                f"perturbed density negative on the grid (min {g.min():.3g}) at epsilon={self.epsilon}"
            )
        resid = self.f0.integrate(shift)
        if abs(resid) > self.tol:
            raise DistributionError(f"perturbation does not integrate to zero (residual {resid:.3g})")

    def with_epsilon(self, epsilon: float) -> "PerturbationFamily":
        return PerturbationFamily(self.f0, self.u, self.alpha, epsilon, self.tol)


def make_perturbed(p: PerturbationFamily) -> Density:
    """Build ``g0`` as a Density on the same support and grid as ``f0``."""
    p.check()
    f0, u, alpha, eps = p.f0.func, p.u, p.alpha, p.epsilon

    def g0(x):
        fx = np.asarray(f0(x), dtype=float) * np.ones_like(x)
        ux = np.asarray(u(x), dtype=float) * np.ones_like(x)
        return fx + eps * _fpow(fx, alpha, where=ux != 0) * ux

    return Density(p.f0.support, g0, n_nodes=p.f0.n_nodes, rule=p.f0.rule, tol=p.tol)


def first_order_coef(i: int) -> float:
    return (-1) ** i * (i + 1) / math.factorial(i)


def second_order_coef(i: int) -> float:
    return (-1) ** i * (i + 1) / math.factorial(i - 1)


def _log_abs_first(i: int) -> float:
    return math.log(i + 1) - math.lgamma(i + 1)


def _log_abs_second(i: int) -> float:
    return math.log(i + 1) - math.lgamma(i)


@dataclass(frozen=True)
class SeriesResult:
    value: float
    first_order: float
    second_order: float
    tail_bound: float
    terms: tuple[int, int]


def _n_terms(log_abs_coef, log_m: float, i_max: int | None) -> int:
    if i_max is not None:
        if i_max < 1:
            raise ValueError("i_max must be >= 1")
        return i_max
    i = 1
    # stop once |coef_i| * max(f0, 1)^i drops below the cutoff
    while log_abs_coef(i) + i * log_m >= math.log(COEF_CUTOFF):
        i += 1
        if i > 10_000:
            raise NumericalDomainError("series coefficients do not decay")
    return i


def _tail(log_abs_coef, log_m: float, start: int) -> float:
    total = 0.0
    for i in range(start + 1, start + 400):
        term = math.exp(log_abs_coef(i) + i * log_m)
        total += term
        if term < 1e-300 or (i > start + 5 and term < 1e-18 * total):
            break
    return total


def _series(
    f0: Density,
    first: np.ndarray,
    second: np.ndarray,
    alpha: float,
    epsilon: float,
    i_max: int | None,
    orders: int,
) -> SeriesResult:
    fv = f0.values()
    log_m = math.log(max(float(fv.max()), 1.0))

    n1 = _n_terms(_log_abs_first, log_m, i_max)
    n2 = _n_terms(_log_abs_second, log_m, i_max)

    def integral(power: float, weight: np.ndarray) -> float:
        nz = weight != 0
        if power < 0 and np.any((fv == 0) & nz):
            raise NumericalDomainError(
                f"f0**{power:g} is unbounded where f0 vanishes; choose alpha >= 1/2 or move the support"
            )
        vals = _fpow(fv, power, where=nz) * weight
        if not np.all(np.isfinite(vals)):
            raise NumericalDomainError(f"non-finite integrand for exponent {power:g}")
        return f0.integrate(vals)

    s1 = sum(first_order_coef(i) * integral(i + alpha, first) for i in range(1, n1 + 1))
    s1 *= epsilon
    s2 = 0.0
    if orders >= 2:
        s2 = sum(second_order_coef(i) * integral(i - 1 + 2 * alpha, second) for i in range(1, n2 + 1))
        s2 *= 0.5 * epsilon**2

    # f0^(i+a) <= f0^a M^i and f0^(i-1+2a) <= f0^(2a) M^i for i >= 1, M = max(f0, 1)
    base1 = abs(epsilon) * integral(alpha, np.abs(first)) if np.any(first) else 0.0
    tail = base1 * _tail(_log_abs_first, log_m, n1)
    if orders >= 2 and np.any(second):
        base2 = 0.5 * epsilon**2 * integral(2 * alpha, np.abs(second))
        tail += base2 * _tail(_log_abs_second, log_m, n2)
    return SeriesResult(
        value=s1 + s2,
        first_order=s1,
        second_order=s2,
        tail_bound=tail,
        terms=(n1, n2 if orders >= 2 else 0),
    )


def mitm_series(p: PerturbationFamily, i_max: int | None = None, orders: int = 2) -> SeriesResult:
    """Truncated expansion of ``L(g0) - L(f0)`` (remainder ``o(eps^2)`` omitted).

    ``orders=1`` keeps only the first-order sum, for residual-order studies.
    """
    p.check()
    uv = p.u_values()
    return _series(p.f0, uv, uv * uv, p.alpha, p.epsilon, i_max, orders)


def mitm_series_pair(
    f0: Density,
    u1: Func,
    u2: Func,
    alpha: float,
    epsilon: float,
    i_max: int | None = None,
) -> SeriesResult:
    """Expansion of ``L(g1) - L(g2)`` for two perturbations of a shared ``f0``."""
    fam1 = PerturbationFamily(f0, u1, alpha, epsilon)
    fam2 = PerturbationFamily(f0, u2, alpha, epsilon)
    fam1.check()
    fam2.check()
    a, b = fam1.u_values(), fam2.u_values()
    return _series(f0, a - b, a * a - b * b, alpha, epsilon, i_max, orders=2)


@dataclass(frozen=True)
class ConvergenceOrder:
    slope: float | None
    noise_limited: bool
    epsilons: tuple[float, ...]
    residuals: tuple[float, ...]


NOISE_FLOOR = 1e-13


def series_convergence_order(
    p: PerturbationFamily, eps_grid: Sequence[float], orders: int = 2
) -> ConvergenceOrder:
    """Empirical order of ``|direct - series|`` in epsilon (log-log slope)."""
    eps = [float(e) for e in eps_grid]
    resid = []
    for e in eps:
        fam = p.with_epsilon(e)
        direct = mitm_continuous(make_perturbed(fam), fam.f0)
        resid.append(abs(direct - mitm_series(fam, orders=orders).value))
    if len(eps) < 2 or min(resid) < NOISE_FLOOR:
        return ConvergenceOrder(None, True, tuple(eps), tuple(resid))
    slope = float(np.polyfit(np.log(eps), np.log(resid), 1)[0])
    return ConvergenceOrder(slope, False, tuple(eps), tuple(resid))
