"""Closed-form analytics for the M/M/s/k queue with queue-length-dependent arrivals.

An arrival that finds ``j`` jobs in the system joins with probability
``1/(1+j)``, so the birth rate in state ``j`` is ``lam / (1+j)`` and the death
rate is ``min(j, s) * mu``. States run from 0 to ``s+k`` (total in system).

Each divergence helper returns the exact value computed from the state
distributions next to the literal published closed form; the published
forms contain discrepancies and are kept only for the typo ledger.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ParameterError
from .measures import ProbVector, kl_divergence, l1_distance, mim, mitm

INFINITE = math.inf
TAIL_TOL = 1e-12


@dataclass(frozen=True)
class QueueSpec:
    s: int
    k: float  # non-negative int, or INFINITE
    arrival_rate: float
    service_rate: float = 1.0

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 1:
            raise ParameterError(f"server count must be a positive integer, got {self.s}")
        if self.k != INFINITE and (self.k < 0 or int(self.k) != self.k):
            raise ParameterError(f"buffer size must be a non-negative integer or INFINITE, got {self.k}")
        if not self.arrival_rate > 0 or not self.service_rate > 0:
            raise ParameterError("arrival and service rates must be positive")

    @classmethod
    def from_rho(cls, s: int, k, rho: float, service_rate: float = 1.0) -> "QueueSpec":
        if not rho > 0:
            raise ParameterError(f"traffic intensity must be positive, got {rho}")
        return cls(s, k, rho * s * service_rate, service_rate)

    @property
    def finite(self) -> bool:
        return self.k != INFINITE

    @property
    def a(self) -> float:
        return self.arrival_rate / self.service_rate

    @property
    def rho(self) -> float:
        return self.a / self.s

    @property
    def phi1(self) -> float:
        return float(sum(_head_weights(self.s, self.a)))

    @property
    def phi2(self) -> float:
        return math.exp(self.s * math.log(self.a) - math.lgamma(self.s + 1))

    def with_k(self, k) -> "QueueSpec":
        return QueueSpec(self.s, k, self.arrival_rate, self.service_rate)


def _head_weights(s: int, a: float) -> list[float]:
    """``a^j / (j! j!)`` for ``j = 0..s-1`` by recurrence."""
    out = [1.0]
    for j in range(1, s):
        out.append(out[-1] * a / (j * j))
    return out


def unnormalized_weights(s: int, a: float, n_states: int) -> np.ndarray:
    """Relative state weights ``p_j / p_0`` for ``j = 0..n_states-1``.

    ``a^j/(j!j!)`` below ``s``, ``a^s/(s! j!) rho^(j-s)`` from ``s`` on,
    accumulated as products of neighbour ratios so nothing overflows.
    """
    rho = a / s
    w = np.empty(n_states)
    w[0] = 1.0
    for j in range(1, n_states):
        ratio = a / (j * j) if j <= s else rho / j
        w[j] = w[j - 1] * ratio
    return w


def _tail_sum(s: int, rho: float, lo: int, hi: int) -> float:
    """``sum_{j=lo}^{hi} rho^(j-s)/j!`` by recurrence (``lo >= s``)."""
    term = math.exp((lo - s) * math.log(rho) - math.lgamma(lo + 1))
    total = 0.0
    for j in range(lo, hi + 1):
        if j > lo:
            term *= rho / j
        total += term
    return total


def infinite_tail_sum(s: int, rho: float) -> float:
    """``e^rho / rho^s - sum_{j<s} rho^(j-s)/j!``, i.e. ``sum_{j>=s} rho^(j-s)/j!``.

    Summed directly; the subtraction form cancels badly for small rho.
    """
    term = math.exp(-math.lgamma(s + 1))
    total = term
    j = s
    while term > 1e-18 * total:
        j += 1
        term *= rho / j
        total += term
    return total


def normalizer(spec: QueueSpec) -> float:
    """``1 / p_0`` for the finite or infinite buffer."""
    s, rho = spec.s, spec.rho
    if spec.finite:
        return spec.phi1 + spec.phi2 * _tail_sum(s, rho, s, s + int(spec.k))
    return spec.phi1 + spec.phi2 * infinite_tail_sum(s, rho)


@dataclass(frozen=True)
class QueueStateDist:
    dist: ProbVector
    spec: QueueSpec
    truncation_mass: float = 0.0

    @property
    def probs(self) -> np.ndarray:
        return self.dist.probs

    def __len__(self):
        return len(self.dist)


def steady_state(spec: QueueSpec) -> QueueStateDist:
    """Stationary distribution over states ``0..s+k``."""
    if not spec.finite:
        raise ParameterError("steady_state needs a finite buffer; use steady_state_infinite")
    n = spec.s + int(spec.k) + 1
    w = unnormalized_weights(spec.s, spec.a, n)
    return QueueStateDist(ProbVector(w / w.sum()), spec)


def birth_death_oracle(birth: Iterable[float], death: Iterable[float], n_states: int) -> ProbVector:
    """Stationary law of a finite birth-death chain by detailed balance.

    ``birth[j]`` is the rate ``j -> j+1`` and ``death[j]`` the rate ``j -> j-1``
    (``death[0]`` is ignored).
    """
    b = np.asarray(list(birth), dtype=float)
    d = np.asarray(list(death), dtype=float)
    if n_states < 1:
        raise ParameterError("need at least one state")
    if b.size < n_states - 1 or d.size < n_states:
        raise ParameterError("rate sequences are shorter than the state space")
    if np.any(b[: n_states - 1] <= 0) or np.any(d[1:n_states] <= 0):
        raise ParameterError("birth-death rates must be positive")
    logw = np.zeros(n_states)
    logw[1:] = np.cumsum(np.log(b[: n_states - 1]) - np.log(d[1:n_states]))
    w = np.exp(logw - logw.max())
    return ProbVector(w / w.sum())


def queue_rates(spec: QueueSpec, n_states: int) -> tuple[np.ndarray, np.ndarray]:
    j = np.arange(n_states)
    birth = spec.arrival_rate / (1.0 + j)
    death = np.minimum(j, spec.s) * spec.service_rate
    return birth, death


def oracle_steady_state(spec: QueueSpec) -> ProbVector:
    n = spec.s + int(spec.k) + 1
    return birth_death_oracle(*queue_rates(spec, n), n)


def steady_state_infinite(spec: QueueSpec, tail_tol: float = TAIL_TOL) -> QueueStateDist:
    """Infinite-buffer distribution, truncated once the remaining mass is provably below ``tail_tol``.

    Past ``j >= s`` consecutive ratios are ``r = rho/(j+1)``, decreasing in
    ``j``, so the mass beyond ``j`` is at most ``p_j r / (1 - r)`` once ``r < 1``.
    ``truncation_mass`` reports that bound.
    """
    z = normalizer(spec.with_k(INFINITE))
    s, a, rho = spec.s, spec.a, spec.rho
    probs = [1.0 / z]
    j = 0
    while True:
        if j >= s:
            r = rho / (j + 1)
            if r < 1:
                bound = probs[-1] * r / (1 - r)
                if bound < tail_tol or probs[-1] == 0.0:
                    break
        j += 1
        ratio = a / (j * j) if j <= s else rho / j
        probs.append(probs[-1] * ratio)
        if j > 1_000_000:
            raise RuntimeError("infinite-buffer truncation did not terminate")
    return QueueStateDist(ProbVector(np.asarray(probs)), spec.with_k(INFINITE), bound)


def mim_queue_approx(d: QueueStateDist) -> float:
    """Second-order Taylor form ``1 - sum_j p_j^2`` via the closed-form weights."""
    spec = d.spec
    n = len(d)
    w = unnormalized_weights(spec.s, spec.a, n)
    p0 = d.probs[0]
    return float(1.0 - p0 * p0 * np.sum(w * w))


def _sq_weights_sum(spec: QueueSpec, k: int) -> float:
    """``sum_{j<s} (a^j/(j!j!))^2 + phi2^2 sum_{j=s}^{s+k} (rho^(j-s)/j!)^2``."""
    w = unnormalized_weights(spec.s, spec.a, spec.s + k + 1)
    return float(np.sum(w * w))


@dataclass(frozen=True)
class MitmComparison:
    exact: float
    quadratic: float
    paper_closed_form: float


@dataclass(frozen=True)
class KlComparison:
    exact: float
    paper_closed_form: float


def _dist(spec: QueueSpec, k: int) -> np.ndarray:
    return steady_state(spec.with_k(k)).probs


def _printed_mitm_adjacent(spec: QueueSpec, k: int) -> float:
    phi1, phi2, s, rho = spec.phi1, spec.phi2, spec.s, spec.rho
    t_k = _tail_sum(s, rho, s, s + k)
    t_k1 = _tail_sum(s, rho, s, s + k + 1)
    bracket = 1.0 / (phi1 + phi2 * t_k) ** 2 - 1.0 / (phi1 + phi2 * t_k1) ** 2
    last = phi2**2 * math.exp((2 * k + 2) * math.log(rho) - 2 * math.lgamma(s + k + 2))
    last /= phi1**2 + phi2**2 * t_k
    return bracket * _sq_weights_sum(spec, k) - last


def _printed_mitm_infinite(spec: QueueSpec, k: int) -> float:
    phi1, phi2, s, rho = spec.phi1, spec.phi2, spec.s, spec.rho
    t_k = _tail_sum(s, rho, s, s + k)
    t_inf = infinite_tail_sum(s, rho)
    z_inf = phi1 + phi2 * t_inf
    bracket = 1.0 / (phi1 + phi2 * t_k) ** 2 - 1.0 / z_inf**2
    # e^rho/rho^s - sum_{j=0}^{s+k} rho^(j-s)/j! == sum_{j>s+k} rho^(j-s)/j!
    plain_tail = _upper_tail(spec, k)
    return bracket * _sq_weights_sum(spec, k) - phi2**2 * plain_tail / z_inf**2


def mitm_adjacent(spec: QueueSpec, k: int) -> MitmComparison:
    """``D_I(P_{k+1} || P_k)``: exact, quadratic approximation, published form."""
    pk, pk1 = _dist(spec, k), _dist(spec, k + 1)
    exact = mitm(pk1, pk)
    quadratic = float(np.sum(pk * pk) - np.sum(pk1 * pk1))
    return MitmComparison(exact, quadratic, _printed_mitm_adjacent(spec, k))


def mitm_vs_infinite(spec: QueueSpec, k: int, tail_tol: float = 1e-300) -> MitmComparison:
    """``D_I(P_inf || P_k)``.

    The infinite law is carried until its tail underflows so the exact value
    stays meaningful down to roundoff even for large ``k``.
    """
    pinf = steady_state_infinite(spec, tail_tol).probs
    pk = _dist(spec, k)
    n = max(pinf.size, pk.size)
    pinf = np.pad(pinf, (0, n - pinf.size))
    pk = np.pad(pk, (0, n - pk.size))
    exact = float(np.sum(pinf * np.exp(-pinf) - pk * np.exp(-pk)))
    quadratic = float(np.sum(pk * pk) - np.sum(pinf * pinf))
    return MitmComparison(exact, quadratic, _printed_mitm_infinite(spec, k))


def _upper_tail(spec: QueueSpec, k: int) -> float:
    """``sum_{j>s+k} rho^(j-s)/j!`` summed forward, so it stays accurate when tiny."""
    s, rho = spec.s, spec.rho
    j = s + k + 1
    term = math.exp((k + 1) * math.log(rho) - math.lgamma(j + 1))
    total = 0.0
    while term > 1e-300 and (total == 0.0 or term > 1e-18 * total):
        total += term
        j += 1
        term *= rho / j
    return total


def _printed_z_inf(spec: QueueSpec) -> float:
    s, rho = spec.s, spec.rho
    return spec.phi1 + spec.phi2 * (
        math.exp(rho) / rho**s - sum(rho ** (j - s) / math.factorial(j) for j in range(s))
    )


def kl_adjacent(spec: QueueSpec, k: int) -> KlComparison:
    """``D(P_k || P_{k+1}) = ln(Z_{k+1} / Z_k)``.

    ``P_k / P_{k+1}`` is constant on the support of ``P_k``, so the divergence
    collapses to the normalizer ratio.
    """
    z_k = normalizer(spec.with_k(k))
    # Z_{k+1} - Z_k is the single new term
    new_term = math.exp((k + 1) * math.log(spec.rho) - math.lgamma(spec.s + k + 2))
    exact = math.log1p(spec.phi2 * new_term / z_k)
    printed = math.log1p(new_term / z_k)
    return KlComparison(exact, printed)


def kl_vs_infinite(spec: QueueSpec, k: int) -> KlComparison:
    """``D(P_k || P_inf) = ln(Z_inf / Z_k)``."""
    z_k = normalizer(spec.with_k(k))
    exact = math.log1p(spec.phi2 * _upper_tail(spec, k) / z_k)
    z_printed = _printed_z_inf(spec)
    printed = math.log(z_printed / z_k) if z_printed > 0 else math.nan
    return KlComparison(exact, printed)


MEASURES = ("mitm", "kl")


def divergence_vs_infinite(spec: QueueSpec, k: int, measure: str) -> float:
    if measure == "mitm":
        return mitm_vs_infinite(spec, k).exact
    if measure == "kl":
        return kl_vs_infinite(spec, k).exact
    raise ParameterError(f"unknown measure {measure!r}; expected one of {MEASURES}")


def min_buffer_search(spec: QueueSpec, epsilon: float, measure: str = "mitm", k_max: int = 10_000) -> int:
    """Smallest ``k`` with ``|divergence(P_inf, P_k)| <= epsilon``."""
    if not epsilon > 0:
        raise ParameterError(f"tolerance must be positive, got {epsilon}")
    for k in range(k_max + 1):
        if abs(divergence_vs_infinite(spec, k, measure)) <= epsilon:
            return k
    raise RuntimeError(f"no buffer size up to {k_max} meets tolerance {epsilon}")


@dataclass(frozen=True)
class BufferBound:
    """A published buffer-size bound checked against the exact search.

    ``valid`` holds when the bound really is a lower bound on the smallest
    admissible size (``k <= search_k``). ``sufficient`` holds when sizing the
    buffer at the bound already meets the tolerance. ``k`` is None when the
    logarithm in the formula leaves its domain.
    """

    k: int | None
    raw: float
    clamped: bool
    applicable: bool
    valid: bool | None
    sufficient: bool | None
    search_k: int


def _finish_bound(spec: QueueSpec, epsilon: float, measure: str, raw: float) -> BufferBound:
    search_k = min_buffer_search(spec, epsilon, measure)
    if not math.isfinite(raw):
        return BufferBound(None, raw, False, False, None, None, search_k)
    k = max(0, math.ceil(raw))
    sufficient = abs(divergence_vs_infinite(spec, k, measure)) <= epsilon
    return BufferBound(k, raw, raw < 0, True, k <= search_k, sufficient, search_k)


def _check_bound_args(spec: QueueSpec, epsilon: float):
    if not epsilon > 0:
        raise ParameterError(f"tolerance must be positive, got {epsilon}")
    if not spec.rho < 1:
        raise ParameterError(f"the published bound needs rho < 1 (ln rho < 0), got rho={spec.rho}")


def _log_or_nan(x: float) -> float:
    return math.log(x) if x > 0 else math.nan


def min_buffer_bound_mitm(spec: QueueSpec, epsilon: float) -> BufferBound:
    """Published looser lower bound for the MITM-based buffer size, evaluated literally."""
    _check_bound_args(spec, epsilon)
    phi1, phi2, s, rho = spec.phi1, spec.phi2, spec.s, spec.rho
    head_sq = float(np.sum(np.square(_head_weights(s, spec.a))))
    z_inf = _printed_z_inf(spec)
    phi = epsilon + (head_sq + phi2**2 * math.exp(rho) / rho**s) * z_inf**-2
    inner = 1.0 - (1.0 - rho) / phi2 * ((phi / head_sq) ** -0.5 - phi1)
    raw = _log_or_nan(inner) / math.log(rho) - 1.0
    return _finish_bound(spec, epsilon, "mitm", raw)


def min_buffer_bound_kl(spec: QueueSpec, epsilon: float) -> BufferBound:
    """Published looser lower bound for the KL-based buffer size, evaluated literally."""
    _check_bound_args(spec, epsilon)
    phi1, phi2, s, rho = spec.phi1, spec.phi2, spec.s, spec.rho
    two_eps = 2.0**epsilon
    tail = math.exp(rho) / rho**s - sum(rho ** (j - s) / math.factorial(j) for j in range(s))
    inner = 1.0 - (1.0 - rho) / (two_eps * phi2) * (phi1 * (1.0 - two_eps) + phi2 * tail)
    raw = _log_or_nan(inner) / math.log(rho) - 1.0
    return _finish_bound(spec, epsilon, "kl", raw)


# -- typo ledger ------------------------------------------------------------

LEDGER_COLUMNS = ("equation_id", "s", "k", "rho", "exact", "printed", "abs_gap")
DEFAULT_GRID = {"s": (1, 2, 3), "k": tuple(range(0, 11)), "rho": (0.5, 0.9)}


@dataclass(frozen=True)
class LedgerRow:
    equation_id: str
    s: int
    k: int
    rho: float
    exact: float
    printed: float

    @property
    def abs_gap(self) -> float:
        return abs(self.exact - self.printed)

    def as_tuple(self):
        return (self.equation_id, self.s, self.k, self.rho, self.exact, self.printed, self.abs_gap)


def typo_ledger(grid: dict | None = None) -> list[LedgerRow]:
    """Published closed forms next to exact values over a parameter grid.

    Rows ``29``/``30`` compare with the exact MIM difference, ``29q``/``30q``
    with the quadratic approximation the published form is derived from.
    """
    grid = grid or DEFAULT_GRID
    rows = []
    for s in grid["s"]:
        for rho in grid["rho"]:
            spec = QueueSpec.from_rho(s, 0, rho)
            for k in grid["k"]:
                m1 = mitm_adjacent(spec, k)
                m2 = mitm_vs_infinite(spec, k)
                k1 = kl_adjacent(spec, k)
                k2 = kl_vs_infinite(spec, k)
                rows += [
                    LedgerRow("29", s, k, rho, m1.exact, m1.paper_closed_form),
                    LedgerRow("29q", s, k, rho, m1.quadratic, m1.paper_closed_form),
                    LedgerRow("30", s, k, rho, m2.exact, m2.paper_closed_form),
                    LedgerRow("30q", s, k, rho, m2.quadratic, m2.paper_closed_form),
                    LedgerRow("33", s, k, rho, k1.exact, k1.paper_closed_form),
                    LedgerRow("34", s, k, rho, k2.exact, k2.paper_closed_form),
                ]
    return rows


def ledger_csv(rows: list[LedgerRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEDGER_COLUMNS)
    for r in rows:
        w.writerow([r.equation_id, r.s, r.k, r.rho] + [repr(float(v)) for v in (r.exact, r.printed, r.abs_gap)])
    return buf.getvalue()


@dataclass
class DivergenceProfile:
    """Analytic divergence curves over a range of buffer sizes."""

    spec: QueueSpec
    ks: list[int] = field(default_factory=list)
    mitm_adjacent: list[float] = field(default_factory=list)
    kl_adjacent: list[float] = field(default_factory=list)
    mitm_infinite: list[float] = field(default_factory=list)
    kl_infinite: list[float] = field(default_factory=list)


def divergence_profile(spec: QueueSpec, ks: Iterable[int]) -> DivergenceProfile:
    prof = DivergenceProfile(spec)
    for k in ks:
        prof.ks.append(k)
        prof.mitm_adjacent.append(mitm_adjacent(spec, k).exact)
        prof.kl_adjacent.append(kl_adjacent(spec, k).exact)
        prof.mitm_infinite.append(mitm_vs_infinite(spec, k).exact)
        prof.kl_infinite.append(kl_vs_infinite(spec, k).exact)
    return prof


def lipschitz_ratio(spec: QueueSpec, k: int) -> float:
    """``|D_I(P_{k+1}||P_k)| / ||P_{k+1} - P_k||_1`` (at most 1)."""
    pk, pk1 = _dist(spec, k), _dist(spec, k + 1)
    return abs(mitm(pk1, pk)) / l1_distance(pk1, pk)


def kl_exact_from_distributions(spec: QueueSpec, k: int) -> float:
    """Direct ``sum p ln(p/q)`` cross-check for :func:`kl_adjacent`."""
    return kl_divergence(_dist(spec, k), _dist(spec, k + 1))


def mim_exact(d: QueueStateDist) -> float:
    return mim(d.dist)
