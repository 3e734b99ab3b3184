"""Discrete-event simulation of the s-server, k-buffer queue with balking.

An arrival that sees ``j`` jobs in the system joins with probability
``1/(1+j)`` and only if ``j < s+k``; everything else counts as a balk.
Service is exponential. Occupancy is the time-weighted fraction of
simulated time in each state after the warm-up window.
"""

from __future__ import annotations

import heapq
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import AbsoluteContinuityError, ParameterError
from .measures import ProbVector, kl_divergence, l1_distance, mitm
from .queue_analytics import (
    QueueSpec,
    kl_adjacent,
    kl_vs_infinite,
    min_buffer_search,
    mitm_adjacent,
    mitm_vs_infinite,
    steady_state,
)

log = logging.getLogger(__name__)

ARRIVAL_KINDS = ("exponential", "uniform", "normal")
MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ArrivalModel:
    """Interarrival law with a given mean.

    exponential: rate ``1/mean``; uniform: on ``(0, 2 mean)``;
    normal: mean and standard deviation both ``mean``, redrawn until positive.
    """

    kind: str
    mean_interarrival: float

    def __post_init__(self):
        if self.kind not in ARRIVAL_KINDS:
            raise ParameterError(f"unknown arrival model {self.kind!r}; expected one of {ARRIVAL_KINDS}")
        if not self.mean_interarrival > 0:
            raise ParameterError("mean interarrival time must be positive")

    @classmethod
    def for_spec(cls, kind: str, spec: QueueSpec) -> "ArrivalModel":
        return cls(kind, 1.0 / spec.arrival_rate)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, int]:
        """Draw ``n`` interarrival times; also return how many normal draws were redrawn."""
        m = self.mean_interarrival
        if self.kind == "exponential":
            return rng.exponential(m, n), 0
        if self.kind == "uniform":
            # rng.uniform samples [0, 2m); a zero gap is harmless
            return rng.uniform(0.0, 2.0 * m, n), 0
        x = rng.normal(m, m, n)
        redrawn = 0
        bad = x <= 0
        while bad.any():
            nb = int(bad.sum())
            redrawn += nb
            x[bad] = rng.normal(m, m, nb)
            bad = x <= 0
        return x, redrawn


@dataclass(frozen=True)
class SimConfig:
    spec: QueueSpec
    arrivals: ArrivalModel
    horizon_events: int = 1_000_000
    warmup_fraction: float = 0.1
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if not self.spec.finite:
            raise ParameterError("simulation needs a finite buffer")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ParameterError("warmup_fraction must lie in [0, 1)")
        if self.replications < 1:
            raise ParameterError("replications must be >= 1")
        if self.horizon_events < 10 * self.n_states:
            raise ParameterError(
                f"horizon_events={self.horizon_events} is below 10 x {self.n_states} states"
            )

    @property
    def n_states(self) -> int:
        return self.spec.s + int(self.spec.k) + 1

    def as_dict(self) -> dict:
        return {
            "s": self.spec.s,
            "k": int(self.spec.k),
            "arrival_rate": self.spec.arrival_rate,
            "service_rate": self.spec.service_rate,
            "rho": self.spec.rho,
            "arrivals": self.arrivals.kind,
            "mean_interarrival": self.arrivals.mean_interarrival,
            "horizon_events": self.horizon_events,
            "warmup_fraction": self.warmup_fraction,
            "seed": self.seed,
            "replications": self.replications,
        }


@dataclass
class SimResult:
    occupancy: ProbVector
    attempts: int
    admissions: int
    balks: int
    blocked: int
    time_in_state: np.ndarray  # replications x states, raw simulated time
    attempts_by_state: np.ndarray
    admissions_by_state: np.ndarray
    redrawn: int
    seed: int
    config: SimConfig = field(repr=False)

    @property
    def per_replication(self) -> np.ndarray:
        return self.time_in_state / self.time_in_state.sum(axis=1, keepdims=True)

    @property
    def total_time(self) -> float:
        return float(self.time_in_state.sum())

    @property
    def redraw_rate(self) -> float:
        return self.redrawn / max(1, self.attempts + self.redrawn)


def _replicate(s: int, cap: int, mu: float, arrivals: ArrivalModel, n: int, warm: int, rng):
    gaps, redrawn = arrivals.sample(rng, n)
    coins = rng.random(n).tolist()
    services = (rng.exponential(1.0 / mu, n)).tolist()
    gaps = gaps.tolist()

    time_in = [0.0] * (cap + 1)
    attempts = [0] * (cap + 1)
    admits = [0] * (cap + 1)
    heap: list[float] = []
    push, pop = heapq.heappush, heapq.heappop
    now = 0.0
    t_arr = 0.0
    jobs = 0
    nxt = 0
    for i in range(n):
        t_arr += gaps[i]
        on = i >= warm
        while heap and heap[0] <= t_arr:
            t_dep = pop(heap)
            if on:
                time_in[jobs] += t_dep - now
            now = t_dep
            jobs -= 1
            if jobs >= s:
                push(heap, t_dep + services[nxt])
                nxt += 1
        if on:
            time_in[jobs] += t_arr - now
            attempts[jobs] += 1
        now = t_arr
        if jobs < cap and coins[i] * (jobs + 1) < 1.0:
            if on:
                admits[jobs] += 1
            jobs += 1
            if jobs <= s:
                push(heap, now + services[nxt])
                nxt += 1
    return np.array(time_in), np.array(attempts), np.array(admits), redrawn


def simulate(cfg: SimConfig) -> SimResult:
    """Run ``cfg.replications`` independent replications and pool them by time.

    Replication ``r`` draws from child ``r`` of ``SeedSequence(cfg.seed)``, so
    results are bit-identical for a given config.
    """
    spec = cfg.spec
    cap = cfg.n_states - 1
    warm = int(cfg.warmup_fraction * cfg.horizon_events)
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    times, att, adm, redrawn = [], np.zeros(cap + 1, int), np.zeros(cap + 1, int), 0
    for child in children:
        rng = np.random.default_rng(child)
        t, a, d, r = _replicate(spec.s, cap, spec.service_rate, cfg.arrivals, cfg.horizon_events, warm, rng)
        times.append(t)
        att += a
        adm += d
        redrawn += r
    times = np.vstack(times)
    pooled = times.sum(axis=0)
    attempts, admissions = int(att.sum()), int(adm.sum())
    return SimResult(
        occupancy=ProbVector(pooled / pooled.sum()),
        attempts=attempts,
        admissions=admissions,
        balks=attempts - admissions,
        blocked=int(att[cap]),
        time_in_state=times,
        attempts_by_state=att,
        admissions_by_state=adm,
        redrawn=redrawn,
        seed=cfg.seed,
        config=cfg,
    )


def total_variation(p, q) -> float:
    return 0.5 * l1_distance(p, q)


# -- empirical divergences ----------------------------------------------------


def _pad(v: np.ndarray, n: int) -> np.ndarray:
    return np.pad(v, (0, n - v.size))


def _smoothed_kl(time_a: np.ndarray, time_b: np.ndarray) -> tuple[float, bool, bool]:
    """KL between pooled occupancies; empty reference states get ``1/(2 T)`` mass."""
    n = max(time_a.size, time_b.size)
    ta, tb = _pad(time_a, n), _pad(time_b, n)
    pa = ta / ta.sum()
    empty = (tb == 0) & (ta > 0)
    smoothed = bool(empty.any())
    if smoothed:
        tb = tb + empty * 0.5  # 1/(2T) in probability units
    pb = tb / tb.sum()
    try:
        return kl_divergence(pa, pb), smoothed, False
    except AbsoluteContinuityError:
        return math.nan, smoothed, True


def _pair_stats(time_a: np.ndarray, time_b: np.ndarray) -> tuple[float, float, bool, bool]:
    pa = time_a / time_a.sum()
    pb = time_b / time_b.sum()
    d_i = mitm(pb, pa)
    d_kl, smoothed, undefined = _smoothed_kl(time_a, time_b)
    return d_i, d_kl, smoothed, undefined


@dataclass(frozen=True)
class EmpiricalDivergences:
    d_i_sim: float
    d_kl_sim: float
    d_i_se: float
    d_kl_se: float
    kl_smoothed: bool
    kl_undefined: bool


def _jackknife_se(full: float, loo: Sequence[float]) -> float:
    r = len(loo)
    if r < 2:
        return math.nan
    loo = np.asarray(loo)
    if not np.all(np.isfinite(loo)):
        return math.nan
    return float(math.sqrt((r - 1) / r * np.sum((loo - loo.mean()) ** 2)))


def empirical_divergences(res_a: SimResult, res_b: SimResult) -> EmpiricalDivergences:
    """MITM ``D_I(B||A)`` and KL ``D(A||B)`` between two simulated occupancies.

    Standard errors are delete-one jackknife estimates over paired
    replications (``nan`` with a single replication).
    """
    ta_all, tb_all = res_a.time_in_state, res_b.time_in_state
    d_i, d_kl, smoothed, undefined = _pair_stats(ta_all.sum(axis=0), tb_all.sum(axis=0))
    r = min(ta_all.shape[0], tb_all.shape[0])
    loo_i, loo_kl = [], []
    if r >= 2:
        ta_all, tb_all = ta_all[:r], tb_all[:r]
        sa, sb = ta_all.sum(axis=0), tb_all.sum(axis=0)
        for j in range(r):
            li, lk, _, _ = _pair_stats(sa - ta_all[j], sb - tb_all[j])
            loo_i.append(li)
            loo_kl.append(lk)
    return EmpiricalDivergences(
        d_i_sim=d_i,
        d_kl_sim=d_kl,
        d_i_se=_jackknife_se(d_i, loo_i),
        d_kl_se=_jackknife_se(d_kl, loo_kl),
        kl_smoothed=smoothed,
        kl_undefined=undefined,
    )


# -- sweeps --------------------------------------------------------------------

SWEEP_COLUMNS = (
    "k",
    "model",
    "d_i_sim",
    "d_i_ana",
    "d_kl_sim",
    "d_kl_ana",
    "tv_to_analytic",
    "events",
    "seed",
)
EXTRA_COLUMNS = ("d_i_se", "d_kl_se", "kl_smoothed", "versus")
PROXY_EPSILON = 1e-10


def cell_seed(seed: int, k, model: str) -> int:
    """Stable per-cell seed: ``seed XOR crc32("k:model")``."""
    return (int(seed) ^ zlib.crc32(f"{k}:{model}".encode())) & MASK64


def _cell(args) -> tuple:
    base, k, model, seed = args
    spec = base.spec.with_k(k)
    cfg = replace(base, spec=spec, arrivals=ArrivalModel.for_spec(model, spec), seed=seed)
    try:
        return (k, model), simulate(cfg), None
    except Exception as exc:  # noqa: BLE001 - reported per cell, sweep continues
        return (k, model), None, exc


def _run_cells(jobs: list, workers: int) -> dict:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]
    out = {}
    for key, res, err in results:
        if err is not None:
            log.error("simulation cell %s failed: %s", key, err)
        out[key] = res
    return out


def proxy_buffer(spec: QueueSpec) -> int:
    """Large-k stand-in for the infinite buffer."""
    return min_buffer_search(spec, PROXY_EPSILON, "mitm")


def sweep_k(
    base: SimConfig,
    k_range: Iterable[int],
    models: Sequence[str] = ARRIVAL_KINDS,
    versus: str = "adjacent",
    workers: int = 1,
) -> list[dict]:
    """Empirical and analytic divergences per buffer size and arrival model.

    ``versus="adjacent"`` compares k with k+1; ``versus="infinite"`` compares
    k with a large-k proxy for the infinite buffer. Rows are sorted by
    (k, model order). Cells that fail are logged and their row carries NaNs.
    """
    ks = sorted(set(int(k) for k in k_range))
    if versus not in ("adjacent", "infinite"):
        raise ParameterError(f"versus must be 'adjacent' or 'infinite', got {versus!r}")
    if versus == "adjacent":
        sim_ks = sorted(set(ks) | {k + 1 for k in ks})
        partner = {k: k + 1 for k in ks}
    else:
        kp = max(proxy_buffer(base.spec), max(ks) + 1)
        sim_ks = sorted(set(ks) | {kp})
        partner = {k: kp for k in ks}

    jobs = [(base, k, m, cell_seed(base.seed, k, m)) for m in models for k in sim_ks]
    sims = _run_cells(jobs, workers)

    rows = []
    for k in ks:
        spec_k = base.spec.with_k(k)
        if versus == "adjacent":
            d_i_ana, d_kl_ana = mitm_adjacent(spec_k, k).exact, kl_adjacent(spec_k, k).exact
        else:
            d_i_ana, d_kl_ana = mitm_vs_infinite(spec_k, k).exact, kl_vs_infinite(spec_k, k).exact
        analytic = steady_state(spec_k).probs
        for m in models:
            a, b = sims.get((k, m)), sims.get((partner[k], m))
            row = {
                "k": k,
                "model": m,
                "d_i_ana": d_i_ana,
                "d_kl_ana": d_kl_ana,
                "events": base.horizon_events * base.replications,
                "seed": cell_seed(base.seed, k, m),
                "versus": versus,
            }
            if a is None or b is None:
                row.update(d_i_sim=math.nan, d_kl_sim=math.nan, tv_to_analytic=math.nan,
                           d_i_se=math.nan, d_kl_se=math.nan, kl_smoothed=False)
            else:
                emp = empirical_divergences(a, b)
                row.update(
                    d_i_sim=emp.d_i_sim,
                    d_kl_sim=emp.d_kl_sim,
                    tv_to_analytic=total_variation(a.occupancy, analytic),
                    d_i_se=emp.d_i_se,
                    d_kl_se=emp.d_kl_se,
                    kl_smoothed=emp.kl_smoothed,
                )
            rows.append(row)
    return rows
