import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mitm.errors import ParameterError
from mitm.measures import kl_divergence, mim, mitm
from mitm.queue_analytics import (
    DEFAULT_GRID,
    INFINITE,
    LEDGER_COLUMNS,
    QueueSpec,
    birth_death_oracle,
    divergence_profile,
    divergence_vs_infinite,
    kl_adjacent,
    kl_exact_from_distributions,
    kl_vs_infinite,
    ledger_csv,
    lipschitz_ratio,
    mim_queue_approx,
    min_buffer_bound_kl,
    min_buffer_bound_mitm,
    min_buffer_search,
    mitm_adjacent,
    mitm_vs_infinite,
    oracle_steady_state,
    queue_rates,
    steady_state,
    steady_state_infinite,
    typo_ledger,
)

PAPER = QueueSpec.from_rho(1, 1, 0.9)


def generator_solution(spec):
    """Stationary law from the CTMC generator's null space (independent of detailed balance)."""
    n = spec.s + int(spec.k) + 1
    q = np.zeros((n, n))
    for j in range(n):
        if j + 1 < n:
            q[j, j + 1] = spec.arrival_rate / (1 + j)
        if j > 0:
            q[j, j - 1] = min(j, spec.s) * spec.service_rate
        q[j, j] = -q[j].sum()
    a = np.vstack([q.T, np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(a, b, rcond=None)[0]


def test_spec_validation():
    with pytest.raises(ParameterError):
        QueueSpec(0, 1, 1.0)
    with pytest.raises(ParameterError):
        QueueSpec(1, -1, 1.0)
    with pytest.raises(ParameterError):
        QueueSpec(1, 1.5, 1.0)
    with pytest.raises(ParameterError):
        QueueSpec.from_rho(1, 1, 0.0)
    assert QueueSpec(1, INFINITE, 0.5).finite is False


def test_paper_configuration_steady_state():
    p = steady_state(PAPER).probs
    assert p == pytest.approx([0.43383948, 0.39045553, 0.17570499], abs=1e-8)


@pytest.mark.parametrize("s,k,rho", [(1, 0, 0.5), (2, 3, 0.9), (3, 5, 1.7), (5, 10, 0.3)])
def test_matches_generator(s, k, rho):
    spec = QueueSpec.from_rho(s, k, rho)
    assert steady_state(spec).probs == pytest.approx(generator_solution(spec), abs=1e-12)


@given(st.integers(1, 5), st.integers(0, 30), st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9, 0.95]))
@settings(max_examples=60)
def test_matches_birth_death_oracle(s, k, rho):
    spec = QueueSpec.from_rho(s, k, rho)
    assert np.max(np.abs(steady_state(spec).probs - oracle_steady_state(spec).probs)) < 1e-12


def test_oracle_constant_rates():
    p = birth_death_oracle([0.5, 0.5], [0.0, 1.0, 1.0], 3).probs
    assert p == pytest.approx(np.array([1, 0.5, 0.25]) / 1.75)


def test_rates():
    birth, death = queue_rates(QueueSpec(2, 1, 3.0), 4)
    assert birth == pytest.approx([3.0, 1.5, 1.0, 0.75])
    assert death == pytest.approx([0.0, 1.0, 2.0, 2.0])


@pytest.mark.parametrize("a", [0.3, 0.9, 2.5])
def test_single_server_infinite_is_poisson(a):
    d = steady_state_infinite(QueueSpec(1, INFINITE, a))
    j = np.arange(len(d))
    assert d.probs == pytest.approx(stats.poisson.pmf(j, a), abs=1e-12)
    assert d.truncation_mass < 1e-12


def test_infinite_limit_of_finite():
    spec = QueueSpec.from_rho(2, 60, 0.9)
    inf = steady_state_infinite(spec).probs
    fin = steady_state(spec).probs[: inf.size]
    assert fin == pytest.approx(inf, abs=1e-12)


def test_quadratic_mim():
    d = steady_state(PAPER)
    assert mim_queue_approx(d) == pytest.approx(1 - np.sum(d.probs**2), abs=1e-15)


class TestDivergences:
    def test_mitm_adjacent_value(self):
        r = mitm_adjacent(PAPER, 1)
        direct = mitm(steady_state(PAPER.with_k(2)).probs, steady_state(PAPER).probs)
        assert r.exact == pytest.approx(direct, abs=1e-15)
        assert r.exact == pytest.approx(0.024996, abs=1e-6)

    def test_kl_adjacent_matches_direct(self):
        for s, k, rho in [(1, 1, 0.9), (2, 4, 0.5), (3, 0, 0.9)]:
            spec = QueueSpec.from_rho(s, k, rho)
            assert kl_adjacent(spec, k).exact == pytest.approx(kl_exact_from_distributions(spec, k), rel=1e-10)

    def test_kl_adjacent_printed_gap(self):
        r = kl_adjacent(PAPER, 1)
        assert r.exact == pytest.approx(0.051369, abs=1e-6)
        assert r.paper_closed_form == pytest.approx(0.056917, abs=1e-6)

    def test_kl_vs_infinite(self):
        spec = QueueSpec.from_rho(1, 0, 0.9)
        pk = steady_state(spec).probs
        pinf = steady_state_infinite(spec, 1e-300).probs
        direct = kl_divergence(pk, pinf)
        assert kl_vs_infinite(spec, 0).exact == pytest.approx(direct, rel=1e-12)
        assert kl_vs_infinite(spec, 0).exact == pytest.approx(0.258146, abs=1e-6)

    def test_mitm_vs_infinite_k0(self):
        spec = QueueSpec.from_rho(1, 0, 0.9)
        poisson = stats.poisson.pmf(np.arange(40), 0.9)
        expected = mim(poisson / poisson.sum()) - mim([1 / 1.9, 0.9 / 1.9])
        assert mitm_vs_infinite(spec, 0).exact == pytest.approx(expected, abs=1e-12)

    def test_mitm_vs_infinite_large_k_vanishes(self):
        assert abs(mitm_vs_infinite(PAPER, 50).exact) < 1e-15

    def test_lipschitz_ratio(self):
        for k in range(6):
            assert lipschitz_ratio(PAPER, k) <= 1.0

    def test_profile_monotone(self):
        prof = divergence_profile(PAPER, range(1, 11))
        for curve in (prof.mitm_adjacent, prof.kl_adjacent, prof.mitm_infinite, prof.kl_infinite):
            mags = np.abs(curve)
            assert np.all(np.diff(mags) < 0)

    def test_unknown_measure(self):
        with pytest.raises(ParameterError):
            divergence_vs_infinite(PAPER, 1, "renyi")


class TestBufferSizing:
    @pytest.mark.parametrize("measure", ["mitm", "kl"])
    @pytest.mark.parametrize("eps", [1e-2, 1e-3, 1e-4])
    def test_search_self_certifies(self, measure, eps):
        spec = QueueSpec.from_rho(1, 0, 0.9)
        k = min_buffer_search(spec, eps, measure)
        assert abs(divergence_vs_infinite(spec, k, measure)) <= eps
        if k > 0:
            assert abs(divergence_vs_infinite(spec, k - 1, measure)) > eps

    def test_known_search_values(self):
        spec = QueueSpec.from_rho(1, 0, 0.9)
        assert [min_buffer_search(spec, e, "mitm") for e in (1e-2, 1e-3, 1e-4)] == [2, 4, 5]
        assert [min_buffer_search(spec, e, "kl") for e in (1e-2, 1e-3, 1e-4)] == [3, 4, 5]

    def test_bad_tolerance(self):
        with pytest.raises(ParameterError):
            min_buffer_search(PAPER, 0.0)

    def test_printed_bounds_flags(self):
        spec = QueueSpec.from_rho(1, 0, 0.9)
        b = min_buffer_bound_mitm(spec, 1e-3)
        assert b.search_k == 4
        assert b.clamped and b.k == 0 and b.valid
        b = min_buffer_bound_kl(spec, 1e-3)
        assert b.k == 1 and b.valid and b.sufficient is False

    def test_bounds_need_rho_below_one(self):
        with pytest.raises(ParameterError):
            min_buffer_bound_mitm(QueueSpec.from_rho(1, 0, 1.2), 1e-3)
        with pytest.raises(ParameterError):
            min_buffer_bound_kl(QueueSpec.from_rho(1, 0, 0.9), -1.0)


class TestLedger:
    def test_shape_and_csv(self):
        rows = typo_ledger()
        n = len(DEFAULT_GRID["s"]) * len(DEFAULT_GRID["k"]) * len(DEFAULT_GRID["rho"]) * 6
        assert len(rows) == n
        parsed = list(csv.reader(io.StringIO(ledger_csv(rows))))
        assert tuple(parsed[0]) == LEDGER_COLUMNS
        assert len(parsed) == n + 1

    def test_documented_discrepancy(self):
        rows = typo_ledger({"s": (1,), "k": (1,), "rho": (0.9,)})
        eq33 = next(r for r in rows if r.equation_id == "33")
        assert eq33.abs_gap == pytest.approx(5.5e-3, abs=2e-4)
        eq34 = next(r for r in rows if r.equation_id == "34")
        assert eq34.abs_gap < 1e-12
