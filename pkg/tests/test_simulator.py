import math

import numpy as np
import pytest

from mitm.errors import ParameterError
from mitm.queue_analytics import QueueSpec, mitm_adjacent, steady_state
from mitm.simulator import (
    ARRIVAL_KINDS,
    EXTRA_COLUMNS,
    SWEEP_COLUMNS,
    ArrivalModel,
    SimConfig,
    cell_seed,
    empirical_divergences,
    simulate,
    sweep_k,
    total_variation,
)

SPEC = QueueSpec.from_rho(1, 1, 0.9)


def config(kind="exponential", events=100_000, seed=0, reps=1, spec=SPEC):
    return SimConfig(spec, ArrivalModel.for_spec(kind, spec), events, 0.1, seed, reps)


@pytest.mark.parametrize("kind", ARRIVAL_KINDS)
def test_arrival_means(kind):
    gaps, _ = ArrivalModel(kind, 2.0).sample(np.random.default_rng(0), 200_000)
    assert gaps.min() >= 0
    if kind != "normal":  # truncation by redraw shifts the normal mean up
        assert gaps.mean() == pytest.approx(2.0, rel=0.01)


def test_normal_redraw_counted():
    gaps, redrawn = ArrivalModel("normal", 1.0).sample(np.random.default_rng(0), 100_000)
    assert gaps.min() > 0
    # P(N(1,1) <= 0) is about 0.159; redraws compound geometrically
    assert redrawn / 100_000 == pytest.approx(0.159 / (1 - 0.159), rel=0.05)


def test_config_validation():
    with pytest.raises(ParameterError):
        ArrivalModel("pareto", 1.0)
    with pytest.raises(ParameterError):
        config(events=5)
    with pytest.raises(ParameterError):
        SimConfig(SPEC, ArrivalModel("exponential", 1.0), warmup_fraction=1.0)
    with pytest.raises(ParameterError):
        SimConfig(SPEC.with_k(math.inf), ArrivalModel("exponential", 1.0))
    assert config().as_dict()["k"] == 1


def test_exponential_matches_analytic():
    res = simulate(config(events=200_000))
    assert total_variation(res.occupancy, steady_state(SPEC).probs) < 0.01


def test_deterministic():
    a, b = simulate(config(events=20_000, seed=7)), simulate(config(events=20_000, seed=7))
    assert np.array_equal(a.time_in_state, b.time_in_state)
    c = simulate(config(events=20_000, seed=8))
    assert not np.array_equal(a.time_in_state, c.time_in_state)


def test_balking_probabilities():
    res = simulate(config(events=200_000))
    ratio = res.admissions_by_state / res.attempts_by_state
    assert ratio[0] == 1.0
    assert ratio[1] == pytest.approx(0.5, abs=0.01)
    assert ratio[2] == 0.0
    assert res.blocked == res.attempts_by_state[2]
    assert res.balks == res.attempts - res.admissions


def test_multi_server_analytic():
    spec = QueueSpec.from_rho(3, 2, 0.8)
    res = simulate(config(events=200_000, spec=spec))
    assert total_variation(res.occupancy, steady_state(spec).probs) < 0.01


def test_replications_shape():
    res = simulate(config(events=10_000, reps=4))
    assert res.time_in_state.shape == (4, 3)
    assert np.allclose(res.per_replication.sum(axis=1), 1.0)


def test_empirical_divergences_track_analytic():
    a = simulate(config(events=50_000, reps=10))
    b = simulate(config(events=50_000, reps=10, spec=SPEC.with_k(2), seed=1))
    emp = empirical_divergences(a, b)
    ana = mitm_adjacent(SPEC, 1).exact
    assert emp.d_i_se > 0
    assert abs(emp.d_i_sim - ana) < 5 * emp.d_i_se
    assert not emp.kl_undefined


def test_single_replication_has_nan_se():
    a = simulate(config(events=10_000))
    emp = empirical_divergences(a, simulate(config(events=10_000, spec=SPEC.with_k(2))))
    assert math.isnan(emp.d_i_se)


def test_cell_seed_stable():
    assert cell_seed(0, 3, "normal") == cell_seed(0, 3, "normal")
    assert cell_seed(0, 3, "normal") != cell_seed(0, 3, "uniform")


@pytest.mark.parametrize("versus", ["adjacent", "infinite"])
def test_sweep_rows(versus):
    base = config(events=2_000, reps=3, spec=SPEC.with_k(0))
    rows = sweep_k(base, range(0, 3), models=("exponential", "uniform"), versus=versus)
    assert len(rows) == 6
    assert [(r["k"], r["model"]) for r in rows[:2]] == [(0, "exponential"), (0, "uniform")]
    for r in rows:
        assert set(SWEEP_COLUMNS) | set(EXTRA_COLUMNS) <= set(r)
        assert r["events"] == 6_000


def test_sweep_rejects_unknown_comparison():
    with pytest.raises(ParameterError):
        sweep_k(config(events=2_000), [0], versus="previous")
