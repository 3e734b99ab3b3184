import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import distributions
from mitm.errors import AbsoluteContinuityError, DistributionError, ParameterError
from mitm.measures import (
    ProbVector,
    TransferConstraint,
    align,
    kl_divergence,
    l1_distance,
    lipschitz_check,
    mim,
    mim_weighted,
    mitm,
    product,
    to_base,
)


class TestProbVector:
    def test_valid(self):
        p = ProbVector([0.25, 0.75])
        assert len(p) == 2
        assert list(p) == [0.25, 0.75]
        assert np.asarray(p).sum() == 1.0

    def test_read_only(self):
        p = ProbVector([0.5, 0.5])
        with pytest.raises(ValueError):
            p.probs[0] = 1.0

    @pytest.mark.parametrize(
        "bad", [[], [0.5, 0.6], [-0.1, 1.1], [math.nan, 1.0], [math.inf, 0.0], [0.3, 0.3]]
    )
    def test_rejects(self, bad):
        with pytest.raises(DistributionError):
            ProbVector(bad)

    def test_renormalize(self):
        p = ProbVector([1.0, 3.0], renormalize=True)
        assert np.allclose(p.probs, [0.25, 0.75])

    def test_tolerance(self):
        ProbVector([0.5, 0.5 + 5e-10])
        with pytest.raises(DistributionError):
            ProbVector([0.5, 0.5 + 1e-6])

    def test_padded_and_uniform(self):
        assert list(ProbVector([1.0]).padded(3)) == [1.0, 0.0, 0.0]
        assert np.allclose(ProbVector.uniform(4).probs, 0.25)


def test_transfer_constraint_requires_positive():
    with pytest.raises(ParameterError):
        TransferConstraint(0.0)


class TestMim:
    def test_degenerate_is_inverse_e(self):
        assert mim([1.0]) == pytest.approx(math.exp(-1), abs=1e-15)
        assert mim([0, 1, 0]) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_uniform(self):
        for n in (2, 3, 10):
            assert mim(np.full(n, 1 / n)) == pytest.approx(math.exp(-1 / n), rel=1e-14)

    @given(distributions())
    def test_range(self, p):
        n = len(p)
        v = mim(p)
        assert math.exp(-1) - 1e-12 <= v <= math.exp(-1 / n) + 1e-12

    @given(distributions(max_size=5), distributions(max_size=5))
    @settings(max_examples=50)
    def test_subadditive(self, p, q):
        assert mim(product(p, q)) <= mim(p) + mim(q) + 1e-12


class TestWeighted:
    def test_zero_coefficient_is_zero(self):
        assert mim_weighted([0.2, 0.8], 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_direct_formula(self):
        p = np.array([0.1, 0.2, 0.7])
        direct = math.log(np.sum(p * np.exp(2.0 * (1 - p))))
        assert mim_weighted(p, 2.0) == pytest.approx(direct, rel=1e-14)

    def test_large_coefficient_no_overflow(self):
        v = mim_weighted([0.5, 0.5], 2000.0)
        assert math.isfinite(v)
        assert v == pytest.approx(1000.0, rel=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            mim_weighted([1.0], -1.0)


class TestMitm:
    @given(distributions(min_size=3, max_size=3), distributions(min_size=3, max_size=3))
    def test_antisymmetric(self, p, q):
        assert mitm(q, p) == pytest.approx(-mitm(p, q), abs=1e-15)

    @given(distributions(min_size=4, max_size=4), distributions(min_size=4, max_size=4))
    def test_lipschitz_unit_constant(self, p, q):
        assert abs(mitm(q, p)) <= l1_distance(p, q) + 1e-15

    def test_padding(self):
        assert mitm([1.0], [0.5, 0.5]) == pytest.approx(math.exp(-1) - math.exp(-0.5))

    def test_no_padding_rejects(self):
        with pytest.raises(Exception):
            mitm([1.0], [0.5, 0.5], pad=False)

    def test_align_lengths(self):
        a, b = align([1.0], [0.2, 0.3, 0.5])
        assert a.size == b.size == 3


class TestKl:
    def test_zero_for_equal(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_known_value(self):
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(
            0.5 * math.log(2) + 0.5 * math.log(2 / 3), rel=1e-14
        )

    def test_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityError):
            kl_divergence([0.5, 0.5], [1.0, 0.0])

    def test_zero_mass_in_p_is_fine(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))

    @given(distributions(min_size=3, max_size=3), distributions(min_size=3, max_size=3))
    def test_pinsker(self, p, q):
        if np.any((p > 0) & (q == 0)):
            return
        assert kl_divergence(p, q) >= 0.5 * l1_distance(p, q) ** 2 - 1e-12


def test_lipschitz_check():
    p, q = [0.5, 0.5], [0.9, 0.1]
    assert lipschitz_check(mim(p), mim(q), p, q, TransferConstraint(1.0))
    assert not lipschitz_check(0.0, 10.0, p, q, TransferConstraint(1.0))


def test_product_shape():
    assert len(product([0.5, 0.5], [0.1, 0.2, 0.7])) == 6


def test_to_base():
    assert to_base(math.log(8), 2) == pytest.approx(3.0)
    with pytest.raises(ParameterError):
        to_base(1.0, 1.0)


@given(st.integers(2, 20))
def test_uniform_maximizes(n):
    rng = np.random.default_rng(n)
    p = rng.dirichlet(np.ones(n))
    assert mim(p) <= mim(np.full(n, 1 / n)) + 1e-12
