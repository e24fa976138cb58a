"""Offspring-law construction, exact moments/cumulants, and sampling."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from bprelab import OffspringLaw, ParameterError

GW = {0: 0.25, 2: 0.75}


def dyadic_laws(max_value=4, max_atoms=4):
    """Laws whose probabilities are exact binary fractions.

    Keeping every probability dyadic means the float pmf is exact, so the
    Fraction-based oracles and the float engine see literally the same law.
    """

    @st.composite
    def build(draw):
        values = draw(
            st.lists(st.integers(0, max_value), min_size=1, max_size=max_atoms, unique=True)
        )
        if all(v == 0 for v in values):
            values.append(draw(st.integers(1, max_value)))
        weights = [draw(st.integers(1, 8)) for _ in values]
        total = 1 << (sum(weights) - 1).bit_length()
        weights[-1] += total - sum(weights)
        return {v: w / total for v, w in zip(values, weights)}

    return build()


class TestConstruction:
    def test_empty_pmf_rejected(self):
        with pytest.raises(ParameterError):
            OffspringLaw({})

    def test_negative_value_rejected(self):
        with pytest.raises(ParameterError, match="non-negative integer"):
            OffspringLaw({-1: 0.5, 2: 0.5})

    def test_non_integer_value_rejected(self):
        with pytest.raises(ParameterError):
            OffspringLaw({1.5: 1.0})

    def test_negative_probability_rejected(self):
        with pytest.raises(ParameterError):
            OffspringLaw({0: -0.25, 2: 1.25})

    def test_bad_total_rejected(self):
        with pytest.raises(ParameterError, match="sum to"):
            OffspringLaw({0: 0.25, 2: 0.25})

    def test_all_mass_at_zero_rejected(self):
        with pytest.raises(ParameterError, match="mean must be positive"):
            OffspringLaw({0: 1.0})

    def test_zero_atoms_dropped(self):
        law = OffspringLaw({0: 0.25, 2: 0.75, 7: 0.0})
        assert law.max_support == 2
        assert law.as_mapping() == {0: 0.25, 2: 0.75}

    def test_basic_properties(self):
        law = OffspringLaw(GW)
        assert law.mean == 1.5
        assert law.log_mean == pytest.approx(math.log(1.5), rel=1e-15)
        assert law.max_support == 2
        assert not law.is_deterministic
        assert OffspringLaw({3: 1.0}).is_deterministic

    def test_equality_and_hash(self):
        assert OffspringLaw(GW) == OffspringLaw({2: 0.75, 0: 0.25})
        assert OffspringLaw(GW) != OffspringLaw({1: 1.0})
        assert hash(OffspringLaw(GW)) == hash(OffspringLaw(GW))


class TestMoments:
    def test_moment_order_zero_is_one(self):
        assert OffspringLaw(GW).moment(0.0) == 1.0

    def test_zero_support_contributes_nothing_for_positive_order(self):
        law = OffspringLaw({0: 0.5, 2: 0.5})
        assert law.moment(1.5) == pytest.approx(0.5 * 2**1.5, rel=1e-15)

    def test_negative_order_rejected(self):
        with pytest.raises(ParameterError):
            OffspringLaw(GW).moment(-0.5)

    def test_centered_abs_moment_frozen(self):
        # E|X/1.5 - 1|^2 = 0.25 * 1 + 0.75 * (1/3)^2 = 1/3
        assert OffspringLaw(GW).centered_abs_moment(2.0) == pytest.approx(1 / 3, rel=1e-15)
        assert OffspringLaw({2: 1.0}).centered_abs_moment(2.0) == 0.0

    def test_raw_moments_match_direct_sums(self):
        law = OffspringLaw({1: 0.5, 3: 0.5})
        mu = law.raw_moments(4)
        assert mu == pytest.approx([2.0, 5.0, 14.0, 41.0], rel=1e-15)

    @given(dyadic_laws())
    def test_raw_moments_match_oracle(self, pmf):
        law = OffspringLaw(pmf)
        dist = oracles.law_fractions(pmf)
        for k in range(1, 5):
            assert law.raw_moments(4)[k - 1] == pytest.approx(
                float(oracles.dist_moment(dist, k)), rel=1e-12, abs=1e-12
            )


class TestCumulants:
    def test_frozen_binary_law(self):
        # oracle (central moments): k = (3/2, 3/4, -3/4, -3/8)
        kappa = OffspringLaw(GW).cumulants(4)
        assert kappa == pytest.approx([1.5, 0.75, -0.75, -0.375], rel=1e-14)

    def test_frozen_symmetric_law(self):
        # {1: .5, 3: .5}: variance 1, symmetric so k3 = 0, k4 = mu4 - 3 = -2
        kappa = OffspringLaw({1: 0.5, 3: 0.5}).cumulants(4)
        assert kappa == pytest.approx([2.0, 1.0, 0.0, -2.0], rel=1e-14, abs=1e-14)

    def test_deterministic_law_has_only_first_cumulant(self):
        kappa = OffspringLaw({2: 1.0}).cumulants(6)
        assert kappa[0] == 2.0
        assert kappa[1:] == pytest.approx(np.zeros(5), abs=1e-12)

    @given(dyadic_laws())
    def test_low_orders_match_central_moment_oracle(self, pmf):
        kappa = OffspringLaw(pmf).cumulants(4)
        expected = [float(x) for x in oracles.cumulants_low_order(pmf)]
        assert kappa == pytest.approx(expected, rel=1e-11, abs=1e-11)

    @given(dyadic_laws(max_value=3, max_atoms=3), dyadic_laws(max_value=3, max_atoms=3))
    def test_additive_under_convolution(self, pmf_a, pmf_b):
        # cumulants of an independent sum are the sums of cumulants
        summed = oracles.convolve(oracles.law_fractions(pmf_a), oracles.law_fractions(pmf_b))
        law_sum = OffspringLaw({v: float(p) for v, p in summed.items()})
        total = OffspringLaw(pmf_a).cumulants(5) + OffspringLaw(pmf_b).cumulants(5)
        assert law_sum.cumulants(5) == pytest.approx(total, rel=1e-10, abs=1e-10)

    def test_order_bounds(self):
        with pytest.raises(ParameterError):
            OffspringLaw(GW).cumulants(0)
        with pytest.raises(ParameterError):
            OffspringLaw(GW).cumulants(13)


class TestSampling:
    def test_sample_deterministic_given_seed(self):
        law = OffspringLaw(GW)
        a = law.sample_array(np.random.default_rng(7), 100)
        b = law.sample_array(np.random.default_rng(7), 100)
        assert np.array_equal(a, b)
        assert set(np.unique(a)) <= {0, 2}

    def test_sample_total_of_zero_parents(self):
        assert OffspringLaw(GW).sample_total(np.random.default_rng(0), 0) == 0

    def test_sample_total_negative_rejected(self):
        with pytest.raises(ParameterError):
            OffspringLaw(GW).sample_total(np.random.default_rng(0), -1)

    def test_sample_total_overflow_guard(self):
        law = OffspringLaw(GW)
        with pytest.raises(ParameterError, match="too large"):
            law.sample_total(np.random.default_rng(0), 2**61)

    def test_sample_total_matches_convolved_law(self):
        # totals of z = 2 parents under {0: .5, 1: .5}: exactly (1/4, 1/2, 1/4)
        law = OffspringLaw({0: 0.5, 1: 0.5})
        rng = np.random.default_rng(11)
        draws = np.array([law.sample_total(rng, 2) for _ in range(20_000)])
        freq = np.bincount(draws, minlength=3) / len(draws)
        # 4 sigma on a frequency estimate at p = 1/4 or 1/2
        assert abs(freq[0] - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 20_000)
        assert abs(freq[1] - 0.50) < 4 * math.sqrt(0.25 / 20_000)
        assert abs(freq[2] - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 20_000)

    def test_sample_total_mean_and_variance(self):
        law = OffspringLaw(GW)
        rng = np.random.default_rng(3)
        z = 50
        draws = np.array([law.sample_total(rng, z) for _ in range(5_000)])
        mean, var = z * 1.5, z * 0.75
        assert abs(draws.mean() - mean) < 4 * math.sqrt(var / len(draws))
        # sample variance of a sum of bounded terms: loose 10% band is ample
        assert abs(draws.var() - var) < 0.1 * var
