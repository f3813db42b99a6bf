
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atlaslab import DriftSpec, NonpositiveRate, check_class_D1, in_class_D1, pi_a_rates
from atlaslab.drift import admissible_shift, average_drifts, finite_system_rates, prefix_sums
from atlaslab.errors import ConfigError

import oracles

# Frozen from oracles.running_averages / strict_minimum_scan / finite_rates_by_substitution.
AVG_2_M1_1 = (2.0, 0.5, 2 / 3, 0.5, 0.4)
ATLAS_WITNESSES_6 = (2, 3, 4, 5, 6)
ATLAS_FINITE_4 = (1.5, 1.0, 0.5)
ATLAS_FINITE_2 = (1.0,)

drift_prefix = st.lists(st.floats(-3, 3, allow_nan=False, allow_infinity=False), min_size=0, max_size=8)


def test_oracle_values_are_frozen():
    assert [float(x) for x in oracles.running_averages([2, -1, 1], 5)] == pytest.approx(AVG_2_M1_1, abs=0)
    assert tuple(oracles.strict_minimum_scan([1], 6)) == ATLAS_WITNESSES_6
    assert tuple(float(x) for x in oracles.finite_rates_by_substitution([1], 4)) == ATLAS_FINITE_4
    assert tuple(float(x) for x in oracles.finite_rates_by_substitution([1], 2)) == ATLAS_FINITE_2


class TestAverageDrifts:
    def test_atlas_is_one_over_n(self, atlas):
        np.testing.assert_allclose(average_drifts(atlas, 4), [1, 1 / 2, 1 / 3, 1 / 4], rtol=1e-15)

    def test_zero_drift(self):
        assert np.all(average_drifts(DriftSpec.zero(), 7) == 0)

    def test_mixed_prefix_matches_oracle(self):
        np.testing.assert_allclose(average_drifts(DriftSpec((2, -1, 1)), 5), AVG_2_M1_1, rtol=1e-15)

    def test_cached_averages_agree(self):
        spec = DriftSpec((0.3, -0.2, 0.7))
        np.testing.assert_array_equal(spec.bar_g(6), average_drifts(spec, 6))
        np.testing.assert_array_equal(spec.bar_g(3), average_drifts(spec, 3))

    @given(drift_prefix, st.integers(1, 30))
    def test_telescoping(self, prefix, n):
        spec = DriftSpec(tuple(prefix))
        gb = average_drifts(spec, n)
        g = spec.drifts(n)
        k = np.arange(2, n + 1)
        recon = k * gb[1:] - (k - 1) * gb[:-1]
        scale = max(1.0, float(np.abs(np.cumsum(g)).max()))
        np.testing.assert_allclose(recon, g[1:], atol=1e-12 * scale)
        assert gb[0] == g[0]

    @given(drift_prefix, st.integers(1, 20))
    def test_matches_exact_rationals(self, prefix, n):
        exact = oracles.running_averages(prefix, n)
        got = average_drifts(DriftSpec(tuple(prefix)), n)
        scale = max(1.0, max(abs(x) for x in prefix) if prefix else 1.0)
        for e, x in zip(exact, got):
            assert abs(float(e) - x) <= 1e-13 * scale * n


class TestStationaryRates:
    def test_atlas_a0(self, atlas):
        assert pi_a_rates(atlas, 0.0, 3).rates == (2.0, 2.0, 2.0)

    def test_atlas_a1(self, atlas):
        assert pi_a_rates(atlas, 1.0, 3).rates == (3.0, 4.0, 5.0)

    def test_zero_drift_negative_shift(self):
        with pytest.raises(NonpositiveRate):
            pi_a_rates(DriftSpec.zero(), -0.1, 1)

    def test_zero_drift_boundary_rejected(self):
        # a = a_min = 0 but the zero drift has no strict running minima
        with pytest.raises(NonpositiveRate):
            pi_a_rates(DriftSpec.zero(), 0.0, 1)

    def test_boundary_flag(self, atlas):
        assert pi_a_rates(atlas, 0.0, 2).boundary
        assert not pi_a_rates(atlas, 0.5, 2).boundary

    def test_negative_average_sets_a_min(self):
        spec = DriftSpec((-1.0, 0.5))
        a_min, _ = admissible_shift(spec)
        assert a_min == 2.0
        with pytest.raises(NonpositiveRate):
            pi_a_rates(spec, 2.0, 3)
        assert min(pi_a_rates(spec, 2.01, 10).rates) > 0

    @given(st.floats(0, 50, allow_nan=False), st.integers(1, 40))
    def test_atlas_closed_form_exact(self, a, k):
        rates = pi_a_rates(DriftSpec.atlas1(), a, k).rates
        assert rates == tuple(2.0 + n * a for n in range(1, k + 1))

    @given(drift_prefix, st.floats(0.001, 5), st.integers(1, 25))
    def test_positive_above_a_min(self, prefix, excess, k):
        spec = DriftSpec(tuple(prefix))
        a_min, _ = admissible_shift(spec)
        rates = pi_a_rates(spec, a_min + excess, k).rates
        assert all(r > 0 for r in rates)
        n = np.arange(1, k + 1)
        np.testing.assert_allclose(rates, n * (2 * average_drifts(spec, k) + a_min + excess),
                                   rtol=1e-10, atol=1e-10)

    def test_means(self, atlas):
        assert pi_a_rates(atlas, 1.0, 2).means == (1 / 3, 1 / 4)


class TestClassD1:
    def test_atlas_witnesses(self, atlas):
        cert = check_class_D1(atlas, 6)
        assert cert.member and cert.witnesses == ATLAS_WITNESSES_6

    def test_late_positive_drift_has_no_witness(self):
        cert = check_class_D1(DriftSpec((0.0, 1.0)), 4)
        assert cert.witnesses == () and not cert.member
        assert tuple(oracles.strict_minimum_scan([0, 1], 4)) == ()

    def test_zero_drift(self):
        assert check_class_D1(DriftSpec.zero(), 10).witnesses == ()
        assert not in_class_D1(DriftSpec.zero())

    @given(drift_prefix, st.integers(2, 25))
    def test_scan_matches_brute_force(self, prefix, n_max):
        # brute force in exact arithmetic; restrict to dyadic inputs so floats are exact-ish
        prefix = [round(x * 8) / 8 for x in prefix]
        cert = check_class_D1(DriftSpec(tuple(prefix)), n_max)
        assert list(cert.witnesses) == oracles.strict_minimum_scan(prefix, n_max)

    @given(st.lists(st.integers(-4, 4), min_size=1, max_size=6))
    def test_exact_membership_agrees_with_long_scan(self, ints):
        spec = DriftSpec(tuple(float(x) for x in ints))
        # with a zero tail, new strict minima beyond the prefix exist iff the averages
        # keep decreasing from a positive total, which a long scan detects
        late = [N for N in oracles.strict_minimum_scan(ints, 200) if N > len(ints) + 1]
        assert in_class_D1(spec) == bool(late) and (not in_class_D1(spec) or all(
            s > 0 for s in np.cumsum(ints)))


class TestFiniteSystemRates:
    def test_atlas_four(self, atlas):
        assert finite_system_rates(atlas, 4) == pytest.approx(ATLAS_FINITE_4, rel=1e-15)

    def test_atlas_two(self, atlas):
        assert finite_system_rates(atlas, 2) == pytest.approx(ATLAS_FINITE_2, rel=1e-15)

    def test_zero_drift_rejected(self):
        with pytest.raises(NonpositiveRate):
            finite_system_rates(DriftSpec.zero(), 3)

    def test_increase_to_boundary_rates(self, atlas):
        target = pi_a_rates(atlas, 0.0, 3).rates
        prev = np.zeros(3)
        for N in (4, 8, 16, 64, 256, 4096):
            cur = np.array(finite_system_rates(atlas, N)[:3])
            assert np.all(cur > prev) and np.all(cur < target)
            prev = cur
        np.testing.assert_allclose(prev, target, atol=3 * 2 / 4096)


class TestSerialization:
    def test_text_roundtrip(self):
        spec = DriftSpec((1.5, -0.25, 0.1), name='odd "name"')
        assert DriftSpec.from_text(spec.to_text()) == spec

    def test_named_defaults(self):
        assert DriftSpec.from_mapping({"name": "atlas1"}) == DriftSpec.atlas1()
        assert DriftSpec.from_mapping({"name": "zero"}) == DriftSpec.zero()

    def test_unknown_tail(self):
        with pytest.raises(ConfigError):
            DriftSpec((1.0,), tail="geometric")

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            DriftSpec.from_mapping({"prefix": [1.0], "rule": 2})

    def test_lower_bound(self):
        assert DriftSpec.atlas1().lower_bound == 1.0
        assert DriftSpec((0.5, -3.0)).lower_bound == 3.0

    def test_prefix_sums(self, atlas):
        assert list(prefix_sums(atlas, 3)) == [1.0, 1.0, 1.0]
