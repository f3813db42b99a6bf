import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atlaslab import (DomainError, DriftSpec, InsufficientData, LocalTimeEstimator, SimConfig,
                      check_balance_recursion, check_laplace_identity, check_product_identity,
                      estimate_nu, nu_closed_form, simulate_gap_paths)
from atlaslab.dynamics import Probe
from atlaslab.local_time import default_eps_ladder, ito_residuals, laplace_bound, psi_eps_transform

import oracles

# Frozen from oracles.exp_mean_of (quadrature):
#   nu_2 * E[exp(-Z_1)], Z_1 ~ Exp(2), nu_2 = 2       -> 4/3
#   nu_1 * P(Z_2 > 0.5), Z_2 ~ Exp(4), nu_1 = 3 (a=1) -> 3 e^-2
PRODUCT_RHS_EXPNEG = 4 / 3
PRODUCT_RHS_TAIL = 0.4060058497098381


def test_oracle_values_are_frozen():
    assert 2 * oracles.exp_mean_of(lambda z: math.exp(-z), 2) == pytest.approx(PRODUCT_RHS_EXPNEG, rel=1e-12)
    assert 3 * oracles.exp_mean_of(lambda z: float(z > 0.5), 4) == pytest.approx(PRODUCT_RHS_TAIL, rel=1e-9)
    assert PRODUCT_RHS_TAIL == pytest.approx(3 * math.exp(-2), rel=1e-12)


@pytest.fixture(scope="module")
def shifted_run(atlas):
    cfg = SimConfig(N=16, T=1.0, dt=2.5e-4, k_obs=3, seed=21, record_stride=40)
    probe = Probe.tabulate(lambda z: (z > 0.5).astype(float), 2, 1, hi=20.0, n=40001)
    return simulate_gap_paths(atlas, 1.0, cfg, default_eps_ladder(cfg.dt), 400, probes=[probe])


class TestEstimateNu:
    def test_atlas_a0_first_gap(self, stationary_run):
        est = estimate_nu(stationary_run, 1)
        assert est.extrapolated == pytest.approx(2.0, rel=0.10)
        assert est.stderr > 0 and all(r >= 0 for r in est.raw)

    def test_atlas_a1_second_gap(self, shifted_run):
        assert estimate_nu(shifted_run, 2).extrapolated == pytest.approx(4.0, rel=0.10)

    def test_far_apart_pair_has_no_local_time(self):
        cfg = SimConfig(N=2, T=1.0, dt=1e-4, k_obs=1, seed=1, record_stride=1000)
        traj = simulate_gap_paths(DriftSpec.zero(), np.array([[10.0]]), cfg, default_eps_ladder(cfg.dt), 100)
        # P(min gap <= 0.32 before T=1) < 1e-10 for sqrt(2) BM started at 10
        assert estimate_nu(traj, 1).extrapolated < 0.05

    def test_needs_hundred_replicas(self, atlas):
        cfg = SimConfig(N=6, T=1.0, dt=1e-3, k_obs=2, seed=1)
        traj = simulate_gap_paths(atlas, 0.0, cfg, default_eps_ladder(cfg.dt), 99)
        with pytest.raises(InsufficientData):
            estimate_nu(traj, 1)

    def test_rejects_short_horizon_and_small_eps(self, atlas):
        cfg = SimConfig(N=6, T=0.5, dt=1e-3, k_obs=2, seed=1)
        traj = simulate_gap_paths(atlas, 0.0, cfg, default_eps_ladder(cfg.dt), 100)
        with pytest.raises(DomainError):
            estimate_nu(traj, 1)
        cfg = SimConfig(N=6, T=1.0, dt=1e-3, k_obs=2, seed=1)
        traj = simulate_gap_paths(atlas, 0.0, cfg, (0.01, 0.2, 0.4), 100)
        with pytest.raises(DomainError):
            estimate_nu(traj, 1)
        # a ladder subset above the floor is fine
        assert estimate_nu(traj, 1, eps_ladder=(0.2, 0.4), method="linear").extrapolated > 0

    def test_raw_ladder_is_regular(self, stationary_run):
        for i in range(1, stationary_run.k_obs + 1):
            assert estimate_nu(stationary_run, i).linear_r2 >= 0.9

    def test_weights_are_a_linear_functional(self, stationary_run):
        est = estimate_nu(stationary_run, 2)
        assert est.per_replica.mean() == pytest.approx(est.extrapolated, rel=1e-12)

    def test_uniform_integrability_proxy(self, stationary_run):
        per = stationary_run.occupation[:, 0, :] / (stationary_run.eps_ladder * stationary_run.horizon)
        p99 = np.percentile(per, 99, axis=0)
        assert p99.max() < 4 * 2.0

    def test_closed_form(self, atlas):
        np.testing.assert_allclose(nu_closed_form(atlas, 1.0, 3), [3, 4, 5])

    def test_estimator_wrapper(self, stationary_run):
        est = LocalTimeEstimator(k=3).fit(stationary_run)
        np.testing.assert_allclose(est.nu_, [estimate_nu(stationary_run, i).extrapolated for i in (1, 2, 3)])
        assert np.all(np.abs(est.relative_error([2, 2, 2])) < 0.1)


class TestBalance:
    def test_atlas_second_gap(self, stationary_run):
        nus = [estimate_nu(stationary_run, i) for i in range(1, 5)]
        recs = check_balance_recursion(nus, stationary_run.spec)
        assert [r["i"] for r in recs] == [2, 3]
        assert all(r["pass"] for r in recs)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(-3, 3), min_size=0, max_size=6), st.integers(0, 6), st.integers(3, 12))
    def test_exact_inputs_give_zero(self, ints, a, k):
        spec = DriftSpec(tuple(float(x) for x in ints))
        a_min, _ = spec_a_min(spec)
        nus = nu_closed_form(spec, a_min + 1 + a, k)
        recs = check_balance_recursion(list(nus), spec, first=1)
        for r in recs:
            assert abs(r["lhs"]) < 1e-9 * max(1.0, np.abs(nus).max())
            assert r["pass"]

    def test_perturbation_flips_neighbours(self, atlas):
        nus = list(nu_closed_form(atlas, 0.0, 5))
        se = [0.05] * 5
        assert all(r["pass"] for r in check_balance_recursion(nus, atlas, stderr=se))
        nus[1] += 0.5
        recs = {r["i"]: r["pass"] for r in check_balance_recursion(nus, atlas, stderr=se)}
        assert recs[2] is False and recs[3] is False and recs[4] is True

    def test_needs_two(self, atlas):
        with pytest.raises(DomainError):
            check_balance_recursion([2.0], atlas)


def spec_a_min(spec):
    from atlaslab.drift import admissible_shift
    return admissible_shift(spec)


class TestProductIdentity:
    def test_constant_function_reduces_to_nu(self, stationary_run):
        rec = check_product_identity(stationary_run, stationary_run.probes[2], 1, 2)
        nu = estimate_nu(stationary_run, 2).extrapolated
        assert rec["lhs"] == pytest.approx(nu, rel=1e-12)
        assert rec["rhs"] == pytest.approx(nu, rel=1e-12)

    def test_exp_neg(self, stationary_run):
        rec = check_product_identity(stationary_run, lambda z: np.exp(-z), 1, 2)
        assert rec["pass"]
        assert abs(rec["lhs"] - PRODUCT_RHS_EXPNEG) < 3 * rec["lhs_stderr"]

    def test_tail_indicator_shifted(self, shifted_run):
        rec = check_product_identity(shifted_run, shifted_run.probes[0], 2, 1)
        assert rec["pass"]
        assert abs(rec["lhs"] - PRODUCT_RHS_TAIL) < 3 * rec["lhs_stderr"]

    def test_same_gap_rejected(self, stationary_run):
        with pytest.raises(DomainError):
            check_product_identity(stationary_run, stationary_run.probes[0], 1, 1)

    def test_unknown_function_rejected(self, stationary_run):
        with pytest.raises(DomainError):
            check_product_identity(stationary_run, lambda z: np.exp(-2 * z), 1, 2)


class TestLaplace:
    def test_zero_lambda_is_exact(self, stationary_run):
        (rec,) = check_laplace_identity(stationary_run, 1, [0.0], a=0.0)
        assert rec["lhs"] == 1.0 and rec["rhs"] == 1.0

    def test_third_gap_negative_lambda(self, stationary_run):
        (rec,) = check_laplace_identity(stationary_run, 3, [-2.0], a=0.0)
        assert rec["rhs"] == 0.5 and rec["rel_err"] < 0.05

    def test_bound_enforced(self, stationary_run, atlas):
        # the closed form at (nu=2, lambda=1) is 2, but lambda=1 is not below 1 * gbar_1
        assert laplace_bound(atlas, 1) == 1.0
        with pytest.raises(DomainError):
            check_laplace_identity(stationary_run, 1, [1.0], a=0.0)

    def test_nu_sources_agree(self, stationary_run):
        a = check_laplace_identity(stationary_run, 2, [-1.0], a=0.0)[0]
        b = check_laplace_identity(stationary_run, 2, [-1.0], nu=2.0)[0]
        assert a["rhs"] == b["rhs"] and a["lhs"] == b["lhs"]


class TestPsi:
    def test_origin(self):
        assert psi_eps_transform(0.0, 0.3)[:2] == (0.0, 0.0)

    def test_knot(self):
        v, d1, _ = psi_eps_transform(0.3, 0.3)
        assert v == pytest.approx(0.045, rel=1e-15) and d1 == 0.3

    def test_twice_eps(self):
        assert psi_eps_transform(0.6, 0.3)[0] == pytest.approx(1.5 * 0.09, rel=1e-15)

    @given(st.floats(1e-3, 10))
    def test_continuity_at_knot(self, eps):
        lo = psi_eps_transform(eps * (1 - 1e-12), eps)
        hi = psi_eps_transform(eps * (1 + 1e-12), eps)
        assert lo[0] == pytest.approx(hi[0], rel=1e-9)
        assert lo[1] == pytest.approx(hi[1], rel=1e-9)

    @given(st.floats(0, 20), st.floats(1e-3, 5))
    def test_derivative_bounds(self, z, eps):
        _, d1, d2 = psi_eps_transform(z, eps)
        assert 0 <= d1 <= eps and d2 in (0.0, 1.0)

    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            psi_eps_transform(-1.0, 0.1)


@pytest.mark.slow
def test_ito_expansion_is_centered(atlas):
    cfg = SimConfig(N=10, T=1.0, dt=2.5e-4, k_obs=2, seed=31, record_stride=4000)
    traj = simulate_gap_paths(atlas, 0.0, cfg, replicas=10_000, ito_eps=[0.1])
    for i in (1, 2):
        res = ito_residuals(traj, i, 0.1)
        se = res.std(ddof=1) / math.sqrt(len(res))
        assert abs(res.mean()) < 4 * se
