import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atlaslab import ConfigError, DriftSpec, ProductLaw, SimConfig, simulate_gap_paths, truncation_sensitivity
from atlaslab import dynamics
from atlaslab._kernels import sort_ranked
from atlaslab.drift import finite_system_rates
from atlaslab.dynamics import (SystemState, default_particle_count, initial_positions, step_unranked,
                               triple_collision_monitor)
from atlaslab.ergodic import ks_exponential
from atlaslab.rng import replica_stream


def test_default_particle_count():
    assert default_particle_count(5, 1.0) == 5 + 16
    assert default_particle_count(5, 4.0) == 5 + 48


class TestSimConfig:
    def test_derived_counts(self):
        cfg = SimConfig(N=10, T=1.0, dt=1e-3, k_obs=3, record_stride=100)
        assert cfg.steps == 1000 and cfg.n_frames == 11

    @pytest.mark.parametrize("kw,field", [
        (dict(dt=-1e-3), "dt"), (dict(T=0.0), "T"), (dict(k_obs=10), "k_obs"),
        (dict(k_obs=0), "k_obs"), (dict(T=1e-5), "T"), (dict(record_stride=0), "record_stride"),
    ])
    def test_rejects(self, kw, field):
        base = dict(N=10, T=1.0, dt=1e-3, k_obs=3)
        base.update(kw)
        with pytest.raises(ConfigError) as exc:
            SimConfig(**base)
        assert exc.value.field == field


class TestStepUnranked:
    def test_single_particle_drift(self):
        c, dt, n = 0.7, 1e-3, 100_000
        spec = DriftSpec((c,))
        state = SystemState([0.0])
        rng = replica_stream(0, 0)
        for _ in range(n):
            state = step_unranked(state, spec, dt, rng)
        T = n * dt
        # Y_T = cT + B_T, so the mean drift has standard deviation 1/sqrt(T)
        assert abs(state.y[0] / T - c) < 3 / math.sqrt(T)
        assert state.t == pytest.approx(T)

    def test_drift_follows_rank(self):
        # zero noise is impossible through the public path, so feed the kernel directly
        y = np.array([0.0, 0.01, 5.0])
        drift = np.array([10.0, -10.0, 0.0])
        occ = np.zeros((2, 0))
        dynamics._evolve_plain(y, drift, np.zeros((1, 3)), 0.1, 2, np.zeros(0), occ)
        # rank 0 moved up by 1, rank 1 down by 1: they swap and stay sorted
        np.testing.assert_allclose(y, [-0.99, 1.0, 5.0])

    def test_does_not_mutate_input(self, atlas):
        s = SystemState([0.0, 1.0, 2.0], eps_ladder=(0.1,))
        s2 = step_unranked(s, atlas, 1e-3, replica_stream(0, 0))
        np.testing.assert_array_equal(s.y, [0.0, 1.0, 2.0])
        assert np.all(np.diff(s2.y) >= 0) and s2.occupation.shape == (2, 1)

    def test_unsorted_state_rejected(self):
        with pytest.raises(ValueError):
            SystemState([1.0, 0.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=0, max_size=40))
def test_sort_is_a_stable_permutation(values):
    y = np.array(values, dtype=float)
    before = np.sort(y.copy(), kind="stable")
    sort_ranked(y)
    np.testing.assert_array_equal(y, before)


class TestSimulateGapPaths:
    def test_single_particle_euler_consistency(self):
        c, T = 0.4, 1.0
        cfg = SimConfig(N=1, T=T, dt=0.05, k_obs=0, seed=2)
        traj = simulate_gap_paths(DriftSpec((c,)), 0.0, cfg, replicas=100_000)
        y = traj.terminal[:, 0]
        n = len(y)
        assert abs(y.mean() - c * T) < 4 * math.sqrt(T / n)
        # the variance estimator of a normal sample has standard error T sqrt(2/(n-1))
        assert abs(y.var(ddof=1) - T) < 4 * T * math.sqrt(2 / (n - 1))

    def test_two_particle_free_gap_second_moment(self):
        cfg = SimConfig(N=2, T=0.25, dt=1e-4, k_obs=1, seed=3, record_stride=625)
        traj = simulate_gap_paths(DriftSpec.zero(), np.zeros((1, 1)), cfg, replicas=10_000)
        for f, t in enumerate(traj.times[1:], start=1):
            m2 = np.mean(traj.gaps[:, f, 0] ** 2)
            assert m2 == pytest.approx(2 * t, rel=0.05)

    def test_two_particle_atlas_keeps_its_finite_stationary_law(self, atlas):
        # the two-particle Atlas gap is a reflected BM with drift -1 and variance 2,
        # whose stationary law is Exp(2 * 1 * (1 - 1/2)) = Exp(1)
        rate = finite_system_rates(atlas, 2)[0]
        assert rate == 1.0
        cfg = SimConfig(N=2, T=0.5, dt=1e-4, k_obs=1, seed=4, record_stride=5000)
        traj = simulate_gap_paths(atlas, ProductLaw.exponential([rate]), cfg, replicas=4000)
        assert ks_exponential(traj.terminal_gaps[:, 0], rate).p_value > 0.01

    def test_zero_drift_from_collision(self):
        cfg = SimConfig(N=8, T=0.5, dt=1e-3, k_obs=7, seed=5, record_stride=10)
        traj = simulate_gap_paths(DriftSpec.zero(), np.zeros((1, 7)), cfg, replicas=20)
        assert np.all(traj.gaps >= 0)
        assert np.all(traj.terminal_gaps.sum(axis=1) > 0)

    def test_k_obs_must_be_below_n(self, atlas):
        with pytest.raises(ConfigError):
            simulate_gap_paths(atlas, 0.0, SimConfig(N=4, T=1, dt=0.1, k_obs=3).with_(k_obs=4))

    def test_start_has_lowest_particle_at_zero(self, stationary_run):
        assert np.all(stationary_run.initial[:, 0] == 0)
        assert np.all(stationary_run.positions[:, 0, :] == stationary_run.initial)

    def test_gaps_nonnegative(self, stationary_run):
        assert np.all(stationary_run.gaps >= 0)

    def test_occupation_monotone_in_eps(self, stationary_run):
        occ = stationary_run.occupation
        assert np.all(occ >= 0)
        assert np.all(np.diff(occ, axis=-1) >= 0)

    def test_occupation_nondecreasing_in_time(self, atlas):
        eps = (0.05, 0.1)
        cfg = SimConfig(N=6, T=0.2, dt=1e-3, k_obs=2, seed=7)
        s = SystemState([0.0, 0.02, 0.5, 1.0, 2.0, 3.0], eps_ladder=eps)
        rng = replica_stream(7, 0)
        prev = s.occupation.copy()
        for _ in range(200):
            s = step_unranked(s, atlas, cfg.dt, rng)
            assert np.all(s.occupation >= prev)
            prev = s.occupation.copy()

    def test_determinism_and_thread_invariance(self, atlas):
        cfg = SimConfig(N=12, T=0.2, dt=1e-3, k_obs=3, seed=8, record_stride=10)
        a = simulate_gap_paths(atlas, 0.0, cfg, (0.1, 0.2), 70)
        b = simulate_gap_paths(atlas, 0.0, cfg.with_(threads=4), (0.1, 0.2), 70)
        for name in ("positions", "noise", "occupation", "local_time", "terminal"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_chunking_does_not_change_paths(self, atlas, monkeypatch):
        cfg = SimConfig(N=12, T=0.2, dt=1e-3, k_obs=3, seed=8, record_stride=10)
        a = simulate_gap_paths(atlas, 0.0, cfg, (0.1,), 3)
        monkeypatch.setattr(dynamics, "_CHUNK_VALUES", 12 * 7)
        b = simulate_gap_paths(atlas, 0.0, cfg, (0.1,), 3)
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.occupation, b.occupation)

    def test_replica_streams_do_not_depend_on_count(self, atlas):
        cfg = SimConfig(N=8, T=0.1, dt=1e-3, k_obs=2, seed=9, record_stride=10)
        a = simulate_gap_paths(atlas, 0.0, cfg, replicas=5)
        b = simulate_gap_paths(atlas, 0.0, cfg, replicas=2)
        np.testing.assert_array_equal(a.positions[:2], b.positions)

    def test_noise_record_is_running_brownian_motion(self, atlas):
        cfg = SimConfig(N=5, T=0.05, dt=1e-3, k_obs=2, seed=1, record_stride=1)
        traj = simulate_gap_paths(atlas, 0.0, cfg, replicas=1)
        z = replica_stream(1, 0).standard_normal((cfg.steps, 5))
        np.testing.assert_allclose(traj.noise[0, -1], math.sqrt(cfg.dt) * z[:, :3].sum(axis=0), rtol=1e-12)

    def test_gaps_at_and_replica_views(self, stationary_run):
        g = stationary_run.gaps_at(0.5)
        assert g.shape == (stationary_run.replicas, stationary_run.k_obs)
        assert stationary_run.replica(0).shape == (stationary_run.k_obs, len(stationary_run.times))
        with pytest.raises(ValueError):
            stationary_run.gaps_at(stationary_run.horizon + 1.0)

    def test_initial_positions(self):
        np.testing.assert_array_equal(initial_positions([1.0, 2.0]), [0.0, 1.0, 3.0])


class TestTruncation:
    def test_median_decreases_with_size(self, atlas):
        cfg = SimConfig(N=8, T=0.5, dt=1e-4, k_obs=1, seed=10, record_stride=50)
        rows = truncation_sensitivity(atlas, 0.0, cfg, [8, 16, 32, 64], 0, replicas=100)
        med = [r.median for r in rows]
        # rank 0 sits far below the truncation, so the medians are already zero at N=8
        assert all(b <= a for a, b in zip(med, med[1:])) and med[-1] == 0.0

    def test_higher_rank_feels_small_truncations(self, atlas):
        cfg = SimConfig(N=8, T=0.5, dt=1e-4, k_obs=4, seed=10, record_stride=50)
        rows = truncation_sensitivity(atlas, 0.0, cfg, [8, 16, 64], 4, replicas=100)
        means = [float(r.sup_diff.mean()) for r in rows]
        assert means[0] > means[1] >= means[2] == 0.0

    def test_self_comparison_is_zero(self, atlas):
        cfg = SimConfig(N=8, T=0.1, dt=1e-3, k_obs=1, seed=1)
        (row,) = truncation_sensitivity(atlas, 0.0, cfg, [8], 0, replicas=10)
        assert np.all(row.sup_diff == 0)

    def test_zero_drift_lowest_particle(self):
        cfg = SimConfig(N=16, T=0.1, dt=1e-4, k_obs=1, seed=12, record_stride=50)
        rows = truncation_sensitivity(DriftSpec.zero(), 1.0, cfg, [16, 64], 0, replicas=1000)
        assert np.mean(rows[0].sup_diff < 1e-3) >= 0.99

    def test_shared_noise_means_identical_low_ranks_early(self, atlas):
        cfg = SimConfig(N=8, T=0.01, dt=1e-3, k_obs=1, seed=3, record_stride=1)
        rows = truncation_sensitivity(atlas, 0.0, cfg, [8, 9], 0, replicas=20)
        # one extra particle far above cannot affect rank 0 within 10 steps
        assert np.median(rows[0].sup_diff) == 0.0


class TestTripleCollisions:
    def test_zero_tolerance(self, stationary_run):
        assert triple_collision_monitor(stationary_run, 0.0) == 0

    def test_rare_at_small_tolerance(self, atlas):
        cfg = SimConfig(N=12, T=1.0, dt=1e-4, k_obs=4, seed=13, record_stride=10)
        traj = simulate_gap_paths(atlas, 0.0, cfg, replicas=40)
        frames = traj.replicas * len(traj.times)
        assert triple_collision_monitor(traj, 1e-3) / frames < 1e-2

    def test_halving_tolerance(self, stationary_run):
        frames = stationary_run.replicas * len(stationary_run.times)
        hi = triple_collision_monitor(stationary_run, 0.1)
        lo = triple_collision_monitor(stationary_run, 0.05)
        assert hi > 50
        # allow twice the Poisson noise of the larger count
        assert lo <= hi / 2 + 2 * 2 * math.sqrt(hi)
        assert lo / frames < hi / frames
