"""Finite-N truncation of the ranked particle system.

Particles are moved with Euler-Maruyama steps in which the particle currently at
rank ``k`` receives drift ``g[k] dt`` and an independent ``N(0, dt)`` increment;
the vector is then re-sorted. Sorting realizes the ranking map exactly, and the
size of the sort correction at each rank gives a discrete collision local time
for free. There is no wall above the top particle.

Replicas run independently on their own counter-based streams (see
:mod:`atlaslab.rng`) and are assembled in replica order, so the thread count
never changes a result.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from ._kernels import evolve
from ._validation import as_int, as_real
from .drift import DriftSpec
from .errors import ConfigError, DomainError
from .sampler import ProductLaw, sample_gaps

__all__ = [
    "SimConfig",
    "SystemState",
    "GapTrajectory",
    "Probe",
    "default_particle_count",
    "initial_positions",
    "step_unranked",
    "simulate_gap_paths",
    "truncation_sensitivity",
    "triple_collision_monitor",
]

_BLOCK = 32          # replicas per task
_CHUNK_VALUES = 1 << 20   # normals generated per call


def default_particle_count(k_obs, T):
    """Observed gaps plus enough spare particles that the top one cannot reach
    the observed ones within the horizon."""
    return int(k_obs) + max(16, math.ceil(8.0 * (T + math.sqrt(T))))


@dataclass(frozen=True)
class SimConfig:
    N: int
    T: float
    dt: float = 1e-4
    k_obs: int = 5
    seed: int = 0
    record_stride: int = 100
    threads: int = 1

    def __post_init__(self):
        N = as_int(self.N, "N", min_val=1)
        dt = as_real(self.dt, "dt", min_val=0.0, include_boundaries="neither")
        T = as_real(self.T, "T", min_val=0.0, include_boundaries="neither")
        if T < dt:
            raise ConfigError(f"horizon T={T} is shorter than one step dt={dt}", field="T")
        k_obs = as_int(self.k_obs, "k_obs", min_val=0)
        if N > 1 and not 1 <= k_obs <= N - 1:
            raise ConfigError(f"k_obs={k_obs} must lie in [1, N-1] = [1, {N - 1}]", field="k_obs")
        if N == 1 and k_obs != 0:
            raise ConfigError("a single particle has no gaps; use k_obs=0", field="k_obs")
        seed = as_int(self.seed, "seed", min_val=0, max_val=2**64 - 1)
        stride = as_int(self.record_stride, "record_stride", min_val=1)
        threads = as_int(self.threads, "threads", min_val=1)
        for k, v in dict(N=N, T=T, dt=dt, k_obs=k_obs, seed=seed, record_stride=stride, threads=threads).items():
            object.__setattr__(self, k, v)

    @property
    def steps(self):
        return max(1, int(round(self.T / self.dt)))

    @property
    def n_frames(self):
        return self.steps // self.record_stride + 1

    def with_(self, **kw):
        return replace(self, **kw)

    def to_mapping(self):
        return {k: getattr(self, k) for k in ("N", "T", "dt", "k_obs", "seed", "record_stride")}


@dataclass(frozen=True)
class Probe:
    """Tabulated nonnegative ``f`` paired with gaps ``(i, j)``.

    The simulation accumulates ``int f(Z_i) 1{Z_j <= eps} ds`` for every ladder
    ``eps``. ``f`` is evaluated by linear interpolation on a uniform grid
    ``lo + h * arange(len(values))`` and held constant beyond its ends.
    """

    i: int
    j: int
    lo: float
    h: float
    values: tuple

    @classmethod
    def tabulate(cls, f, i, j, hi=20.0, n=4001):
        grid = np.linspace(0.0, hi, n)
        vals = np.asarray(f(grid), dtype=float)
        if vals.shape != grid.shape or np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise DomainError("f must be finite and nonnegative on the tabulation grid")
        return cls(int(i), int(j), 0.0, float(grid[1] - grid[0]), tuple(vals))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        grid = self.lo + self.h * np.arange(len(self.values))
        return np.interp(z, grid, np.asarray(self.values))


@dataclass
class SystemState:
    """One replica: ranked positions, clock, occupation accumulators."""

    y: np.ndarray
    t: float = 0.0
    eps_ladder: tuple = ()
    occupation: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.array(self.y, dtype=float)
        if np.any(np.diff(self.y) < 0):
            raise DomainError("positions must be sorted")
        k = max(len(self.y) - 1, 0)
        if self.occupation is None:
            self.occupation = np.zeros((k, len(self.eps_ladder)))

    @property
    def gaps(self):
        return np.diff(self.y)


def step_unranked(state, spec, dt, rng):
    """One Euler step of the rank-drift system followed by a stable re-sort.

    Returns a new state; the input is not modified.
    """
    dt = as_real(dt, "dt", min_val=0.0, include_boundaries="neither", error=DomainError)
    N = len(state.y)
    new = SystemState(state.y.copy(), state.t, tuple(state.eps_ladder), state.occupation.copy())
    k = N - 1
    noise = rng.standard_normal((1, N))
    eps = np.asarray(state.eps_ladder, dtype=float)
    _evolve_plain(new.y, spec.drifts(N), noise, dt, k, eps, new.occupation)
    new.t = state.t + dt
    return new


def _evolve_plain(y, drift, noise, dt, k, eps, occ):
    empty_i = np.zeros(0, dtype=np.int64)
    evolve(y, drift, noise, dt, 0, 1 << 62, k, eps, occ, np.zeros(k), np.zeros(k + 1),
           empty_i, empty_i, np.zeros(0), np.ones(0), np.zeros((0, 1)), np.zeros((0, len(eps))),
           np.zeros(0), np.zeros(k), np.zeros((k, 0, 3)), np.zeros((1, k + 1)), np.zeros((1, k + 1)))


def initial_positions(gaps):
    """Positions with the lowest particle at 0 and the given consecutive gaps."""
    gaps = np.asarray(gaps, dtype=float)
    out = np.zeros(gaps.shape[:-1] + (gaps.shape[-1] + 1,))
    np.cumsum(gaps, axis=-1, out=out[..., 1:])
    return out


@dataclass
class GapTrajectory:
    """Replica ensemble of recorded paths and accumulators.

    ``positions[r, f]`` holds ranks ``0..k_obs`` at ``times[f]``; gaps are their
    differences. ``noise[r, f]`` holds the running Brownian motions of the same
    ranks, so ``W*_i = B_i - B_{i-1}`` is ``np.diff(noise, axis=-1)``.
    """

    times: np.ndarray
    positions: np.ndarray
    noise: np.ndarray
    occupation: np.ndarray
    eps_ladder: np.ndarray
    local_time: np.ndarray
    terminal: np.ndarray
    initial: np.ndarray
    horizon: float
    dt: float
    config: SimConfig
    spec: DriftSpec
    probes: tuple = ()
    probe_occupation: np.ndarray | None = None
    ito_eps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ito_terms: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def replicas(self):
        return self.positions.shape[0]

    @property
    def k_obs(self):
        return self.positions.shape[-1] - 1

    @property
    def gaps(self):
        return np.diff(self.positions, axis=-1)

    @property
    def terminal_gaps(self):
        return np.diff(self.terminal, axis=-1)

    @property
    def initial_gaps(self):
        return np.diff(self.initial, axis=-1)

    def gaps_at(self, t):
        """Gap matrix ``(replicas, k_obs)`` at the recorded time closest to ``t``."""
        f = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[f] - t) > 0.5 * self.dt * self.config.record_stride + 1e-12:
            raise DomainError(f"t={t} is not on the recorded grid")
        return self.gaps[:, f, :]

    def replica(self, r):
        """The ``k_obs x frames`` gap matrix of one replica."""
        return self.gaps[r].T


def _normalize_init(init, spec, width):
    """Turn ``init`` (shift, law or gap array) into a ProductLaw or a fixed gap array."""
    if isinstance(init, ProductLaw):
        if init.k < width:
            raise ConfigError(f"initial law has {init.k} gaps but {width} are needed", field="init")
        return init.truncate(width), None
    if isinstance(init, (int, float, np.integer, np.floating)) and not isinstance(init, bool):
        return ProductLaw.stationary(spec, float(init), width), None
    arr = np.asarray(init, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < width or np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"explicit initial gaps must be nonnegative with at least {width} columns",
                          field="init")
    return None, arr[:, :width]


def simulate_gap_paths(spec, init, cfg, eps_ladder=(), replicas=1, *, probes=(), ito_eps=(),
                       noise_width=None):
    """Simulate ``replicas`` independent copies of the truncated system.

    Parameters
    ----------
    spec : DriftSpec
    init : float, ProductLaw or array
        A float is read as the shift ``a`` of the product stationary law. An
        array supplies the initial gaps, one row per replica (a single row is
        reused for every replica).
    cfg : SimConfig
    eps_ladder : sequence of float
        Occupation thresholds, accumulated for every observed gap.
    probes : sequence of Probe
        Weighted occupation integrals for identities that pair two gaps.
    ito_eps : sequence of float
        Thresholds for the discrete Ito expansion of the quadratic-then-linear
        test function.
    noise_width : int, optional
        Number of noise columns drawn per step (``>= N``). Runs that share a seed
        and width see the same increments on their common ranks, which is how
        different truncation sizes are compared pathwise.
    """
    replicas = as_int(replicas, "replicas", min_val=1)
    N = cfg.N
    k = cfg.k_obs
    if N > 1 and k >= N:
        raise ConfigError(f"k_obs={k} must be below N={N}", field="k_obs")
    width = N if noise_width is None else as_int(noise_width, "noise_width", min_val=N)
    eps = np.sort(np.asarray(eps_ladder, dtype=float).ravel())
    if np.any(eps <= 0):
        raise DomainError("occupation thresholds must be positive")
    for p in probes:
        if not (1 <= p.i <= N - 1 and 1 <= p.j <= N - 1):
            raise ConfigError(f"probe gaps ({p.i}, {p.j}) out of range for N={N}", field="probes")
    ito = np.asarray(ito_eps, dtype=float).ravel()
    if width == 1:
        law, fixed = None, np.zeros((1, 0))
    else:
        law, fixed = _normalize_init(init, spec, width - 1)
    if fixed is not None and fixed.shape[0] not in (1, replicas):
        raise ConfigError("explicit initial gaps need one row or one row per replica", field="init")

    steps = cfg.steps
    F = cfg.n_frames
    drift = spec.drifts(N)
    h = drift[1:k + 1] - drift[:k]
    P = len(probes)
    p_i = np.array([p.i for p in probes], dtype=np.int64)
    p_j = np.array([p.j for p in probes], dtype=np.int64)
    p_lo = np.array([p.lo for p in probes], dtype=float)
    p_h = np.array([p.h for p in probes], dtype=float)
    m = max((len(p.values) for p in probes), default=1)
    if any(len(p.values) != m for p in probes):
        raise ConfigError("all probes must share the tabulation length", field="probes")
    p_tab = np.zeros((P, m))
    for q, p in enumerate(probes):
        p_tab[q] = p.values

    out = dict(
        positions=np.zeros((replicas, F, k + 1)),
        noise=np.zeros((replicas, F, k + 1)),
        occupation=np.zeros((replicas, k, len(eps))),
        local_time=np.zeros((replicas, k)),
        terminal=np.zeros((replicas, k + 1)),
        initial=np.zeros((replicas, k + 1)),
        probe_occupation=np.zeros((replicas, P, len(eps))),
        ito_terms=np.zeros((replicas, k, len(ito), 5)),
    )
    chunk = max(1, _CHUNK_VALUES // width)

    def run_block(lo, hi):
        for r in range(lo, hi):
            if fixed is not None:
                gaps0 = fixed[0 if fixed.shape[0] == 1 else r]
            else:
                gaps0 = sample_gaps(law, rngmod.replica_stream(cfg.seed, r, rngmod.INIT))
            y = initial_positions(gaps0[:N - 1]) if N > 1 else np.zeros(1)
            out["initial"][r] = y[:k + 1]
            z0 = np.diff(y[:k + 1])
            frames = out["positions"][r]
            fb = out["noise"][r]
            frames[0] = y[:k + 1]
            bsum = np.zeros(k + 1)
            occ = out["occupation"][r]
            loc = out["local_time"][r]
            wocc = out["probe_occupation"][r]
            ito_acc = np.zeros((k, len(ito), 3))
            gen = rngmod.replica_stream(cfg.seed, r, rngmod.NOISE)
            done = 0
            while done < steps:
                c = min(chunk, steps - done)
                noise = gen.standard_normal((c, width))
                evolve(y, drift, noise, cfg.dt, done, cfg.record_stride, k, eps, occ, loc, bsum,
                       p_i, p_j, p_lo, p_h, p_tab, wocc, ito, h, ito_acc, frames, fb)
                done += c
            out["terminal"][r] = y[:k + 1]
            if len(ito):
                zT = np.diff(y[:k + 1])
                it = out["ito_terms"][r]
                it[:, :, 0] = _psi(z0[:, None], ito[None, :])
                it[:, :, 1] = _psi(zT[:, None], ito[None, :])
                it[:, :, 2:] = ito_acc

    t0 = time.perf_counter()
    blocks = [(lo, min(lo + _BLOCK, replicas)) for lo in range(0, replicas, _BLOCK)]
    if cfg.threads == 1 or len(blocks) == 1:
        for lo, hi in blocks:
            run_block(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for fut in [pool.submit(run_block, lo, hi) for lo, hi in blocks]:
                fut.result()
    wall = time.perf_counter() - t0

    times = np.arange(F) * (cfg.record_stride * cfg.dt)
    return GapTrajectory(
        times=times, positions=out["positions"], noise=out["noise"], occupation=out["occupation"],
        eps_ladder=eps, local_time=out["local_time"], terminal=out["terminal"], initial=out["initial"],
        horizon=steps * cfg.dt, dt=cfg.dt, config=cfg, spec=spec, probes=tuple(probes),
        probe_occupation=out["probe_occupation"], ito_eps=ito, ito_terms=out["ito_terms"],
        wall_time=wall)


def _psi(z, eps):
    return np.where(z <= eps, 0.5 * z * z, 0.5 * eps * eps + (z - eps) * eps)


@dataclass(frozen=True)
class TruncationRow:
    N: int
    sup_diff: np.ndarray

    @property
    def median(self):
        return float(np.median(self.sup_diff))

    def quantile(self, q):
        return float(np.quantile(self.sup_diff, q))


def truncation_sensitivity(spec, a, cfg, N_list, observable=0, replicas=100):
    """Pathwise distance of particle ``observable`` to the largest truncation.

    Every size in ``N_list`` is driven by the same initial gaps and the same
    Brownian increments on its ranks. Row ``N`` holds, per replica,
    ``sup_t |Y_i^(N)(t) - Y_i^(N_max)(t)|`` over the recorded grid.
    """
    N_list = sorted({as_int(n, "N", min_val=2) for n in N_list})
    if not N_list:
        raise ConfigError("N_list is empty", field="N_list")
    obs = as_int(observable, "observable", min_val=0)
    N_max = N_list[-1]
    if obs > cfg.k_obs or cfg.k_obs >= N_list[0]:
        raise ConfigError("observable and k_obs must fit inside the smallest truncation", field="k_obs")
    law = ProductLaw.stationary(spec, a, N_max - 1)
    runs = {}
    for N in N_list:
        runs[N] = simulate_gap_paths(spec, law, cfg.with_(N=N), (), replicas, noise_width=N_max)
    ref = runs[N_max].positions[:, :, obs]
    rows = []
    for N in N_list:
        d = np.abs(runs[N].positions[:, :, obs] - ref).max(axis=1)
        d = np.maximum(d, np.abs(runs[N].terminal[:, obs] - runs[N_max].terminal[:, obs]))
        rows.append(TruncationRow(N, d))
    return rows


def triple_collision_monitor(trajectory, tol):
    """Number of recorded (replica, frame) pairs where two adjacent observed
    gaps are both below ``tol``."""
    tol = as_real(tol, "tol", min_val=0.0, error=DomainError)
    g = trajectory.gaps
    if g.shape[-1] < 2:
        return 0
    small = g < tol
    return int(np.count_nonzero(np.any(small[..., 1:] & small[..., :-1], axis=-1)))
