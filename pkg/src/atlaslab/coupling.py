"""Mirror and synchronous coupling of two ranked systems started close together.

Copy 1 starts from gaps ``z``. Copy 2 starts from ``z`` with gap ``i`` widened by
``delta1`` and gap ``i+1`` narrowed by ``delta2``; the lowest ``i+1`` particles
are shifted and every particle above them starts at the same place. The first
``i+1`` Brownian motions of copy 2 are the reflection of copy 1's across the
hyperplane orthogonal to ``v`` until ``v'B`` first reaches ``|v|^2/2``; from then on
both copies use the same increments. The remaining particles are driven
synchronously throughout.

In the coordinates ``Psi = (Z_1, ..., Z_i, level - Y_i)``, with ``level`` halfway
between the two starting positions of rank ``i+1`` shifted by ``delta2``, the lowest
``i+1`` particles evolve as ``Psi(t) = Psi(0) + D B(t) + b t`` until a gap closes
or rank ``i+1`` comes down to ``level``. ``D`` is bidiagonal (-1 on the diagonal,
+1 above it), so the admissible region ``{u : D u >= 0}`` is a polyhedral cone
and the distance from the segment between the two starting points to its
boundary has a closed form.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import _kernels as K
from . import rng as rngmod
from ._validation import as_int, as_real, as_vector
from .dynamics import SimConfig, initial_positions
from .errors import ConfigError, DegenerateDirection, GeometryError

__all__ = [
    "CouplingGeometry",
    "build_geometry",
    "mirror_reflection",
    "gaussian_tail",
    "CoupledEnsemble",
    "simulate_coupled_pairs",
    "run_coupled_pair",
    "EventEstimate",
    "event_probabilities",
    "upper_event_bounds",
    "lemcty_search",
    "max_underline_delta",
]

MERGE_TOL = 1e-9


def bidiagonal(m):
    D = -np.eye(m, dtype=np.int64)
    D[np.arange(m - 1), np.arange(1, m)] = 1
    return D


def bidiagonal_inverse(m):
    return -np.triu(np.ones((m, m), dtype=np.int64))


@dataclass(frozen=True)
class CouplingGeometry:
    i: int
    z: np.ndarray
    delta1: float
    delta2: float
    D: np.ndarray
    D_inv: np.ndarray
    b: np.ndarray
    psi0: np.ndarray
    psi0_tilde: np.ndarray
    v: np.ndarray
    r: float
    time_cap: float
    y: np.ndarray
    y_delta: np.ndarray
    lower_bound: float

    @property
    def v_norm(self):
        return float(np.linalg.norm(self.v))

    @property
    def level(self):
        """Level that rank ``i+1`` must stay above: ``(y_i + y_{i+1} + delta2) / 2``."""
        return 0.5 * (self.y[self.i] + self.y[self.i + 1] + self.delta2)

    def segment_distance(self, u):
        """Distance of points ``u`` (rows) to the boundary of ``{u : D u >= 0}``."""
        rows = self.D.astype(float)
        return np.min((np.atleast_2d(u) @ rows.T) / np.linalg.norm(rows, axis=1), axis=1)


def build_geometry(z, delta1, delta2, i, spec):
    """Coupling geometry for starting gaps ``z`` (``z[0]`` is gap 1)."""
    i = as_int(i, "i", min_val=1, error=GeometryError)
    z = as_vector(z, "z", nonneg=True, error=GeometryError)
    if len(z) < i + 1:
        raise GeometryError(f"need at least {i + 1} gaps, got {len(z)}")
    if np.any(z[:i + 1] <= 0):
        raise GeometryError("gaps 1..i+1 must be strictly positive")
    d1 = as_real(delta1, "delta1", error=GeometryError)
    d2 = as_real(delta2, "delta2", error=GeometryError)
    if d1 <= 0:
        raise GeometryError("delta1 must be positive")
    if not 0 < d2 < z[i]:
        raise GeometryError(f"delta2 must lie in (0, z_(i+1)) = (0, {z[i]})")
    m = i + 1
    D = bidiagonal(m)
    D_inv = bidiagonal_inverse(m)
    g = spec.drifts(i + 1)
    b = np.append(g[1:] - g[:-1], -g[i])
    psi0 = np.append(z[:i], 0.5 * (z[i] + d2))
    psi0t = np.append(z[:i - 1], [z[i - 1] + d1, 0.5 * (z[i] - d2)])
    v = D_inv @ (psi0t - psi0)
    row_norm = np.where(np.arange(m) < i, math.sqrt(2.0), 1.0)
    r = float(np.min(np.minimum(psi0, psi0t) / row_norm))
    time_cap = r / (8.0 * np.linalg.norm(D_inv @ b) + 1.0)
    y = initial_positions(z)
    y_delta = y.copy()
    y_delta[:i] += d2 - d1
    y_delta[i] += d2
    return CouplingGeometry(i=i, z=z, delta1=d1, delta2=d2, D=D, D_inv=D_inv, b=b, psi0=psi0,
                            psi0_tilde=psi0t, v=v, r=r, time_cap=float(time_cap), y=y,
                            y_delta=y_delta, lower_bound=spec.lower_bound)


def mirror_reflection(v):
    """Householder matrix ``I - 2 v v' / |v|^2``."""
    v = np.asarray(v, dtype=float).ravel()
    n2 = float(v @ v)
    if n2 == 0.0:
        raise DegenerateDirection("the reflection direction is the zero vector")
    return np.eye(len(v)) - 2.0 * np.outer(v, v) / n2


def gaussian_tail(u):
    """Standard normal upper tail, through the complementary error function."""
    out = 0.5 * special.erfc(np.asarray(u, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def max_underline_delta(geometry):
    """Open upper end for the auxiliary scale: ``z_(i+1) / (2 + 4 G)``."""
    return float(geometry.z[geometry.i] / (2.0 + 4.0 * geometry.lower_bound))


@dataclass
class CoupledEnsemble:
    geometry: CouplingGeometry
    config: SimConfig
    checkpoints: np.ndarray
    sigma_time: np.ndarray
    merge_time: np.ndarray
    upper_min: np.ndarray
    """Per pair and checkpoint: running minimum of ``y_j + B_j(t)`` over ranks above ``i``."""
    projection_stats: np.ndarray
    """Per pair and checkpoint: (inf M, sup M, sup |M_perp|) up to ``min(s, time_cap)``."""
    times: np.ndarray
    positions1: np.ndarray | None
    positions2: np.ndarray | None
    wall_time: float

    @property
    def pairs(self):
        return len(self.merge_time)

    def coupled_by(self, s):
        return self.merge_time <= s + 1e-12

    def gaps1(self):
        return np.diff(self.positions1, axis=-1)

    def gaps2(self):
        return np.diff(self.positions2, axis=-1)


def _steps(t, dt):
    return int(round(t / dt))


def simulate_coupled_pairs(geometry, spec, cfg, pairs, checkpoints=(), *, record=False):
    """Simulate ``pairs`` independent coupled pairs.

    ``cfg.N`` is the particle count of both copies (``z`` must supply at least
    ``N-1`` gaps) and ``cfg.T`` the horizon. Event statistics are snapshotted at
    every time in ``checkpoints``. Without ``record`` a pair stops as soon as it
    has merged and passed the last checkpoint.
    """
    pairs = as_int(pairs, "pairs", min_val=1)
    N = cfg.N
    if len(geometry.y) < N:
        raise ConfigError(f"z supplies {len(geometry.y) - 1} gaps but N={N} particles need {N - 1}", field="N")
    i = geometry.i
    if N < i + 2:
        raise ConfigError("the coupled ranks and one rank above them must exist", field="N")
    k = cfg.k_obs
    dt = cfg.dt
    steps = cfg.steps
    cps = np.asarray(sorted(checkpoints), dtype=float)
    e1_steps = np.array([_steps(s, dt) for s in cps], dtype=np.int64)
    e2_steps = np.array([_steps(min(s, geometry.time_cap), dt) for s in cps], dtype=np.int64)
    last_needed = int(max(e1_steps.max(initial=0), e2_steps.max(initial=0)))
    if last_needed > steps:
        raise ConfigError("checkpoints extend past the horizon", field="T")
    H = mirror_reflection(geometry.v)
    drift = spec.drifts(N)
    y0 = geometry.y[:N].copy()
    yt0 = geometry.y_delta[:N].copy()
    F = cfg.n_frames if record else 0
    sigma = np.full(pairs, np.inf)
    merge = np.full(pairs, np.inf)
    upper = np.zeros((pairs, len(cps)))
    proj = np.zeros((pairs, len(cps), 3))
    pos1 = np.zeros((pairs, F, k + 1)) if record else None
    pos2 = np.zeros((pairs, F, k + 1)) if record else None
    chunk_steps = 256 if not record else max(1, (1 << 18) // N)

    def run_block(lo, hi):
        for r in range(lo, hi):
            x = y0.copy()
            xt = yt0.copy()
            st = np.zeros(K.STATE_SIZE)
            st[K.RUN_MIN_HIGH] = y0[i + 1]
            Bi = np.zeros(i + 1)
            Bhi = np.zeros(N - i - 1)
            e1 = np.full(len(cps), y0[i + 1])
            e2 = np.zeros((len(cps), 3))
            f1 = pos1[r] if record else np.zeros((0, k + 1))
            f2 = pos2[r] if record else np.zeros((0, k + 1))
            if record:
                f1[0] = x[:k + 1]
                f2[0] = xt[:k + 1]
            gen = rngmod.replica_stream(cfg.seed, r, rngmod.NOISE)
            done = 0
            c = 64
            while done < steps:
                c = min(c, steps - done)
                noise = gen.standard_normal((c, N))
                K.evolve_pair(x, xt, drift, noise, dt, done, i, geometry.v, H, Bi, Bhi, y0[i + 1:], st,
                              e1_steps, e1, e2_steps, e2, f1, f2, cfg.record_stride if record else 0,
                              k, MERGE_TOL)
                done += c
                c = min(2 * c, chunk_steps)
                if not record and st[K.MERGED] and done >= last_needed:
                    break
            if st[K.SIGMA_HIT]:
                sigma[r] = st[K.SIGMA_TIME]
            if st[K.MERGED]:
                merge[r] = st[K.MERGE_TIME]
            upper[r] = e1
            proj[r] = e2

    t0 = time.perf_counter()
    blocks = [(lo, min(lo + 64, pairs)) for lo in range(0, pairs, 64)]
    if cfg.threads == 1 or len(blocks) == 1:
        for lo, hi in blocks:
            run_block(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for fut in [pool.submit(run_block, lo, hi) for lo, hi in blocks]:
                fut.result()
    return CoupledEnsemble(geometry=geometry, config=cfg, checkpoints=cps, sigma_time=sigma,
                           merge_time=merge, upper_min=upper, projection_stats=proj,
                           times=np.arange(F) * cfg.record_stride * dt, positions1=pos1,
                           positions2=pos2, wall_time=time.perf_counter() - t0)


def run_coupled_pair(z, delta1, delta2, i, spec, cfg, replica=0, s_grid=()):
    """One coupled pair with recorded gap paths.

    Returns ``tau_c_hat`` (``inf`` if the copies never merged within the
    horizon), ``coupled_by`` mapping each ``s`` to whether the gaps agreed from
    ``s`` on, and the two gap trajectories (frames x k_obs).
    """
    geom = build_geometry(z, delta1, delta2, i, spec)
    ens = simulate_coupled_pairs(geom, spec, cfg, replica + 1, s_grid, record=True)
    tau = float(ens.merge_time[replica])
    return {
        "tau_c_hat": tau,
        "sigma_hat": float(ens.sigma_time[replica]),
        "coupled_by": {float(s): bool(tau <= s + 1e-12) for s in s_grid},
        "times": ens.times,
        "gaps1": ens.gaps1()[replica],
        "gaps2": ens.gaps2()[replica],
    }


def _wilson(k, n, conf=0.95):
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=conf, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class EventEstimate:
    delta1: float
    delta2: float
    i: int
    s: float
    pairs: int
    p_E1: float
    p_E2: float
    p_E: float
    p_coupled: float
    ci_lo: float
    ci_hi: float
    p_E_not_coupled: float

    def se(self, p):
        return math.sqrt(max(p * (1 - p), 0.0) / self.pairs)

    def as_row(self):
        return {k: getattr(self, k) for k in
                ("delta1", "delta2", "i", "s", "p_E1", "p_E2", "p_E", "p_coupled", "ci_lo", "ci_hi")}


def _check_event_preconditions(geom, s_list, underline_delta):
    top = max_underline_delta(geom)
    if not 0 < underline_delta < top:
        raise ConfigError(f"underline_delta must lie in (0, {top:.6g})", field="underline_delta")
    if max(s_list) > underline_delta:
        raise ConfigError("event horizons s must not exceed underline_delta", field="s")
    if min(s_list) <= 0:
        raise ConfigError("event horizons s must be positive", field="s")
    if not (geom.delta1 < underline_delta and geom.delta2 < underline_delta):
        raise ConfigError("delta1 and delta2 must be below underline_delta", field="delta")


def event_indicators(ens, underline_delta):
    """Boolean arrays (pairs x checkpoints) for the upper-particle event, the
    projection event and their intersection."""
    g = ens.geometry
    level = g.level + g.lower_bound * underline_delta
    e1 = ens.upper_min > level
    st = ens.projection_stats
    e2 = (st[..., 0] > -g.r / 4) & (st[..., 1] >= g.v_norm / 2) & (st[..., 2] < g.r / 4)
    return e1, e2, e1 & e2


def event_probabilities(z, delta1, delta2, i, spec, s, underline_delta, cfg, pairs, ensemble=None):
    """Monte Carlo probabilities of the coupling events at each horizon in ``s``."""
    s_list = [float(x) for x in np.atleast_1d(s)]
    geom = build_geometry(z, delta1, delta2, i, spec)
    ud = as_real(underline_delta, "underline_delta")
    _check_event_preconditions(geom, s_list, ud)
    if ensemble is None:
        run_cfg = cfg.with_(T=max(max(s_list), cfg.dt))
        ensemble = simulate_coupled_pairs(geom, spec, run_cfg, pairs, s_list)
    e1, e2, e = event_indicators(ensemble, ud)
    out = []
    for c, sv in enumerate(ensemble.checkpoints):
        coupled = ensemble.coupled_by(sv)
        lo, hi = _wilson(coupled.sum(), ensemble.pairs)
        out.append(EventEstimate(delta1=geom.delta1, delta2=geom.delta2, i=geom.i, s=float(sv),
                                 pairs=ensemble.pairs, p_E1=float(e1[:, c].mean()),
                                 p_E2=float(e2[:, c].mean()), p_E=float(e[:, c].mean()),
                                 p_coupled=float(coupled.mean()), ci_lo=lo, ci_hi=hi,
                                 p_E_not_coupled=float((e[:, c] & ~coupled).mean())))
    return out


def upper_event_bounds(geometry, s, underline_delta, n_particles=None):
    """Three nested upper bounds on the probability that some rank above ``i``
    dips to the event level by time ``s``.

    ``union`` sums Gaussian tails over the ranks, ``tight`` replaces each tail by
    the ``sqrt(2) exp(-u^2/4)`` bound, and ``coarse`` additionally drops the
    dependence on ``s`` inside the sum; only ``coarse`` is uniform in the
    shift sizes. Sums run over the ranks present in a system of
    ``n_particles`` (all of ``y`` by default).
    """
    g = geometry
    i = g.i
    y = g.y if n_particles is None else g.y[:n_particles]
    G = g.lower_bound
    c1 = 0.5 * (g.z[i] - (2 * G + 1) * underline_delta)
    if c1 <= 0:
        raise ConfigError("underline_delta is too large for a positive clearance", field="underline_delta")
    yj = y[i + 1:]
    yi1 = y[i + 1]
    union = 2.0 * np.sum(gaussian_tail((yj - yi1 + 0.5 * (g.z[i] - g.delta2) - G * underline_delta) / math.sqrt(s)))
    pref = math.sqrt(8.0) * math.exp(-c1 * c1 / (4.0 * s))
    tight = pref * np.sum(np.exp(-(yj - yi1) ** 2 / (4.0 * s)))
    coarse = pref * math.exp(yi1 ** 2 / 4.0) * np.sum(np.exp(-yj ** 2 / 8.0))
    return {"union": float(union), "tight": float(tight), "coarse": float(coarse), "c1": float(c1)}


def lemcty_search(z, i, spec, eta, t1_grid, delta0_grid, underline_delta, cfg, pairs):
    """Grid search for a horizon ``t1`` and a scale ``delta0`` such that for
    every ``delta1, delta2`` in ``{delta0/4, delta0/2}`` both the non-coupling
    probability and the event-failure probability at ``t1`` are at most ``eta``.

    Candidates are visited in the order given (outer loop over ``t1``); the
    first success is returned together with every evaluated cell.
    """
    cells = []
    for t1 in t1_grid:
        for d0 in delta0_grid:
            rows = []
            for d1 in (d0 / 4, d0 / 2):
                for d2 in (d0 / 4, d0 / 2):
                    est = event_probabilities(z, d1, d2, i, spec, [t1], underline_delta,
                                              cfg.with_(T=t1), pairs)[0]
                    p_nc = 1.0 - est.p_coupled
                    p_ec = 1.0 - est.p_E
                    rows.append({"t1": t1, "delta0": d0, "delta1": d1, "delta2": d2,
                                 "p_not_coupled": p_nc, "p_event_fail": p_ec,
                                 "se_not_coupled": est.se(p_nc), "se_event_fail": est.se(p_ec)})
            cells.extend(rows)
            if all(r["p_not_coupled"] <= eta and r["p_event_fail"] <= eta for r in rows):
                return {"t1": t1, "delta0": d0, "rows": rows}, cells
    return None, cells
