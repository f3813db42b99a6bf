"""Compiled inner loops.

Both kernels advance one replica (or one coupled pair) through a block of
precomputed standard normal increments and update accumulators in place, so
the caller can feed noise chunk by chunk without changing the result.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sort_ranked(y):
    """Stable insertion sort in place; returns the number of swaps.

    Equal positions keep their current order, which is the lexicographic
    tie-break by current index. Each step of the particle system only perturbs
    an already sorted array, so this is close to linear in practice.
    """
    swaps = 0
    n = y.shape[0]
    for k in range(1, n):
        val = y[k]
        j = k - 1
        while j >= 0 and y[j] > val:
            y[j + 1] = y[j]
            j -= 1
            swaps += 1
        y[j + 1] = val
    return swaps


@njit(cache=True, nogil=True)
def _interp_uniform(tab, lo, h, x):
    m = tab.shape[0]
    u = (x - lo) / h
    if u <= 0.0:
        return tab[0]
    if u >= m - 1:
        return tab[m - 1]
    k = int(u)
    w = u - k
    return (1.0 - w) * tab[k] + w * tab[k + 1]


@njit(cache=True, nogil=True)
def evolve(y, drift, noise, dt, step0, stride, k_obs, eps, occ, loc, bsum,
           probe_i, probe_j, probe_lo, probe_h, probe_tab, wocc,
           ito_eps, ito_h, ito_acc, frames, frame_b):
    """Advance one replica by ``noise.shape[0]`` Euler steps.

    y         ranked positions, length N, updated in place
    drift     drift by rank, length N
    noise     (steps, >= N) standard normals; only the first N columns are used
    occ       (k_obs, n_eps) time spent by gap i+1 in [0, eps[e]]
    loc       (k_obs,) collision local times recovered from the sort corrections
    bsum      (k_obs + 1,) running Brownian paths of ranks 0..k_obs
    wocc      (n_probe, n_eps) time integral of f_p(Z_i) * 1{Z_j <= eps}
    ito_acc   (k_obs, n_ito, 3) pieces of the discrete Ito expansion of psi_eps(Z_i):
              [0] drift, second order and neighbour collision terms, [1] noise term,
              [2] own collision term
    frames    positions of ranks 0..k_obs, written every ``stride`` steps
    """
    N = y.shape[0]
    steps = noise.shape[0]
    sq = np.sqrt(dt)
    n_eps = eps.shape[0]
    n_probe = probe_i.shape[0]
    n_ito = ito_eps.shape[0]
    pre = np.empty(N)
    dL = np.zeros(N + 1)
    zold = np.empty(k_obs + 1)
    for s in range(steps):
        # left-point functionals of the current gaps
        for i in range(1, k_obs + 1):
            z = y[i] - y[i - 1]
            zold[i] = z
            for e in range(n_eps - 1, -1, -1):
                if z <= eps[e]:
                    occ[i - 1, e] += dt
                else:
                    break
        for p in range(n_probe):
            zi = y[probe_i[p]] - y[probe_i[p] - 1]
            zj = y[probe_j[p]] - y[probe_j[p] - 1]
            fv = _interp_uniform(probe_tab[p], probe_lo[p], probe_h[p], zi)
            for e in range(n_eps - 1, -1, -1):
                if zj <= eps[e]:
                    wocc[p, e] += dt * fv
                else:
                    break

        for k in range(N):
            dB = sq * noise[s, k]
            y[k] += drift[k] * dt + dB
            pre[k] = y[k]
            if k <= k_obs:
                bsum[k] += dB
        sort_ranked(y)

        # dY_(k) = g_k dt + dB_k + (dL_k - dL_{k+1}) / 2 with L_0 = L_N = 0
        dL[0] = 0.0
        for k in range(N - 1):
            dL[k + 1] = dL[k] - 2.0 * (y[k] - pre[k])
        dL[N] = 0.0
        for i in range(1, k_obs + 1):
            loc[i - 1] += dL[i]

        if n_ito > 0:
            for i in range(1, k_obs + 1):
                z = zold[i]
                dW = sq * (noise[s, i] - noise[s, i - 1])
                neigh = dL[i - 1] + dL[i + 1]
                for e in range(n_ito):
                    ep = ito_eps[e]
                    d1 = z if z < ep else ep
                    d2 = 1.0 if z < ep else 0.0
                    ito_acc[i - 1, e, 0] += d1 * ito_h[i - 1] * dt + d2 * dt - 0.5 * d1 * neigh
                    ito_acc[i - 1, e, 1] += d1 * dW
                    ito_acc[i - 1, e, 2] += d1 * dL[i]

        n = step0 + s + 1
        if n % stride == 0:
            f = n // stride
            for k in range(k_obs + 1):
                frames[f, k] = y[k]
                frame_b[f, k] = bsum[k]


# indices into the per-pair state vector
SIGMA_HIT = 0
SIGMA_TIME = 1
MERGED = 2
MERGE_TIME = 3
RUN_MIN_HIGH = 4
INF_M = 5
SUP_M = 6
SUP_MPERP = 7
STATE_SIZE = 8


@njit(cache=True, nogil=True)
def evolve_pair(x, xt, drift, noise, dt, step0, i, v, H, Bi, Bhi, yhi, st,
                e1_steps, e1_min, e2_steps, e2_stats, frames1, frames2, stride, k_obs, merge_tol):
    """Advance a mirror/synchronously coupled pair.

    Copy 1 is driven by the increments dB. Copy 2 uses H dB on ranks 0..i until
    v'B first reaches |v|^2/2 (the crossing step is split at the linearly
    interpolated hitting time) and dB afterwards; ranks above i always share dB.
    Once copy 2 is within ``merge_tol`` of copy 1 after the crossing, it is
    overwritten with copy 1 and the two stay bitwise equal.

    Bi    running B of ranks 0..i; Bhi running B of ranks i+1..N-1
    yhi   starting positions of ranks i+1..N-1 (for the upper-particle event)
    """
    N = x.shape[0]
    m = i + 1
    steps = noise.shape[0]
    sq = np.sqrt(dt)
    vn2 = 0.0
    for a in range(m):
        vn2 += v[a] * v[a]
    vn = np.sqrt(vn2)
    half = 0.5 * vn2
    dB = np.empty(N)
    dBt = np.empty(m)
    n_e1 = e1_steps.shape[0]
    n_e2 = e2_steps.shape[0]
    for s in range(steps):
        n = step0 + s + 1
        t_old = (n - 1) * dt
        for k in range(N):
            dB[k] = sq * noise[s, k]
            x[k] += drift[k] * dt + dB[k]

        if st[MERGED] == 0.0:
            if st[SIGMA_HIT] == 0.0:
                vB_old = 0.0
                vdB = 0.0
                for a in range(m):
                    vB_old += v[a] * Bi[a]
                    vdB += v[a] * dB[a]
                for a in range(m):
                    acc = 0.0
                    for b in range(m):
                        acc += H[a, b] * dB[b]
                    dBt[a] = acc
                if vB_old + vdB >= half:
                    theta = (half - vB_old) / vdB
                    for a in range(m):
                        dBt[a] = theta * dBt[a] + (1.0 - theta) * dB[a]
                    st[SIGMA_HIT] = 1.0
                    st[SIGMA_TIME] = t_old + theta * dt
            else:
                for a in range(m):
                    dBt[a] = dB[a]
            for k in range(N):
                inc = dBt[k] if k < m else dB[k]
                xt[k] += drift[k] * dt + inc
        sort_ranked(x)
        if st[MERGED] != 0.0:
            for k in range(N):
                xt[k] = x[k]
        else:
            sort_ranked(xt)
            if st[SIGMA_HIT] != 0.0:
                gap = 0.0
                for k in range(N):
                    d = abs(x[k] - xt[k])
                    if d > gap:
                        gap = d
                if gap <= merge_tol:
                    for k in range(N):
                        xt[k] = x[k]
                    st[MERGED] = 1.0
                    st[MERGE_TIME] = n * dt

        # projections of the first m Brownian motions on v and its complement
        for a in range(m):
            Bi[a] += dB[a]
        vB = 0.0
        for a in range(m):
            vB += v[a] * Bi[a]
        M = vB / vn
        perp2 = 0.0
        for a in range(m):
            c = Bi[a] - vB / vn2 * v[a]
            perp2 += c * c
        perp = np.sqrt(perp2)
        if M < st[INF_M]:
            st[INF_M] = M
        if M > st[SUP_M]:
            st[SUP_M] = M
        if perp > st[SUP_MPERP]:
            st[SUP_MPERP] = perp
        for a in range(N - m):
            Bhi[a] += dB[m + a]
            val = yhi[a] + Bhi[a]
            if val < st[RUN_MIN_HIGH]:
                st[RUN_MIN_HIGH] = val
        for c in range(n_e1):
            if e1_steps[c] == n:
                e1_min[c] = st[RUN_MIN_HIGH]
        for c in range(n_e2):
            if e2_steps[c] == n:
                e2_stats[c, 0] = st[INF_M]
                e2_stats[c, 1] = st[SUP_M]
                e2_stats[c, 2] = st[SUP_MPERP]

        if stride > 0 and n % stride == 0:
            f = n // stride
            if f < frames1.shape[0]:
                for k in range(k_obs + 1):
                    frames1[f, k] = x[k]
                    frames2[f, k] = xt[k]
