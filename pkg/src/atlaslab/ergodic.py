"""Time averages along single paths and the shared statistics toolkit.

Time averages use the trapezoid rule on the recorded grid. The running
integral is kept as an exact rational sum of the per-interval areas, so
averages of adjacent segments merge into exactly the whole-path average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import stats

from ._validation import as_int, as_real, as_vector
from .drift import pi_a_rates
from .errors import DomainError
from .local_time import laplace_bound
from .sampler import ProductLaw, sample_gaps

__all__ = [
    "Observable",
    "TimeAverage",
    "time_average",
    "segment_average",
    "swap_transform",
    "swap_invariance_test",
    "RateEstimate",
    "rate_mle",
    "KSResult",
    "ks_exponential",
    "holm_adjust",
    "stationarity_trend",
]


@dataclass(frozen=True)
class Observable:
    """A function of the gap vector.

    kind is one of ``coordinate`` (``Z_i``), ``indicator`` (``1{Z_i > threshold}``),
    ``exp_moment`` (``exp(lam * Z_i)``) or ``custom`` (tabulated ``f(Z_i)`` on a
    uniform grid starting at 0 with spacing ``step``).
    """

    kind: str
    i: int = 1
    threshold: float = 0.0
    lam: float = 0.0
    table: tuple = ()
    step: float = 1.0
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("coordinate", "indicator", "exp_moment", "custom", "constant"):
            raise DomainError(f"unknown observable kind {self.kind!r}")
        as_int(self.i, "i", min_val=1, error=DomainError)
        if self.kind == "custom" and len(self.table) < 2:
            raise DomainError("a custom observable needs at least two table values")

    @classmethod
    def coordinate(cls, i):
        return cls("coordinate", i, description=f"Z_{i}")

    @classmethod
    def indicator(cls, i, threshold):
        return cls("indicator", i, threshold=float(threshold), description=f"1{{Z_{i} > {threshold}}}")

    @classmethod
    def exp_moment(cls, i, lam):
        return cls("exp_moment", i, lam=float(lam), description=f"exp({lam} Z_{i})")

    @classmethod
    def constant(cls, c):
        return cls("constant", 1, threshold=float(c), description=f"constant {c}")

    @property
    def bounds(self):
        """(low, high) when the observable is bounded, else ``None``."""
        if self.kind == "indicator":
            return (0.0, 1.0)
        if self.kind == "constant":
            return (self.threshold, self.threshold)
        if self.kind == "exp_moment" and self.lam <= 0:
            return (0.0, 1.0)
        if self.kind == "custom":
            return (min(self.table), max(self.table))
        return None

    def __call__(self, gaps):
        z = np.asarray(gaps, dtype=float)[..., self.i - 1]
        if self.kind == "coordinate":
            return z
        if self.kind == "indicator":
            return (z > self.threshold).astype(float)
        if self.kind == "exp_moment":
            return np.exp(self.lam * z)
        if self.kind == "constant":
            return np.full_like(z, self.threshold)
        grid = self.step * np.arange(len(self.table))
        return np.interp(z, grid, np.asarray(self.table, dtype=float))


@dataclass(frozen=True)
class TimeAverage:
    """Running averages ``values[f]`` at ``times[f]`` and the exact integral."""

    times: np.ndarray
    values: np.ndarray
    integral: Fraction
    duration: Fraction

    @property
    def final(self):
        return float(self.integral / self.duration) if self.duration else float(self.values[-1])

    def merge(self, other):
        """Average over the union of two adjacent segments (exact)."""
        integral = self.integral + other.integral
        duration = self.duration + other.duration
        return TimeAverage(np.concatenate([self.times, other.times[1:]]),
                           np.concatenate([self.values, other.values[1:]]), integral, duration)


def segment_average(times, values):
    """Trapezoid time average of a sampled function on one segment."""
    t = np.asarray(times, dtype=float)
    f = np.asarray(values, dtype=float)
    if t.shape != f.shape or t.ndim != 1 or len(t) < 1:
        raise DomainError("times and values must be equal-length 1-D arrays")
    pieces = 0.5 * (f[1:] + f[:-1]) * np.diff(t)
    run = Fraction(0)
    out = np.empty(len(t))
    out[0] = f[0]
    for k, p in enumerate(pieces, start=1):
        run += Fraction(float(p))
        span = Fraction(float(t[k])) - Fraction(float(t[0]))
        out[k] = float(run / span) if span else f[k]
    duration = Fraction(float(t[-1])) - Fraction(float(t[0]))
    return TimeAverage(t, out, run, duration)


def time_average(trajectory, obs, replica=0):
    """Path ``t -> (1/t) int_0^t obs(Z(s)) ds`` of one replica on its recorded grid."""
    if obs.kind == "exp_moment":
        bound = laplace_bound(trajectory.spec, obs.i)
        if obs.lam >= bound:
            raise DomainError(f"exp moment with lambda={obs.lam} needs lambda < {bound}")
    values = obs(trajectory.gaps[replica])
    return segment_average(trajectory.times, values)


def swap_transform(z, rates, i):
    """Swap coordinates ``i`` and ``i+1`` (1-based), rescaling each so that its
    exponential marginal moves to the other slot."""
    z = np.array(z, dtype=float, copy=True)
    ri, rj = rates[i - 1], rates[i]
    zi = z[..., i - 1].copy()
    z[..., i - 1] = (rj / ri) * z[..., i]
    z[..., i] = (ri / rj) * zi
    return z


def holm_adjust(pvalues):
    """Holm step-down adjusted p-values."""
    p = np.asarray(pvalues, dtype=float)
    m = len(p)
    order = np.argsort(p)
    adj = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[idx]))
        adj[idx] = running
    return adj


def swap_invariance_test(spec, a, i, n_samples, rng, *, k=None, alpha=0.01):
    """Sample the product stationary law, apply the rescaled swap at ``(i, i+1)``
    and test every coordinate against its own exponential marginal.

    Returns a dict with per-coordinate KS results, Holm-adjusted p-values, and
    the verdict ``pass`` (no adjusted p-value below ``alpha``).
    """
    i = as_int(i, "i", min_val=1, error=DomainError)
    n = as_int(n_samples, "n_samples", min_val=2, error=DomainError)
    k = i + 2 if k is None else as_int(k, "k", min_val=i + 1, error=DomainError)
    rates = pi_a_rates(spec, a, k).rates
    z = sample_gaps(ProductLaw.exponential(rates), rng, n)
    zt = swap_transform(z, rates, i)
    res = [ks_exponential(zt[:, c], rates[c]) for c in range(k)]
    adj = holm_adjust([r.p_value for r in res])
    return {"scale": rates[i] / rates[i - 1], "ks": res, "adjusted": adj,
            "pass": bool(np.all(adj > alpha)), "samples": z, "transformed": zt}


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    ci_lo: float
    ci_hi: float
    n: int


def rate_mle(samples, confidence=0.95):
    """Exponential rate ``1 / mean`` with the asymptotic interval ``rate (1 +- z / sqrt(n))``."""
    x = as_vector(samples, "samples", error=DomainError, min_len=2)
    if np.any(x <= 0):
        raise DomainError("exponential samples must be strictly positive")
    rate = 1.0 / x.mean()
    q = stats.norm.ppf(0.5 + 0.5 * as_real(confidence, "confidence", min_val=0, max_val=1,
                                              include_boundaries="neither", error=DomainError))
    half = q / math.sqrt(len(x))
    return RateEstimate(rate, rate * (1 - half), rate * (1 + half), len(x))


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    n: int
    method: str


def ks_exponential(samples, rate):
    """One-sample Kolmogorov-Smirnov test against ``1 - exp(-rate z)``.

    Small samples get scipy's exact null distribution, large ones the
    asymptotic Kolmogorov law.
    """
    rate = as_real(rate, "rate", min_val=0, include_boundaries="neither", error=DomainError)
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("no samples")
    method = "exact" if x.size <= 100 else "asymp"
    r = stats.kstest(x, "expon", args=(0.0, 1.0 / rate), method=method)
    return KSResult(float(r.statistic), float(r.pvalue), int(x.size), method)


def stationarity_trend(trajectory, rates, times=(0.25, 0.5, 1.0), groups=20, alpha=0.05):
    """Trend of KS p-values over time, per gap.

    Replicas are split into ``groups`` contiguous batches (each an independent
    sub-experiment). Within a batch the KS p-value of every gap at each time is
    regressed on time; the batch slopes are tested for zero mean with a t-test
    and the gaps are Holm-corrected together. ``pass`` means no gap shows a
    significant trend.
    """
    groups = as_int(groups, "groups", min_val=3, error=DomainError)
    R = trajectory.replicas
    edges = np.linspace(0, R, groups + 1).astype(int)
    k = len(rates)
    ts = np.asarray(times, dtype=float)
    snaps = [trajectory.gaps_at(t) for t in ts]
    slopes = np.zeros((groups, k))
    pvals = np.zeros((groups, len(ts), k))
    stat = np.zeros((groups, len(ts), k))
    for gidx in range(groups):
        lo, hi = edges[gidx], edges[gidx + 1]
        for tidx, snap in enumerate(snaps):
            for c in range(k):
                res = ks_exponential(snap[lo:hi, c], rates[c])
                pvals[gidx, tidx, c] = res.p_value
                stat[gidx, tidx, c] = res.statistic
        for c in range(k):
            slopes[gidx, c] = np.polyfit(ts, pvals[gidx, :, c], 1)[0]
    tt = stats.ttest_1samp(slopes, 0.0, axis=0)
    adj = holm_adjust(tt.pvalue)
    mean = slopes.mean(axis=0)
    se = slopes.std(axis=0, ddof=1) / math.sqrt(groups)
    q = stats.t.ppf(0.975, groups - 1)
    rows = []
    for c in range(k):
        rows.append({"check": "ks_trend", "i": c + 1, "slope": float(mean[c]), "stderr": float(se[c]),
                     "ci_lo": float(mean[c] - q * se[c]), "ci_hi": float(mean[c] + q * se[c]),
                     "p_adjusted": float(adj[c]), "pass": bool(adj[c] > alpha)})
    return {"rows": rows, "pass": all(r["pass"] for r in rows), "pvalues": pvals, "statistics": stat}
