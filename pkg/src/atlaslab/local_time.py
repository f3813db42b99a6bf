"""Collision local times from occupation densities, and the identities they obey.

The expected collision local time per unit time at gap ``i`` is read off as the
small-``eps`` limit of ``E[time spent by Z_i in [0, eps]] / (eps * T)``. Each
ladder value gives a biased estimate (the stationary density is not flat near
0), so the estimates are fitted by a low-order polynomial in ``eps`` and the
intercept is reported. The fit is a fixed linear functional of the ladder
values, which lets the same weights be applied replica by replica for standard
errors and for propagating errors into the balance residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_int, as_real
from .drift import average_drifts, pi_a_rates
from .dynamics import Probe
from .errors import DomainError, InsufficientData

__all__ = [
    "NuEstimate",
    "estimate_nu",
    "nu_closed_form",
    "check_balance_recursion",
    "check_product_identity",
    "check_laplace_identity",
    "psi_eps_transform",
    "ito_residuals",
    "default_eps_ladder",
]

MIN_REPLICAS = 100
_EXTRAPOLATION_DEGREE = {"linear": 1, "quadratic": 2}


def default_eps_ladder(dt):
    return tuple(m * np.sqrt(dt) for m in (4, 8, 16, 32))


@dataclass(frozen=True)
class NuEstimate:
    i: int
    eps_ladder: tuple
    raw: tuple
    raw_stderr: tuple
    extrapolated: float
    stderr: float
    per_replica: np.ndarray
    method: str
    linear_r2: float

    def as_record(self, target=None):
        rec = {"check": "nu", "i": self.i, "estimate": self.extrapolated, "stderr": self.stderr}
        if target is not None:
            rec["target"] = target
        return rec


def _intercept_weights(eps, method):
    deg = _EXTRAPOLATION_DEGREE.get(method)
    if deg is None:
        raise DomainError(f"unknown extrapolation {method!r}; use 'linear' or 'quadratic'")
    if len(eps) < deg + 1:
        raise DomainError(f"{method} extrapolation needs at least {deg + 1} ladder values")
    X = np.vander(np.asarray(eps), deg + 1, increasing=True)
    return np.linalg.pinv(X)[0]


def _ladder_columns(trajectory, eps_ladder):
    ladder = np.asarray(trajectory.eps_ladder)
    if eps_ladder is None:
        return np.arange(len(ladder)), ladder
    cols = []
    for e in np.atleast_1d(eps_ladder):
        hit = np.flatnonzero(np.isclose(ladder, e, rtol=1e-12, atol=0))
        if hit.size == 0:
            raise DomainError(f"eps={e} was not accumulated by the simulation")
        cols.append(int(hit[0]))
    return np.array(cols), ladder[cols]


def _checked_ladder(trajectory, eps_ladder):
    if trajectory.replicas < MIN_REPLICAS:
        raise InsufficientData(f"{trajectory.replicas} replicas; at least {MIN_REPLICAS} are needed")
    cols, eps = _ladder_columns(trajectory, eps_ladder)
    floor = 4.0 * np.sqrt(trajectory.dt)
    if np.any(eps < floor * (1 - 1e-9)):
        raise DomainError(f"ladder values below 4*sqrt(dt)={floor:.4g} are dominated by discretization error")
    if trajectory.horizon < 1.0 - 1e-12:
        raise DomainError("the estimator needs a horizon of at least one time unit")
    return cols, eps


def estimate_nu(trajectory, i, eps_ladder=None, method="quadratic"):
    """Occupation-density estimate of the expected local time per unit time at gap ``i``."""
    i = as_int(i, "i", min_val=1, max_val=trajectory.k_obs, error=DomainError)
    cols, eps = _checked_ladder(trajectory, eps_ladder)
    per = trajectory.occupation[:, i - 1, cols] / (eps * trajectory.horizon)
    return _fold(i, eps, per, method)


def _fold(i, eps, per, method):
    R = per.shape[0]
    raw = per.mean(axis=0)
    raw_se = per.std(axis=0, ddof=1) / np.sqrt(R)
    w = _intercept_weights(eps, method)
    nu_r = per @ w
    # goodness of a straight-line fit through the ladder means
    if len(eps) >= 3:
        coef = np.polyfit(eps, raw, 1)
        resid = raw - np.polyval(coef, eps)
        ss = np.sum((raw - raw.mean()) ** 2)
        r2 = 1.0 - np.sum(resid ** 2) / ss if ss > 0 else 1.0
    else:
        r2 = 1.0
    return NuEstimate(i=i, eps_ladder=tuple(float(e) for e in eps), raw=tuple(raw),
                      raw_stderr=tuple(raw_se), extrapolated=float(nu_r.mean()),
                      stderr=float(nu_r.std(ddof=1) / np.sqrt(R)), per_replica=nu_r,
                      method=method, linear_r2=float(r2))


def nu_closed_form(spec, a, k):
    """``nu_i = i (a + 2 gbar_i)`` for ``i = 1..k``; same numbers as the gap rates."""
    return np.array(pi_a_rates(spec, a, k).rates)


def check_balance_recursion(nu_hats, spec, *, stderr=None, per_replica=None, first=2):
    """Residuals ``h_i + nu_i - (nu_{i-1} + nu_{i+1}) / 2`` with ``nu_0 = 0``.

    ``nu_hats`` is either a list of :class:`NuEstimate` for ``i = 1..k`` or a
    plain sequence of values (then ``stderr`` may be given). Residuals are
    returned for ``i = first .. k-1``. When per-replica values are available the
    residual's standard error is taken across replicas, which keeps the
    correlation between neighbouring estimates.
    """
    if nu_hats and isinstance(nu_hats[0], NuEstimate):
        values = np.array([n.extrapolated for n in nu_hats])
        stderr = np.array([n.stderr for n in nu_hats])
        per_replica = np.stack([n.per_replica for n in nu_hats], axis=1)
    else:
        values = np.asarray(nu_hats, dtype=float)
        stderr = np.zeros_like(values) if stderr is None else np.asarray(stderr, dtype=float)
        if per_replica is not None:
            per_replica = np.asarray(per_replica, dtype=float)
    k = len(values)
    if k < 2:
        raise DomainError("at least two estimates are needed")
    first = as_int(first, "first", min_val=1, error=DomainError)
    g = spec.drifts(k + 1)
    h = g[1:] - g[:-1]
    padded = np.concatenate([[0.0], values])
    records = []
    for i in range(first, k):
        res = h[i - 1] + padded[i] - 0.5 * padded[i - 1] - 0.5 * padded[i + 1]
        if per_replica is not None:
            pr = np.concatenate([np.zeros((per_replica.shape[0], 1)), per_replica], axis=1)
            rr = pr[:, i] - 0.5 * pr[:, i - 1] - 0.5 * pr[:, i + 1]
            se = float(rr.std(ddof=1) / np.sqrt(len(rr)))
        else:
            se2 = stderr[i - 1] ** 2 + 0.25 * stderr[i] ** 2 + (0.25 * stderr[i - 2] ** 2 if i >= 2 else 0.0)
            se = float(np.sqrt(se2))
        tol = max(3.0 * se, 1e-9 * max(1.0, np.max(np.abs(values))))
        records.append({"check": "balance", "i": i, "lhs": float(res), "rhs": 0.0,
                        "stderr": se, "pass": bool(abs(res) < tol)})
    return records


def _find_probe(trajectory, f, i, j):
    """Index of the accumulated probe matching ``f`` (a Probe or a callable) at ``(i, j)``."""
    for q, p in enumerate(trajectory.probes):
        if p.i != i or p.j != j:
            continue
        if isinstance(f, Probe):
            if p == f:
                return q, p
        else:
            grid = p.lo + p.h * np.arange(len(p.values))
            if np.allclose(np.asarray(f(grid), dtype=float), p.values, rtol=1e-12, atol=1e-15):
                return q, p
    raise DomainError(f"the simulation did not accumulate a weighted occupation for this f at (i, j)=({i}, {j})")


def check_product_identity(trajectory, f, i, j, eps_ladder=None, method="quadratic"):
    """Compare ``E int f(Z_i) dL_j`` with ``nu_j * E f(Z_i)``.

    The left side uses the same ladder and extrapolation as the local-time
    estimate, so ``f = 1`` returns that estimate on both sides. The mean of
    ``f`` under the gap-``i`` marginal is taken over all recorded frames.
    Passes when the two 3-sigma intervals overlap.
    """
    if i == j:
        raise DomainError("the identity pairs two distinct gaps")
    q, probe = _find_probe(trajectory, f, i, j)
    cols, eps = _checked_ladder(trajectory, eps_ladder)
    lhs = _fold(j, eps, trajectory.probe_occupation[:, q, cols] / (eps * trajectory.horizon), method)
    nu = estimate_nu(trajectory, j, eps, method)
    fz = probe(trajectory.gaps[:, :, i - 1]).mean(axis=1)
    R = len(fz)
    m = fz.mean()
    rhs = nu.extrapolated * m
    # delta method with the replica-level covariance of (nu_r, f_r)
    cov = np.cov(np.stack([nu.per_replica, fz]), ddof=1) / R
    rhs_se = float(np.sqrt(max(m * m * cov[0, 0] + nu.extrapolated ** 2 * cov[1, 1]
                               + 2 * m * nu.extrapolated * cov[0, 1], 0.0)))
    ok = abs(lhs.extrapolated - rhs) <= 3.0 * (lhs.stderr + rhs_se)
    return {"check": "product", "i": i, "j": j, "lhs": lhs.extrapolated, "rhs": float(rhs),
            "lhs_stderr": lhs.stderr, "rhs_stderr": rhs_se,
            "stderr": float(np.hypot(lhs.stderr, rhs_se)), "f_mean": float(m), "pass": bool(ok)}


def laplace_bound(spec, i):
    """Largest admissible ``lambda`` (exclusive) for gap ``i``: ``i * gbar_i``."""
    return float(i * average_drifts(spec, i)[-1])


def check_laplace_identity(trajectory, i, lambda_grid, *, a=None, nu=None, rel_tol=0.05):
    """Empirical ``E exp(lambda Z_i)`` against ``nu_i / (nu_i - lambda)``.

    ``nu_i`` comes from ``nu`` if given, otherwise from the shift ``a`` through
    the closed form, otherwise from the occupation estimate. The empirical side
    averages every recorded frame after time 0 within a replica; the standard
    error is taken across replicas.
    """
    i = as_int(i, "i", min_val=1, max_val=trajectory.k_obs, error=DomainError)
    bound = laplace_bound(trajectory.spec, i)
    if nu is None:
        nu = nu_closed_form(trajectory.spec, a, i)[-1] if a is not None else estimate_nu(trajectory, i).extrapolated
    nu = as_real(nu, "nu", min_val=0.0, include_boundaries="neither", error=DomainError)
    z = trajectory.gaps[:, trajectory.times > 0, i - 1]
    rows = []
    for lam in np.atleast_1d(lambda_grid):
        lam = float(lam)
        if lam >= bound:
            raise DomainError(f"lambda={lam} is not below the admissible bound {bound} for gap {i}")
        per = np.exp(lam * z).mean(axis=1)
        emp = float(per.mean())
        se = float(per.std(ddof=1) / np.sqrt(len(per)))
        target = nu / (nu - lam)
        rel = abs(emp - target) / target
        rows.append({"check": "laplace", "i": i, "lambda": lam, "lhs": emp, "rhs": target,
                     "stderr": se, "rel_err": rel, "pass": bool(rel < rel_tol)})
    return rows


def psi_eps_transform(z, eps):
    """Quadratic-then-linear function with a knot at ``eps``.

    Returns ``(value, first derivative, second derivative)``: ``z**2 / 2`` below
    the knot, ``eps**2 / 2 + (z - eps) * eps`` above it. The first derivative is
    ``min(z, eps)`` and the second is the indicator of ``z < eps``.
    """
    eps = as_real(eps, "eps", min_val=0.0, include_boundaries="neither", error=DomainError)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise DomainError("z must be nonnegative")
    below = z <= eps
    val = np.where(below, 0.5 * z * z, 0.5 * eps * eps + (z - eps) * eps)
    d1 = np.minimum(z, eps)
    d2 = (z < eps).astype(float)
    if val.ndim == 0:
        return float(val), float(d1), float(d2)
    return val, d1, d2


def ito_residuals(trajectory, i, eps):
    """Per-replica ``psi(Z_i(T)) - psi(Z_i(0))`` minus the compensator.

    The compensator is the discretized sum of the drift term, the second-order
    term and the neighbouring collision terms, each evaluated at the gap before
    the step. The own collision term is absent because the derivative vanishes
    at 0, and the stochastic integral has mean zero, so the residuals are
    centered up to discretization error.
    """
    hits = np.flatnonzero(np.isclose(trajectory.ito_eps, eps))
    if hits.size == 0:
        raise DomainError(f"eps={eps} was not tracked for the Ito expansion")
    t = trajectory.ito_terms[:, i - 1, hits[0], :]
    return t[:, 1] - t[:, 0] - t[:, 2]
