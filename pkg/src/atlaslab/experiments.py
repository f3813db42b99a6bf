"""Experiment recipes behind the command-line runner.

Each recipe takes an :class:`~atlaslab.config.ExperimentConfig` and returns an
:class:`ExperimentResult`: check records, CSV tables and the trajectory (if
any) worth dumping. Nothing here touches the file system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import coupling as cp
from . import rng as rngmod
from .drift import average_drifts, pi_a_rates
from .dynamics import Probe, simulate_gap_paths, truncation_sensitivity
from .ergodic import Observable, rate_mle, stationarity_trend, swap_invariance_test, time_average
from .errors import ConfigError
from .local_time import (check_balance_recursion, check_laplace_identity, check_product_identity,
                         estimate_nu, nu_closed_form)
from .sampler import kakutani_affinity_product


@dataclass
class ExperimentResult:
    checks: list
    tables: dict = field(default_factory=dict)
    trajectory: object = None
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c["pass"] for c in self.checks)


def check(name, target, estimate, stderr, ok, **extra):
    rec = {"name": name, "target": target, "estimate": estimate, "stderr": stderr, "pass": bool(ok)}
    rec.update(extra)
    return rec


def _param(ec, key, default):
    return ec.params.get(key, default)


def _ladder(ec):
    mult = _param(ec, "eps_multipliers", [4, 8, 16, 32])
    return [m * math.sqrt(ec.sim.dt) for m in mult]


def _gap_function(spec):
    """Parse the ``f`` parameter: ``"exp_neg"``, ``"one"`` or ``"tail:<c>"``.

    Returns the function and, given the rate of the paired gap, the exact mean
    of ``f`` under that exponential marginal.
    """
    if spec == "exp_neg":
        return (lambda z: np.exp(-np.asarray(z))), (lambda rate: rate / (rate + 1.0))
    if spec == "one":
        return (lambda z: np.ones_like(np.asarray(z, dtype=float))), (lambda rate: 1.0)
    if isinstance(spec, str) and spec.startswith("tail:"):
        c = float(spec.split(":", 1)[1])
        return (lambda z: (np.asarray(z) > c).astype(float)), (lambda rate: math.exp(-rate * c))
    raise ConfigError(f"unknown f {spec!r}; use exp_neg, one or tail:<c>", field="params.f")


def run_stationarity(ec):
    k = int(_param(ec, "gaps", min(5, ec.sim.k_obs)))
    times = [t for t in _param(ec, "times", [0.25, 0.5, 1.0]) if t <= ec.sim.T + 1e-12]
    tol = float(_param(ec, "rel_tol", 0.05))
    traj = simulate_gap_paths(ec.drift, ec.a, ec.sim, _ladder(ec), ec.replicas)
    target = pi_a_rates(ec.drift, ec.a, k).rates
    checks, rows = [], []
    zT = traj.terminal_gaps
    for i in range(1, k + 1):
        est = rate_mle(zT[:, i - 1])
        rel = est.rate / target[i - 1] - 1.0
        checks.append(check(f"rate_gap{i}", target[i - 1], est.rate, est.rate / math.sqrt(est.n),
                            abs(rel) <= tol, rel_err=rel))
        rows.append({"i": i, "target": target[i - 1], "rate": est.rate, "ci_lo": est.ci_lo,
                     "ci_hi": est.ci_hi, "rel_err": rel})
    tables = {"rates.csv": (["i", "target", "rate", "ci_lo", "ci_hi", "rel_err"], rows)}
    if len(times) >= 2 and ec.replicas >= 60:
        trend = stationarity_trend(traj, target, times, groups=int(_param(ec, "groups", 20)))
        for r in trend["rows"]:
            checks.append(check(f"ks_trend_gap{r['i']}", 0.0, r["slope"], r["stderr"], r["pass"],
                                p_adjusted=r["p_adjusted"]))
        pv = trend["pvalues"]
        st = trend["statistics"]
        ks_rows = [[g, times[t], c + 1, st[g, t, c], pv[g, t, c]]
                   for g in range(pv.shape[0]) for t in range(pv.shape[1]) for c in range(pv.shape[2])]
        tables["ks_pvalues.csv"] = (["group", "t", "i", "statistic", "p_value"], ks_rows)
    return ExperimentResult(checks, tables, traj)


def run_nu_identities(ec):
    k = int(_param(ec, "k", min(5, ec.sim.k_obs)))
    tol = float(_param(ec, "rel_tol", 0.10))
    method = _param(ec, "method", "quadratic")
    nu_idx = _param(ec, "nu_indices", [1, 2, 3])
    traj = simulate_gap_paths(ec.drift, ec.a, ec.sim, _ladder(ec), ec.replicas)
    nus = [estimate_nu(traj, i, method=method) for i in range(1, k + 1)]
    target = nu_closed_form(ec.drift, ec.a, k)
    checks = []
    for i in nu_idx:
        n = nus[i - 1]
        rel = n.extrapolated / target[i - 1] - 1.0
        checks.append(check(f"nu_{i}", target[i - 1], n.extrapolated, n.stderr, abs(rel) <= tol, rel_err=rel))
    for rec in check_balance_recursion(nus, ec.drift):
        checks.append(check(f"balance_{rec['i']}", 0.0, rec["lhs"], rec["stderr"], rec["pass"]))
    ladder_rows = [[n.i, e, r, s] for n in nus for e, r, s in zip(n.eps_ladder, n.raw, n.raw_stderr)]
    summary = [[n.i, target[n.i - 1], n.extrapolated, n.stderr, n.linear_r2] for n in nus]
    tables = {"nu_ladder.csv": (["i", "eps", "raw", "raw_stderr"], ladder_rows),
              "nu.csv": (["i", "target", "estimate", "stderr", "linear_r2"], summary)}
    return ExperimentResult(checks, tables, traj)


def run_product_identity(ec):
    pairs = [tuple(p) for p in _param(ec, "pairs", [[1, 2], [2, 1]])]
    f, mean_under = _gap_function(_param(ec, "f", "exp_neg"))
    probes = [Probe.tabulate(f, i, j) for i, j in pairs]
    traj = simulate_gap_paths(ec.drift, ec.a, ec.sim, _ladder(ec), ec.replicas, probes=probes)
    kmax = max(max(p) for p in pairs)
    rates = pi_a_rates(ec.drift, ec.a, kmax).rates
    checks, rows = [], []
    for (i, j), probe in zip(pairs, probes):
        rec = check_product_identity(traj, probe, i, j)
        exact = rates[j - 1] * mean_under(rates[i - 1])
        checks.append(check(f"product_{i}_{j}", rec["rhs"], rec["lhs"], rec["stderr"], rec["pass"],
                            exact_rhs=exact))
        rows.append([i, j, rec["lhs"], rec["rhs"], rec["lhs_stderr"], rec["rhs_stderr"], exact, rec["pass"]])
    header = ["i", "j", "lhs", "rhs", "lhs_stderr", "rhs_stderr", "exact_rhs", "pass"]
    return ExperimentResult(checks, {"product.csv": (header, rows)}, traj)


def run_laplace(ec):
    gaps = _param(ec, "gaps", [1, 2, 3])
    lambdas = _param(ec, "lambdas", [-2.0, -1.0, 0.5])
    tol = float(_param(ec, "rel_tol", 0.05))
    traj = simulate_gap_paths(ec.drift, ec.a, ec.sim, _ladder(ec), ec.replicas)
    checks, rows = [], []
    for i in gaps:
        for rec in check_laplace_identity(traj, i, lambdas, a=ec.a, rel_tol=tol):
            checks.append(check(f"laplace_{i}_{rec['lambda']:g}", rec["rhs"], rec["lhs"], rec["stderr"],
                                rec["pass"], rel_err=rec["rel_err"]))
            rows.append([i, rec["lambda"], rec["lhs"], rec["rhs"], rec["stderr"], rec["rel_err"]])
    return ExperimentResult(checks, {"laplace.csv": (["i", "lambda", "empirical", "target", "stderr",
                                                      "rel_err"], rows)}, traj)


def _coupling_z(ec):
    z = _param(ec, "z", 1.0)
    if isinstance(z, (int, float)):
        return np.full(ec.sim.N - 1, float(z))
    z = np.asarray(z, dtype=float)
    if len(z) < ec.sim.N - 1:
        raise ConfigError(f"z needs {ec.sim.N - 1} gaps", field="params.z")
    return z


COUPLING_HEADER = ["delta1", "delta2", "i", "s", "p_E1", "p_E2", "p_E", "p_coupled", "ci_lo", "ci_hi"]


def run_coupling_sweep(ec):
    z = _coupling_z(ec)
    i = int(_param(ec, "i", 1))
    d1s = _param(ec, "delta1", [0.05])
    d2s = _param(ec, "delta2", [0.05])
    s_grid = _param(ec, "s", [0.01, 0.05])
    ud = float(_param(ec, "underline_delta", 0.1))
    checks, rows = [], []
    for d1 in d1s:
        for d2 in d2s:
            geom = cp.build_geometry(z, d1, d2, i, ec.drift)
            ests = cp.event_probabilities(z, d1, d2, i, ec.drift, s_grid, ud, ec.sim, ec.replicas)
            for e in ests:
                rows.append(e.as_row())
                tag = f"d1={d1:g},d2={d2:g},s={e.s:g}"
                slack = 3.0 * math.sqrt(e.se(e.p_E) ** 2 + e.se(e.p_coupled) ** 2)
                checks.append(check(f"inclusion[{tag}]", e.p_coupled, e.p_E, slack / 3,
                                    e.p_E <= e.p_coupled + slack))
                bound = cp.upper_event_bounds(geom, e.s, ud, ec.sim.N)["coarse"]
                checks.append(check(f"upper_bound[{tag}]", bound, 1.0 - e.p_E1, e.se(e.p_E1),
                                    1.0 - e.p_E1 <= bound))
                checks.append(check(f"coupled_positive[{tag}]", 0.0, e.p_coupled, e.se(e.p_coupled),
                                    e.ci_lo > 0, ci_lo=e.ci_lo, ci_hi=e.ci_hi))
    return ExperimentResult(checks, {"coupling.csv": (COUPLING_HEADER, rows)})


LEMCTY_HEADER = ["t1", "delta0", "delta1", "delta2", "p_not_coupled", "p_event_fail", "se_not_coupled",
                 "se_event_fail"]


def run_lemcty_search(ec):
    z = _coupling_z(ec)
    i = int(_param(ec, "i", 1))
    eta = float(_param(ec, "eta", 0.1))
    ud = float(_param(ec, "underline_delta", 0.1))
    t1_grid = _param(ec, "t1_grid", [0.004, 0.002, 0.001])
    d0_grid = _param(ec, "delta0_grid", [0.04, 0.02, 0.01, 0.005])
    found, cells = cp.lemcty_search(z, i, ec.drift, eta, t1_grid, d0_grid, ud, ec.sim, ec.replicas)
    if found is None:
        return ExperimentResult([check("lemcty_found", eta, None, None, False)], {"lemcty.csv": (LEMCTY_HEADER, cells)})
    worst = max(max(r["p_not_coupled"], r["p_event_fail"]) for r in found["rows"])
    checks = [check("lemcty_found", eta, worst, None, True, t1=found["t1"], delta0=found["delta0"])]
    for r in found["rows"]:
        slack = 3.0 * math.hypot(r["se_not_coupled"], r["se_event_fail"])
        checks.append(check(f"ordering[d1={r['delta1']:g},d2={r['delta2']:g}]", r["p_not_coupled"],
                            r["p_event_fail"], slack / 3, r["p_event_fail"] >= r["p_not_coupled"] - slack))
    return ExperimentResult(checks, {"lemcty.csv": (LEMCTY_HEADER, cells)})


def run_ergodic_average(ec):
    i = int(_param(ec, "i", 1))
    kind = _param(ec, "observable", "coordinate")
    if kind == "coordinate":
        obs = Observable.coordinate(i)
        target = 1.0 / pi_a_rates(ec.drift, ec.a, i).rates[-1]
    elif kind == "indicator":
        c = float(_param(ec, "threshold", math.log(2) / 2))
        obs = Observable.indicator(i, c)
        target = math.exp(-pi_a_rates(ec.drift, ec.a, i).rates[-1] * c)
    else:
        raise ConfigError("observable must be coordinate or indicator", field="params.observable")
    tol = float(_param(ec, "rel_tol", 0.10))
    traj = simulate_gap_paths(ec.drift, ec.a, ec.sim, (), ec.replicas)
    checks, rows = [], []
    for r in range(traj.replicas):
        ta = time_average(traj, obs, r)
        rel = ta.final / target - 1.0
        checks.append(check(f"time_average[replica={r}]", target, ta.final, None, abs(rel) <= tol, rel_err=rel))
        rows.extend([[r, t, v] for t, v in zip(ta.times, ta.values)])
    return ExperimentResult(checks, {"time_average.csv": (["replica", "t", "average"], rows)}, traj)


def run_truncation_study(ec):
    N_list = _param(ec, "N_list", [8, 16, 32, 64])
    obs = int(_param(ec, "observable", 0))
    table = truncation_sensitivity(ec.drift, ec.a, ec.sim, N_list, obs, ec.replicas)
    rows = [[t.N, t.median, t.quantile(0.9), float(t.sup_diff.max())] for t in table]
    meds = [t.median for t in table[:-1]]
    ok = all(b <= a for a, b in zip(meds, meds[1:]))
    checks = [check("median_nonincreasing", None, meds, None, ok),
              check("self_difference_zero", 0.0, float(table[-1].sup_diff.max()), None,
                    table[-1].sup_diff.max() == 0.0)]
    return ExperimentResult(checks, {"truncation.csv": (["N", "median", "q90", "max"], rows)})


def run_swap_invariance(ec):
    i = int(_param(ec, "i", 1))
    n = int(_param(ec, "n_samples", 100_000))
    seeds = int(_param(ec, "seeds", 20))
    alpha = float(_param(ec, "alpha", 0.01))
    rows, rejections = [], 0
    first = None
    for s in range(seeds):
        res = swap_invariance_test(ec.drift, ec.a, i, n, rngmod.replica_stream(ec.seed, s, rngmod.AUX), alpha=alpha)
        first = res if first is None else first
        rejections += not res["pass"]
        for c, (ks, adj) in enumerate(zip(res["ks"], res["adjusted"])):
            rows.append([s, c + 1, ks.statistic, ks.p_value, adj])
    rate = rejections / seeds
    slack = 3.0 * math.sqrt(alpha * (1 - alpha) / seeds)
    checks = [check("swap_invariance", alpha, float(min(first["adjusted"])), None, first["pass"],
                    scale=first["scale"]),
              check("rejection_rate", alpha, rate, math.sqrt(alpha * (1 - alpha) / seeds), rate <= alpha + slack)]
    return ExperimentResult(checks, {"swap.csv": (["seed", "coordinate", "statistic", "p_value",
                                                  "p_adjusted"], rows)})


def run_kakutani(ec):
    a2 = float(_param(ec, "a_other", 0.5))
    n = int(_param(ec, "n", 50))
    ra = pi_a_rates(ec.drift, ec.a, n).rates
    rb = pi_a_rates(ec.drift, a2, n).rates
    prod = kakutani_affinity_product(ra, rb)
    strict = bool(np.all(np.diff(prod) < 0)) if ec.a != a2 else bool(np.all(prod == 1.0))
    checks = [check("strictly_decreasing" if ec.a != a2 else "identical_laws", None, None, None, strict),
              check("product_below_1e-3", 1e-3, float(prod[-1]), None, prod[-1] < 1e-3 or ec.a == a2)]
    rows = [[k + 1, ra[k], rb[k], prod[k]] for k in range(n)]
    return ExperimentResult(checks, {"kakutani.csv": (["n", "rate_a", "rate_b", "partial_product"], rows)})


RECIPES = {
    "stationarity": run_stationarity,
    "nu_identities": run_nu_identities,
    "product_identity": run_product_identity,
    "laplace": run_laplace,
    "coupling_sweep": run_coupling_sweep,
    "lemcty_search": run_lemcty_search,
    "ergodic_average": run_ergodic_average,
    "truncation_study": run_truncation_study,
    "swap_invariance": run_swap_invariance,
    "kakutani": run_kakutani,
}


def cost_estimate(ec, ns_per_particle_step=32.0):
    """Rough wall-clock seconds on one core: linear in replicas x steps x particles."""
    factor = {"coupling_sweep": 2.0, "lemcty_search": 2.0}.get(ec.experiment, 1.0)
    work = ec.replicas * ec.sim.steps * ec.sim.N * factor
    if ec.experiment == "truncation_study":
        Ns = _param(ec, "N_list", [8, 16, 32, 64])
        work = ec.replicas * ec.sim.steps * sum(Ns)
    if ec.experiment in ("swap_invariance", "kakutani"):
        work = 0
    return work * ns_per_particle_step * 1e-9


def gbar_inf(spec):
    return float(min(0.0, average_drifts(spec, max(len(spec.prefix), 1)).min()))


def preflight(ec):
    """Check every precondition of the configured experiment without simulating.

    Raises a library error (NonpositiveRate, DomainError, GeometryError or
    ConfigError) on the first violation; returns a list of advisory notes.
    """
    notes = []
    rates = pi_a_rates(ec.drift, ec.a, max(ec.sim.k_obs, 1))
    if rates.boundary:
        notes.append(f"a = a_min = {rates.a_min:g} is the boundary case; allowed because the drift is in class D1")
    exp = ec.experiment
    if exp in ("stationarity", "nu_identities", "product_identity", "laplace", "ergodic_average"):
        need = {"stationarity": int(_param(ec, "gaps", min(5, ec.sim.k_obs))),
                "nu_identities": int(_param(ec, "k", min(5, ec.sim.k_obs))),
                "product_identity": max((max(p) for p in _param(ec, "pairs", [[1, 2], [2, 1]])), default=1),
                "laplace": max(_param(ec, "gaps", [1, 2, 3]), default=1),
                "ergodic_average": int(_param(ec, "i", 1))}[exp]
        if need > ec.sim.k_obs:
            raise ConfigError(f"experiment needs gap {need} but sim.k_obs = {ec.sim.k_obs}", field="sim.k_obs")
        if ec.sim.N < ec.sim.k_obs + 1:
            raise ConfigError("sim.N must exceed sim.k_obs", field="sim.N")
    if exp in ("nu_identities", "product_identity", "laplace", "stationarity"):
        ladder = _ladder(ec)
        if min(ladder) < 4 * math.sqrt(ec.sim.dt) * (1 - 1e-12):
            raise ConfigError("eps_multipliers must be at least 4", field="params.eps_multipliers")
    if exp in ("nu_identities", "product_identity") and ec.replicas < 100:
        raise ConfigError("local-time estimates need at least 100 replicas", field="replicas")
    if exp == "product_identity":
        _gap_function(_param(ec, "f", "exp_neg"))
    if exp == "laplace":
        from .local_time import laplace_bound
        for i in _param(ec, "gaps", [1, 2, 3]):
            top = laplace_bound(ec.drift, i)
            bad = [lam for lam in _param(ec, "lambdas", [-2.0, -1.0, 0.5]) if lam >= top]
            if bad:
                raise ConfigError(f"lambda {bad[0]} is not below {top:g} for gap {i}", field="params.lambdas")
    if exp == "coupling_sweep":
        z = _coupling_z(ec)
        ud = float(_param(ec, "underline_delta", 0.1))
        for d1 in _param(ec, "delta1", [0.05]):
            for d2 in _param(ec, "delta2", [0.05]):
                geom = cp.build_geometry(z, d1, d2, int(_param(ec, "i", 1)), ec.drift)
                cp._check_event_preconditions(geom, _param(ec, "s", [0.01, 0.05]), ud)
    if exp == "lemcty_search":
        z = _coupling_z(ec)
        ud = float(_param(ec, "underline_delta", 0.1))
        for t1 in _param(ec, "t1_grid", [0.004, 0.002, 0.001]):
            for d0 in _param(ec, "delta0_grid", [0.04, 0.02, 0.01, 0.005]):
                geom = cp.build_geometry(z, d0 / 2, d0 / 2, int(_param(ec, "i", 1)), ec.drift)
                cp._check_event_preconditions(geom, [t1], ud)
    if exp == "truncation_study":
        Ns = _param(ec, "N_list", [8, 16, 32, 64])
        if sorted(Ns) != list(Ns) or len(set(Ns)) != len(Ns) or Ns[0] < 2:
            raise ConfigError("N_list must be strictly increasing sizes of at least 2", field="params.N_list")
    if exp == "kakutani" and int(_param(ec, "n", 50)) < 1:
        raise ConfigError("n must be positive", field="params.n")
    return notes
