"""``atlaslab`` command-line entry point.

``atlaslab run --config exp.toml`` runs one experiment and writes
``report.json``, ``summary.txt``, ``config.toml`` (the effective config) and
the experiment's CSV tables into the output directory. Exit status is 0 when
every check passes, 2 when some check fails and 1 on configuration or
runtime errors.
"""

from __future__ import annotations

import argparse
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import io as aio
from . import rng as rngmod
from .config import load_config
from .drift import admissible_shift, in_class_D1
from .errors import AtlasLabError, CheckFailure, ConfigError
from .experiments import RECIPES, cost_estimate, preflight


def _parser():
    p = argparse.ArgumentParser(prog="atlaslab", description="Rank-based particle system experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path)
    run.add_argument("--validate", action="store_true", help="only print the dry-run diagnostics")
    val = sub.add_parser("validate", help="dry-run diagnostics, no simulation")
    val.add_argument("--config", required=True, type=Path)
    val.add_argument("--threads", type=int, default=1)
    val.add_argument("--seed", type=int)
    return p


def _load(args):
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1", field="--threads")
    return load_config(args.config, seed_override=args.seed,
                       out_override=getattr(args, "out", None), threads=args.threads)


def diagnostics(ec):
    """Dry-run report as a list of lines. Raises ConfigError if the run would be rejected."""
    a_min, boundary_ok = admissible_shift(ec.drift)
    lines = [f"experiment: {ec.experiment}",
             f"drift: {ec.drift.to_mapping()}",
             f"admissible shifts: a >= {a_min:g}" if boundary_ok else f"admissible shifts: a > {a_min:g}",
             f"drift in class D1: {'yes' if in_class_D1(ec.drift) else 'no'}"]
    if ec.a < a_min or (ec.a == a_min and not boundary_ok):
        raise ConfigError(f"a = {ec.a:g} is below the admissible shift -2 inf gbar_n = {a_min:g}"
                          if ec.a < a_min else
                          f"a = {a_min:g} is the boundary and the drift is not in class D1", field="a")
    try:
        notes = preflight(ec)
    except AtlasLabError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    lines.extend(f"note: {n}" for n in notes)
    T, k = ec.sim.T, ec.sim.k_obs
    suggested = k + max(16, math.ceil(8 * (T + math.sqrt(T))))
    lines.append(f"truncation: N = {ec.sim.N}, suggested N >= {suggested}"
                 + ("" if ec.sim.N >= suggested else " (below suggestion; check with truncation_study)"))
    if ec.a > a_min:
        lines.append("note: a above the minimal shift packs the initial gaps like 1/(n a), so the top particle "
                     "sits only logarithmically far from the observed ranks; confirm N with truncation_study")
    secs = cost_estimate(ec) / max(ec.sim.threads, 1)
    lines.append(f"estimated runtime: {secs:.3g} s on {ec.sim.threads} thread(s)")
    return lines


def summary_text(ec, checks, wall):
    failed = [c for c in checks if not c["pass"]]
    out = [f"atlaslab {ec.experiment}", f"seed {ec.seed}, replicas {ec.replicas}, "
           f"N {ec.sim.N}, T {ec.sim.T:g}, dt {ec.sim.dt:g}, a {ec.a:g}", ""]
    for c in checks:
        est = c["estimate"]
        est = f"{est:.6g}" if isinstance(est, (float, np.floating)) else str(est)
        se = c["stderr"]
        se = f" +- {se:.3g}" if isinstance(se, (float, np.floating)) else ""
        tgt = c["target"]
        tgt = f"{tgt:.6g}" if isinstance(tgt, (float, np.floating)) else str(tgt)
        out.append(f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}: estimate {est}{se}, target {tgt}")
    out += ["", f"{len(checks) - len(failed)}/{len(checks)} checks passed in {wall:.1f} s"]
    return "\n".join(out) + "\n"


def execute(ec):
    """Run the experiment and write every artifact. Returns (result, report dict)."""
    for line in diagnostics(ec):
        if line.startswith("note:"):
            print(line, file=sys.stderr)
    t0 = time.perf_counter()
    result = RECIPES[ec.experiment](ec)
    wall = time.perf_counter() - t0
    out = Path(ec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, (header, rows) in result.tables.items():
        files.append(aio.write_csv(out / name, header, rows).name)
    if result.trajectory is not None:
        files.append(aio.dump_trajectory(result.trajectory, out, 0, config_echo=ec.echo()).name)
        if len(result.trajectory.eps_ladder):
            files.append(aio.dump_occupation(result.trajectory, out).name)
    (out / "config.toml").write_text(ec.to_toml())
    report = {
        "schema": aio.SCHEMA_VERSION,
        "config": ec.echo(),
        "checks": result.checks,
        "passed": result.passed,
        "files": {f: aio.sha256_file(out / f) for f in sorted(files)},
        "rng": {"seed": ec.seed, "algorithm": rngmod.STREAM_ALGORITHM,
                "substreams": {"init": rngmod.INIT, "noise": rngmod.NOISE, "aux": rngmod.AUX},
                "streams": rngmod.stream_map(ec.seed, range(ec.replicas))},
        "timing": {"wall_seconds": wall, "threads": ec.sim.threads, "host": platform.node()},
    }
    aio.write_json(out / "report.json", report)
    (out / "summary.txt").write_text(summary_text(ec, result.checks, wall))
    return result, report


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        ec = _load(args)
        if args.command == "validate" or getattr(args, "validate", False):
            print("\n".join(diagnostics(ec)))
            return 0
        result, _ = execute(ec)
        if not result.passed:
            raise CheckFailure([c for c in result.checks if not c["pass"]])
        print(f"all {len(result.checks)} checks passed; artifacts in {ec.out_dir}")
        return 0
    except ConfigError as exc:
        where = "".join([f" [field {exc.field}]" if exc.field else "", f" [line {exc.line}]" if exc.line else ""])
        print(f"config error{where}: {exc.message}", file=sys.stderr)
        return 1
    except CheckFailure as exc:
        names = ", ".join(c["name"] for c in exc.records)
        print(f"{len(exc.records)} check(s) failed: {names}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
