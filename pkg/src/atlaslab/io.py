"""CSV and JSON artifacts.

Numbers are written with 17 significant digits so a rerun is byte-identical
and every float round-trips.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            vals = [row[h] for h in header] if isinstance(row, dict) else row
            w.writerow([fmt(v) for v in vals])
    return path


def read_csv(path):
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, Path):
        return str(x)
    return x


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def dump_trajectory(trajectory, out_dir, replica=0, stem="trajectory", config_echo=None):
    """Write one replica's gaps as ``t,z1,...,zk`` plus a JSON manifest with a content hash."""
    out_dir = Path(out_dir)
    k = trajectory.k_obs
    header = ["t"] + [f"z{i}" for i in range(1, k + 1)]
    gaps = trajectory.gaps[replica]
    rows = [[t, *g] for t, g in zip(trajectory.times, gaps)]
    csv_path = write_csv(out_dir / f"{stem}.csv", header, rows)
    manifest = {
        "schema": SCHEMA_VERSION,
        "file": csv_path.name,
        "sha256": sha256_file(csv_path),
        "replica": replica,
        "seed": trajectory.config.seed,
        "config": config_echo if config_echo is not None else trajectory.config.to_mapping(),
        "drift": trajectory.spec.to_mapping(),
    }
    write_json(out_dir / f"{stem}.json", manifest)
    return csv_path


def dump_occupation(trajectory, out_dir, stem="occupation"):
    """Replica-mean occupation times as ``i,eps,occupation``."""
    occ = trajectory.occupation.mean(axis=0)
    rows = []
    for i in range(occ.shape[0]):
        for e, eps in enumerate(trajectory.eps_ladder):
            rows.append([i + 1, eps, occ[i, e]])
    return write_csv(Path(out_dir) / f"{stem}.csv", ["i", "eps", "occupation"], rows)
