"""Experiment configuration files.

A config is a small TOML document::

    experiment = "stationarity"
    a = 0.0
    replicas = 2000
    seed = 1
    out_dir = "out/stationarity"

    [drift]
    name = "atlas1"

    [sim]
    N = 32
    T = 1.0
    dt = 1e-4
    k_obs = 5

    [params]
    times = [0.25, 0.5, 1.0]

``[params]`` holds experiment-specific knobs; anything left out takes the
documented default of that experiment.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from ._validation import as_int, as_real
from .drift import DriftSpec
from .dynamics import SimConfig, default_particle_count
from .errors import ConfigError

try:
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover
    import tomli as _toml

EXPERIMENTS = (
    "stationarity", "nu_identities", "product_identity", "laplace", "coupling_sweep",
    "lemcty_search", "ergodic_average", "truncation_study", "swap_invariance", "kakutani",
)
SEED_ENV = "ATLASLAB_SEED"
_TOP_KEYS = {"experiment", "a", "replicas", "seed", "out_dir", "drift", "sim", "params"}
_SIM_KEYS = {"N", "T", "dt", "k_obs", "record_stride"}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    drift: DriftSpec
    a: float
    sim: SimConfig
    replicas: int
    out_dir: Path
    seed: int
    params: dict = field(default_factory=dict)
    source: str = ""

    def echo(self):
        return {
            "experiment": self.experiment,
            "a": self.a,
            "replicas": self.replicas,
            "seed": self.seed,
            "out_dir": str(self.out_dir),
            "drift": self.drift.to_mapping(),
            "sim": self.sim.to_mapping(),
            "params": self.params,
        }

    def to_toml(self):
        """Config text that reproduces this run (threads excluded: they never change results)."""
        echo = self.echo()
        sim = {k: v for k, v in echo["sim"].items() if k != "seed"}
        lines = [f"{k} = {_toml_value(echo[k])}" for k in ("experiment", "a", "replicas", "seed", "out_dir")]
        for name, table in (("drift", echo["drift"]), ("sim", sim), ("params", echo["params"])):
            lines.append(f"\n[{name}]")
            lines.extend(f"{k} = {_toml_value(v)}" for k, v in table.items())
        return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + "}"
    raise ConfigError(f"cannot write {type(v).__name__} to a config file")


def _line_of(text, section, key):
    """1-based line where ``key`` is assigned inside ``[section]`` (top level if None)."""
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and re.match(rf"\s*{re.escape(key)}\s*=", line):
            return n
    return None


def parse_config(text, *, seed_override=None, out_override=None, threads=1, env=None):
    """Build an :class:`ExperimentConfig` from TOML text.

    Seed precedence is ``seed_override`` (command-line flag), then the
    ``ATLASLAB_SEED`` environment variable, then the file.
    """
    env = os.environ if env is None else env
    try:
        data = _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"cannot parse config: {exc}", line=int(m.group(1)) if m else None) from exc

    def fail(msg, section, key):
        name = key if section is None else f"{section}.{key}"
        return ConfigError(msg, field=name, line=_line_of(text, section, key))

    unknown = set(data) - _TOP_KEYS
    if unknown:
        k = sorted(unknown)[0]
        raise fail(f"unknown key {k!r}", None, k)
    exp = data.get("experiment")
    if exp not in EXPERIMENTS:
        raise fail(f"experiment must be one of {', '.join(EXPERIMENTS)}", None, "experiment")

    try:
        drift = DriftSpec.from_mapping(data.get("drift", {"name": "atlas1"}))
    except ConfigError as exc:
        raise ConfigError(str(exc), field=exc.field, line=_line_of(text, "drift", "prefix")) from exc

    def scalar(section, key, conv, **kw):
        src = data if section is None else data.get(section, {})
        try:
            return conv(src[key], key if section is None else f"{section}.{key}", **kw)
        except ConfigError as exc:
            raise fail(exc.message, section, key) from exc

    a = scalar(None, "a", as_real) if "a" in data else 0.0
    replicas = scalar(None, "replicas", as_int, min_val=1) if "replicas" in data else 1
    file_seed = scalar(None, "seed", as_int, min_val=0, max_val=2**64 - 1) if "seed" in data else 0
    seed = file_seed
    if env.get(SEED_ENV):
        try:
            seed = as_int(int(env[SEED_ENV]), SEED_ENV, min_val=0, max_val=2**64 - 1)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be a nonnegative integer", field=SEED_ENV) from exc
    if seed_override is not None:
        seed = as_int(seed_override, "--seed", min_val=0, max_val=2**64 - 1)

    sim = data.get("sim", {})
    unknown = set(sim) - _SIM_KEYS
    if unknown:
        k = sorted(unknown)[0]
        raise fail(f"unknown key {k!r}", "sim", k)
    for key in ("dt", "T"):
        if key in sim:
            scalar("sim", key, as_real, min_val=0.0, include_boundaries="neither")
    for key in ("N", "k_obs", "record_stride"):
        if key in sim:
            scalar("sim", key, as_int, min_val=1)
    T = float(sim.get("T", 1.0))
    k_obs = int(sim.get("k_obs", 5))
    N = int(sim.get("N", default_particle_count(k_obs, T)))
    try:
        cfg = SimConfig(N=N, T=T, dt=float(sim.get("dt", 1e-4)), k_obs=k_obs, seed=seed,
                        record_stride=int(sim.get("record_stride", 100)), threads=threads)
    except ConfigError as exc:
        key = (exc.field or "N").split(".")[-1]
        raise fail(exc.message, "sim", key) from exc

    out_dir = Path(out_override if out_override is not None else data.get("out_dir", f"out/{exp}"))
    params = data.get("params", {})
    if not isinstance(params, dict):
        raise fail("params must be a table", None, "params")
    return ExperimentConfig(experiment=exp, drift=drift, a=a, sim=cfg, replicas=replicas,
                            out_dir=out_dir, seed=seed, params=dict(params), source=text)


def load_config(path, **kw):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, **kw)
