"""Drift vectors of rank-based particle systems and their stationary rates.

A drift vector assigns a constant drift ``g[n]`` to the particle of rank ``n``
(rank 0 is the lowest). Only a finite prefix is stored; every rank past the
prefix has drift zero. With that tail rule the vector is square summable, and
both the infimum of the running averages and membership in the
"strict running minimum" class can be decided exactly from the prefix.

Running averages ``gbar[n] = (g[0] + ... + g[n-1]) / n`` are reported for
``n = 1, 2, ...``. The product-of-exponentials stationary law for the gaps has
rate ``n * (2 * gbar[n] + a)`` on gap ``n``. It is computed here as
``2 * prefix_sum[n] + n * a`` so that the one-drift Atlas vector ``(1, 0, 0, ...)``
reproduces ``2 + n * a`` without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_int, as_real
from .errors import ConfigError, NonpositiveRate

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

__all__ = [
    "DriftSpec",
    "StationaryRates",
    "D1Certificate",
    "average_drifts",
    "prefix_sums",
    "pi_a_rates",
    "check_class_D1",
    "finite_system_rates",
    "admissible_shift",
    "in_class_D1",
]


@dataclass(frozen=True)
class DriftSpec:
    """Finite drift prefix followed by zeros.

    Parameters
    ----------
    prefix : sequence of float
        Drifts of ranks ``0 .. m-1``.
    tail : {"zero"}
        Rule for ranks ``>= m``; only the zero tail is representable.
    name : str, optional
        Free label, e.g. ``"atlas1"``.
    """

    prefix: tuple = ()
    tail: str = "zero"
    name: str | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if self.tail != "zero":
            raise ConfigError(f"unsupported tail rule {self.tail!r}; only 'zero' is available", field="tail")
        vals = []
        for k, g in enumerate(self.prefix):
            vals.append(as_real(g, f"prefix[{k}]"))
        object.__setattr__(self, "prefix", tuple(vals))

    @classmethod
    def atlas1(cls):
        """The Atlas drift: the lowest particle gets drift 1, every other particle 0."""
        return cls((1.0,), name="atlas1")

    @classmethod
    def zero(cls):
        return cls((), name="zero")

    def drifts(self, n):
        """Length-``n`` array of drifts for ranks ``0 .. n-1``."""
        n = as_int(n, "n", min_val=0)
        out = np.zeros(n)
        m = min(n, len(self.prefix))
        out[:m] = self.prefix[:m]
        return out

    def bar_g(self, n_max):
        """Cached running averages ``gbar[1..n_max]`` (index 0 holds ``gbar[1]``)."""
        cached = self._cache.get("bar_g")
        if cached is None or len(cached) < n_max:
            cached = average_drifts(self, n_max)
            self._cache["bar_g"] = cached
        return cached[:n_max].copy()

    @property
    def lower_bound(self):
        """A constant ``G >= 1`` with ``g[j] >= -G`` for every rank ``j``."""
        return max(1.0, max((-g for g in self.prefix), default=0.0))

    # -- structured text ------------------------------------------------
    def to_text(self):
        lines = ["prefix = [" + ", ".join(repr(float(g)) for g in self.prefix) + "]",
                 f'tail = "{self.tail}"']
        if self.name is not None:
            lines.append(f"name = {_quote(self.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        try:
            data = _toml.loads(text)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse drift block: {exc}") from exc
        return cls.from_mapping(data)

    @classmethod
    def from_mapping(cls, data):
        unknown = set(data) - {"prefix", "tail", "name"}
        if unknown:
            raise ConfigError(f"unknown drift keys {sorted(unknown)}", field="drift")
        name = data.get("name")
        if "prefix" not in data:
            if name == "atlas1":
                return cls.atlas1()
            if name == "zero":
                return cls.zero()
            raise ConfigError("drift needs 'prefix' (or name 'atlas1' / 'zero')", field="drift.prefix")
        prefix = data["prefix"]
        if not isinstance(prefix, (list, tuple)):
            raise ConfigError("prefix must be a list of numbers", field="drift.prefix")
        return cls(tuple(prefix), data.get("tail", "zero"), name)

    def to_mapping(self):
        out = {"prefix": list(self.prefix), "tail": self.tail}
        if self.name is not None:
            out["name"] = self.name
        return out


def _quote(s):
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def prefix_sums(spec, n_max):
    """``S[n] = g[0] + ... + g[n-1]`` for ``n = 1 .. n_max``."""
    n_max = as_int(n_max, "n_max", min_val=1)
    return np.cumsum(spec.drifts(n_max))


def average_drifts(spec, n_max):
    """Running averages ``gbar[1] .. gbar[n_max]``."""
    s = prefix_sums(spec, n_max)
    return s / np.arange(1, len(s) + 1)


@dataclass(frozen=True)
class StationaryRates:
    a: float
    rates: tuple
    a_min: float
    boundary: bool
    """True when ``a`` sits exactly at ``a_min`` (admissible only in the strict-minimum class)."""

    @property
    def means(self):
        return tuple(1.0 / r for r in self.rates)


def in_class_D1(spec):
    """Exact membership test for the zero-tail case.

    The averages past the prefix are ``S/n`` with ``S`` the full prefix sum, so
    infinitely many strict running minima exist iff every prefix sum is
    positive: then the averages decrease to 0 from above and eventually undercut
    every earlier value. A zero or negative total gives ties or increasing
    averages, and an early nonpositive prefix sum can never be undercut.
    """
    if not spec.prefix:
        return False
    return bool(np.all(np.cumsum(spec.prefix) > 0))


def admissible_shift(spec):
    """Return ``(a_min, boundary_ok)`` with ``a_min = -2 inf_n gbar[n]`` over all ``n``.

    For a zero tail the averages tend to 0, so the infimum is the smaller of 0
    and the least average over the prefix.
    """
    m = len(spec.prefix)
    low = 0.0
    if m:
        low = min(0.0, float(np.min(average_drifts(spec, m))))
    return (-2.0 * low if low else 0.0), in_class_D1(spec)


def pi_a_rates(spec, a, k):
    """Rates of the first ``k`` gap marginals of the product stationary law."""
    a = as_real(a, "a", error=NonpositiveRate)
    k = as_int(k, "k", min_val=1)
    a_min, boundary_ok = admissible_shift(spec)
    if a < a_min:
        raise NonpositiveRate(f"a={a} is below the admissible minimum {a_min}; some gap rate is nonpositive")
    boundary = a == a_min
    if boundary and not boundary_ok:
        raise NonpositiveRate(f"a={a} equals the boundary {a_min}, which is admissible only "
                              "when the running averages have infinitely many strict minima")
    n = np.arange(1, k + 1)
    rates = 2.0 * prefix_sums(spec, k) + n * a
    if np.any(rates <= 0):
        bad = int(n[np.argmax(rates <= 0)])
        raise NonpositiveRate(f"rate of gap {bad} is {rates[bad - 1]} <= 0")
    return StationaryRates(a=a, rates=tuple(float(r) for r in rates), a_min=a_min, boundary=boundary)


@dataclass(frozen=True)
class D1Certificate:
    member: bool
    witnesses: tuple


def check_class_D1(spec, n_max):
    """Indices ``N`` in ``[2, n_max]`` whose average is a strict running minimum.

    This is a finite-horizon certificate. For the exact answer in the zero-tail
    case use :func:`in_class_D1`.
    """
    n_max = as_int(n_max, "n_max", min_val=2)
    gbar = average_drifts(spec, n_max)
    witnesses = []
    running = gbar[0]
    for N in range(2, n_max + 1):
        if running > gbar[N - 1]:
            witnesses.append(N)
        running = min(running, gbar[N - 1])
    return D1Certificate(member=bool(witnesses), witnesses=tuple(witnesses))


def finite_system_rates(spec, N):
    """Stationary gap rates ``2 l (gbar[l] - gbar[N])`` of the ``N``-particle system."""
    N = as_int(N, "N", min_val=2)
    s = prefix_sums(spec, N)
    l = np.arange(1, N)
    rates = 2.0 * (s[:-1] - l * s[-1] / N)
    if np.any(rates <= 0):
        bad = int(l[np.argmax(rates <= 0)])
        raise NonpositiveRate(f"gbar[{bad}] <= gbar[{N}]: N={N} is not a strict running minimum")
    return tuple(float(r) for r in rates)

