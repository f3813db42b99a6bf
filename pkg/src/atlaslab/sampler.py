"""Product laws on gap vectors: sampling, Laplace transforms, Hellinger affinities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_int, as_real, as_vector
from .drift import pi_a_rates
from .errors import DomainError

__all__ = [
    "Exponential",
    "Empirical",
    "ProductLaw",
    "sample_gaps",
    "laplace_exponential",
    "hellinger_affinity",
    "kakutani_affinity_product",
]


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "rate", as_real(self.rate, "rate", min_val=0.0,
                                                 include_boundaries="neither", error=DomainError))

    def from_uniform(self, u):
        # inverse CDF; log1p keeps precision for small u
        return -np.log1p(-u) / self.rate


@dataclass(frozen=True)
class Empirical:
    """Resamples uniformly from a fixed multiset of nonnegative values."""

    samples: tuple

    def __post_init__(self):
        arr = as_vector(self.samples, "samples", nonneg=True)
        object.__setattr__(self, "samples", tuple(float(x) for x in arr))

    def from_uniform(self, u):
        data = np.asarray(self.samples)
        idx = np.minimum((u * len(data)).astype(np.int64), len(data) - 1)
        return data[idx]


@dataclass(frozen=True)
class ProductLaw:
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise DomainError("a product law needs at least one component")
        for c in comps:
            if not isinstance(c, (Exponential, Empirical)):
                raise DomainError(f"unsupported marginal {c!r}")
        object.__setattr__(self, "components", comps)

    @property
    def k(self):
        return len(self.components)

    @classmethod
    def exponential(cls, rates):
        return cls(tuple(Exponential(r) for r in rates))

    @classmethod
    def stationary(cls, spec, a, k):
        """First ``k`` marginals of the product stationary law with shift ``a``."""
        return cls.exponential(pi_a_rates(spec, a, k).rates)

    def truncate(self, k):
        k = as_int(k, "k", min_val=1, max_val=self.k, error=DomainError)
        return ProductLaw(self.components[:k])

    def rates(self):
        """Rates of the exponential marginals (``nan`` for empirical ones)."""
        return np.array([c.rate if isinstance(c, Exponential) else np.nan for c in self.components])


def sample_gaps(law, rng, size=None):
    """Independent draws per component.

    One uniform is consumed per gap, row by row, so ``size=None`` returns the
    same vector as the first row of ``size=n``.
    """
    if size is None:
        return sample_gaps(law, rng, 1)[0]
    size = as_int(size, "size", min_val=1, error=DomainError)
    u = rng.random((size, law.k))
    out = np.empty_like(u)
    for col, comp in enumerate(law.components):
        out[:, col] = comp.from_uniform(u[:, col])
    return out


def laplace_exponential(nu, lam):
    """``E exp(lam * X)`` for ``X ~ Exp(nu)``, i.e. ``nu / (nu - lam)``."""
    nu = as_real(nu, "nu", min_val=0.0, include_boundaries="neither", error=DomainError)
    lam = as_real(lam, "lambda", error=DomainError)
    if lam >= nu:
        raise DomainError(f"the transform diverges for lambda={lam} >= nu={nu}")
    return nu / (nu - lam)


def hellinger_affinity(lam, mu):
    """``int sqrt(p q)`` for ``p = Exp(lam)``, ``q = Exp(mu)``; equals ``2 sqrt(lam mu) / (lam + mu)``."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(lam <= 0) or np.any(mu <= 0):
        raise DomainError("rates must be strictly positive")
    return np.where(lam == mu, 1.0, 2.0 * np.sqrt(lam * mu) / (lam + mu))


def kakutani_affinity_product(rates_a, rates_b):
    """Partial products of the per-gap Hellinger affinities.

    The infinite product is zero exactly when the two product laws are mutually
    singular, so a product that keeps shrinking with ``N`` is the finite-sample
    signature of singularity.
    """
    a = np.asarray(rates_a, dtype=float).ravel()
    b = np.asarray(rates_b, dtype=float).ravel()
    if a.shape != b.shape or a.size == 0:
        raise DomainError("rate lists must be nonempty and of equal length")
    return np.cumprod(hellinger_affinity(a, b))
