"""scikit-learn style wrappers around the simulation and estimation routines.

They follow the usual conventions: hyperparameters go to ``__init__`` and are
stored untouched, fitted quantities end in an underscore, and ``fit`` returns
``self``. Inputs are checked with scikit-learn's validation helpers.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, as_vector
from .drift import DriftSpec, pi_a_rates
from .dynamics import GapTrajectory, SimConfig, simulate_gap_paths
from .ergodic import ks_exponential, rate_mle
from .errors import DomainError
from .local_time import estimate_nu
from .rng import AUX, replica_stream
from .sampler import ProductLaw, sample_gaps


class ExponentialRateEstimator(BaseEstimator):
    """Per-column exponential rate by maximum likelihood.

    ``fit(X)`` takes an ``(n_samples, k)`` array of positive gaps and stores
    ``rate_``, ``ci_lo_`` and ``ci_hi_`` (one entry per column).
    ``score(X)`` is the mean exponential log-likelihood per sample.
    """

    def __init__(self, confidence=0.95):
        self.confidence = confidence

    def fit(self, X, y=None):
        X = as_matrix(X, "X", nonneg=True)
        est = [rate_mle(X[:, c], self.confidence) for c in range(X.shape[1])]
        self.rate_ = np.array([e.rate for e in est])
        self.ci_lo_ = np.array([e.ci_lo for e in est])
        self.ci_hi_ = np.array([e.ci_hi for e in est])
        self.n_features_in_ = X.shape[1]
        return self

    def _checked(self, X):
        check_is_fitted(self, "rate_")
        X = as_matrix(X, "X", nonneg=True)
        if X.shape[1] != self.n_features_in_:
            raise DomainError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X

    def transform(self, X):
        """Map each column to ``rate * z``, which is standard exponential under the fit."""
        return self._checked(X) * self.rate_

    def score(self, X, y=None):
        X = self._checked(X)
        return float(np.mean(np.sum(np.log(self.rate_) - self.rate_ * X, axis=1)))

    def ks_pvalues(self, X, rates=None):
        """KS p-value of each column against ``rates`` (the fitted ones by default)."""
        X = self._checked(X)
        rates = self.rate_ if rates is None else as_vector(rates, "rates", positive=True)
        return np.array([ks_exponential(X[:, c], rates[c]).p_value for c in range(X.shape[1])])


class GapProcessSimulator(BaseEstimator, TransformerMixin):
    """Push gap configurations forward in time.

    ``transform(X)`` treats every row of ``X`` as the initial gaps of one
    replica (unobserved upper gaps are drawn from the stationary law with
    shift ``a``) and returns the observed gaps at time ``T``. Row ``r`` always
    uses the random stream of replica ``r``.

    ``fit`` only validates the hyperparameters; there is nothing to learn.
    """

    def __init__(self, drift=None, a=0.0, N=32, T=1.0, dt=1e-4, k_obs=5, seed=0,
                 record_stride=100, threads=1):
        self.drift = drift
        self.a = a
        self.N = N
        self.T = T
        self.dt = dt
        self.k_obs = k_obs
        self.seed = seed
        self.record_stride = record_stride
        self.threads = threads

    def _spec(self):
        return DriftSpec.atlas1() if self.drift is None else self.drift

    def _config(self):
        return SimConfig(N=self.N, T=self.T, dt=self.dt, k_obs=self.k_obs, seed=self.seed,
                         record_stride=self.record_stride, threads=self.threads)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        self.rates_ = pi_a_rates(self._spec(), self.a, self.N - 1).rates
        if X is not None:
            self.n_features_in_ = as_matrix(X, "X", nonneg=True).shape[1]
        return self

    def _initial(self, X):
        X = as_matrix(X, "X", nonneg=True)
        width = self.N - 1
        if X.shape[1] > width:
            raise DomainError(f"rows carry {X.shape[1]} gaps but the system only has {width}")
        return X

    def simulate(self, n_replicas, eps_ladder=()):
        """Trajectory started from the stationary law; see :func:`simulate_gap_paths`."""
        if not hasattr(self, "config_"):
            self.fit()
        return simulate_gap_paths(self._spec(), self.a, self.config_, eps_ladder, n_replicas)

    def transform(self, X):
        if not hasattr(self, "config_"):
            self.fit()
        X = self._initial(X)
        full = np.empty((X.shape[0], self.N - 1))
        full[:, :X.shape[1]] = X
        if X.shape[1] < self.N - 1:
            upper = ProductLaw.exponential(self.rates_[X.shape[1]:])
            for r in range(X.shape[0]):
                full[r, X.shape[1]:] = sample_gaps(upper, replica_stream(self.seed, r, AUX))
        return simulate_gap_paths(self._spec(), full, self.config_, (), X.shape[0]).terminal_gaps


class LocalTimeEstimator(BaseEstimator):
    """Collision local-time rates ``nu_1 .. nu_k`` from a simulated trajectory.

    ``fit(trajectory)`` stores ``nu_`` and ``nu_stderr_``; ``eps_ladder=None``
    uses every occupation threshold the trajectory recorded.
    """

    def __init__(self, k=3, eps_ladder=None, method="quadratic"):
        self.k = k
        self.eps_ladder = eps_ladder
        self.method = method

    def fit(self, X, y=None):
        if not isinstance(X, GapTrajectory):
            raise DomainError("LocalTimeEstimator.fit expects a GapTrajectory")
        self.estimates_ = [estimate_nu(X, i, self.eps_ladder, self.method) for i in range(1, self.k + 1)]
        self.nu_ = np.array([e.extrapolated for e in self.estimates_])
        self.nu_stderr_ = np.array([e.stderr for e in self.estimates_])
        return self

    def relative_error(self, targets):
        check_is_fitted(self, "nu_")
        return self.nu_ / as_vector(targets, "targets", positive=True) - 1.0
