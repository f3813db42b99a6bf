"""Rank-based particle systems with drift: stationary gap laws, collision
local times, synchronous couplings and ergodic checks."""

from .coupling import (CouplingGeometry, build_geometry, event_probabilities, lemcty_search,
                       mirror_reflection, simulate_coupled_pairs, upper_event_bounds)
from .drift import (DriftSpec, StationaryRates, admissible_shift, check_class_D1, in_class_D1,
                    pi_a_rates)
from .dynamics import GapTrajectory, Probe, SimConfig, simulate_gap_paths, truncation_sensitivity
from .ergodic import (Observable, holm_adjust, ks_exponential, rate_mle, stationarity_trend,
                      swap_invariance_test, time_average)
from .errors import (AtlasLabError, CheckFailure, ConfigError, DegenerateDirection, DomainError,
                     GeometryError, InsufficientData, NonpositiveRate)
from .estimators import ExponentialRateEstimator, GapProcessSimulator, LocalTimeEstimator
from .local_time import (check_balance_recursion, check_laplace_identity, check_product_identity,
                         estimate_nu, nu_closed_form)
from .sampler import ProductLaw, kakutani_affinity_product, sample_gaps

__version__ = "0.1.0"

__all__ = [
    "AtlasLabError", "CheckFailure", "ConfigError", "CouplingGeometry", "DegenerateDirection",
    "DomainError", "DriftSpec", "ExponentialRateEstimator", "GapProcessSimulator", "GapTrajectory",
    "GeometryError", "InsufficientData", "LocalTimeEstimator", "NonpositiveRate", "Observable",
    "Probe", "ProductLaw", "SimConfig", "StationaryRates", "admissible_shift", "build_geometry",
    "check_balance_recursion", "check_class_D1", "check_laplace_identity", "check_product_identity",
    "estimate_nu", "event_probabilities", "holm_adjust", "in_class_D1", "kakutani_affinity_product",
    "ks_exponential", "lemcty_search", "mirror_reflection", "nu_closed_form", "pi_a_rates",
    "rate_mle", "sample_gaps", "simulate_coupled_pairs", "simulate_gap_paths", "stationarity_trend",
    "swap_invariance_test", "time_average", "truncation_sensitivity", "upper_event_bounds",
]
