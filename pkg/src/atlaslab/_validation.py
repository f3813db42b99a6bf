"""Input checks shared across modules, thin wrappers over scikit-learn's."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array, check_scalar

from .errors import ConfigError, DomainError


def as_real(x, name, *, min_val=None, max_val=None, include_boundaries="both", error=ConfigError):
    """Validate a real scalar and return it as ``float``."""
    try:
        check_scalar(x, name, numbers.Real, min_val=min_val, max_val=max_val,
                     include_boundaries=include_boundaries)
    except (TypeError, ValueError) as exc:
        raise _wrap(error, exc, name) from exc
    x = float(x)
    if not np.isfinite(x):
        raise _wrap(error, ValueError(f"{name} must be finite, got {x}"), name)
    return x


def as_int(x, name, *, min_val=None, max_val=None, error=ConfigError):
    if isinstance(x, bool):
        raise _wrap(error, TypeError(f"{name} must be an integer, got bool"), name)
    try:
        check_scalar(x, name, numbers.Integral, min_val=min_val, max_val=max_val)
    except (TypeError, ValueError) as exc:
        raise _wrap(error, exc, name) from exc
    return int(x)


def as_vector(x, name, *, nonneg=False, positive=False, error=DomainError, min_len=1):
    """1-D finite float array."""
    try:
        arr = check_array(np.asarray(x, dtype=float).reshape(1, -1), ensure_2d=True,
                          ensure_min_features=min_len, input_name=name).ravel()
    except ValueError as exc:
        raise _wrap(error, exc, name) from exc
    if positive and np.any(arr <= 0):
        raise _wrap(error, ValueError(f"{name} must be strictly positive"), name)
    if nonneg and np.any(arr < 0):
        raise _wrap(error, ValueError(f"{name} must be nonnegative"), name)
    return arr


def as_matrix(x, name, *, nonneg=False, error=DomainError):
    try:
        arr = check_array(x, dtype=float, input_name=name)
    except ValueError as exc:
        raise _wrap(error, exc, name) from exc
    if nonneg and np.any(arr < 0):
        raise _wrap(error, ValueError(f"{name} must be nonnegative"), name)
    return arr


def _wrap(error, exc, name):
    if error is ConfigError:
        return ConfigError(str(exc), field=name)
    return error(str(exc))
