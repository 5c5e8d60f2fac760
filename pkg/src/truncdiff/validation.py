"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import NumericError, ParameterError


def check_batch(X, *, name="X", n_features=None, copy=False) -> np.ndarray:
    """Return ``X`` as a finite float64 array of shape (n, d).

    1-D input is treated as a single point.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    try:
        arr = check_array(arr, dtype=np.float64, copy=copy, ensure_all_finite=True,
                          ensure_min_features=1, input_name=name)
    except ValueError as exc:
        raise ParameterError(f"{name}: {exc}") from exc
    if n_features is not None and arr.shape[1] != n_features:
        raise ParameterError(f"{name} has {arr.shape[1]} features, expected {n_features}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {names[0]}{a.shape} vs {names[1]}{b.shape}")


def check_int(value, name, *, low=None, high=None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ParameterError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise ParameterError(f"{name}={value} is below the minimum {low}")
    if high is not None and value > high:
        raise ParameterError(f"{name}={value} exceeds the maximum {high}")
    return value


def check_positive(value, name) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ParameterError(f"{name} must be a positive finite real, got {value!r}")
    return float(value)


def check_finite(arr: np.ndarray, what: str, *, step=None) -> None:
    """Raise :class:`NumericError` naming the first bad row of ``arr``."""
    bad = ~np.isfinite(arr)
    if bad.any():
        index = int(np.argwhere(bad.reshape(len(arr), -1).any(axis=1))[0, 0])
        where = f" at t={step}" if step is not None else ""
        raise NumericError(f"{what} returned non-finite values{where} (batch index {index})",
                           step=step, index=index)


def check_rng(random_state) -> np.random.Generator:
    """Turn None, an int seed, a SeedSequence or a Generator into a Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(random_state)
    raise ParameterError(f"cannot build a random generator from {random_state!r}")
