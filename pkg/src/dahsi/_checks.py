"""Input validation helpers shared by the estimator and the I/O layer."""

import numbers

import numpy as np
from sklearn.exceptions import NotFittedError


def check_series(Y, name="Y", min_rows=5):
    """Return ``Y`` as a finite 2-D float array with at least ``min_rows`` rows."""
    arr = np.asarray(Y, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got {arr.ndim} dimensions")
    if arr.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {arr.shape[0]}")
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise ValueError(f"{name} contains NaN or infinite values (first at row {row})")
    return arr


def check_positive(value, name):
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


def check_indices(indices, n_states, n_columns):
    idx = tuple(int(i) for i in indices)
    if len(idx) != n_columns:
        raise ValueError(f"expected {n_columns} measured indices, got {len(idx)}")
    if len(set(idx)) != len(idx) or any(i < 0 or i >= n_states for i in idx):
        raise ValueError(f"measured indices {idx} are invalid for {n_states} states")
    return idx


def check_random_state(seed):
    if seed is None:
        return 0
    if isinstance(seed, (numbers.Integral, np.integer)) and seed >= 0:
        return int(seed)
    raise ValueError(f"random_state must be a non-negative integer, got {seed!r}")


def check_is_fitted(estimator, attribute="model_"):
    if not hasattr(estimator, attribute):
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")
