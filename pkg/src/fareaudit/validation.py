"""Input validation helpers shared by the estimators."""

import numpy as np

from .exceptions import ContractError, DataError


def as_design(X, name="X"):
    """Coerce to a finite 2-D float array."""
    try:
        arr = np.asarray(X, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{name} is not numeric: {exc}") from None
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got {arr.ndim} dimensions")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def as_target(y, n_rows=None, name="y"):
    """Coerce to a finite 1-D float array, optionally of a given length."""
    try:
        arr = np.asarray(y, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{name} is not numeric: {exc}") from None
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr.ravel()
    if arr.ndim != 1:
        raise ContractError(f"{name} must be 1-D")
    if n_rows is not None and len(arr) != n_rows:
        raise ContractError(f"{name} has {len(arr)} rows, expected {n_rows}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def take(seq, indices):
    """Index a numpy array or a plain sequence by an integer index array."""
    if isinstance(seq, np.ndarray):
        return seq[indices]
    return [seq[i] for i in indices]
