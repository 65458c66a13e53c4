"""Small input-validation helpers used by the estimators and operators."""

import numpy as np

from .errors import DimensionError


def as_float_array(x, name="array", ndim=None, shape=None, copy=False):
    """Coerce ``x`` to a float64 ndarray and optionally check its shape.

    Parameters
    ----------
    x : array-like
    name : str
        Used in error messages.
    ndim : int, optional
        Required number of dimensions.
    shape : tuple, optional
        Required shape; entries set to ``None`` are unconstrained.
    copy : bool
        Force a copy even when ``x`` is already float64.
    """
    arr = np.array(x, dtype=np.float64, copy=True) if copy else np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if shape is not None:
        if len(shape) != arr.ndim:
            raise DimensionError(f"{name} must have shape {shape}, got {arr.shape}")
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise DimensionError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


def check_finite(x, name="array"):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")


def check_positive(x, name="array", strict=True):
    x = np.asarray(x)
    if strict and not np.all(x > 0):
        raise ValueError(f"{name} must be strictly positive")
    if not strict and not np.all(x >= 0):
        raise ValueError(f"{name} must be nonnegative")


def check_ray_pairs(x, name="X"):
    """Validate an (n_rays, 2) array of per-ray value pairs."""
    arr = as_float_array(x, name=name, ndim=2)
    if arr.shape[1] != 2:
        raise DimensionError(f"{name} must have two columns (one per source), got {arr.shape}")
    check_finite(arr, name)
    return arr
