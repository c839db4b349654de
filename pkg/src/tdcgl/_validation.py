"""Input validation helpers shared by the estimators and functional core."""

import numpy as np

from .errors import GridError

MIN_POINTS = 5


def check_field(values, name="field", dtype=float, allow_complex=False):
    """Return ``values`` as a finite square 2-D array with at least 5 points a side."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise GridError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] != arr.shape[1]:
        raise GridError(f"{name} must be square, got shape {arr.shape}")
    if arr.shape[0] < MIN_POINTS:
        raise GridError(f"{name} needs at least {MIN_POINTS} points per side, got {arr.shape[0]}")
    if np.iscomplexobj(arr):
        if not allow_complex:
            raise GridError(f"{name} must be real-valued")
        arr = arr.astype(complex, copy=False)
    else:
        arr = arr.astype(dtype, copy=False)
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{name} contains non-finite values")
    return arr


def check_same_shape(*arrays, names=None):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        names = names or [f"array {i}" for i in range(len(arrays))]
        detail = ", ".join(f"{n}={np.shape(a)}" for n, a in zip(names, arrays))
        raise GridError(f"mismatched field shapes: {detail}")


def check_positive_field(values, name="intensity"):
    arr = check_field(values, name)
    if np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive (min {arr.min():.3e})")
    return arr


def check_spacing(h):
    h = float(h)
    if not np.isfinite(h) or h <= 0:
        raise ValueError(f"grid spacing must be positive, got {h}")
    return h
