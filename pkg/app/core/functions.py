"""
Scalar math primitives of the discrete-time super-twisting controllers.

All functions are numpy ufunc compositions: they accept a float or an array
and evaluate elementwise, which lets the simulator run a whole batch of
parameter points in one call. The set-valued signum is resolved with the
selection sign(0) = 0 everywhere.
"""

import numpy as np
from numpy.typing import ArrayLike


def sign(x: ArrayLike) -> np.ndarray:
    """Single-valued signum with sign(0) = 0."""
    return np.sign(x)


def sgnpow(x: ArrayLike, y: float) -> np.ndarray:
    """
    Signed power function sign(x)·|x|^y.

    Args:
        x (ArrayLike): Argument, scalar or array.
        y (float): Nonnegative exponent. For y = 0 the result is sign(x).

    Returns:
        np.ndarray: sign(x)·|x|^y, a numpy scalar for scalar input.
    """
    if y == 0:
        return np.sign(x).astype(float)
    return np.sign(x) * np.abs(x) ** y


def sat(x: ArrayLike) -> np.ndarray:
    """
    Saturation function: x for |x| < 1, sign(x) otherwise.

    Args:
        x (ArrayLike): Argument, scalar or array.

    Returns:
        np.ndarray: Saturated value, bounded by 1 in magnitude.
    """
    return np.clip(x, -1.0, 1.0)
