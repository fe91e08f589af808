"""
Discrete-time super-twisting controllers.

Every variant is written in the common form

    u_k      = -α·Ψ1 + ν_{k+1}
    ν_{k+1}  =  ν_k - h·β·Ψ2

and differs only in the function pair (Ψ1, Ψ2). The pair functions take numpy
arrays for x1, ν and the gains so that the simulator can advance a whole batch
of parameter points with one call.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike

from app.core.errors import ConfigurationError, ParameterError
from app.core.functions import sat, sgnpow, sign
from app.schemas.schemas import ControllerState, ControllerVariant, GainSet

logger = logging.getLogger(__name__)

DEFAULT_HANAN_G = 1.5**2 / 1.1**2
KOCH_IMAG_TOLERANCE = 1e-10


def _psi_explicit(x1, nu, alpha, beta, h, gamma):
    return sgnpow(x1, 0.5), sgnpow(x1, 0)


def _psi_brogliato(x1, nu, alpha, beta, h, gamma):
    # the implicit solve runs on the sliding variable x1 + hν
    s = x1 + h * nu
    band = h**2 * beta
    half = h * alpha / 2
    psi1 = sign(s) * (-half + np.sqrt((h * alpha) ** 2 / 4 + np.maximum(0.0, np.abs(s) - band)))
    return psi1, sat(s / band)


def _psi_koch(x1, nu, alpha, beta, h, gamma):
    x1 = np.asarray(x1, dtype=float)
    p1, p2 = _koch_poles(alpha, beta)
    magnitude = np.abs(x1)
    at_origin = magnitude == 0
    scale = h / np.sqrt(np.where(at_origin, 1.0, magnitude))
    e1 = np.exp(p1 * scale)
    e2 = np.exp(p2 * scale)
    product = (e1 - 1) * (e2 - 1)
    total = e1 + e2 - 2
    residue = max(np.max(np.abs(product.imag), initial=0.0), np.max(np.abs(total.imag), initial=0.0))
    if residue >= KOCH_IMAG_TOLERANCE:
        raise ParameterError(f"Koch functions have imaginary residue {residue:.3e}")
    psi2 = product.real * x1 / (h**2 * beta)
    psi1 = -total.real * x1 / (alpha * h) - h * beta / alpha * psi2
    psi1 = np.where(at_origin, 0.0, psi1)
    psi2 = np.where(at_origin, 0.0, psi2)
    return psi1, psi2


def _psi_xiong(x1, nu, alpha, beta, h, gamma):
    magnitude = np.abs(x1)
    wide = h * alpha * np.sqrt(magnitude) + h**2 * beta
    D = np.where(magnitude > wide, wide, h**2 * beta)
    psi2 = sat(x1 / D)
    return D * psi2 / (h * alpha), psi2


def _psi_hanan(x1, nu, alpha, beta, h, gamma):
    if gamma is None:
        raise ConfigurationError("the hanan controller needs gamma")
    band = gamma * h**2
    psi2 = sat(x1 / band)
    psi1 = np.sqrt(sat(np.abs(x1) / band)) * sgnpow(x1, 0.5) - h * beta / alpha * psi2
    return psi1, psi2


def _psi_proposed(x1, nu, alpha, beta, h, gamma):
    magnitude = np.abs(x1)
    band = h**2 * beta
    psi1 = sign(x1) * (
        h * beta / alpha * sat(magnitude / band)
        - h * alpha / 2
        + np.sqrt((h * alpha) ** 2 / 4 + np.maximum(0.0, magnitude - band))
    )
    return psi1, sat(x1 / band)


_PSI = {
    ControllerVariant.EXPLICIT: _psi_explicit,
    ControllerVariant.BROGLIATO: _psi_brogliato,
    ControllerVariant.KOCH: _psi_koch,
    ControllerVariant.XIONG: _psi_xiong,
    ControllerVariant.HANAN: _psi_hanan,
    ControllerVariant.PROPOSED: _psi_proposed,
}


def evaluate_psi(
    variant: ControllerVariant,
    x1: ArrayLike,
    nu: ArrayLike,
    alpha: ArrayLike,
    beta: ArrayLike,
    h: float,
    gamma: Optional[ArrayLike] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized (Ψ1, Ψ2) of a variant; gains may be arrays broadcasting with x1."""
    return _PSI[ControllerVariant(variant)](x1, nu, alpha, beta, h, gamma)


def step_arrays(
    variant: ControllerVariant,
    x1: ArrayLike,
    nu: ArrayLike,
    alpha: ArrayLike,
    beta: ArrayLike,
    h: float,
    gamma: Optional[ArrayLike] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized controller update returning (u_k, ν_{k+1})."""
    psi1, psi2 = evaluate_psi(variant, x1, nu, alpha, beta, h, gamma)
    nu_next = nu - h * beta * psi2
    return -alpha * psi1 + nu_next, nu_next


def psi_pair(variant: ControllerVariant, x1: ArrayLike, nu: ArrayLike, gains: GainSet):
    """
    Controller function pair of a variant.

    Args:
        variant (ControllerVariant): Active discretization.
        x1 (ArrayLike): Sampled sliding variable x1,k (scalar or array).
        nu (ArrayLike): Controller state ν_k; only the Brogliato variant reads it.
        gains (GainSet): Validated gains.

    Returns:
        Tuple: (Ψ1, Ψ2), floats for scalar input.

    Raises:
        ConfigurationError: Hanan variant without gamma.
    """
    psi1, psi2 = evaluate_psi(variant, x1, nu, gains.alpha, gains.beta, gains.h, gains.gamma)
    if np.ndim(psi1) == 0:
        return float(psi1), float(psi2)
    return psi1, psi2


def controller_step(
    variant: ControllerVariant, state: ControllerState, x1: float, gains: GainSet
) -> Tuple[float, ControllerState]:
    """
    One step of the general discrete controller.

    Args:
        variant (ControllerVariant): Active discretization.
        state (ControllerState): Current controller state ν_k.
        x1 (float): Measured x1,k.
        gains (GainSet): Validated gains.

    Returns:
        Tuple[float, ControllerState]: Control u_k and the next state ν_{k+1}.
    """
    psi1, psi2 = psi_pair(variant, x1, state.nu, gains)
    nu_next = state.nu - gains.h * gains.beta * psi2
    return -gains.alpha * psi1 + nu_next, ControllerState(nu=nu_next)


def _koch_poles(alpha: ArrayLike, beta: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    root = np.sqrt(np.asarray(np.asarray(alpha) ** 2 / 4 - beta, dtype=complex))
    return -np.asarray(alpha) / 2 + root, -np.asarray(alpha) / 2 - root


def koch_poles(gains: GainSet) -> Tuple[complex, complex]:
    """
    Poles p1,2 = -α/2 ± sqrt(α²/4 - β) of the matching-approach controller.

    Returns:
        Tuple[complex, complex]: Both roots, a conjugate pair when β > α²/4.
    """
    p1, p2 = _koch_poles(gains.alpha, gains.beta)
    return complex(p1), complex(p2)


def hanan_gamma(gains: GainSet, G: float = DEFAULT_HANAN_G) -> float:
    """
    Band parameter γ of the low-chattering controller.
    The rule keeps the eigenvalues of the linear in-band dynamics in the unit disk.

    Args:
        gains (GainSet): Gains providing α and β.
        G (float): Safety factor, must exceed 1.

    Returns:
        float: γ = G·β²/α² if α < 2√β, else G·α²/4.

    Raises:
        ParameterError: If G <= 1.
    """
    if not G > 1:
        raise ParameterError(f"G must exceed 1, got {G}")
    if gains.alpha < 2 * np.sqrt(gains.beta):
        return float(G * gains.beta**2 / gains.alpha**2)
    return float(G * gains.alpha**2 / 4)


def with_hanan_gamma(gains: GainSet, G: float = DEFAULT_HANAN_G) -> GainSet:
    """Gains with gamma recomputed by hanan_gamma."""
    return gains.replace(gamma=hanan_gamma(gains, G))
