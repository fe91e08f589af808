"""
Disturbance catalog and the exact discrete plant inputs.

The perturbation φ is the antiderivative of Δ with φ(0) = phi0. The discrete
plant state φ̄_k is the mean of φ over [kh, (k+1)h) and the virtual input is
Δ̄_k = (φ̄_{k+1} - φ̄_k)/h. Both are evaluated in closed form from the second
antiderivative of Δ. All functions accept scalar or array time / step index.
"""

import math
from typing import Union

import numpy as np
from numpy.typing import ArrayLike

from app.core.errors import ConfigurationError
from app.schemas.schemas import DisturbanceKind, DisturbanceSignal, SignalName

Number = Union[float, np.ndarray]


def _scalar(value: np.ndarray) -> Number:
    return float(value) if np.ndim(value) == 0 else value


_SIN_TERMS = [(1.2, 2.0), (0.4 * math.sqrt(10.0), math.sqrt(10.0))]


def signal_from_name(name: str) -> DisturbanceSignal:
    """
    Look up a catalog disturbance.

    Args:
        name (str): One of "zero", "step", "sin-offset5", "sin".

    Returns:
        DisturbanceSignal: Signal with φ(0) = 0.

    Raises:
        ConfigurationError: Unknown name.
    """
    try:
        key = SignalName(name)
    except ValueError:
        raise ConfigurationError(f"unknown signal '{name}'") from None
    if key is SignalName.ZERO:
        return DisturbanceSignal.zero()
    if key is SignalName.STEP:
        return DisturbanceSignal.step(t0=1.0, level=1.0)
    if key is SignalName.SIN_OFFSET5:
        return DisturbanceSignal.sinusoid_mix(_SIN_TERMS, offset=5.0)
    return DisturbanceSignal.sinusoid_mix(_SIN_TERMS)


def delta_of_t(signal: DisturbanceSignal, t: ArrayLike) -> Number:
    """Pointwise disturbance Δ(t)."""
    t = np.asarray(t, dtype=float)
    if signal.kind is DisturbanceKind.ZERO:
        return _scalar(np.zeros_like(t))
    if signal.kind is DisturbanceKind.STEP:
        return _scalar(np.where(t >= signal.t0, signal.level, 0.0))
    out = np.full_like(t, signal.offset)
    for term in signal.terms:
        out = out + term.amplitude * np.cos(term.omega * t)
    return _scalar(out)


def phi_of_t(signal: DisturbanceSignal, t: ArrayLike) -> Number:
    """
    Perturbation φ(t), the antiderivative of Δ with φ(0) = phi0.

    Args:
        signal (DisturbanceSignal): Disturbance description.
        t (ArrayLike): Time in seconds, t >= 0.

    Returns:
        Number: φ(t).
    """
    t = np.asarray(t, dtype=float)
    if signal.kind is DisturbanceKind.ZERO:
        return _scalar(np.full_like(t, signal.phi0))
    if signal.kind is DisturbanceKind.STEP:
        return _scalar(signal.phi0 + signal.level * np.maximum(0.0, t - signal.t0))
    out = signal.phi0 + signal.offset * t
    for term in signal.terms:
        out = out + term.amplitude / term.omega * np.sin(term.omega * t)
    return _scalar(out)


def phi_bar(signal: DisturbanceSignal, k: ArrayLike, h: float) -> Number:
    """
    Interval average φ̄_k = (1/h)∫_{kh}^{(k+1)h} φ(τ)dτ in closed form.

    Args:
        signal (DisturbanceSignal): Disturbance description.
        k (ArrayLike): Step index (or indices), k >= 0.
        h (float): Discretization time in seconds.

    Returns:
        Number: φ̄_k.
    """
    k = np.asarray(k, dtype=float)
    a = k * h
    b = (k + 1) * h
    if signal.kind is DisturbanceKind.ZERO:
        return _scalar(np.full_like(k, signal.phi0))
    if signal.kind is DisturbanceKind.STEP:
        # ∫ max(0, τ - t0) dτ = R(b) - R(a), R(t) = max(0, t - t0)²/2, exact across the kink
        ramp_b = np.maximum(0.0, b - signal.t0)
        ramp_a = np.maximum(0.0, a - signal.t0)
        return _scalar(signal.phi0 + signal.level * (ramp_b - ramp_a) * (ramp_b + ramp_a) / (2 * h))
    out = signal.phi0 + signal.offset * h * (2 * k + 1) / 2
    for term in signal.terms:
        w = term.omega
        # cos(wa) - cos(wb) = 2 sin(w(a+b)/2) sin(wh/2)
        out = out + term.amplitude / w**2 * 2 * np.sin(w * (a + b) / 2) * np.sin(w * h / 2) / h
    return _scalar(out)


def delta_bar(signal: DisturbanceSignal, k: ArrayLike, h: float) -> Number:
    """
    Virtual discrete input Δ̄_k = (φ̄_{k+1} - φ̄_k)/h.

    Evaluated as (1/h²)∫_{kh}^{(k+1)h} [φ(τ+h) - φ(τ)]dτ term by term instead of
    differencing φ̄, whose values grow with k.

    Args:
        signal (DisturbanceSignal): Disturbance description.
        k (ArrayLike): Step index (or indices), k >= 0.
        h (float): Discretization time in seconds.

    Returns:
        Number: Δ̄_k, bounded by lipschitz_bound(signal).
    """
    k = np.asarray(k, dtype=float)
    if signal.kind is DisturbanceKind.ZERO:
        return _scalar(np.zeros_like(k))
    if signal.kind is DisturbanceKind.STEP:
        # position of the onset relative to the interval, in units of h; the
        # averaged ramp increment is piecewise quadratic in it and lies in [0, 1]
        d = k + 1 - signal.t0 / h
        share = np.where(
            d >= 1.0,
            1.0,
            np.where(d >= 0.0, 1.0 - (1.0 - d) ** 2 / 2, np.where(d > -1.0, (1.0 + d) ** 2 / 2, 0.0)),
        )
        return _scalar(signal.level * share)
    out = np.full_like(k, signal.offset)
    for term in signal.terms:
        w = term.omega
        half = np.sin(w * h / 2) / (w * h / 2)
        out = out + term.amplitude * half**2 * np.cos(w * (k + 1) * h)
    return _scalar(out)


def lipschitz_bound(signal: DisturbanceSignal) -> float:
    """
    Closed-form bound L on |Δ|: Σ|A| + |offset| for sinusoid mixes, |level| for steps.
    """
    if signal.kind is DisturbanceKind.ZERO:
        return 0.0
    if signal.kind is DisturbanceKind.STEP:
        return abs(signal.level)
    return float(sum(abs(term.amplitude) for term in signal.terms) + abs(signal.offset))
