"""
Closed-loop simulation of the exactly discretized plant

    x1_{k+1} = x1_k + h·u_k + h·φ̄_k,    φ̄_{k+1} = φ̄_k + h·Δ̄_k

under any controller variant, the scalar metrics t_C and e_f, parameter
sweeps and the fine-step continuous-time reference trajectory.

A single kernel advances a batch of parameter points at once: a recorded run
is a batch of one, a sweep chunk is a batch of up to SWEEP_CHUNK points with a
shared h and disturbance sequence. Chunks run on a thread pool and are merged
by axis index.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from app.config.settings import settings
from app.core.errors import ConfigurationError, DivergenceError, ParameterError, UndefinedMetricError
from app.core.functions import sgnpow
from app.schemas.schemas import (
    ControllerVariant,
    DisturbanceSignal,
    GainSet,
    SimConfig,
    SimTrace,
    SweepAxis,
    SweepMetric,
    SweepTable,
    VirtualState,
)
from app.services import controllers, disturbances

logger = logging.getLogger(__name__)

DEFAULT_TAIL_START = 15.0
DEFAULT_RATIO = 0.01


class _BatchResult(NamedTuple):
    x1: Optional[np.ndarray]  # (steps+1, n) when recorded
    nu: Optional[np.ndarray]
    u: Optional[np.ndarray]
    last_exceed: np.ndarray  # last k with |x1| above the t_C threshold, -1 if none
    tail_max: np.ndarray  # max |x1| over k >= tail index
    diverged_at: np.ndarray  # first diverged step, -1 if finite


def _tail_index(tail_start: float, h: float) -> int:
    return int(math.ceil(tail_start / h - 1e-9))


def _simulate_batch(
    variant: ControllerVariant,
    h: float,
    alpha: np.ndarray,
    beta: np.ndarray,
    gamma: Optional[np.ndarray],
    phi: np.ndarray,
    x1_0: float,
    nu_0: float,
    steps: int,
    record: bool,
    threshold: float = 0.0,
    tail_index: int = 0,
    limit: Optional[float] = None,
) -> _BatchResult:
    limit = settings.DIVERGENCE_LIMIT if limit is None else limit
    n = len(alpha)
    x1 = np.full(n, float(x1_0))
    nu = np.full(n, float(nu_0))
    alive = np.ones(n, dtype=bool)
    diverged_at = np.full(n, -1)
    last_exceed = np.full(n, -1)
    tail_max = np.zeros(n)
    rec_x1 = np.empty((steps + 1, n)) if record else None
    rec_nu = np.empty((steps + 1, n)) if record else None
    rec_u = np.empty((steps + 1, n)) if record else None

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps + 1):
            u, nu_next = controllers.step_arrays(variant, x1, nu, alpha, beta, h, gamma)
            if record:
                rec_x1[k], rec_nu[k], rec_u[k] = x1, nu, u
            magnitude = np.abs(x1)
            last_exceed = np.where(magnitude > threshold, k, last_exceed)
            if k >= tail_index:
                tail_max = np.maximum(tail_max, magnitude)
            if k == steps:
                break
            x1_next = x1 + h * u + h * phi[k]
            x2_next = nu_next + phi[k + 1]
            finite = (np.abs(x1_next) <= limit) & (np.abs(x2_next) <= limit)
            newly = alive & ~finite
            if newly.any():
                diverged_at[newly] = k + 1
                alive &= finite
                if record:
                    rec_x1, rec_nu, rec_u = rec_x1[: k + 1], rec_nu[: k + 1], rec_u[: k + 1]
                    break
            x1 = np.where(alive, x1_next, 0.0)
            nu = np.where(alive, nu_next, 0.0)
    return _BatchResult(rec_x1, rec_nu, rec_u, last_exceed, tail_max, diverged_at)


def _gamma_for(variant: ControllerVariant, gains: GainSet) -> Optional[float]:
    if variant is ControllerVariant.HANAN and gains.gamma is None:
        raise ConfigurationError("the hanan controller needs gamma")
    return gains.gamma


def run_closed_loop(cfg: SimConfig) -> SimTrace:
    """
    Simulate the closed loop of the discrete plant and one controller variant.

    Args:
        cfg (SimConfig): Variant, gains, disturbance, initial conditions and horizon.

    Returns:
        SimTrace: Samples k = 0..N of t, x1, φ̄, ν, x2, u and Δ̄.

    Raises:
        ConfigurationError: Hanan variant without gamma.
        DivergenceError: |x1| or |x2| exceeded the divergence limit; carries the
            step index and the trace recorded before it.
    """
    h = cfg.gains.h
    steps = cfg.steps
    gamma = _gamma_for(cfg.variant, cfg.gains)
    phi = np.asarray(disturbances.phi_bar(cfg.signal, np.arange(steps + 2), h), dtype=float)
    delta = np.asarray(disturbances.delta_bar(cfg.signal, np.arange(steps + 1), h), dtype=float)
    logger.debug(f"run {cfg.variant.value}: {cfg.gains} for {steps} steps")
    result = _simulate_batch(
        cfg.variant,
        h,
        np.array([cfg.gains.alpha]),
        np.array([cfg.gains.beta]),
        None if gamma is None else np.array([gamma]),
        phi,
        cfg.x1_0,
        cfg.nu_0,
        steps,
        record=True,
    )
    count = len(result.x1)
    trace = SimTrace(
        h=h,
        variant=cfg.variant,
        t=np.arange(count) * h,
        x1=result.x1[:, 0],
        phi_bar=phi[:count],
        nu=result.nu[:, 0],
        x2=result.nu[:, 0] + phi[:count],
        u=result.u[:, 0],
        delta_bar=delta[:count],
    )
    if result.diverged_at[0] >= 0:
        logger.warning(f"{cfg.variant.value} diverged at step {result.diverged_at[0]}")
        raise DivergenceError(int(result.diverged_at[0]), trace)
    return trace


def convergence_time(trace: SimTrace, ratio: float = DEFAULT_RATIO) -> Optional[float]:
    """
    Earliest grid time after which |x1| stays within ratio·|x1(0)|.

    Args:
        trace (SimTrace): Recorded run.
        ratio (float): Threshold relative to the initial magnitude.

    Returns:
        Optional[float]: t_C in seconds, None if the threshold is still violated
            at the end of the horizon.

    Raises:
        UndefinedMetricError: If the trace is empty or x1(0) = 0.
    """
    if len(trace) == 0:
        raise UndefinedMetricError("convergence time of an empty trace")
    if trace.x1[0] == 0:
        raise UndefinedMetricError("convergence time is undefined for x1(0) = 0")
    exceed = np.flatnonzero(np.abs(trace.x1) > ratio * abs(trace.x1[0]))
    if exceed.size == 0:
        return 0.0
    last = int(exceed[-1])
    if last == len(trace) - 1:
        return None
    return float(trace.t[last + 1])


def steady_state_error(trace: SimTrace, tail_start: float = DEFAULT_TAIL_START) -> float:
    """
    Finite-horizon surrogate of limsup |x1|: max |x1| over t >= tail_start.

    Raises:
        UndefinedMetricError: If no sample lies in the tail.
    """
    tail = trace.x1[_tail_index(tail_start, trace.h):]
    if tail.size == 0:
        raise UndefinedMetricError(f"no samples after t = {tail_start} s")
    return float(np.max(np.abs(tail)))


def lambda_gains(Lambda: float, base: GainSet) -> GainSet:
    """Gains from the single tuning value Λ: α = 1.5√Λ, β = 1.1Λ."""
    return base.replace(alpha=1.5 * math.sqrt(Lambda), beta=1.1 * Lambda)


def _point_gains(base: GainSet, axis: SweepAxis, value: float) -> GainSet:
    if axis is SweepAxis.ALPHA:
        return base.replace(alpha=value)
    if axis is SweepAxis.BETA:
        return base.replace(beta=value)
    if axis is SweepAxis.LAMBDA:
        return lambda_gains(value, base)
    return base.replace(h=value)


def _metric_values(
    result: _BatchResult, metric: SweepMetric, h: float, steps: int
) -> List[Optional[float]]:
    out: List[Optional[float]] = []
    for last, tail, diverged in zip(result.last_exceed, result.tail_max, result.diverged_at):
        if diverged >= 0:
            out.append(None)
        elif metric is SweepMetric.STEADY_STATE_ERROR:
            out.append(float(tail))
        elif last == steps:
            out.append(None)
        else:
            out.append(float((last + 1) * h))
    return out


def _run_chunk(
    base: SimConfig,
    points: Sequence[GainSet],
    metric: SweepMetric,
    ratio: float,
    tail_start: float,
) -> List[Optional[float]]:
    h = points[0].h
    steps = int(math.floor(base.horizon_T / h + 1e-9))
    phi = np.asarray(disturbances.phi_bar(base.signal, np.arange(steps + 2), h), dtype=float)
    gamma = None
    if base.variant is ControllerVariant.HANAN:
        gamma = np.array([g.gamma for g in points])
    result = _simulate_batch(
        base.variant,
        h,
        np.array([g.alpha for g in points]),
        np.array([g.beta for g in points]),
        gamma,
        phi,
        base.x1_0,
        base.nu_0,
        steps,
        record=False,
        threshold=ratio * abs(base.x1_0),
        tail_index=_tail_index(tail_start, h),
    )
    logger.debug(f"chunk of {len(points)} points at h={h} done")
    return _metric_values(result, metric, h, steps)


def sweep(
    base: SimConfig,
    axis: SweepAxis,
    values: Sequence[float],
    metric: SweepMetric,
    tail_start: float = DEFAULT_TAIL_START,
    ratio: float = DEFAULT_RATIO,
    hanan_G: Optional[float] = None,
    max_workers: Optional[int] = None,
) -> SweepTable:
    """
    Evaluate one metric of one variant over a parameter axis.

    Args:
        base (SimConfig): Run settings; the swept gain is overwritten per point.
        axis (SweepAxis): alpha, beta, lambda (α = 1.5√Λ, β = 1.1Λ) or h.
        values (Sequence[float]): Strictly increasing axis values.
        metric (SweepMetric): t_C or e_f.
        tail_start (float): Start of the e_f window in seconds.
        ratio (float): t_C threshold relative to |x1(0)|.
        hanan_G (Optional[float]): Safety factor of the γ rule; the Hanan variant
            recomputes γ at every point.
        max_workers (Optional[int]): Thread cap, defaults to settings.THREADS.

    Returns:
        SweepTable: One metric per value; divergence or an unmet threshold gives None.

    Raises:
        UndefinedMetricError: t_C with x1(0) = 0, or e_f with tail_start beyond the horizon.
    """
    axis, metric = SweepAxis(axis), SweepMetric(metric)
    values = [float(v) for v in values]
    if not values:
        raise ParameterError("sweep needs at least one value")
    if metric is SweepMetric.CONVERGENCE_TIME and base.x1_0 == 0:
        raise UndefinedMetricError("convergence time is undefined for x1(0) = 0")
    if metric is SweepMetric.STEADY_STATE_ERROR and tail_start >= base.horizon_T:
        raise UndefinedMetricError(f"tail start {tail_start} s is not before the horizon")

    G = settings.HANAN_G if hanan_G is None else hanan_G
    points = [_point_gains(base.gains, axis, v) for v in values]
    if base.variant is ControllerVariant.HANAN:
        points = [controllers.with_hanan_gamma(g, G) for g in points]

    if axis is SweepAxis.H:
        chunks = [[g] for g in points]
    else:
        size = max(1, settings.SWEEP_CHUNK)
        chunks = [points[i:i + size] for i in range(0, len(points), size)]

    workers = max(1, min(max_workers or settings.THREADS, len(chunks)))
    logger.info(
        f"sweep {base.variant.value} over {axis.value} ({len(values)} points, "
        f"{len(chunks)} chunks, {workers} threads) for {metric.value}"
    )
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, base, chunk, metric, ratio, tail_start) for chunk in chunks]
        column = [value for future in futures for value in future.result()]

    missing = sum(value is None for value in column)
    if missing:
        logger.warning(f"sweep {base.variant.value}: {missing} of {len(column)} points without {metric.value}")
    return SweepTable(axis=axis, metric=metric, values=values, results={base.variant: column})


def continuous_rhs(x1: float, x2: float, delta: float, alpha: float, beta: float) -> Tuple[float, float]:
    """Right-hand side of the continuous super-twisting closed loop at one point."""
    s = (x1 > 0) - (x1 < 0)
    return -alpha * s * math.sqrt(abs(x1)) + x2, -beta * s + delta


def continuous_reference(
    gains: GainSet,
    signal: DisturbanceSignal,
    x0: VirtualState,
    fine_h: float = 1e-5,
    horizon_T: float = 5.0,
    record_h: Optional[float] = None,
) -> SimTrace:
    """
    Forward-Euler integration of the continuous super-twisting closed loop

        dx1/dt = -α·⌈x1⌋^½ + x2,   dx2/dt = -β·sign(x1) + Δ(t)

    with a fine step, recorded on a coarser grid.

    Args:
        gains (GainSet): α and β of the continuous controller; h is the default record step.
        signal (DisturbanceSignal): Disturbance Δ(t).
        x0 (VirtualState): Initial (x1, x2).
        fine_h (float): Integration step, much smaller than gains.h.
        horizon_T (float): Simulated time in seconds.
        record_h (Optional[float]): Record step, an integer multiple of fine_h.

    Returns:
        SimTrace: Reference trajectory; phi_bar holds φ(t), delta_bar holds Δ(t).

    Raises:
        ParameterError: If record_h is not a multiple of fine_h.
        DivergenceError: If the state leaves the finite region.
    """
    record_h = gains.h if record_h is None else record_h
    every = int(round(record_h / fine_h))
    if every < 1 or abs(every * fine_h - record_h) > 1e-9 * record_h:
        raise ParameterError(f"record step {record_h} is not a multiple of {fine_h}")
    n = int(math.floor(horizon_T / fine_h + 1e-9))
    delta = np.asarray(disturbances.delta_of_t(signal, np.arange(n) * fine_h), dtype=float).tolist()
    alpha, beta, limit = gains.alpha, gains.beta, settings.DIVERGENCE_LIMIT

    x1, x2 = x0.x1, x0.x2
    rec_x1: List[float] = []
    rec_x2: List[float] = []
    for i in range(n + 1):
        if i % every == 0:
            if not (abs(x1) <= limit and abs(x2) <= limit):
                raise DivergenceError(i)
            rec_x1.append(x1)
            rec_x2.append(x2)
        if i == n:
            break
        dx1, dx2 = continuous_rhs(x1, x2, delta[i], alpha, beta)
        x1, x2 = x1 + fine_h * dx1, x2 + fine_h * dx2

    t = np.arange(len(rec_x1)) * record_h
    x1_arr = np.array(rec_x1)
    x2_arr = np.array(rec_x2)
    phi = np.asarray(disturbances.phi_of_t(signal, t), dtype=float)
    nu = x2_arr - phi
    return SimTrace(
        h=record_h,
        variant=None,
        t=t,
        x1=x1_arr,
        phi_bar=phi,
        nu=nu,
        x2=x2_arr,
        u=-alpha * sgnpow(x1_arr, 0.5) + nu,
        delta_bar=np.asarray(disturbances.delta_of_t(signal, t), dtype=float),
    )


def trajectory_deviation(trace: SimTrace, reference: SimTrace) -> float:
    """
    Largest max-norm distance from a coarse (x1, x2) sample to the reference curve.

    The distance is taken in the phase plane, so a run that reaches the origin
    ahead of the reference is not penalized for the timing offset. The reference
    should be recorded finely enough that its samples resolve the curve.

    Raises:
        ParameterError: If either trajectory is empty.
    """
    if len(trace) == 0 or len(reference) == 0:
        raise ParameterError("trajectory deviation needs non-empty trajectories")
    tree = cKDTree(np.column_stack([reference.x1, reference.x2]))
    distance, _ = tree.query(np.column_stack([trace.x1, trace.x2]), p=np.inf)
    return float(np.max(distance))
