"""
Numerical audits of the proposed controller's closed loop.

In virtual coordinates (x1, x2) with x2 = ν + φ̄ the proposed controller gives

    x1⁺ = x1 - hαΨ1(x1) - h²βΨ2(x1) + h·x2
    x2⁺ = x2 - hβΨ2(x1) + h·Δ

which is the dead-beat map [[-1, h], [-1/h, 1]] inside the band |x1| <= h²β.
The audits below sample states, step this map and check invariant-set
membership, the two-step identity x1[k+2] = h²Δ[k] and the decrease of the
Lyapunov candidate V = 2β|x1 - h·x2| + x2² outside the invariant set.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike

from app.config.settings import settings
from app.core.errors import DomainError, ParameterError
from app.core.functions import sign
from app.schemas.schemas import (
    ControllerVariant,
    DeadbeatReport,
    DecreaseWitness,
    GainSet,
    InvarianceReport,
    InvariantSetSpec,
    LyapunovCase,
    LyapunovReport,
    VirtualState,
)
from app.services import controllers

logger = logging.getLogger(__name__)

MAX_WITNESSES = 50
_CASES = list(LyapunovCase)


def _in_set(x1: ArrayLike, x2: ArrayLike, h: float, beta: float, tol: float = 0.0) -> np.ndarray:
    band = h**2 * beta + tol
    return (np.abs(x1) <= band) & (np.abs(h * np.asarray(x2) - x1) <= band)


def in_invariant_set(x: VirtualState, spec: InvariantSetSpec) -> bool:
    """Membership in M = {|x1| <= h²β, |h·x2 - x1| <= h²β}, boundary included."""
    return bool(_in_set(x.x1, x.x2, spec.h, spec.beta))


def _lyapunov(x1: ArrayLike, x2: ArrayLike, h: float, beta: float) -> np.ndarray:
    return 2 * beta * np.abs(x1 - h * np.asarray(x2)) + np.asarray(x2) ** 2


def lyapunov(x: VirtualState, gains: GainSet) -> float:
    """Lyapunov candidate V = 2β|x1 - h·x2| + x2²."""
    return float(_lyapunov(x.x1, x.x2, gains.h, gains.beta))


def closed_loop_map(
    x: Union[VirtualState, Tuple[ArrayLike, ArrayLike]], delta: ArrayLike, gains: GainSet
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One step of the proposed controller's closed loop in virtual coordinates.

    Args:
        x (Union[VirtualState, Tuple[ArrayLike, ArrayLike]]): State (x1, x2), scalars or arrays.
        delta (ArrayLike): Virtual disturbance Δ_k, broadcasting with x.
        gains (GainSet): α, β and h.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (x1⁺, x2⁺).
    """
    x1, x2 = (x.x1, x.x2) if isinstance(x, VirtualState) else x
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    alpha, beta, h = gains.alpha, gains.beta, gains.h
    psi1, psi2 = controllers.evaluate_psi(ControllerVariant.PROPOSED, x1, 0.0, alpha, beta, h)
    x1_next = x1 - h * alpha * psi1 - h**2 * beta * psi2 + h * x2
    x2_next = x2 - h * beta * psi2 + h * np.asarray(delta, dtype=float)
    return x1_next, x2_next


def _case_codes(x1: np.ndarray, x2: np.ndarray, h: float, beta: float) -> np.ndarray:
    s = sign(x1)
    in_band = np.abs(x1) <= h**2 * beta
    case1a = (s == sign(x2)) | (x1 == 0)
    z1 = x1 - s * h**2 * beta
    z2 = x2 - s * h * beta
    case2a = s * (z1 - h * z2) >= 0
    return np.where(in_band, np.where(case1a, 0, 1), np.where(case2a, 2, 3))


def classify_case(x: VirtualState, gains: GainSet) -> LyapunovCase:
    """
    Case of the decrease argument that contains a state outside M.

    Case 1 is |x1| <= h²β, split on sign(x1) = sign(x2) or x1 = 0 (1a) versus
    opposite signs (1b). Case 2 uses z1 = x1 - sign(x1)h²β, z2 = x2 - sign(x1)hβ
    and splits on sign(x1)(z1 - h·z2) >= 0 (2a) versus < 0 (2b).

    Raises:
        DomainError: If x lies in M.
    """
    if _in_set(x.x1, x.x2, gains.h, gains.beta):
        raise DomainError(f"state ({x.x1}, {x.x2}) lies in the invariant set")
    code = _case_codes(np.asarray(x.x1), np.asarray(x.x2), gains.h, gains.beta)
    return _CASES[int(code)]


def _beta_bound_terms(L: float, V: float, h: float) -> Dict[str, float]:
    return {
        "4L": 4 * L,
        "(5/7)sqrt(V)/h": 5 / 7 * math.sqrt(V) / h,
        "sqrt(L^2 + 2L sqrt(V)/h^2)": math.sqrt(L**2 + 2 * L * math.sqrt(V) / h**2),
    }


def convergence_beta_bound(L: float, V: float, h: float) -> float:
    """
    Lower bound on β for finite-time convergence to M from V_0 <= V.

    Args:
        L (float): Bound on |Δ|, L >= 0.
        V (float): Lyapunov level containing the initial state, V > 0.
        h (float): Discretization time, h > 0.

    Returns:
        float: max(4L, (5/7)√V/h, √(L² + 2L√V/h²)).
    """
    if L < 0 or V <= 0 or h <= 0:
        raise ParameterError(f"invalid bound arguments L={L}, V={V}, h={h}")
    return max(_beta_bound_terms(L, V, h).values())


def case2_shift(z1: ArrayLike, gains: GainSet) -> np.ndarray:
    """A = hα(-hα/2 + √(h²α²/4 + |z1|)), the shift of z1 applied by the controller."""
    ha = gains.h * gains.alpha
    return ha * (-ha / 2 + np.sqrt(ha**2 / 4 + np.abs(z1)))


def case2_delta_v_bound(z1: ArrayLike, z2: ArrayLike, gains: GainSet, L: float) -> np.ndarray:
    """
    Upper bound of ΔV for |x1| > h²β in the shifted coordinates (z1, z2).
    The expression is even in (z1, z2).
    """
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    h, beta = gains.h, gains.beta
    s = sign(z1)
    A = case2_shift(z1, gains)
    return (
        2 * beta * (np.abs(z1 - s * A) - np.abs(z1 - h * z2))
        + 2 * L * np.abs(z2)
        - 2 * h * beta * s * z2
        - h**2 * beta**2
        + h**2 * L**2
    )


def _sample_exterior(
    rng: np.random.Generator, gains: GainSet, v_budget: float, n: int
) -> Tuple[np.ndarray, np.ndarray]:
    h, beta = gains.h, gains.beta
    radius = math.sqrt(v_budget)
    x1_parts: List[np.ndarray] = []
    x2_parts: List[np.ndarray] = []
    have = 0
    for _ in range(10_000):
        if have >= n:
            break
        m = max(2 * (n - have), 1024)
        x2 = rng.uniform(-radius, radius, m)
        # |x1 - h·x2| <= (V_budget - x2²)/(2β) keeps V <= V_budget
        w = rng.uniform(-1.0, 1.0, m) * (v_budget - x2**2) / (2 * beta)
        x1 = w + h * x2
        keep = ~_in_set(x1, x2, h, beta)
        x1_parts.append(x1[keep])
        x2_parts.append(x2[keep])
        have += int(keep.sum())
    else:
        raise DomainError(f"could not draw {n} states outside M with V <= {v_budget}")
    return np.concatenate(x1_parts)[:n], np.concatenate(x2_parts)[:n]


def _delta_patterns(rng: np.random.Generator, L: float, n: int) -> np.ndarray:
    """Disturbance pairs (Δ_k, Δ_{k+1}) per sample, shape (patterns, n, 2)."""
    fixed = np.array([(0.0, 0.0), (L, L), (-L, -L), (L, -L), (-L, L)])
    patterns = np.broadcast_to(fixed[:, None, :], (len(fixed), n, 2))
    random = rng.uniform(-L, L, (1, n, 2))
    return np.concatenate([patterns, random], axis=0)


def _decrease_chunk(
    gains: GainSet, L: float, v_budget: float, n: int, seed: np.random.SeedSequence
) -> LyapunovReport:
    rng = np.random.default_rng(seed)
    h, beta = gains.h, gains.beta
    x1, x2 = _sample_exterior(rng, gains, v_budget, n)
    deltas = _delta_patterns(rng, L, n)
    codes = _case_codes(x1, x2, h, beta)
    v0 = _lyapunov(x1, x2, h, beta)

    y1, y2 = closed_loop_map((x1, x2), deltas[..., 0], gains)
    v1 = _lyapunov(y1, y2, h, beta)
    z1, z2 = closed_loop_map((y1, y2), deltas[..., 1], gains)
    v2 = _lyapunov(z1, z2, h, beta)
    # case 1b decreases over two steps, every other case in one
    margins = np.where(codes == 1, v2 - v0, v1 - v0)
    worst = np.argmax(margins, axis=0)
    margin = margins[worst, np.arange(n)]

    violated = np.flatnonzero(margin >= 0)
    witnesses = [
        DecreaseWitness(
            x1=float(x1[i]),
            x2=float(x2[i]),
            case=_CASES[codes[i]],
            deltas=[float(d) for d in deltas[worst[i], i]],
            margin=float(margin[i]),
        )
        for i in violated[:MAX_WITNESSES]
    ]
    counts = np.bincount(codes, minlength=len(_CASES))
    return LyapunovReport(
        samples=n,
        violation_count=len(violated),
        violations=witnesses,
        worst_margin=float(margin.max()) if n else -math.inf,
        case_histogram={case: int(counts[i]) for i, case in enumerate(_CASES)},
    )


def check_decrease(
    gains: GainSet, L: float, V_budget: float, n_samples: int, seed: int = 0
) -> LyapunovReport:
    """
    Sampled audit of the Lyapunov decrease outside M.

    States are drawn uniformly from {x ∉ M, V(x) <= V_budget}. Each one is
    stepped with the disturbance pairs (0, 0), (L, L), (-L, -L), (L, -L),
    (-L, L) and one uniform random pair; the worst pair must still give
    ΔV < 0 (cases 1a, 2a, 2b) or V_{k+2} - V_k < 0 (case 1b).

    Args:
        gains (GainSet): α, β and h of the proposed controller.
        L (float): Disturbance bound |Δ_k| <= L.
        V_budget (float): Largest Lyapunov level sampled.
        n_samples (int): Number of exterior states.
        seed (int): Root seed; chunks draw from spawned child streams.

    Returns:
        LyapunovReport: Counts, witnesses, worst margin and case histogram.

    Raises:
        ParameterError: If L > 0 and β does not exceed convergence_beta_bound(L, V_budget, h).
    """
    if L < 0 or V_budget <= 0 or n_samples < 1:
        raise ParameterError(f"invalid audit arguments L={L}, V_budget={V_budget}, n_samples={n_samples}")
    if L > 0:
        terms = _beta_bound_terms(L, V_budget, gains.h)
        name, bound = max(terms.items(), key=lambda item: item[1])
        if not gains.beta > bound:
            raise ParameterError(f"beta = {gains.beta} does not exceed {name} = {bound:.6g}")

    if V_budget <= (gains.h * gains.beta) ** 2:
        # inf V over the complement of M is h²β²
        logger.warning(f"no state outside M has V <= {V_budget}; nothing to audit")
        return LyapunovReport()

    chunks = max(1, min(settings.AUDIT_CHUNKS, n_samples))
    sizes = [n_samples // chunks + (i < n_samples % chunks) for i in range(chunks)]
    seeds = np.random.SeedSequence(seed).spawn(chunks)
    logger.info(f"decrease audit: {n_samples} samples, L={L}, V_budget={V_budget}, {chunks} chunks")
    with ThreadPoolExecutor(max_workers=max(1, min(settings.THREADS, chunks))) as pool:
        futures = [pool.submit(_decrease_chunk, gains, L, V_budget, n, s) for n, s in zip(sizes, seeds)]
        report = LyapunovReport()
        for future in futures:
            report = report.merge(future.result(), MAX_WITNESSES)

    if report.passed:
        logger.info(f"decrease audit passed, worst margin {report.worst_margin:.6g}")
    else:
        logger.warning(f"decrease audit found {report.violation_count} violations")
    return report


def _sample_interior(rng: np.random.Generator, h: float, beta: float, n: int) -> Tuple[np.ndarray, np.ndarray]:
    band = h**2 * beta
    x1 = rng.uniform(-band, band, n)
    w = rng.uniform(-band, band, n)
    return x1, (x1 + w) / h


def deadbeat_check(
    h: float, beta: float = 10.0, alpha: float = math.sqrt(10.0), n_states: int = 1000, seed: int = 0
) -> DeadbeatReport:
    """
    Nilpotency of the in-band matrix and two-step arrival at the origin.

    Args:
        h (float): Discretization time.
        beta (float): β of the states drawn from M.
        alpha (float): α of the controller used for the two-step run.
        n_states (int): Random states of M stepped twice with Δ ≡ 0.
        seed (int): Seed of the state sampler.

    Returns:
        DeadbeatReport: Trace, determinant, eigenvalues, ‖M²‖ and the largest
            remaining |x1| or |x2| after two controller steps.
    """
    gains = GainSet(alpha=alpha, beta=beta, h=h)
    matrix = np.array([[-1.0, h], [-1.0 / h, 1.0]])
    trace = float(np.trace(matrix))
    determinant = float(np.linalg.det(matrix))
    eigen = float(np.max(np.abs(np.linalg.eigvals(matrix))))
    square = float(np.max(np.abs(matrix @ matrix)))

    rng = np.random.default_rng(seed)
    x1, x2 = _sample_interior(rng, h, beta, n_states)
    # φ̄ ≡ 0, so ν = x2
    nu = x2
    for _ in range(2):
        u, nu = controllers.step_arrays(ControllerVariant.PROPOSED, x1, nu, alpha, beta, h)
        x1 = x1 + h * u
    residual = float(np.max(np.maximum(np.abs(x1), np.abs(nu)))) if n_states else 0.0

    passed = abs(trace) <= 1e-14 and abs(determinant) <= 1e-14 and square <= 1e-12 and residual <= 1e-12
    logger.info(f"dead-beat check h={h}: residual {residual:.3e}, passed={passed}")
    return DeadbeatReport(
        h=h,
        matrix_trace=trace,
        matrix_determinant=determinant,
        eigenvalue_max_abs=eigen,
        square_max_abs=square,
        states_tested=n_states,
        max_two_step_residual=residual,
        passed=passed,
    )


def check_forward_invariance(
    gains: GainSet, L: float, n_states: int = 10_000, n_steps: int = 100, seed: int = 0
) -> InvarianceReport:
    """
    Sampled forward-invariance audit of M under bounded disturbances.

    Random states of M are stepped n_steps times with Δ_k drawn uniformly from
    [-L, L]; every state must stay in M and satisfy x1[k+2] = h²Δ[k].

    Raises:
        ParameterError: If L >= β.
    """
    if not 0 <= L < gains.beta:
        raise ParameterError(f"forward invariance needs 0 <= L < beta, got L={L}")
    h, beta = gains.h, gains.beta
    rng = np.random.default_rng(seed)
    x1, x2 = _sample_interior(rng, h, beta, n_states)
    deltas = rng.uniform(-L, L, (n_steps, n_states))
    left = np.zeros(n_states, dtype=bool)
    residual = 0.0
    for k in range(n_steps):
        x1, x2 = closed_loop_map((x1, x2), deltas[k], gains)
        left |= ~_in_set(x1, x2, h, beta, tol=1e-12)
        if k >= 1:
            residual = max(residual, float(np.max(np.abs(x1 - h**2 * deltas[k - 1]))))
    left_count = int(left.sum())
    passed = left_count == 0 and residual <= 1e-12
    if not passed:
        logger.warning(f"forward invariance: {left_count} states left M, residual {residual:.3e}")
    return InvarianceReport(
        states=n_states,
        steps=n_steps,
        max_identity_residual=residual,
        left_set_count=left_count,
        passed=passed,
    )
