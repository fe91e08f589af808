import math

import numpy as np
import pytest

from app.core.errors import DomainError, ParameterError
from app.schemas.schemas import GainSet, InvariantSetSpec, LyapunovCase, VirtualState
from app.services import verification


# Invariant set and Lyapunov candidate
@pytest.mark.parametrize(
    "x1, x2, expected",
    [(0.0, 0.0, True), (1.0, 2.0, True), (1.5, 0.0, False), (1.0, 2.5, False)],
)
def test_in_invariant_set(x1, x2, expected):
    spec = InvariantSetSpec(h=1.0, beta=1.0)
    assert verification.in_invariant_set(VirtualState(x1=x1, x2=x2), spec) is expected


def test_lyapunov_values(stc_gains):
    assert verification.lyapunov(VirtualState(x1=0.0, x2=0.0), stc_gains) == 0.0
    assert verification.lyapunov(VirtualState(x1=1.0, x2=0.0), stc_gains) == pytest.approx(20.0)
    unit = GainSet(alpha=1.0, beta=1.0, h=1.0)
    assert verification.lyapunov(VirtualState(x1=1.0, x2=1.0), unit) == 1.0


@pytest.mark.parametrize(
    "x1, x2, case",
    [
        (5e-4, 1.0, LyapunovCase.CASE_1A),
        (5e-4, -1.0, LyapunovCase.CASE_1B),
        (1.0, 0.0, LyapunovCase.CASE_2A),
        (0.01, 5.0, LyapunovCase.CASE_2B),
        (-0.01, -5.0, LyapunovCase.CASE_2B),
    ],
)
def test_classify_case(x1, x2, case, stc_gains):
    assert verification.classify_case(VirtualState(x1=x1, x2=x2), stc_gains) is case


def test_classify_case_rejects_states_in_set(stc_gains):
    with pytest.raises(DomainError):
        verification.classify_case(VirtualState(x1=5e-4, x2=0.05), stc_gains)


# Convergence bound on beta
def test_beta_bound_values():
    assert verification.convergence_beta_bound(0.0, 0.49, 0.1) == pytest.approx(5.0)
    assert verification.convergence_beta_bound(1.0, 1.0, 1.0) == pytest.approx(4.0)
    assert verification.convergence_beta_bound(0.0, 1e-12, 1.0) < 1e-5


@pytest.mark.parametrize("L, V, h", [(-1.0, 1.0, 1.0), (0.0, 0.0, 1.0), (1.0, 1.0, 0.0)])
def test_beta_bound_rejects_invalid_arguments(L, V, h):
    with pytest.raises(ParameterError):
        verification.convergence_beta_bound(L, V, h)


# Case-2 decrease bound
def test_case2_bound_is_even(stc_gains):
    rng = np.random.default_rng(3)
    z1 = rng.uniform(-5.0, 5.0, 1000)
    z2 = rng.uniform(-5.0, 5.0, 1000)
    for L in (0.0, 2.0):
        plus = verification.case2_delta_v_bound(z1, z2, stc_gains, L)
        minus = verification.case2_delta_v_bound(-z1, -z2, stc_gains, L)
        np.testing.assert_allclose(plus, minus, rtol=0, atol=1e-12)


def test_case2_shift_never_exceeds_z1():
    z1 = np.logspace(-3, 6, 2000)
    for alpha, h in [(math.sqrt(10.0), 0.01), (80.0, 0.05), (0.1, 1.0)]:
        gains = GainSet(alpha=alpha, beta=10.0, h=h)
        assert np.all(z1 - verification.case2_shift(z1, gains) >= -1e-9 * z1)


def test_case2_bound_matches_undisturbed_decrease(stc_gains):
    h, beta = stc_gains.h, stc_gains.beta
    rng = np.random.default_rng(11)
    x1 = rng.uniform(-2.0, 2.0, 5000)
    x1 = x1[np.abs(x1) > h**2 * beta]
    x2 = rng.uniform(-5.0, 5.0, x1.size)
    s = np.sign(x1)
    z1, z2 = x1 - s * h**2 * beta, x2 - s * h * beta
    y1, y2 = verification.closed_loop_map((x1, x2), 0.0, stc_gains)
    actual = verification._lyapunov(y1, y2, h, beta) - verification._lyapunov(x1, x2, h, beta)
    bound = verification.case2_delta_v_bound(z1, z2, stc_gains, 0.0)
    assert np.all(actual <= bound + 1e-9)


def test_state_just_outside_set_decreases(stc_gains):
    x = VirtualState(x1=1e-3 + 1e-6, x2=0.0)
    y1, y2 = verification.closed_loop_map(x, 0.0, stc_gains)
    after = verification.lyapunov(VirtualState(x1=float(y1), x2=float(y2)), stc_gains)
    assert after < verification.lyapunov(x, stc_gains)


# Sampled decrease audit
def test_undisturbed_decrease_audit(stc_gains):
    report = verification.check_decrease(stc_gains, 0.0, 50.0, 100_000, seed=0)
    assert report.passed
    assert report.samples == 100_000
    assert report.worst_margin < 0
    assert sum(report.case_histogram.values()) == report.samples
    assert all(count > 0 for count in report.case_histogram.values())


def test_disturbed_decrease_audit():
    gains = GainSet(alpha=math.sqrt(10.0), beta=300.0, h=0.01)
    assert gains.beta > verification.convergence_beta_bound(1.0, 12.0, 0.01)
    report = verification.check_decrease(gains, 1.0, 12.0, 20_000, seed=7)
    assert report.passed, report.violations[:3]
    assert report.samples == 20_000


def test_decrease_audit_requires_beta_above_bound(stc_gains):
    with pytest.raises(ParameterError, match="sqrt"):
        verification.check_decrease(stc_gains, 1.0, 1.0, 100)


def test_decrease_audit_empty_below_exterior_level():
    gains = GainSet(alpha=math.sqrt(10.0), beta=150.0, h=0.01)
    report = verification.check_decrease(gains, 1.0, 1.0, 1000)
    assert report.samples == 0
    assert report.passed


def test_decrease_audit_is_deterministic(stc_gains):
    first = verification.check_decrease(stc_gains, 0.0, 50.0, 5000, seed=42)
    second = verification.check_decrease(stc_gains, 0.0, 50.0, 5000, seed=42)
    assert first == second


# Dead-beat and forward invariance
@pytest.mark.parametrize("h", [0.01, 1.0])
def test_deadbeat(h):
    report = verification.deadbeat_check(h, n_states=10_000)
    assert report.passed
    assert report.square_max_abs <= 1e-12
    assert report.max_two_step_residual <= 1e-12
    assert report.states_tested == 10_000


def test_deadbeat_from_set_corner(stc_gains):
    h, beta = stc_gains.h, stc_gains.beta
    state = (h**2 * beta, h * beta * 0.5)
    for _ in range(2):
        state = verification.closed_loop_map(state, 0.0, stc_gains)
    assert abs(state[0]) <= 1e-12


def test_forward_invariance(stc_gains):
    report = verification.check_forward_invariance(stc_gains, stc_gains.beta / 2)
    assert report.passed
    assert report.left_set_count == 0
    assert report.max_identity_residual <= 1e-12


def test_forward_invariance_needs_bound_below_beta(stc_gains):
    with pytest.raises(ParameterError):
        verification.check_forward_invariance(stc_gains, stc_gains.beta)
