import numpy as np
import pytest

from app.core.functions import sat, sgnpow, sign


def test_sign_selects_zero_at_origin():
    assert sign(0.0) == 0
    assert sign(-2.5) == -1
    assert sign(3.0) == 1


def test_sgnpow_zero_exponent_is_sign():
    assert sgnpow(-3.0, 0) == -1.0
    assert sgnpow(0.0, 0) == 0.0
    assert sgnpow(7.0, 0) == 1.0


def test_sgnpow_half():
    assert sgnpow(4.0, 0.5) == pytest.approx(2.0)
    assert sgnpow(-4.0, 0.5) == pytest.approx(-2.0)
    assert sgnpow(0.0, 0.5) == 0.0


def test_sgnpow_half_squared_recovers_magnitude():
    x = np.linspace(-50.0, 50.0, 1001)
    np.testing.assert_allclose(sgnpow(x, 0.5) ** 2, np.abs(x), rtol=1e-12, atol=0.0)


def test_sgnpow_is_odd():
    x = np.linspace(0.0, 10.0, 101)
    for y in (0, 0.5, 1.0, 1.5):
        np.testing.assert_array_equal(sgnpow(-x, y), -sgnpow(x, y))


def test_sat():
    assert sat(0.5) == 0.5
    assert sat(3.0) == 1.0
    assert sat(-3.0) == -1.0
    assert sat(1.0) == 1.0
    np.testing.assert_array_equal(sat(np.array([-2.0, -0.25, 0.0, 0.25, 2.0])), [-1.0, -0.25, 0.0, 0.25, 1.0])
