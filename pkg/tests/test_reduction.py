import math

import numpy as np
import pytest
from scipy.integrate import quad

from isodamp import fixtures
from isodamp.errors import InstabilityError, ValidationError
from isodamp.lti import RationalTF
from isodamp.reduction import FoptdModel, SoptdModel, h2_error, reduce_foptd, reduce_soptd

FULL = "the published sixth-order models have right-half-plane poles"


def test_identical_models_have_zero_error():
    g = RationalTF([2.0], [1.0, 1.0], 0.3)
    assert h2_error(g, g) == 0.0


def test_h2_error_closed_form():
    # integral of (e^-t - e^-1.01t)^2 = 1/2 - 2/2.01 + 1/2.02
    exact = 0.5 - 2 / 2.01 + 1 / 2.02
    got = h2_error(RationalTF([1], [1, 1]), RationalTF([1], [1, 1.01]), horizon=60.0, dt=0.005)
    np.testing.assert_allclose(got, exact, rtol=1e-2)


def test_h2_error_horizon_check():
    with pytest.raises(ValidationError):
        h2_error(RationalTF([1], [10, 1]), RationalTF([1], [1, 1]), horizon=20.0)


def test_h2_error_rejects_unstable():
    with pytest.raises(InstabilityError):
        h2_error(RationalTF([1], [1, -1]), RationalTF([1], [1, 1]))


def test_foptd_fixed_point():
    m = reduce_foptd(FoptdModel(2.0, 1.0, 0.3).to_tf())
    np.testing.assert_allclose([m.K, m.T, m.L], [2.0, 1.0, 0.3], atol=1e-4)


def test_soptd_fixed_point():
    m = reduce_soptd(SoptdModel(1.5, 0.8, 1.3, 0.4).to_tf())
    np.testing.assert_allclose([m.K, m.zeta, m.omega_n, m.L], [1.5, 0.8, 1.3, 0.4], atol=1e-4)


def _ise_third_order_vs_foptd(T, L):
    # impulse responses t^2 e^-t / 2 and e^(-(t-L)/T) / T for t > L, by quadrature
    def f(t):
        h = 0.5 * t * t * math.exp(-t) - (math.exp(-(t - L) / T) / T if t > L else 0.0)
        return h * h

    return quad(f, 0, L, limit=200)[0] + quad(f, L, 60, limit=200)[0]


def test_reduction_matches_independent_grid_search():
    m = reduce_foptd(RationalTF([1], [1, 3, 3, 1]))
    grid = [(T, L) for T in np.linspace(1.5, 4.0, 26) for L in np.linspace(0.3, 1.5, 25)]
    T0, L0 = min(grid, key=lambda p: _ise_third_order_vs_foptd(*p))
    np.testing.assert_allclose(m.K, 1.0)
    np.testing.assert_allclose([m.T, m.L], [T0, L0], atol=0.06)
    # optimal on the exact (delay-exact) objective too, not only on the Pade surrogate
    assert _ise_third_order_vs_foptd(m.T, m.L) <= _ise_third_order_vs_foptd(T0, L0) * 1.001


@pytest.mark.xfail(strict=True, raises=InstabilityError, reason=FULL)
def test_reduce_published_70pct_foptd():
    m = reduce_foptd(fixtures.get("G70_full"))
    np.testing.assert_allclose(m.K, 136.3, rtol=0.01)
    np.testing.assert_allclose([m.T, m.L], [0.5, 0.5], rtol=0.2)


@pytest.mark.xfail(strict=True, raises=InstabilityError, reason=FULL)
def test_reduce_published_70pct_soptd():
    m = reduce_soptd(fixtures.get("G70_full"))
    np.testing.assert_allclose(m.K, 136.4, rtol=0.01)
    np.testing.assert_allclose([m.zeta, m.omega_n], [1.0, 1.0], rtol=0.2)


@pytest.mark.xfail(strict=True, raises=InstabilityError, reason=FULL)
def test_reduce_published_100pct_gain():
    np.testing.assert_allclose(reduce_foptd(fixtures.get("G100_full")).K, 192.3, rtol=0.01)


@pytest.mark.xfail(strict=True, raises=InstabilityError, reason=FULL)
def test_published_reduction_error_ordering():
    full = fixtures.get("G100_full")
    assert h2_error(full, fixtures.get("G100_foptd").to_tf()) < h2_error(full, fixtures.get("G90_foptd").to_tf())
