import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isodamp import fixtures
from isodamp.errors import (
    DelayNotRationalizedError,
    ImproperSystemError,
    IndeterminateGainError,
    SingularFrequencyError,
    ValidationError,
)
from isodamp.lti import (
    RationalTF,
    StateSpace,
    TimeSeries,
    cascade_realization,
    continuous_phase,
    dc_gain,
    feedback,
    freq_response,
    log_grid,
    minreal,
    pade_delay,
    rationalize,
    series,
    simulate,
    to_state_space,
    unity_feedback_response,
)


def test_first_order_lag_at_unit_frequency():
    fr = freq_response(RationalTF([1], [1, 1]), [1.0])
    np.testing.assert_allclose(fr.magnitude[0], 1 / math.sqrt(2), rtol=1e-14)
    np.testing.assert_allclose(fr.phase[0], -math.pi / 4, rtol=1e-14)


def test_foptd_fixture_low_frequency_magnitude():
    tf = RationalTF([272.6], [1, 2], 0.5)
    fr = freq_response(tf, [1e-6])
    np.testing.assert_allclose(fr.magnitude[0], 136.3, rtol=1e-9)


def test_pure_delay_phase():
    fr = freq_response(RationalTF([1], [1], 0.5), [2.0])
    np.testing.assert_allclose(fr.magnitude[0], 1.0)
    np.testing.assert_allclose(fr.phase[0], -1.0, rtol=1e-14)


def test_phase_is_continuous_past_minus_pi():
    # third-order lag plus delay: phase runs well below -pi without 2pi jumps
    tf = RationalTF([1], [1, 3, 3, 1], 0.5)
    w = log_grid(1e-2, 1e2, 50)
    ph = continuous_phase(tf, w)
    assert ph[-1] < -3 * math.pi
    assert np.all(np.diff(ph) < 0)
    np.testing.assert_allclose(ph, -3 * np.arctan(w) - 0.5 * w, rtol=1e-12)


def test_phase_grid_independent():
    tf = RationalTF([-1, 2], [1, 0.2, 4, 1], 0.3)
    w = np.array([0.7, 3.0, 11.0])
    fine = continuous_phase(tf, log_grid(1e-3, 20, 400))
    np.testing.assert_allclose(continuous_phase(tf, w), np.interp(w, log_grid(1e-3, 20, 400), fine), atol=1e-3)


def test_pole_on_axis_is_singular():
    with pytest.raises(SingularFrequencyError):
        freq_response(RationalTF([1], [1, 0, 1]), [1.0])


def test_series_does_not_cancel():
    out = series(RationalTF([1], [1, 1]), RationalTF([1, 1], [1]))
    np.testing.assert_allclose(out.num, [1, 1])
    np.testing.assert_allclose(out.den, [1, 1])
    assert out.delay == 0


def test_series_delays_add():
    out = RationalTF([1], [1, 1], 0.3) * RationalTF([2], [1, 3], 0.2)
    np.testing.assert_allclose(out.delay, 0.5)


def test_unity_feedback_pointwise():
    from isodamp.lti import FreqResponse

    fr = FreqResponse.from_values([1.0, 2.0], [-0.5, 1e9])
    T = unity_feedback_response(fr)
    np.testing.assert_allclose(T.value[0], -1.0)
    np.testing.assert_allclose(abs(T.value[1]), 1.0, rtol=1e-8)


def test_pade_first_order():
    p = pade_delay(0.5, 1)
    np.testing.assert_allclose(p.num / p.den[-1], [-0.25, 1])
    np.testing.assert_allclose(p.den / p.den[-1], [0.25, 1])
    np.testing.assert_allclose(freq_response(p, [2.0]).phase[0], -2 * math.atan(0.5), rtol=1e-14)
    np.testing.assert_allclose(-2 * math.atan(0.5), -0.9273, atol=1e-4)


def test_pade_zero_delay_is_identity():
    p = pade_delay(0.0, 3)
    np.testing.assert_allclose(p.num, [1.0])
    np.testing.assert_allclose(p.den, [1.0])


@pytest.mark.parametrize("order", [1, 2, 3, 4, 6])
def test_pade_is_all_pass(order):
    p = pade_delay(0.7, order)
    w = log_grid(1e-2, 1e2, 10)
    np.testing.assert_allclose(freq_response(p, w).magnitude, 1.0, rtol=1e-10)


def test_zoh_step_first_order_exact():
    ss = to_state_space(RationalTF([1], [1, 1]))
    u = TimeSeries.step(1.0, 5.0, 0.1)
    y = simulate(ss, u)
    # output at t_k reflects inputs up to t_{k-1}
    np.testing.assert_allclose(y.values, 1 - np.exp(-u.t), atol=1e-9)


def test_zoh_step_integrator_ramp():
    ss = to_state_space(RationalTF([1], [1, 0]))
    u = TimeSeries.step(1.0, 3.0, 0.1)
    np.testing.assert_allclose(simulate(ss, u).values, u.t, atol=1e-12)


def test_state_space_needs_rational():
    with pytest.raises(DelayNotRationalizedError):
        to_state_space(RationalTF([1], [1, 1], 0.5))
    with pytest.raises(ImproperSystemError):
        to_state_space(RationalTF([1, 0, 0], [1, 1]))


def test_cascade_matches_tf():
    tf = RationalTF(np.poly([-0.5, 2.0, -1 + 3j, -1 - 3j]).real, np.poly([-1, -2, -0.1 + 1j, -0.1 - 1j, -5]).real)
    ss = cascade_realization(tf)
    w = log_grid(1e-2, 1e2, 10)
    np.testing.assert_allclose(ss.to_tf()(1j * w), tf(1j * w), rtol=1e-9)


def test_minreal_exact_common_root():
    tf = RationalTF(np.polymul([1, 1], [1, 2]), np.polymul([1, 1], [1, 3]))
    out = minreal(tf)
    np.testing.assert_allclose(out.num / out.den[0], [1, 2], atol=1e-12)
    np.testing.assert_allclose(out.den / out.den[0], [1, 3], atol=1e-12)


def test_minreal_near_cancellation():
    tf = RationalTF([1, 1.000001], np.polymul([1, 1], [1, 5]))
    out = minreal(tf, 1e-3)
    assert out.order == 1
    np.testing.assert_allclose(out.den / out.den[0], [1, 5])


def test_minreal_leaves_published_model_alone():
    tf = fixtures.get("G100_full")
    out = minreal(tf, 1e-9)
    assert out is tf
    z, p = tf.zeros(), tf.poles()
    assert np.min(np.abs(z[:, None] - p[None, :])) > 1e-9


def test_dc_gain_of_published_models():
    np.testing.assert_allclose(dc_gain(fixtures.get("G100_full")), 192.33, rtol=1e-3)
    np.testing.assert_allclose(dc_gain(fixtures.get("G70_full")), 136.35, rtol=1e-3)


def test_dc_gain_integrator_and_indeterminate():
    assert dc_gain(RationalTF([1], [1, 0])) == math.inf
    with pytest.raises(IndeterminateGainError):
        dc_gain(RationalTF([1, 0], [1, 0]))


def test_feedback_refuses_delay():
    with pytest.raises(DelayNotRationalizedError):
        feedback(RationalTF([1], [1, 1], 0.2))


def test_invalid_tf():
    with pytest.raises(ValidationError):
        RationalTF([1], [0])
    with pytest.raises(ValidationError):
        RationalTF([1], [1, 1], -0.1)


@settings(max_examples=40, deadline=None)
@given(
    p1=st.floats(0.1, 10), p2=st.floats(0.1, 10), k=st.floats(0.1, 100), L=st.floats(0, 2),
    w=st.floats(1e-2, 1e2),
)
def test_magnitude_and_phase_factorize(p1, p2, k, L, w):
    a = RationalTF([k], [1, p1], L)
    b = RationalTF([1], [1, p2])
    ab = freq_response(a * b, [w])
    fa, fb = freq_response(a, [w]), freq_response(b, [w])
    np.testing.assert_allclose(ab.magnitude, fa.magnitude * fb.magnitude, rtol=1e-12)
    np.testing.assert_allclose(ab.phase, fa.phase + fb.phase, rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(L=st.floats(0.05, 2), order=st.integers(1, 5))
def test_rationalize_preserves_dc_gain(L, order):
    tf = RationalTF([3.0], [2.0, 1.0], L)
    np.testing.assert_allclose(dc_gain(rationalize(tf, order)), 3.0, rtol=1e-12)
