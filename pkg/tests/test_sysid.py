import numpy as np
import pytest

from isodamp import fixtures
from isodamp.errors import UnidentifiableError, ValidationError
from isodamp.lti import RationalTF, TimeSeries, dc_gain
from isodamp.sysid import (
    ArxModel,
    ArxOrders,
    arx_fit,
    arx_predict,
    arx_simulate,
    c2d_zoh,
    d2c_zoh,
    default_candidates,
    free_run_rms,
    is_nonminimum_phase,
    select_order,
)

TRUE = ArxModel([-1.5, 0.7], [1.0, 0.5], 0.1)


def prbs(n, seed=0):
    rng = np.random.default_rng(seed)
    return TimeSeries(0.0, 0.1, rng.choice([-1.0, 1.0], size=n))


def test_exact_recovery_noiseless():
    u = prbs(400)
    y = arx_simulate(TRUE, u)
    m = arx_fit(u, y, ArxOrders(2, 2))
    np.testing.assert_allclose(m.a, TRUE.a, atol=1e-8)
    np.testing.assert_allclose(m.b, TRUE.b, atol=1e-8)


def test_zero_data_is_unidentifiable():
    z = TimeSeries(0.0, 0.1, np.zeros(100))
    with pytest.raises(UnidentifiableError):
        arx_fit(z, z, ArxOrders(2, 2))


def test_too_few_samples():
    u = prbs(12)
    with pytest.raises(ValidationError):
        arx_fit(u, u, ArxOrders(2, 2))


def test_pure_delay_model():
    u = TimeSeries(0.0, 0.1, np.r_[1.0, np.zeros(9)])
    y = arx_simulate(ArxModel([0.0], [1.0], 0.1), u)
    np.testing.assert_allclose(y.values, np.r_[0.0, 1.0, np.zeros(8)])


def test_fit_then_simulate_round_trip():
    u = prbs(300, 3)
    y = arx_simulate(TRUE, u)
    m = arx_fit(u, y, ArxOrders(2, 2))
    rms = np.sqrt(np.mean((arx_simulate(m, u).values - y.values) ** 2))
    assert rms < 1e-6


def test_prediction_no_worse_than_free_run():
    # equation-error noise, the disturbance structure the ARX predictor assumes
    rng = np.random.default_rng(5)
    u = prbs(400, 1)
    e = 0.05 * rng.standard_normal(len(u))
    y0 = np.zeros(len(u))
    for t in range(len(u)):
        y0[t] = e[t]
        if t >= 1:
            y0[t] += 1.5 * y0[t - 1] + u.values[t - 1]
        if t >= 2:
            y0[t] += -0.7 * y0[t - 2] + 0.5 * u.values[t - 2]
    y = TimeSeries(0.0, 0.1, y0)
    m = arx_fit(u, y, ArxOrders(2, 2))
    pred = np.sqrt(np.mean((arx_predict(m, u, y).values - y.values)[2:] ** 2))
    assert pred <= free_run_rms(m, u, y)


def test_order_selection_finds_true_order():
    u = prbs(400, 2)
    y = arx_simulate(TRUE, u)
    cands = [ArxOrders(n, m) for n in range(1, 5) for m in range(1, 5)]
    assert select_order(u, y, cands) == ArxOrders(2, 2)


def test_single_candidate_returned():
    u = prbs(200)
    y = arx_simulate(TRUE, u)
    assert select_order(u, y, [ArxOrders(3, 1)]) == ArxOrders(3, 1)


def test_noisy_selection_within_twice_true_order_rms():
    cands = [ArxOrders(n, m) for n in range(1, 5) for m in range(1, 5)]
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        u = prbs(400, seed)
        y0 = arx_simulate(TRUE, u).values
        noise = rng.standard_normal(len(y0))
        # 40 dB signal-to-noise ratio
        noise *= np.sqrt(np.mean(y0**2) / np.mean(noise**2)) * 1e-2
        y = TimeSeries(0.0, 0.1, y0 + noise)
        best = select_order(u, y, cands)
        ref = free_run_rms(arx_fit(u, y, ArxOrders(2, 2)), u, y)
        assert free_run_rms(arx_fit(u, y, best), u, y) <= 2 * ref


def test_default_candidates_cover_published_orders():
    c = default_candidates()
    assert ArxOrders(6, 6) in c and len(c) == 35


def test_d2c_first_order_pole():
    back = d2c_zoh(c2d_zoh(RationalTF([1], [1, 1]), 0.1))
    np.testing.assert_allclose(back.poles(), [-1.0], atol=1e-9)
    np.testing.assert_allclose(dc_gain(back), 1.0, rtol=1e-9)


def test_d2c_static_model():
    back = d2c_zoh(ArxModel([0.0], [2.5], 0.1))
    np.testing.assert_allclose(dc_gain(back), 2.5)
    np.testing.assert_allclose(back.delay, 0.1)


def test_c2d_dead_time_becomes_input_delay():
    tf = RationalTF([2.0], [0.5, 1.0], 0.3)
    back = d2c_zoh(c2d_zoh(tf, 0.1))
    np.testing.assert_allclose(back.delay, 0.3, rtol=1e-12)
    np.testing.assert_allclose(back.den / back.den[-1], [0.5, 1.0], rtol=1e-9)
    np.testing.assert_allclose(dc_gain(back), 2.0, rtol=1e-9)


def _identify(t, rod, power):
    Ts = t[1] - t[0]
    u = TimeSeries(0.0, Ts, rod - rod[0])
    y = TimeSeries(0.0, Ts, power - power[0])
    o = select_order(u, y, default_candidates())
    return d2c_zoh(arx_fit(u, y, o))


def test_identify_stable_reduced_fixture():
    plant = fixtures.get("G70_foptd").to_tf()
    tf = _identify(*fixtures.synthetic_rod_drop(plant))
    np.testing.assert_allclose(dc_gain(tf), 136.3, rtol=1e-6)
    assert tf.is_stable()


@pytest.mark.xfail(strict=True, reason="the published sixth-order models have right-half-plane poles; "
                   "the diverging record yields neither a sixth-order nor a stable fit")
def test_identify_published_full_model():
    t, rod, power = fixtures.synthetic_rod_drop(fixtures.get("G100_full"), Ts=0.1, duration=14.0)
    tf = _identify(t, rod, power)
    np.testing.assert_allclose(dc_gain(tf), 192.3, rtol=0.05)
    assert tf.order == 6 and tf.is_stable() and is_nonminimum_phase(tf)
