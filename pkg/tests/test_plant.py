import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etcbf.acc import AccParams, make_model, resistance, true_field, true_second_derivative
from etcbf.plant import DisturbanceProcess, PlantInstance, SensorModel, SimulationBlowUp, sample_sensor


def acc_plant(params=None, sigma=(0.0, 0.0, 1.0), x0=(20.0, 100.0)):
    params = params or AccParams()
    lo = hi = list(sigma)
    dist = DisturbanceProcess(lo, hi, 0.05, np.random.default_rng(0))
    return PlantInstance(true_field(params), x0, dist, true_second_derivative(params))


def test_force_balance_holds_speed():
    p = AccParams()
    plant = acc_plant(p)
    u = np.array([resistance(20.0, p.true_coeffs)])
    for _ in range(100):
        plant.step(u, 1e-3)
    assert plant.state[0] == pytest.approx(20.0, abs=1e-12)


def test_sigma3_scales_control():
    p = AccParams()
    plant = acc_plant(p, sigma=(0.0, 0.0, 0.9))
    u = np.array([1000.0])
    vdot = plant.truth(u).derivs[0][0]
    assert vdot == pytest.approx((0.9 * 1000.0 - resistance(20.0, p.true_coeffs)) / p.M)


def test_gap_constant_at_lead_speed():
    p = AccParams()
    plant = acc_plant(p, x0=(p.v_p, 50.0))
    u = np.array([resistance(p.v_p, p.true_coeffs)])
    for _ in range(200):
        plant.step(u, 1e-3)
    assert plant.state[1] == pytest.approx(50.0, abs=1e-9)


def test_noise_free_measurement_is_exact():
    plant = acc_plant()
    m = sample_sensor(plant, SensorModel(20.0, 2), np.zeros(1))
    np.testing.assert_array_equal(m.x, plant.state)
    np.testing.assert_array_equal(m.halfwidth(0), [0.0, 0.0])


def test_noisy_interval_contains_truth():
    plant = acc_plant()
    plant._noise_rng = np.random.default_rng(5)
    sensor = SensorModel(20.0, 2, (np.array([0.1, 0.2]), np.array([0.05, 0.05])))
    for _ in range(50):
        m = sample_sensor(plant, sensor, np.zeros(1))
        lo, hi = m.interval(0)
        assert np.all(lo <= plant.state) and np.all(plant.state <= hi)
        np.testing.assert_allclose(hi - lo, [0.2, 0.4])


def test_sample_count():
    assert SensorModel(20.0).n_samples(30.0) == 601


def test_blow_up_carries_time():
    plant = PlantInstance(lambda x, u, s: x * 1e200, [1e200], None)
    with pytest.raises(SimulationBlowUp) as info, np.errstate(over="ignore", invalid="ignore"):
        for _ in range(5):
            plant.step(np.zeros(1), 0.01)
    assert np.isfinite(info.value.t)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["hold", "ramp", "smooth"]),
       st.floats(0.01, 3.0))
def test_disturbance_stays_in_support(seed, shape, period):
    low, high = np.array([-0.2, -2.0, 0.9]), np.array([0.2, 2.0, 1.0])
    d = DisturbanceProcess(low, high, period, np.random.default_rng(seed), shape)
    for t in np.linspace(0, 10, 401):
        v = d.value(t)
        assert np.all(v >= low) and np.all(v <= high)


def test_hold_is_piecewise_constant():
    d = DisturbanceProcess([-1.0], [1.0], 0.5, np.random.default_rng(1), "hold")
    assert d.value(0.1)[0] == d.value(0.49)[0]
    assert np.all(d.rate(0.2) == 0)


def test_smooth_rate_matches_finite_difference():
    d = DisturbanceProcess([-1.0], [1.0], 2.0, np.random.default_rng(2), "smooth")
    h = 1e-6
    for t in (0.3, 1.1, 2.7, 5.9):
        fd = (d.value(t + h) - d.value(t - h)) / (2 * h)
        np.testing.assert_allclose(d.rate(t), fd, atol=1e-6)


def test_same_seed_same_stream():
    a = DisturbanceProcess([-1.0], [1.0], 0.05, np.random.default_rng(9))
    b = DisturbanceProcess([-1.0], [1.0], 0.05, np.random.default_rng(9))
    assert [a.value(t)[0] for t in np.arange(0, 3, 0.01)] == [b.value(t)[0] for t in np.arange(0, 3, 0.01)]


def test_collapsed_plant_matches_model():
    # identical resistance, no disturbances, zero corrections: plant and model agree
    p = AccParams(f0=0.3, f1=10.0, f2=0.5)
    plant = acc_plant(p, sigma=(0.0, 0.0, 1.0))
    model = make_model(p)
    u = np.array([-300.0])
    for _ in range(1000):
        plant.step(u, 1e-3)
        model.step(u, 1e-3)
    np.testing.assert_allclose(plant.state, model.state, atol=1e-8)
