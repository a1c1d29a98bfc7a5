import math
import statistics
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from winddaq.acquisition import (
    AcquisitionState,
    FilterState,
    PulseCounter,
    acquire_tick,
    air_density,
    compute_cp,
    compute_lambda,
    compute_rpm,
    ema_settling_samples,
    ema_step,
    isr_on_pulse,
    validate_sample,
)
from winddaq.model import (
    F_BELOW_CUTIN,
    F_BETZ_EXCEEDED,
    F_CLOCK_UNSYNCED,
    F_RANGE_RPM,
    F_RANGE_WIND,
    F_REVERSE_CURRENT,
    F_SENSOR_FAULT,
    BETZ_LIMIT,
)
from winddaq.sim import Measurement
from winddaq.timekeeping import ClockState, ntp_sync


def test_isr_increments():
    c = PulseCounter()
    assert isr_on_pulse(c).read() == 1
    for _ in range(999):
        isr_on_pulse(c)
    assert c.read() == 1000


def test_counter_monotone_under_concurrent_reads():
    c = PulseCounter()
    stop = threading.Event()

    def hammer():
        while not stop.is_set():
            c.on_pulse()

    th = threading.Thread(target=hammer)
    th.start()
    try:
        seen = []
        for _ in range(2000):
            seen.append(c.read())
        n, _ = c.read_and_reset(1.0)
        after = c.read()
    finally:
        stop.set()
        th.join()
    assert seen == sorted(seen)
    assert n >= seen[-1]
    assert after <= c.read()


def test_window_reset_loses_no_pulses():
    c = PulseCounter()
    total = 0
    stop = threading.Event()
    sent = [0]

    def hammer():
        while not stop.is_set():
            c.on_pulse()
            sent[0] += 1

    th = threading.Thread(target=hammer)
    th.start()
    for k in range(200):
        total += c.read_and_reset(float(k))[0]
    stop.set()
    th.join()
    total += c.read_and_reset(999.0)[0]
    assert total == sent[0]


def test_rpm_cases():
    assert compute_rpm(4, 1.0, 4) == pytest.approx((60.0, 2 * math.pi))
    assert compute_rpm(0, 1.0, 4)[0] == 0.0
    rpm, w = compute_rpm(100, 10.0, 4)
    assert rpm == pytest.approx(150.0)
    assert w == pytest.approx(15.708, abs=1e-3)
    with pytest.raises(ValueError):
        compute_rpm(1, 0.0, 4)


def test_alpha_one_is_identity():
    s = FilterState(1.0)
    for x in (3.0, -1.0, 7.5):
        s, y = ema_step(s, x)
        assert y == x


def test_constant_input_fixed_point():
    s = FilterState(0.2)
    for _ in range(50):
        s, y = ema_step(s, 4.2)
        assert y == 4.2


def test_ema_variance_on_white_noise():
    z = np.random.default_rng(0).standard_normal(10_000)
    s, out = FilterState(0.2), []
    for x in z:
        s, y = ema_step(s, float(x))
        out.append(y)
    var = statistics.pvariance(out[100:])
    assert var == pytest.approx(oracles.ema_variance_ratio(0.2), rel=0.10)
    assert oracles.ema_variance_ratio(0.2) == pytest.approx(0.1111, abs=1e-4)


def test_settling_matches_step_walk():
    assert ema_settling_samples(0.2) == oracles.ema_settle(0.2) == 14
    for a in (0.05, 0.1, 0.3, 0.5, 0.9):
        assert ema_settling_samples(a) == oracles.ema_settle(a)
    assert ema_settling_samples(1.0) == 1


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200), st.floats(0.01, 1.0))
def test_ema_stays_within_input_range(xs, a):
    s = FilterState(a)
    for x in xs:
        s, y = ema_step(s, x)
    assert min(xs) - 1e-9 <= y <= max(xs) + 1e-9


def test_air_density_points():
    assert air_density(15, 101325) == pytest.approx(oracles.air_density(15, 101325), abs=1e-4)
    assert air_density(15, 101325) == pytest.approx(1.2250, abs=1e-4)
    assert air_density(30, 101325) == pytest.approx(1.1644, abs=1e-4)


def test_air_density_linear_in_pressure():
    assert air_density(20, 100000) == pytest.approx(2 * (100000 / 2) / (287.05 * 293.15))
    assert air_density(-5, 100000) / air_density(-5, 90000) == pytest.approx(100000 / 90000, rel=1e-12)
    with pytest.raises(ValueError):
        air_density(-80, 101325)
    with pytest.raises(ValueError):
        air_density(20, 10)


def test_cp_cases():
    assert compute_cp(300, 1.225, 2, 10) == pytest.approx(0.2449, abs=1e-4)
    assert compute_cp(0, 1.225, 2, 10) == 0
    assert compute_cp(1000, 1.225, 2, 10) == pytest.approx(0.8163, abs=1e-4)
    assert compute_cp(1000, 1.225, 2, 10) > BETZ_LIMIT


def test_lambda_cases():
    assert compute_lambda(20, 0.5, 10) == 1.0
    assert compute_lambda(0, 0.5, 10) == 0


@given(st.floats(0.01, 1e4), st.floats(0.5, 1.5), st.floats(0.1, 10), st.floats(1, 30), st.floats(0.1, 10))
def test_scaling_identities(p, rho, a, v, k):
    assert compute_cp(k * p, rho, a, v) == pytest.approx(k * compute_cp(p, rho, a, v), rel=1e-12)
    assert compute_lambda(k * p, 0.5, v) == pytest.approx(k * compute_lambda(p, 0.5, v), rel=1e-12)
    assert compute_lambda(p, 0.5, k * v) == pytest.approx(compute_lambda(p, 0.5, v) / k, rel=1e-12)


def test_validate_sample_thresholds(make_rec):
    assert validate_sample(make_rec(0, wind=26.0)) & F_RANGE_WIND
    r = make_rec(0)._replace(rotor_rpm=501.0)
    assert validate_sample(r) & F_RANGE_RPM
    assert validate_sample(make_rec(0, power=-1.0)) & F_REVERSE_CURRENT
    nominal = make_rec(0, wind=10.0, power=50.0)._replace(rotor_rpm=100.0)
    assert validate_sample(nominal) == 0


def test_validate_does_not_touch_record(make_rec):
    r = make_rec(0, wind=40.0)
    before = tuple(r)
    validate_sample(r)
    assert tuple(r) == before


def _meas(wind=6.0, volts=5.0, amps=4.0, ok=True, pulses=0):
    return Measurement(wind, volts, amps, 15.0, 101325.0, 70.0, ok, pulses)


def _synced(t=1000.5):
    return ntp_sync(ClockState.start(t), t)


def test_nominal_tick(config):
    st_ = AcquisitionState(0.2)
    st_.counter.add(8)
    rec, clock = acquire_tick(_meas(), st_, _synced(), config, 1.0)
    assert rec.flags == 0
    assert rec.rotor_rpm == 120.0  # 8 pulses, 4 per revolution, 1 s window
    assert rec.cp is not None and rec.tsr is not None and rec.air_density_kg_m3 == pytest.approx(1.225, abs=1e-3)
    assert rec.power_w == 20.0
    assert clock.last_stamp == (1000, 0)


def test_below_cutin(config):
    rec, _ = acquire_tick(_meas(wind=0.5), AcquisitionState(0.2), _synced(), config, 1.0)
    assert rec.flags & F_BELOW_CUTIN
    assert rec.cp is None and rec.tsr is None


def test_sensor_read_failure_keeps_last_good(config):
    st_ = AcquisitionState(0.2)
    clock = _synced()
    good = Measurement(6.0, 5.0, 4.0, 21.0, 100000.0, 60.0, True, 0)
    _, clock = acquire_tick(good, st_, clock, config, 1.0)
    bad = Measurement(6.0, 5.0, 4.0, 99.0, 1.0, 1.0, False, 0)
    rec, _ = acquire_tick(bad, st_, clock, config, 2.0)
    assert rec.flags & F_SENSOR_FAULT
    assert (rec.temp_c, rec.pressure_pa, rec.humidity_pct) == (21.0, 100000.0, 60.0)


def test_unsynced_clock_flagged(config):
    rec, _ = acquire_tick(_meas(), AcquisitionState(0.2), ClockState.start(5.5), config, 1.0)
    assert rec.flags & F_CLOCK_UNSYNCED


def test_betz_exceeded_flag(config):
    st_ = AcquisitionState(1.0)
    st_.counter.add(40)
    rec, _ = acquire_tick(_meas(wind=3.0, volts=20.0, amps=10.0), st_, _synced(), config, 1.0)
    assert rec.flags & F_BETZ_EXCEEDED
    assert rec.cp > BETZ_LIMIT


def test_out_of_range_wind_not_filtered(config):
    st_ = AcquisitionState(0.2)
    clock = _synced()
    _, clock = acquire_tick(_meas(wind=6.0), st_, clock, config, 1.0)
    rec, _ = acquire_tick(_meas(wind=40.0), st_, clock, config, 2.0)
    assert rec.flags & F_RANGE_WIND
    assert rec.wind_speed_mps == 40.0
    assert st_.wind_ema == 6.0


def test_stuck_wind_passes_without_fault_flag(config):
    st_ = AcquisitionState(0.2)
    clock = _synced()
    recs = []
    for k in range(10):
        st_.counter.add(8)
        rec, clock = acquire_tick(_meas(wind=7.31, amps=4.0 + k * 0.1), st_, clock, config, k + 1.0)
        clock = clock._replace(current_utc=clock.current_utc + 1)
        recs.append(rec)
    assert len(recs) == 10
    assert {r.wind_speed_mps for r in recs} == {7.31}
    assert not any(r.flags & F_SENSOR_FAULT for r in recs)


def test_alpha_bounds():
    with pytest.raises(ValueError):
        AcquisitionState(0.0)
