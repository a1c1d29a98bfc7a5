"""Firmware acquisition path: pulse counting, EMA filtering, validation, derived quantities."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .model import (
    BETZ_LIMIT,
    R_DRY,
    F_BELOW_CUTIN,
    F_BETZ_EXCEEDED,
    F_CLOCK_UNSYNCED,
    F_RANGE_RPM,
    F_RANGE_WIND,
    F_REVERSE_CURRENT,
    F_SENSOR_FAULT,
    Config,
    Limits,
    Record,
)
from .sim import Measurement
from .timekeeping import ClockState, stamp

TWO_PI = 2.0 * math.pi


class PulseCounter:
    """Counter shared by the pulse interrupt and the tick context.

    ``on_pulse`` is the only thing the interrupt side does; reading and
    resetting the window happens atomically from the tick side.
    """

    __slots__ = ("count", "window_start", "_lock")

    def __init__(self, window_start: float = 0.0):
        self.count = 0
        self.window_start = window_start
        self._lock = threading.Lock()

    def on_pulse(self) -> None:
        with self._lock:
            self.count += 1

    def add(self, n: int) -> None:
        with self._lock:
            self.count += n

    def read(self) -> int:
        with self._lock:
            return self.count

    def read_and_reset(self, now: float) -> tuple[int, float]:
        """Return (pulses, window length) and open a new window at ``now``."""
        with self._lock:
            n, self.count = self.count, 0
            start, self.window_start = self.window_start, now
        return n, now - start


def isr_on_pulse(counter: PulseCounter) -> PulseCounter:
    counter.on_pulse()
    return counter


def compute_rpm(pulses: int, window_s: float, pulses_per_rev: int) -> tuple[float, float]:
    if not window_s > 0:
        raise ValueError("window_s must be > 0")
    if pulses_per_rev < 1:
        raise ValueError("pulses_per_rev must be >= 1")
    rpm = 60.0 * pulses / (pulses_per_rev * window_s)
    return rpm, rpm * TWO_PI / 60.0


class FilterState(NamedTuple):
    alpha: float
    value: Optional[float] = None


def ema_step(state: FilterState, x: float) -> tuple[FilterState, float]:
    a, prev = state
    y = x if prev is None else a * x + (1.0 - a) * prev
    return FilterState(a, y), y


def ema_settling_samples(alpha: float, fraction: float = 0.95) -> int:
    """Samples until a unit step reaches ``fraction`` of its final value."""
    if alpha >= 1.0:
        return 1
    return math.ceil(math.log(1.0 - fraction) / math.log(1.0 - alpha))


def air_density(temp_c: float, pressure_pa: float) -> float:
    """Dry-air ideal gas density."""
    if not temp_c > -60.0:
        raise ValueError(f"temperature {temp_c} C outside physical range")
    if not 80000.0 <= pressure_pa <= 110000.0:
        raise ValueError(f"pressure {pressure_pa} Pa outside [80000, 110000]")
    return pressure_pa / (R_DRY * (temp_c + 273.15))


def compute_cp(power_w: float, rho: float, area_m2: float, wind_mps: float) -> float:
    return power_w / (0.5 * rho * area_m2 * wind_mps ** 3)


def compute_lambda(omega_rad_s: float, radius_m: float, wind_mps: float) -> float:
    return omega_rad_s * radius_m / wind_mps


def validate_sample(record: Record, limits: Limits = Limits()) -> int:
    """Flags to OR into ``record.flags``; the record itself is not touched."""
    flags = 0
    v = record.wind_speed_mps
    if v < limits.wind_min or v > limits.wind_max:
        flags |= F_RANGE_WIND
    rpm = record.rotor_rpm
    if rpm < limits.rpm_min or rpm > limits.rpm_max:
        flags |= F_RANGE_RPM
    if record.power_w < 0:
        flags |= F_REVERSE_CURRENT
    return flags


# boot-time stand-ins until the environment sensor has answered once
_ENV_BOOT = (15.0, 101325.0, 50.0)  # temp, pressure, humidity


@dataclass
class AcquisitionState:
    """Everything the tick context owns between samples.

    Filter outputs are plain floats (``None`` until the first input).
    """

    alpha: float
    counter: PulseCounter = field(default_factory=PulseCounter)
    wind_ema: Optional[float] = None
    power_ema: Optional[float] = None
    last_good: list = field(default_factory=lambda: list(_ENV_BOOT))

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")

    def reset(self, now: float) -> None:
        """Power-on state: filters empty, pulse window restarted."""
        self.counter.read_and_reset(now)
        self.wind_ema = None
        self.power_ema = None


def acquire_tick(
    meas: Measurement,
    state: AcquisitionState,
    clock: ClockState,
    config: Config,
    now: float,
) -> tuple[Record, ClockState]:
    """Sample every channel once and produce a stamped, flagged record.

    Pulses are expected to have been delivered to ``state.counter`` already
    (by the interrupt side). Invalid raw readings are kept in the record but
    never fed to the filters.
    """
    geom = config.geometry
    limits = config.limits
    flags = 0

    pulses, window = state.counter.read_and_reset(now)
    if window <= 0:
        window = config.tick_s
    rpm = 60.0 * pulses / (geom.pulses_per_revolution * window)
    omega = rpm * TWO_PI / 60.0

    last = state.last_good
    if meas[6]:
        temp, pressure, humidity = last[0], last[1], last[2] = meas[3], meas[4], meas[5]
    else:
        flags |= F_SENSOR_FAULT
        temp, pressure, humidity = last

    # range checks see the values exactly as they will be logged
    wind = round(meas[0], 2)
    rpm = round(rpm, 2)
    power = round(meas[1] * meas[2], 1)
    if wind < limits.wind_min or wind > limits.wind_max:
        flags |= F_RANGE_WIND
    if rpm < limits.rpm_min or rpm > limits.rpm_max:
        flags |= F_RANGE_RPM
    if power < 0:
        flags |= F_REVERSE_CURRENT

    a = state.alpha
    v_f = state.wind_ema
    if not flags & F_RANGE_WIND:
        v_f = state.wind_ema = wind if v_f is None else a * wind + (1.0 - a) * v_f
    p_f = state.power_ema
    p_f = state.power_ema = power if p_f is None else a * power + (1.0 - a) * p_f

    if temp > -60.0 and 80000.0 <= pressure <= 110000.0:
        rho = pressure / (R_DRY * (temp + 273.15))
    else:
        rho = None
        flags |= F_SENSOR_FAULT

    cp = tsr = None
    if v_f is None or v_f < config.cutin_wind_mps:
        flags |= F_BELOW_CUTIN
    else:
        tsr = round(omega * geom.rotor_radius_m / v_f, 4)
        if rho is not None:
            cp = p_f / (0.5 * rho * geom.swept_area_m2 * v_f * v_f * v_f)
            if cp > BETZ_LIMIT:
                flags |= F_BETZ_EXCEEDED
            cp = round(cp, 4)
    if rho is not None:
        rho = round(rho, 4)

    ts, clock = stamp(clock)
    if not clock[3]:
        flags |= F_CLOCK_UNSYNCED
    # same rounding as make_record, without rounding the checked fields twice
    rec = Record(
        ts[0], ts[1], wind, rpm, round(omega, 4), round(meas[1], 3), round(meas[2], 3), power,
        round(temp, 2), round(pressure, 1), round(humidity, 1), rho, cp, tsr, flags,
    )
    return rec, clock
