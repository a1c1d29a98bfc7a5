"""Shared domain types: quality flags, turbine geometry, sensor specs, records."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

BETZ_LIMIT = 0.593
RHO_STD = 1.225  # kg/m^3
R_DRY = 287.05  # J/(kg K), dry air


class Flag(enum.IntFlag):
    RANGE_WIND = 1 << 0
    RANGE_RPM = 1 << 1
    REVERSE_CURRENT = 1 << 2
    SENSOR_FAULT = 1 << 3
    DUP_TIMESTAMP = 1 << 4
    OUT_OF_SEQUENCE = 1 << 5
    BELOW_CUTIN = 1 << 6
    BETZ_EXCEEDED = 1 << 7
    CLOCK_UNSYNCED = 1 << 8


FLAG_NAMES = tuple(f.name for f in Flag)
ALL_FLAGS_MASK = (1 << len(FLAG_NAMES)) - 1

# plain ints for the per-tick hot path
F_RANGE_WIND = int(Flag.RANGE_WIND)
F_RANGE_RPM = int(Flag.RANGE_RPM)
F_REVERSE_CURRENT = int(Flag.REVERSE_CURRENT)
F_SENSOR_FAULT = int(Flag.SENSOR_FAULT)
F_DUP_TIMESTAMP = int(Flag.DUP_TIMESTAMP)
F_OUT_OF_SEQUENCE = int(Flag.OUT_OF_SEQUENCE)
F_BELOW_CUTIN = int(Flag.BELOW_CUTIN)
F_BETZ_EXCEEDED = int(Flag.BETZ_EXCEEDED)
F_CLOCK_UNSYNCED = int(Flag.CLOCK_UNSYNCED)

INVALID_MASK = F_RANGE_WIND | F_RANGE_RPM | F_SENSOR_FAULT


def flags_encode(names: Iterable[str]) -> int:
    mask = 0
    for name in names:
        try:
            mask |= Flag[name].value
        except KeyError:
            raise ValueError(f"unknown flag name: {name!r}") from None
    return mask


def flags_decode(mask: int) -> set[str]:
    if mask < 0 or mask & ~ALL_FLAGS_MASK:
        raise ValueError(f"bitmask {mask} uses undefined bits")
    return {f.name for f in Flag if mask & f.value}


@dataclass(frozen=True)
class TurbineGeometry:
    rotor_radius_m: float
    rotor_height_m: float
    pulses_per_revolution: int = 4

    def __post_init__(self):
        if not self.rotor_radius_m > 0:
            raise ValueError("rotor_radius_m must be > 0")
        if not self.rotor_height_m > 0:
            raise ValueError("rotor_height_m must be > 0")
        if self.pulses_per_revolution < 1:
            raise ValueError("pulses_per_revolution must be >= 1")

    @property
    def swept_area_m2(self) -> float:
        # projected rectangle of a helical VAWT
        return 2.0 * self.rotor_radius_m * self.rotor_height_m


@dataclass(frozen=True)
class SensorSpec:
    valid_min: float
    valid_max: float
    noise_std: float = 0.0
    bias: float = 0.0
    gain_correction: float = 1.0
    offset_correction: float = 0.0
    quantization_bits: int = 12

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be >= 0")
        if not self.valid_min < self.valid_max:
            raise ValueError("valid_min must be < valid_max")
        if not 1 <= self.quantization_bits <= 24:
            raise ValueError("quantization_bits must be in [1, 24]")

    @property
    def quantum(self) -> float:
        return (self.valid_max - self.valid_min) / (1 << self.quantization_bits)


class Record(NamedTuple):
    """One acquisition sample.

    Raw readings are kept as measured, derived quantities (density, Cp, tip
    speed ratio) may be ``None`` when they could not be computed.
    ``timestamp_utc`` is integer Unix seconds; ``seq`` disambiguates samples
    stamped within the same second.
    """

    timestamp_utc: int
    seq: int
    wind_speed_mps: float
    rotor_rpm: float
    rotor_omega_rad_s: float
    voltage_v: float
    current_a: float
    power_w: float
    temp_c: float
    pressure_pa: float
    humidity_pct: float
    air_density_kg_m3: Optional[float]
    cp: Optional[float]
    tsr: Optional[float]
    flags: int = 0

    @property
    def stamp(self) -> tuple[int, int]:
        return (self.timestamp_utc, self.seq)


# decimal places per CSV column; records are rounded to these at creation so
# that serialization round-trips exactly
DECIMALS = {
    "wind_speed_mps": 2,
    "rotor_rpm": 2,
    "rotor_omega_rad_s": 4,
    "voltage_v": 3,
    "current_a": 3,
    "power_w": 1,
    "temp_c": 2,
    "pressure_pa": 1,
    "humidity_pct": 1,
    "air_density_kg_m3": 4,
    "cp": 4,
    "tsr": 4,
}


def make_record(
    timestamp_utc: int,
    seq: int,
    wind_speed_mps: float,
    rotor_rpm: float,
    rotor_omega_rad_s: float,
    voltage_v: float,
    current_a: float,
    power_w: float,
    temp_c: float,
    pressure_pa: float,
    humidity_pct: float,
    air_density_kg_m3: Optional[float],
    cp: Optional[float],
    tsr: Optional[float],
    flags: int = 0,
) -> Record:
    """Build a Record with every float rounded to its CSV precision."""
    return Record(
        int(timestamp_utc),
        int(seq),
        round(wind_speed_mps, 2),
        round(rotor_rpm, 2),
        round(rotor_omega_rad_s, 4),
        round(voltage_v, 3),
        round(current_a, 3),
        round(power_w, 1),
        round(temp_c, 2),
        round(pressure_pa, 1),
        round(humidity_pct, 1),
        None if air_density_kg_m3 is None else round(air_density_kg_m3, 4),
        None if cp is None else round(cp, 4),
        None if tsr is None else round(tsr, 4),
        int(flags),
    )


@dataclass(frozen=True)
class Limits:
    """Acquisition-time range check thresholds."""

    wind_min: float = 0.0
    wind_max: float = 25.0
    rpm_min: float = 0.0
    rpm_max: float = 500.0


SENSOR_CHANNELS = ("wind", "voltage", "current", "temp", "pressure", "humidity")


def default_sensors() -> dict[str, SensorSpec]:
    return {
        # anemometer, +-0.3 m/s at 10 m/s treated as one standard deviation
        "wind": SensorSpec(valid_min=0.0, valid_max=50.0, noise_std=0.3, quantization_bits=12),
        "voltage": SensorSpec(valid_min=0.0, valid_max=60.0, noise_std=0.02, quantization_bits=16),
        "current": SensorSpec(valid_min=-20.0, valid_max=20.0, noise_std=0.02, quantization_bits=16),
        "temp": SensorSpec(valid_min=-40.0, valid_max=85.0, noise_std=0.1, quantization_bits=16),
        "pressure": SensorSpec(valid_min=30000.0, valid_max=110000.0, noise_std=5.0, quantization_bits=20),
        "humidity": SensorSpec(valid_min=0.0, valid_max=100.0, noise_std=1.0, quantization_bits=16),
    }


@dataclass(frozen=True)
class TelemetrySettings:
    enabled: bool = False
    queue_capacity: int = 7200
    rate_limit: int = 2
    backoff_base_s: float = 5.0
    backoff_cap_s: float = 300.0
    backoff_jitter: float = 0.1
    site_id: str = "site0"


@dataclass(frozen=True)
class ClockSettings:
    drift_ppm: float = 2.0
    initial_offset_s: float = 0.0
    ntp_step_threshold_s: float = 1.0
    ntp_sync_interval_s: float = 3600.0


@dataclass(frozen=True)
class SiteSettings:
    """Ground-truth environment for the simulator."""

    start_utc: int = 1735689600  # 2025-01-01T00:00:00Z
    wind_mean_mps: float = 6.0
    wind_reversion_s: float = 60.0
    wind_volatility_mps: float = 0.8
    temp_mean_c: float = 15.0
    temp_amplitude_c: float = 3.0
    pressure_mean_pa: float = 101325.0
    pressure_amplitude_pa: float = 100.0
    humidity_mean_pct: float = 75.0
    humidity_amplitude_pct: float = 10.0
    rotor_time_constant_s: float = 15.0
    invalid_rate: float = 0.0
    # load sweep: the rotor's target tip speed ratio follows a triangle wave
    # between the two bounds; a period of 0 tracks the Cp peak instead
    tsr_sweep_period_s: float = 0.0
    tsr_sweep_min: float = 0.5
    tsr_sweep_max: float = 4.0


@dataclass(frozen=True)
class Config:
    geometry: TurbineGeometry
    sensors: dict = field(default_factory=default_sensors)
    sample_rate_hz: int = 1
    ema_alpha: float = 0.2
    cutin_wind_mps: float = 1.0
    flush_interval_s: float = 60.0
    buffer_capacity: int = 60
    ring_capacity: int = 3600
    sd_max_retries: int = 3
    remount_interval_s: float = 60.0
    u_wind_mps: float = 0.3
    u_power_rel: float = 0.02
    u_rho_rel: float = 0.005
    u_area_rel: float = 0.0
    bin_width_lambda: float = 0.25
    min_bin_count: int = 30
    limits: Limits = field(default_factory=Limits)
    telemetry: TelemetrySettings = field(default_factory=TelemetrySettings)
    clock: ClockSettings = field(default_factory=ClockSettings)
    site: SiteSettings = field(default_factory=SiteSettings)
    metadata: dict = field(default_factory=dict)
    diagnostics: str = "faults"

    @property
    def tick_s(self) -> float:
        return 1.0 / self.sample_rate_hz
