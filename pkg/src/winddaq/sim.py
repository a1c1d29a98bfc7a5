"""Seeded ground-truth generator: wind, turbine, sensors and fault schedule."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .model import BETZ_LIMIT, RHO_STD, SENSOR_CHANNELS, Config, SensorSpec, SiteSettings, TurbineGeometry

TWO_PI = 2.0 * math.pi
DAY_S = 86400.0
GENERATOR_V_PER_RAD_S = 0.5

FAULT_KINDS = ("POWER_OUTAGE", "SD_FAIL", "NET_OUTAGE", "SENSOR_STUCK")


class NoiseStream:
    """Standard normal and uniform draws handed out from pre-drawn blocks."""

    def __init__(self, seed, block: int = 8192):
        self._gen = np.random.Generator(np.random.PCG64(seed))
        self._block = block
        self._normals: list[float] = []
        self._ni = 0
        self._uniforms: list[float] = []
        self._ui = 0

    def normal(self) -> float:
        i = self._ni
        if i >= len(self._normals):
            self._normals = self._gen.standard_normal(self._block).tolist()
            i = 0
        self._ni = i + 1
        return self._normals[i]

    def uniform(self) -> float:
        i = self._ui
        if i >= len(self._uniforms):
            self._uniforms = self._gen.random(self._block).tolist()
            i = 0
        self._ui = i + 1
        return self._uniforms[i]

    def normals(self, n: int) -> list[float]:
        i = self._ni
        if i + n <= len(self._normals):
            self._ni = i + n
            return self._normals[i:i + n]
        return [self.normal() for _ in range(n)]


class EnvState(NamedTuple):
    true_wind_mps: float
    true_temp_c: float
    true_pressure_pa: float
    true_humidity_pct: float
    sim_time_s: float
    wind_process: float  # unclipped mean-reverting state

    @classmethod
    def initial(cls, site: SiteSettings) -> "EnvState":
        return _diurnal(site, 0.0, site.wind_mean_mps)


def _diurnal(site: SiteSettings, sim_time: float, wind_process: float) -> EnvState:
    phase = TWO_PI * ((site.start_utc + sim_time) % DAY_S) / DAY_S
    # warmest mid-afternoon, humidity in anti-phase, semi-diurnal pressure tide
    s = math.sin(phase - 1.75 * math.pi)
    temp = site.temp_mean_c + site.temp_amplitude_c * s
    pressure = site.pressure_mean_pa + site.pressure_amplitude_pa * math.sin(2.0 * phase)
    pressure = min(110000.0, max(80000.0, pressure))
    hum = min(100.0, max(0.0, site.humidity_mean_pct - site.humidity_amplitude_pct * s))
    return EnvState(max(0.0, wind_process), temp, pressure, hum, sim_time, wind_process)


def step_environment(state: EnvState, dt: float, rng: NoiseStream, site: SiteSettings) -> EnvState:
    """Advance the environment by ``dt`` seconds.

    Wind is an exactly discretised Ornstein-Uhlenbeck process whose stationary
    standard deviation is ``site.wind_volatility_mps``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    phi = math.exp(-dt / site.wind_reversion_s)
    sigma = site.wind_volatility_mps * math.sqrt(1.0 - phi * phi)
    mu = site.wind_mean_mps
    x = mu + (state.wind_process - mu) * phi + sigma * rng.normal()
    return _diurnal(site, state.sim_time_s + dt, x)


@dataclass(frozen=True)
class CpCurve:
    """Piecewise-linear Cp(lambda) table, clamped at both ends."""

    tsr: tuple
    cp: tuple

    def __post_init__(self):
        if len(self.tsr) != len(self.cp) or len(self.tsr) < 2:
            raise ValueError("curve needs matching knot lists of length >= 2")
        if any(b <= a for a, b in zip(self.tsr, self.tsr[1:])):
            raise ValueError("tsr knots must be strictly increasing")
        if max(self.cp) > BETZ_LIMIT or min(self.cp) < 0:
            raise ValueError(f"curve Cp must lie in [0, {BETZ_LIMIT}]")

    def __call__(self, lam: float) -> float:
        xs, ys = self.tsr, self.cp
        if lam <= xs[0]:
            return ys[0]
        if lam >= xs[-1]:
            return ys[-1]
        i = bisect.bisect_right(xs, lam)
        x0, x1 = xs[i - 1], xs[i]
        return ys[i - 1] + (ys[i] - ys[i - 1]) * (lam - x0) / (x1 - x0)

    @property
    def peak_tsr(self) -> float:
        return self.tsr[max(range(len(self.cp)), key=self.cp.__getitem__)]

    @classmethod
    def constant(cls, value: float) -> "CpCurve":
        return cls((0.0, 100.0), (value, value))


# helical VAWT-like shape, peak placed mid-way through a 0.25-wide lambda bin
DEFAULT_CURVE = CpCurve(
    tsr=(0.0, 0.5, 1.0, 1.5, 2.0, 2.375, 2.75, 3.25, 4.0, 5.0),
    cp=(0.0, 0.01, 0.04, 0.12, 0.24, 0.30, 0.25, 0.14, 0.0, 0.0),
)


class TurbineTruth(NamedTuple):
    omega_rad_s: float
    power_w: float
    cp_true: float
    tsr_true: float


def target_tsr(site: SiteSettings, curve: CpCurve, sim_time: float) -> float:
    """Tip speed ratio the rotor is steered toward at ``sim_time``."""
    period = site.tsr_sweep_period_s
    if period <= 0:
        return curve.peak_tsr
    x = (sim_time / period) % 1.0
    tri = 2.0 * x if x < 0.5 else 2.0 - 2.0 * x
    return site.tsr_sweep_min + (site.tsr_sweep_max - site.tsr_sweep_min) * tri


def turbine_response(
    env: EnvState,
    geometry: TurbineGeometry,
    curve: CpCurve = DEFAULT_CURVE,
    prev_omega: float = 0.0,
    dt: float = 1.0,
    time_constant_s: float = 15.0,
    tsr_target: Optional[float] = None,
) -> TurbineTruth:
    """Rotor lags toward a target tip speed ratio (the Cp peak by default).

    Power uses standard air density, not the density of the day.
    """
    v = env.true_wind_mps
    r = geometry.rotor_radius_m
    target = (curve.peak_tsr if tsr_target is None else tsr_target) * v / r
    omega = prev_omega + (target - prev_omega) * (1.0 - math.exp(-dt / time_constant_s))
    if v <= 0.0:
        return TurbineTruth(omega, 0.0, 0.0, 0.0)
    lam = omega * r / v
    cp = min(BETZ_LIMIT, max(0.0, curve(lam)))
    power = cp * 0.5 * RHO_STD * geometry.swept_area_m2 * v ** 3
    return TurbineTruth(omega, power, cp, lam)


def hall_pulse_count(omega_rad_s: float, dt: float, pulses_per_rev: int, phase: float = 0.0) -> tuple[int, float]:
    """Whole pulses emitted in ``dt``; the fractional remainder carries over."""
    if omega_rad_s < 0:
        raise ValueError("omega must be >= 0")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    total = phase + omega_rad_s * dt * pulses_per_rev / TWO_PI
    n = math.floor(total)
    return n, total - n


def quantize(x: float, spec: SensorSpec) -> float:
    q = spec.quantum
    top = (1 << spec.quantization_bits) - 1
    level = round((x - spec.valid_min) / q)
    level = 0 if level < 0 else (top if level > top else level)
    return spec.valid_min + level * q


def sensor_read(
    true_value: float,
    spec: SensorSpec,
    rng: NoiseStream,
    stuck: bool = False,
    previous: Optional[float] = None,
) -> float:
    """One ADC conversion: bias, noise, linear correction, quantization.

    A stuck channel returns ``previous`` unchanged (noise is still drawn so
    the stream stays aligned with the step index).
    """
    z = rng.normal()
    if stuck and previous is not None:
        return previous
    x = spec.gain_correction * (true_value + spec.bias + spec.noise_std * z) + spec.offset_correction
    return quantize(x, spec)


@dataclass(frozen=True)
class Fault:
    start_s: float
    end_s: float
    kind: str
    channel: Optional[str] = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if not self.start_s < self.end_s:
            raise ValueError("fault start_s must be < end_s")
        if self.kind == "SENSOR_STUCK":
            if self.channel not in SENSOR_CHANNELS:
                raise ValueError(f"SENSOR_STUCK needs a channel in {SENSOR_CHANNELS}")
        elif self.channel is not None:
            raise ValueError(f"{self.kind} takes no channel")

    @property
    def label(self) -> str:
        return f"SENSOR_STUCK:{self.channel}" if self.kind == "SENSOR_STUCK" else self.kind


@dataclass
class FaultSchedule:
    faults: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.faults)

    def __len__(self):
        return len(self.faults)

    def boundaries(self) -> list[float]:
        pts = set()
        for f in self.faults:
            pts.add(f.start_s)
            pts.add(f.end_s)
        return sorted(pts)

    def total(self, kind: str) -> float:
        return sum(f.end_s - f.start_s for f in self.faults if f.kind == kind)


def faults_active(schedule: FaultSchedule, t: float) -> frozenset:
    """Labels of faults covering ``t`` (intervals are [start, end))."""
    return frozenset(f.label for f in schedule if f.start_s <= t < f.end_s)


class FaultTimeline:
    """Amortised faults_active for monotonically increasing query times."""

    def __init__(self, schedule: FaultSchedule):
        self.schedule = schedule
        self._points = schedule.boundaries()
        self._lo = self._hi = 0.0
        self._active: frozenset = frozenset()

    def at(self, t: float) -> frozenset:
        if self._lo <= t < self._hi:
            return self._active
        pts = self._points
        i = bisect.bisect_right(pts, t)
        self._lo = pts[i - 1] if i > 0 else -math.inf
        self._hi = pts[i] if i < len(pts) else math.inf
        self._active = faults_active(self.schedule, t)
        return self._active

    def next_change(self, t: float) -> float:
        self.at(t)
        return self._hi


def parse_fault_schedule(text: str) -> FaultSchedule:
    """``start_s end_s KIND [channel]`` per line, ``#`` comments allowed."""
    faults = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise ValueError(f"line {lineno}: expected 'start_s end_s KIND [channel]'")
        try:
            faults.append(Fault(float(parts[0]), float(parts[1]), parts[2], parts[3] if len(parts) == 4 else None))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return FaultSchedule(faults)


def load_fault_schedule(path: str | Path) -> FaultSchedule:
    return parse_fault_schedule(Path(path).read_text())


def format_fault_schedule(schedule: FaultSchedule) -> str:
    lines = []
    for f in schedule:
        tail = f" {f.channel}" if f.channel else ""
        lines.append(f"{f.start_s:g} {f.end_s:g} {f.kind}{tail}\n")
    return "".join(lines)


class Measurement(NamedTuple):
    wind: float
    voltage: float
    current: float
    temp: float
    pressure: float
    humidity: float
    env_ok: bool
    pulses: int


GLITCH_WIND, GLITCH_RPM, GLITCH_READ = 0, 1, 2


class Simulator:
    """Advances truth one tick at a time and produces sensor readings.

    Random streams are split per concern (wind, sensor noise, glitches) from
    one seed, so the measurement stream depends only on (seed, tick index).
    """

    def __init__(self, config: Config, seed: int, curve: CpCurve = DEFAULT_CURVE):
        self.config = config
        self.site = config.site
        self.geometry = config.geometry
        self.curve = curve
        self.dt = config.tick_s
        ss = np.random.SeedSequence(seed)
        wind_ss, sensor_ss, glitch_ss = ss.spawn(3)
        self.wind_rng = NoiseStream(wind_ss)
        self.sensor_rng = NoiseStream(sensor_ss)
        self.glitch_rng = NoiseStream(glitch_ss)
        self.env = EnvState.initial(self.site)
        self.truth = TurbineTruth(0.0, 0.0, 0.0, 0.0)
        self.phase = 0.0
        self.tick = 0
        self._prev = [None] * len(SENSOR_CHANNELS)
        specs = [config.sensors[ch] for ch in SENSOR_CHANNELS]
        self._adc = [
            (sp.gain_correction, sp.bias, sp.noise_std, sp.offset_correction, sp.valid_min, sp.quantum,
             (1 << sp.quantization_bits) - 1)
            for sp in specs
        ]
        # OU constants for the inlined hot path
        phi = math.exp(-self.dt / self.site.wind_reversion_s)
        self._phi = phi
        self._sigma = self.site.wind_volatility_mps * math.sqrt(1.0 - phi * phi)
        self._lag = 1.0 - math.exp(-self.dt / self.site.rotor_time_constant_s)
        self._pulse_k = self.dt * self.geometry.pulses_per_revolution / TWO_PI
        self._peak = curve.peak_tsr
        self._sweep = self.site.tsr_sweep_period_s
        self._diurnal_cache: dict = {}
        self._half_rho_a = 0.5 * RHO_STD * self.geometry.swept_area_m2

    def step(self, stuck: Iterable[str] = ()) -> tuple[EnvState, TurbineTruth, Measurement]:
        """Advance one tick.

        Equivalent to step_environment, turbine_response, hall_pulse_count
        and sensor_read applied in turn, inlined for speed.
        """
        site = self.site
        dt = self.dt
        mu = site.wind_mean_mps
        e = self.env
        x = mu + (e.wind_process - mu) * self._phi + self._sigma * self.wind_rng.normal()
        t = e.sim_time_s + dt
        key = t % DAY_S
        d = self._diurnal_cache.get(key)
        if d is None:
            d = _diurnal(site, t, 0.0)[1:4]
            self._diurnal_cache[key] = d
        v = x if x > 0.0 else 0.0
        env = EnvState(v, d[0], d[1], d[2], t, x)

        r = self.geometry.rotor_radius_m
        omega = self.truth.omega_rad_s
        lam_target = self._peak if self._sweep <= 0 else target_tsr(site, self.curve, t)
        omega += (lam_target * v / r - omega) * self._lag
        if v <= 0.0:
            truth = TurbineTruth(omega, 0.0, 0.0, 0.0)
        else:
            lam = omega * r / v
            cp = self.curve(lam)
            cp = BETZ_LIMIT if cp > BETZ_LIMIT else (0.0 if cp < 0.0 else cp)
            truth = TurbineTruth(omega, cp * self._half_rho_a * v * v * v, cp, lam)
        self.env, self.truth = env, truth

        total = self.phase + omega * self._pulse_k
        pulses = math.floor(total)
        self.phase = total - pulses
        volts = GENERATOR_V_PER_RAD_S * omega
        amps = truth.power_w / volts if volts > 1e-6 else 0.0
        true_vals = (v, volts, amps, env.true_temp_c, env.true_pressure_pa, env.true_humidity_pct)
        z = self.sensor_rng.normals(6)
        out = []
        for (gain, bias, noise, offset, vmin, q, top), tv, zi in zip(self._adc, true_vals, z):
            level = round((gain * (tv + bias + noise * zi) + offset - vmin) / q)
            level = 0 if level < 0 else (top if level > top else level)
            out.append(vmin + level * q)
        prev = self._prev
        if stuck:
            for j, ch in enumerate(SENSOR_CHANNELS):
                if ch in stuck and prev[j] is not None:
                    out[j] = prev[j]
        self._prev = out

        env_ok = True
        g = self.glitch_rng
        u = g.uniform()
        w = g.uniform()
        rate = site.invalid_rate
        if u < rate:
            kind = int(w * 3.0)
            if kind == GLITCH_WIND:
                out = list(out)
                out[0] = 30.0 + 15.0 * (u / rate)
            elif kind == GLITCH_RPM:
                pulses += 40
            else:
                env_ok = False
        self.tick += 1
        return env, truth, Measurement(out[0], out[1], out[2], out[3], out[4], out[5], env_ok, pulses)
