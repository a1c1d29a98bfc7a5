"""Flat ``key = value`` configuration documents and their validation."""
from __future__ import annotations

import calendar
import math
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

from .model import (
    SENSOR_CHANNELS,
    ClockSettings,
    Config,
    Limits,
    SensorSpec,
    SiteSettings,
    TelemetrySettings,
    TurbineGeometry,
    default_sensors,
)


class ConfigError(ValueError):
    """Raised with every violation found in a config document."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def parse_kv(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected 'key = value'"])
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path) -> Config:
    return validate_config(parse_kv(Path(path).read_text()))


def parse_utc(value: str) -> int:
    return calendar.timegm(time.strptime(value, "%Y-%m-%dT%H:%M:%SZ"))


def format_utc(t: int) -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _to_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _to_int(v: Any) -> int:
    if isinstance(v, bool):
        raise ValueError("not an integer")
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        if not v.is_integer():
            raise ValueError(f"not an integer: {v!r}")
        return int(v)
    return int(str(v).strip())


def _to_float(v: Any) -> float:
    if isinstance(v, bool):
        raise ValueError("not a number")
    x = float(v)
    if not math.isfinite(x):
        raise ValueError(f"not a finite number: {v!r}")
    return x


def _to_time(v: Any) -> int:
    if isinstance(v, int) and not isinstance(v, bool):
        return v
    return parse_utc(str(v).strip())


@dataclass(frozen=True)
class _Key:
    section: str
    attr: str
    conv: Callable[[Any], Any]
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


_KEYS: dict[str, _Key] = {
    "rotor_radius_m": _Key("geometry", "rotor_radius_m", _to_float, _pos, "must be > 0"),
    "rotor_height_m": _Key("geometry", "rotor_height_m", _to_float, _pos, "must be > 0"),
    "pulses_per_revolution": _Key("geometry", "pulses_per_revolution", _to_int, lambda x: x >= 1, "must be >= 1"),
    "sample_rate_hz": _Key("top", "sample_rate_hz", _to_int, lambda x: x in (1, 2), "must be one of {1, 2}"),
    "ema_alpha": _Key("top", "ema_alpha", _to_float, lambda x: 0 < x <= 1, "out of (0,1]"),
    "cutin_wind_mps": _Key("top", "cutin_wind_mps", _to_float, _pos, "must be > 0"),
    "flush_interval_s": _Key("top", "flush_interval_s", _to_float, _pos, "must be > 0"),
    "buffer_capacity": _Key("top", "buffer_capacity", _to_int, lambda x: x >= 1, "must be >= 1"),
    "ring_capacity": _Key("top", "ring_capacity", _to_int, lambda x: x >= 1, "must be >= 1"),
    "sd_max_retries": _Key("top", "sd_max_retries", _to_int, _nonneg, "must be >= 0"),
    "remount_interval_s": _Key("top", "remount_interval_s", _to_float, _pos, "must be > 0"),
    "u_wind_mps": _Key("top", "u_wind_mps", _to_float, _nonneg, "must be >= 0"),
    "u_rho_rel": _Key("top", "u_rho_rel", _to_float, _nonneg, "must be >= 0"),
    "u_power_rel": _Key("top", "u_power_rel", _to_float, _nonneg, "must be >= 0"),
    "u_area_rel": _Key("top", "u_area_rel", _to_float, _nonneg, "must be >= 0"),
    "bin_width_lambda": _Key("top", "bin_width_lambda", _to_float, _pos, "must be > 0"),
    "min_bin_count": _Key("top", "min_bin_count", _to_int, lambda x: x >= 1, "must be >= 1"),
    "diagnostics": _Key("top", "diagnostics", str, lambda x: x in ("faults", "all", "none"), "must be one of {faults, all, none}"),
    "limit_wind_min": _Key("limits", "wind_min", _to_float),
    "limit_wind_max": _Key("limits", "wind_max", _to_float),
    "limit_rpm_min": _Key("limits", "rpm_min", _to_float),
    "limit_rpm_max": _Key("limits", "rpm_max", _to_float),
    "telemetry_enabled": _Key("telemetry", "enabled", _to_bool),
    "telemetry_queue_capacity": _Key("telemetry", "queue_capacity", _to_int, lambda x: x >= 1, "must be >= 1"),
    "telemetry_rate_limit": _Key("telemetry", "rate_limit", _to_int, lambda x: x >= 1, "must be >= 1"),
    "backoff_base_s": _Key("telemetry", "backoff_base_s", _to_float, _pos, "must be > 0"),
    "backoff_cap_s": _Key("telemetry", "backoff_cap_s", _to_float, _pos, "must be > 0"),
    "backoff_jitter": _Key("telemetry", "backoff_jitter", _to_float, lambda x: 0 <= x < 1, "must be in [0, 1)"),
    "site_id": _Key("telemetry", "site_id", str, lambda x: bool(x) and "/" not in x, "must be non-empty without '/'"),
    "drift_ppm": _Key("clock", "drift_ppm", _to_float, lambda x: abs(x) <= 50, "|drift_ppm| must be <= 50"),
    "clock_initial_offset_s": _Key("clock", "initial_offset_s", _to_float),
    "ntp_step_threshold_s": _Key("clock", "ntp_step_threshold_s", _to_float, _nonneg, "must be >= 0"),
    "ntp_sync_interval_s": _Key("clock", "ntp_sync_interval_s", _to_float, _pos, "must be > 0"),
    "start_utc": _Key("site", "start_utc", _to_time),
    "wind_mean_mps": _Key("site", "wind_mean_mps", _to_float, _nonneg, "must be >= 0"),
    "wind_reversion_s": _Key("site", "wind_reversion_s", _to_float, _pos, "must be > 0"),
    "wind_volatility_mps": _Key("site", "wind_volatility_mps", _to_float, _nonneg, "must be >= 0"),
    "temp_mean_c": _Key("site", "temp_mean_c", _to_float, lambda x: x > -60, "must be > -60"),
    "temp_amplitude_c": _Key("site", "temp_amplitude_c", _to_float, _nonneg, "must be >= 0"),
    "pressure_mean_pa": _Key("site", "pressure_mean_pa", _to_float, lambda x: 80000 <= x <= 110000, "must be in [80000, 110000]"),
    "pressure_amplitude_pa": _Key("site", "pressure_amplitude_pa", _to_float, _nonneg, "must be >= 0"),
    "humidity_mean_pct": _Key("site", "humidity_mean_pct", _to_float, lambda x: 0 <= x <= 100, "must be in [0, 100]"),
    "humidity_amplitude_pct": _Key("site", "humidity_amplitude_pct", _to_float, _nonneg, "must be >= 0"),
    "rotor_time_constant_s": _Key("site", "rotor_time_constant_s", _to_float, _pos, "must be > 0"),
    "invalid_rate": _Key("site", "invalid_rate", _to_float, lambda x: 0 <= x <= 1, "must be in [0, 1]"),
    "tsr_sweep_period_s": _Key("site", "tsr_sweep_period_s", _to_float, _nonneg, "must be >= 0"),
    "tsr_sweep_min": _Key("site", "tsr_sweep_min", _to_float, _nonneg, "must be >= 0"),
    "tsr_sweep_max": _Key("site", "tsr_sweep_max", _to_float, _pos, "must be > 0"),
}

_SENSOR_FIELDS = {
    "noise_std": _to_float,
    "bias": _to_float,
    "gain_correction": _to_float,
    "offset_correction": _to_float,
    "quantization_bits": _to_int,
    "valid_min": _to_float,
    "valid_max": _to_float,
}

REQUIRED = ("rotor_radius_m", "rotor_height_m")


def validate_config(raw: Mapping[str, Any]) -> Config:
    """Turn a raw key/value mapping into a Config.

    Every problem is collected and raised together as a ConfigError; nothing
    else escapes for any input mapping.
    """
    errors: list[str] = []
    if not isinstance(raw, Mapping):
        raise ConfigError(["config document must be a key/value mapping"])

    sections: dict[str, dict[str, Any]] = {
        "geometry": {}, "top": {}, "limits": {}, "telemetry": {}, "clock": {}, "site": {},
    }
    sensor_over: dict[str, dict[str, Any]] = {ch: {} for ch in SENSOR_CHANNELS}
    metadata: dict[str, str] = {}

    for key in REQUIRED:
        if key not in raw:
            errors.append(f"{key}: missing required key")

    for key, value in raw.items():
        if not isinstance(key, str):
            errors.append(f"{key!r}: keys must be strings")
            continue
        if key.startswith("meta."):
            metadata[key[5:]] = str(value)
            continue
        if "." in key:
            channel, _, fname = key.partition(".")
            if channel not in sensor_over or fname not in _SENSOR_FIELDS:
                errors.append(f"{key}: unknown key")
                continue
            try:
                sensor_over[channel][fname] = _SENSOR_FIELDS[fname](value)
            except (TypeError, ValueError) as exc:
                errors.append(f"{key}: wrong type ({exc})")
            continue
        spec = _KEYS.get(key)
        if spec is None:
            errors.append(f"{key}: unknown key")
            continue
        try:
            v = spec.conv(value)
        except (TypeError, ValueError, OverflowError) as exc:
            errors.append(f"{key}: wrong type ({exc})")
            continue
        if spec.check is not None and not spec.check(v):
            errors.append(f"{key} {spec.rule} (got {value!r})")
            continue
        sections[spec.section][spec.attr] = v

    sensors = default_sensors()
    for channel, over in sensor_over.items():
        if not over:
            continue
        try:
            sensors[channel] = replace(sensors[channel], **over)
        except (TypeError, ValueError) as exc:
            errors.append(f"{channel}: {exc}")

    geometry = None
    if not errors:
        try:
            geometry = TurbineGeometry(**sections["geometry"])
        except (TypeError, ValueError) as exc:
            errors.append(f"geometry: {exc}")

    pieces = {}
    for name, cls in (("limits", Limits), ("telemetry", TelemetrySettings),
                      ("clock", ClockSettings), ("site", SiteSettings)):
        try:
            pieces[name] = cls(**sections[name])
        except (TypeError, ValueError) as exc:
            errors.append(f"{name}: {exc}")
    if "limits" in pieces:
        lim = pieces["limits"]
        if not (lim.wind_min < lim.wind_max and lim.rpm_min < lim.rpm_max):
            errors.append("limits: min must be < max")
    if "site" in pieces and pieces["site"].tsr_sweep_min >= pieces["site"].tsr_sweep_max:
        errors.append("tsr_sweep_min must be < tsr_sweep_max")
    if "telemetry" in pieces and pieces["telemetry"].backoff_base_s > pieces["telemetry"].backoff_cap_s:
        errors.append("backoff_base_s must be <= backoff_cap_s")

    if errors:
        raise ConfigError(errors)
    return Config(geometry=geometry, sensors=sensors, metadata=metadata, **pieces, **sections["top"])


def config_to_kv(cfg: Config) -> dict[str, str]:
    """Inverse of validate_config, used to echo configs into packages."""
    out: dict[str, str] = {}
    objs = {
        "geometry": cfg.geometry, "top": cfg, "limits": cfg.limits,
        "telemetry": cfg.telemetry, "clock": cfg.clock, "site": cfg.site,
    }
    for key, spec in _KEYS.items():
        v = getattr(objs[spec.section], spec.attr)
        if key == "start_utc":
            v = format_utc(v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        out[key] = str(v)
    for channel in SENSOR_CHANNELS:
        s = cfg.sensors[channel]
        for f in fields(SensorSpec):
            out[f"{channel}.{f.name}"] = str(getattr(s, f.name))
    for k, v in cfg.metadata.items():
        out[f"meta.{k}"] = v
    return out


def dump_kv(kv: Mapping[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in kv.items())
