"""Self-describing dataset package with metadata, licence and checksums."""
from __future__ import annotations

import shutil
import zlib
from pathlib import Path
from typing import Iterable, Mapping

from .. import __version__
from ..config import config_to_kv, format_utc
from ..model import FLAG_NAMES, SENSOR_CHANNELS, Config
from ..storage import COLUMNS
from .curve import Curve, curve_csv
from .quality import QualityReport

MANDATORY_KEYS = (
    "title",
    "creator",
    "keywords",
    "site_coordinates",
    "turbine_radius_m",
    "turbine_height_m",
    "turbine_swept_area_m2",
    "deployment_start",
    "deployment_end",
    "firmware_version",
    "config_version",
    "license",
)
LICENSE = "CC-BY-4.0"
ENTRIES = ("data", "derived", "metadata.txt", "quality_report.txt", "README.txt", "checksums.txt")

UNITS = {
    "timestamp_utc": "ISO-8601 UTC, 1 s resolution",
    "seq": "sequence number within the second",
    "wind_speed_mps": "m/s",
    "rotor_rpm": "rev/min",
    "rotor_omega_rad_s": "rad/s",
    "voltage_v": "V",
    "current_a": "A",
    "power_w": "W",
    "temp_c": "degC",
    "pressure_pa": "Pa",
    "humidity_pct": "% relative humidity",
    "air_density_kg_m3": "kg/m^3 (empty when not computed)",
    "cp": "dimensionless (empty below cut-in)",
    "tsr": "dimensionless (empty below cut-in)",
    "flags": "decimal bitmask, see flag vocabulary",
}


class PackageError(ValueError):
    pass


def crc32_file(path: Path) -> str:
    crc = 0
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            crc = zlib.crc32(chunk, crc)
    return f"{crc:08x}"


def build_metadata(config: Config, first_t: int, last_t: int, provenance: Mapping[str, str] = {}) -> dict:
    """Metadata from the config (``meta.*`` keys), the record span and provenance."""
    g = config.geometry
    md = {
        "turbine_radius_m": f"{g.rotor_radius_m:g}",
        "turbine_height_m": f"{g.rotor_height_m:g}",
        "turbine_swept_area_m2": f"{g.swept_area_m2:g}",
        "deployment_start": format_utc(first_t),
        "deployment_end": format_utc(last_t),
        "firmware_version": f"winddaq {__version__}",
        "config_version": config_fingerprint(config),
        "license": LICENSE,
        "sample_rate_hz": str(config.sample_rate_hz),
    }
    md.update(config.metadata)
    for ch in SENSOR_CHANNELS:
        s = config.sensors[ch]
        md[f"calibration.{ch}.gain"] = f"{s.gain_correction:g}"
        md[f"calibration.{ch}.offset"] = f"{s.offset_correction:g}"
    md.update(provenance)
    return md


def config_fingerprint(config: Config) -> str:
    text = "".join(f"{k}={v}\n" for k, v in sorted(config_to_kv(config).items()))
    return f"crc32:{zlib.crc32(text.encode()):08x}"


def _readme(metadata: Mapping[str, str]) -> str:
    lines = [
        f"{metadata['title']}",
        "",
        "Contents",
        "  data/               raw CSV segments as logged (one file per UTC day)",
        "  derived/curve.csv   binned Cp versus tip speed ratio",
        "  metadata.txt        descriptive metadata, key = value",
        "  quality_report.txt  completeness, validity, consistency, integrity, timeliness",
        "  checksums.txt       CRC-32 of every other file",
        "",
        "Segment files hold a header row followed by blocks of rows, each closed by",
        "'# crc32=<hex> count=<n>' and '# committed'. Lines starting with '#' are",
        "not data.",
        "",
        "Columns and units",
    ]
    lines += [f"  {c}: {UNITS[c]}" for c in COLUMNS]
    lines += ["", "Flag vocabulary (bit: name)"]
    lines += [f"  {1 << i}: {name}" for i, name in enumerate(FLAG_NAMES)]
    lines += [
        "",
        "Curve columns: lambda_low, lambda_high, count, cp_mean, cp_std (population),",
        "cp_u (standard uncertainty: standard error of the mean combined with the",
        "propagated measurement uncertainty).",
        "",
        f"License: {metadata['license']}",
    ]
    return "\n".join(lines) + "\n"


def package_fair(
    out_dir: str | Path,
    segment_files: Iterable[str | Path],
    report: QualityReport,
    curve: Curve,
    metadata: Mapping[str, str],
) -> Path:
    """Write the package; every mandatory metadata key must be present and non-empty."""
    for key in MANDATORY_KEYS:
        if not str(metadata.get(key, "")).strip():
            raise PackageError(f"metadata key {key} required")
    if metadata["license"] != LICENSE:
        raise PackageError(f"license must be {LICENSE}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "data"
    derived = out / "derived"
    data.mkdir(exist_ok=True)
    derived.mkdir(exist_ok=True)
    for f in segment_files:
        shutil.copyfile(f, data / Path(f).name)
    (derived / "curve.csv").write_text(curve_csv(curve))
    ordered = [k for k in MANDATORY_KEYS] + sorted(k for k in metadata if k not in MANDATORY_KEYS)
    (out / "metadata.txt").write_text("".join(f"{k} = {metadata[k]}\n" for k in ordered))
    (out / "quality_report.txt").write_text(report.to_text())
    (out / "README.txt").write_text(_readme(metadata))
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "checksums.txt")
    (out / "checksums.txt").write_text(
        "".join(f"{crc32_file(p)}  {p.relative_to(out).as_posix()}\n" for p in files)
    )
    return out


def verify_package(path: str | Path) -> list[str]:
    """Problems found; an empty list means the package is intact."""
    root = Path(path)
    problems = [f"missing {e}" for e in ENTRIES if not (root / e).exists()]
    sums = root / "checksums.txt"
    if not sums.exists():
        return problems
    listed = set()
    for line in sums.read_text().splitlines():
        crc, _, rel = line.partition("  ")
        listed.add(rel)
        p = root / rel
        if not p.is_file():
            problems.append(f"missing {rel}")
        elif crc32_file(p) != crc:
            problems.append(f"checksum mismatch {rel}")
    for p in root.rglob("*"):
        if p.is_file() and p.name != "checksums.txt" and p.relative_to(root).as_posix() not in listed:
            problems.append(f"unlisted {p.relative_to(root).as_posix()}")
    return problems
