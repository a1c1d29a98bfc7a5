"""One pass from a run directory to quality report, curve and package."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from ..config import load_config
from ..model import Config, Record
from .curve import Curve, bin_curve
from .fair import build_metadata, package_fair
from .ingest import IngestStats, iter_campaign, segment_files
from .quality import QualityAccumulator, QualityReport, is_valid, mark_sequence
from .uncertainty import propagate_uncertainty


@dataclass
class Analysis:
    report: QualityReport
    curve: Curve
    retention: float
    stats: IngestStats
    package: Optional[Path]


def cp_uncertainty_fn(config: Config):
    def u(v: float) -> float:
        return propagate_uncertainty(v, config.u_wind_mps, config.u_power_rel, config.u_rho_rel, config.u_area_rel).u_cp_rel
    return u


def _observe(records: Iterable[Record], acc: QualityAccumulator) -> Iterator[Record]:
    for r in records:
        acc.add(r)
        yield r


def run_summary(directory: str | Path) -> dict:
    """``key=value`` lines written by a run, empty if absent."""
    p = Path(directory) / "summary.txt"
    if not p.exists():
        return {}
    return dict(line.split("=", 1) for line in p.read_text().splitlines() if "=" in line)


def analyze(
    in_dir: str | Path,
    out_dir: Optional[str | Path] = None,
    config: Optional[Config] = None,
    bin_width: Optional[float] = None,
    expected: Optional[int] = None,
) -> Analysis:
    """Stream every record once: quality, validity filter and binning together.

    Config and expected sample count are read from the run directory
    (``config.txt`` and ``summary.txt``) when not given.
    """
    in_dir = Path(in_dir)
    if config is None:
        config = load_config(in_dir / "config.txt")
    if expected is None:
        summary = run_summary(in_dir)
        if "expected" in summary:
            expected = int(summary["expected"])
    width = bin_width if bin_width is not None else config.bin_width_lambda

    stats = IngestStats()
    acc = QualityAccumulator()
    stream = mark_sequence(_observe(iter_campaign(in_dir, stats), acc))
    kept = [0]

    def valid(rs):
        for r in rs:
            if is_valid(r):
                kept[0] += 1
                yield r

    curve = bin_curve(valid(stream), width, config.min_bin_count, cp_uncertainty_fn(config))
    report = acc.report(
        expected, config.sample_rate_hz, stats.integrity_events,
        config.clock.drift_ppm, config.clock.ntp_sync_interval_s,
    )
    retention = kept[0] / acc.n if acc.n else 0.0
    package = None
    if out_dir is not None:
        if acc.first_t is None:
            raise ValueError("no records to package")
        md = build_metadata(config, acc.first_t, acc.last_t)
        package = package_fair(out_dir, segment_files(in_dir), report, curve, md)
    return Analysis(report, curve, retention, stats, package)
