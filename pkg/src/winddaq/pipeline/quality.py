"""Five-dimension data quality report, stream anomaly marking and validity filter."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from ..model import (
    F_BELOW_CUTIN,
    F_CLOCK_UNSYNCED,
    F_DUP_TIMESTAMP,
    F_OUT_OF_SEQUENCE,
    F_RANGE_RPM,
    F_RANGE_WIND,
    F_SENSOR_FAULT,
    INVALID_MASK,
    Record,
)
from ..timekeeping import check_sequence, clock_error_bound

log = logging.getLogger(__name__)

EXCLUDE_MASK = F_RANGE_WIND | F_RANGE_RPM | F_SENSOR_FAULT | F_DUP_TIMESTAMP | F_OUT_OF_SEQUENCE | F_BELOW_CUTIN
STUCK_FIELDS = (("wind_speed_mps", 2), ("voltage_v", 5), ("current_a", 6), ("temp_c", 8), ("pressure_pa", 9), ("humidity_pct", 10))


class StampSet:
    """Membership of (t, seq) stamps, compact for mostly increasing streams."""

    SLOTS = 4  # seq values held in the bitmap; larger ones go to the overflow set

    def __init__(self):
        self._t0: Optional[int] = None
        self._bits = bytearray()
        self._other: set = set()

    def add(self, t: int, seq: int) -> bool:
        """Insert; False if the stamp was already present."""
        if self._t0 is None:
            self._t0 = t
        i = t - self._t0
        if seq >= self.SLOTS or i < 0:
            key = (t, seq)
            if key in self._other:
                return False
            self._other.add(key)
            return True
        bit = i * self.SLOTS + seq
        byte, mask = bit >> 3, 1 << (bit & 7)
        bits = self._bits
        if byte >= len(bits):
            bits.extend(bytes(max(byte + 1 - len(bits), len(bits))))
        if bits[byte] & mask:
            return False
        bits[byte] |= mask
        return True


def mark_sequence(records: Iterable[Record]) -> Iterator[Record]:
    """Records with DUP/OOS bits OR-ed in from stream-order detection."""
    seen = StampSet()
    prev = None
    for r in records:
        key = (r[0], r[1])
        if not seen.add(key[0], key[1]):
            f = F_DUP_TIMESTAMP
        else:
            f = check_sequence(prev, key) & F_OUT_OF_SEQUENCE
        prev = key
        yield r._replace(flags=r[14] | f) if f else r


@dataclass
class QualityReport:
    completeness: float
    validity: float
    consistency: int
    integrity: int
    timeliness_s: float
    records: int = 0
    expected: int = 0
    unique_stamps: int = 0
    duplicates: int = 0
    out_of_sequence: int = 0
    unsynced_records: int = 0
    longest_unsynced_s: float = 0.0
    stuck_runs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.completeness <= 1.0 and 0.0 <= self.validity <= 1.0):
            raise ValueError("completeness and validity must lie in [0, 1]")
        if min(self.consistency, self.integrity) < 0:
            raise ValueError("counts must be >= 0")

    def as_dict(self) -> dict:
        out = {
            "completeness": f"{self.completeness:.6f}",
            "validity": f"{self.validity:.6f}",
            "consistency": self.consistency,
            "integrity": self.integrity,
            "timeliness_s": f"{self.timeliness_s:.3f}",
            "records": self.records,
            "expected": self.expected,
            "unique_stamps": self.unique_stamps,
            "duplicates": self.duplicates,
            "out_of_sequence": self.out_of_sequence,
            "unsynced_records": self.unsynced_records,
            "longest_unsynced_s": f"{self.longest_unsynced_s:g}",
        }
        for name, n in sorted(self.stuck_runs.items()):
            out[f"stuck_runs.{name}"] = n
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.as_dict().items())


class QualityAccumulator:
    """Single pass over a record stream; ``report`` may be called at the end."""

    def __init__(self, stuck_min_run: int = 60):
        self.n = 0
        self.valid = 0
        self.dups = 0
        self.oos = 0
        self.unsynced = 0
        self.first_t: Optional[int] = None
        self.last_t: Optional[int] = None
        self._seen = StampSet()
        self._prev = None
        self._run_start: Optional[int] = None
        self.longest_unsynced = 0.0
        self.stuck_min_run = stuck_min_run
        self._stuck_val = [None] * len(STUCK_FIELDS)
        self._stuck_len = [0] * len(STUCK_FIELDS)
        self.stuck_runs = {name: 0 for name, _ in STUCK_FIELDS}

    def add(self, r: Record) -> None:
        self.n += 1
        t, seq, flags = r[0], r[1], r[14]
        if not flags & INVALID_MASK:
            self.valid += 1
        key = (t, seq)
        if not self._seen.add(t, seq):
            self.dups += 1
        elif self._prev is not None and key < self._prev:
            self.oos += 1
        self._prev = key
        if self.first_t is None or t < self.first_t:
            self.first_t = t
        if self.last_t is None or t > self.last_t:
            self.last_t = t
        if flags & F_CLOCK_UNSYNCED:
            self.unsynced += 1
            if self._run_start is None:
                self._run_start = t
            self.longest_unsynced = max(self.longest_unsynced, float(t - self._run_start))
        else:
            self._run_start = None
        vals, lens, min_run = self._stuck_val, self._stuck_len, self.stuck_min_run
        for j, (name, idx) in enumerate(STUCK_FIELDS):
            v = r[idx]
            if v == vals[j]:
                lens[j] += 1
                if lens[j] == min_run:
                    self.stuck_runs[name] += 1
            else:
                vals[j], lens[j] = v, 1

    def report(
        self,
        expected: Optional[int] = None,
        rate_hz: float = 1.0,
        integrity_events: int = 0,
        drift_ppm: float = 2.0,
        sync_interval_s: float = 3600.0,
    ) -> QualityReport:
        if expected is None:
            expected = 0 if self.first_t is None else int(round((self.last_t - self.first_t + 1) * rate_hz))
        unique = self.n - self.dups
        completeness = min(1.0, unique / expected) if expected > 0 else 0.0
        validity = self.valid / self.n if self.n else 0.0
        worst_gap = max(sync_interval_s, self.longest_unsynced)
        return QualityReport(
            completeness=completeness,
            validity=validity,
            consistency=self.dups + self.oos,
            integrity=integrity_events,
            timeliness_s=clock_error_bound(drift_ppm, worst_gap),
            records=self.n,
            expected=expected,
            unique_stamps=unique,
            duplicates=self.dups,
            out_of_sequence=self.oos,
            unsynced_records=self.unsynced,
            longest_unsynced_s=self.longest_unsynced,
            stuck_runs=dict(self.stuck_runs),
        )


def quality_report(
    records: Iterable[Record],
    expected: Optional[int] = None,
    rate_hz: float = 1.0,
    integrity_events: int = 0,
    drift_ppm: float = 2.0,
    sync_interval_s: float = 3600.0,
) -> QualityReport:
    """Quality of a stream in ingestion (segment) order.

    ``expected`` defaults to the first-to-last stamp span times ``rate_hz``.
    """
    acc = QualityAccumulator()
    for r in records:
        acc.add(r)
    return acc.report(expected, rate_hz, integrity_events, drift_ppm, sync_interval_s)


def is_valid(r: Record) -> bool:
    return not r[14] & EXCLUDE_MASK and r[12] is not None and r[13] is not None


def filter_valid(records: Iterable[Record]) -> tuple[list[Record], float]:
    """Records usable for curve fitting and the retained fraction.

    Only the record's own flags decide, so adding a record to the stream
    never changes whether another one is kept.
    """
    kept: list[Record] = []
    n = 0
    for r in records:
        n += 1
        if is_valid(r):
            kept.append(r)
    if n and not kept:
        log.warning("no records passed the validity filter")
    return kept, (len(kept) / n if n else 0.0)
