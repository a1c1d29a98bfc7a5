"""Local-first append log: CSV records, double buffering and committed segments.

Each daily file starts with the CSV header and is followed by committed
segments. A segment is the rows of one flush, a footer line
``# crc32=<hex> count=<n>`` and the marker line ``# committed``. The marker
is written by a separate, final append; a segment whose marker is absent or
torn is not committed and recovery truncates it away.
"""
from __future__ import annotations

import calendar
import os
import threading
import time
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .model import Record

COLUMNS = (
    "timestamp_utc", "seq", "wind_speed_mps", "rotor_rpm", "rotor_omega_rad_s",
    "voltage_v", "current_a", "power_w", "temp_c", "pressure_pa", "humidity_pct",
    "air_density_kg_m3", "cp", "tsr", "flags",
)
HEADER = ",".join(COLUMNS)
HEADER_LINE = (HEADER + "\n").encode()
FOOTER_PREFIX = b"# crc32="
MARKER = b"# committed\n"
SEGMENT_PREFIX = "winddaq_"

_ROW_FMT = "%s,%d,%.2f,%.2f,%.4f,%.3f,%.3f,%.1f,%.2f,%.1f,%.1f,%.4f,%.4f,%.4f,%d"
_ROW_FMT_HEAD = "%s,%d,%.2f,%.2f,%.4f,%.3f,%.3f,%.1f,%.2f,%.1f,%.1f,"


class MediumError(OSError):
    """The storage medium refused an operation (card missing, write error)."""


class PowerLoss(Exception):
    """Raised by a medium when an injected crash point is reached."""


class RecordParseError(ValueError):
    def __init__(self, column: int, message: str):
        self.column = column
        name = COLUMNS[column] if 0 <= column < len(COLUMNS) else "?"
        self.column_name = name
        super().__init__(f"column {column} ({name}): {message}")


# -- timestamps -------------------------------------------------------------

_day_prefix: dict[int, str] = {}
_tod: list[str] = []


def format_timestamp(t: int) -> str:
    day, sod = divmod(t, 86400)
    prefix = _day_prefix.get(day)
    if prefix is None:
        prefix = time.strftime("%Y-%m-%dT", time.gmtime(day * 86400))
        _day_prefix[day] = prefix
    if not _tod:
        _tod.extend("%02d:%02d:%02dZ" % (s // 3600, s // 60 % 60, s % 60) for s in range(86400))
    return prefix + _tod[sod]


_day_epoch: dict[str, int] = {}


def parse_timestamp(s: str) -> int:
    if len(s) != 20 or s[10] != "T" or s[19] != "Z" or s[13] != ":" or s[16] != ":":
        raise ValueError(f"bad timestamp {s!r}")
    date = s[:10]
    base = _day_epoch.get(date)
    if base is None:
        if date[4] != "-" or date[7] != "-":
            raise ValueError(f"bad timestamp {s!r}")
        y, m, d = int(date[:4]), int(date[5:7]), int(date[8:10])
        base = calendar.timegm((y, m, d, 0, 0, 0))
        if time.gmtime(base)[:3] != (y, m, d):
            raise ValueError(f"bad date {date!r}")
        _day_epoch[date] = base
    hh, mm, ss = int(s[11:13]), int(s[14:16]), int(s[17:19])
    if not (0 <= hh < 24 and 0 <= mm < 60 and 0 <= ss < 60):
        raise ValueError(f"bad time of day {s!r}")
    return base + hh * 3600 + mm * 60 + ss


_segment_names: dict[int, str] = {}


def segment_name(t: int) -> str:
    day = t // 86400
    name = _segment_names.get(day)
    if name is None:
        name = SEGMENT_PREFIX + time.strftime("%Y%m%d", time.gmtime(day * 86400)) + ".csv"
        _segment_names[day] = name
    return name


# -- rows -------------------------------------------------------------------

def serialize_record(r: Record) -> str:
    rho, cp, tsr = r[11], r[12], r[13]
    ts = format_timestamp(r[0])
    if rho is not None and cp is not None and tsr is not None:
        return _ROW_FMT % (ts, r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9], r[10], rho, cp, tsr, r[14])
    head = _ROW_FMT_HEAD % (ts, r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9], r[10])
    return "%s%s,%s,%s,%d" % (
        head,
        "" if rho is None else "%.4f" % rho,
        "" if cp is None else "%.4f" % cp,
        "" if tsr is None else "%.4f" % tsr,
        r[14],
    )


_OPTIONAL = (11, 12, 13)


def parse_record(row: str) -> Record:
    parts = row.rstrip("\r\n").split(",")
    if len(parts) != len(COLUMNS):
        if len(parts) < len(COLUMNS):
            missing = ", ".join(COLUMNS[len(parts):])
            raise RecordParseError(len(parts), f"expected {len(COLUMNS)} columns, got {len(parts)}; missing {missing}")
        raise RecordParseError(len(COLUMNS), f"expected {len(COLUMNS)} columns, got {len(parts)}")
    vals: list = [None] * len(COLUMNS)
    try:
        vals[0] = parse_timestamp(parts[0])
    except ValueError as exc:
        raise RecordParseError(0, str(exc)) from None
    for i in (1, 14):
        try:
            vals[i] = int(parts[i])
        except ValueError:
            raise RecordParseError(i, f"not an integer: {parts[i]!r}") from None
    if vals[1] < 0:
        raise RecordParseError(1, "seq must be >= 0")
    if vals[14] < 0 or vals[14] >= 1 << 9:
        raise RecordParseError(14, f"flags {vals[14]} use undefined bits")
    for i in range(2, 14):
        p = parts[i]
        if p == "" and i in _OPTIONAL:
            continue
        try:
            x = float(p)
        except ValueError:
            raise RecordParseError(i, f"not a number: {p!r}") from None
        if x != x or x in (float("inf"), float("-inf")):
            raise RecordParseError(i, f"not finite: {p!r}")
        vals[i] = x
    return Record(*vals)


# -- media ------------------------------------------------------------------

class MemoryMedium:
    """In-RAM stand-in for the SD card, with fault and crash injection."""

    def __init__(self):
        self.files: dict[str, bytearray] = {}
        self.available = True
        self._crash_budget: Optional[int] = None
        self.bytes_written = 0

    def arm_crash(self, after_bytes: int) -> None:
        """Lose power once ``after_bytes`` more bytes have reached the medium."""
        self._crash_budget = after_bytes

    def disarm(self) -> None:
        self._crash_budget = None

    def names(self) -> list[str]:
        return sorted(self.files)

    def read(self, name: str) -> bytes:
        return bytes(self.files.get(name, b""))

    def size(self, name: str) -> int:
        return len(self.files.get(name, b""))

    def append(self, name: str, data: bytes) -> None:
        if not self.available:
            raise MediumError("medium unavailable")
        buf = self.files.setdefault(name, bytearray())
        budget = self._crash_budget
        if budget is not None and len(data) >= budget and (len(data) > budget or budget == 0):
            buf += data[:budget]
            self.bytes_written += budget
            self._crash_budget = None
            raise PowerLoss(f"power lost while writing {name}")
        buf += data
        self.bytes_written += len(data)
        if budget is not None:
            self._crash_budget = budget - len(data)

    def truncate(self, name: str, size: int) -> None:
        if not self.available:
            raise MediumError("medium unavailable")
        if name in self.files:
            del self.files[name][size:]

    def snapshot(self) -> dict[str, bytes]:
        return {k: bytes(v) for k, v in self.files.items()}

    def close(self) -> None:
        pass


class DirectoryMedium:
    """Segments as real files in a directory."""

    def __init__(self, root: str | Path, fsync: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.available = True
        self.fsync = fsync
        self._handles: dict[str, object] = {}

    def _close_handles(self) -> None:
        for fh in self._handles.values():
            fh.close()
        self._handles.clear()

    def names(self) -> list[str]:
        return sorted(p.name for p in self.root.glob(SEGMENT_PREFIX + "*.csv"))

    def read(self, name: str) -> bytes:
        fh = self._handles.get(name)
        if fh is not None:
            fh.flush()
        p = self.root / name
        return p.read_bytes() if p.exists() else b""

    def size(self, name: str) -> int:
        fh = self._handles.get(name)
        if fh is not None:
            fh.flush()
        p = self.root / name
        return p.stat().st_size if p.exists() else 0

    def append(self, name: str, data: bytes) -> None:
        if not self.available:
            raise MediumError("medium unavailable")
        fh = self._handles.get(name)
        if fh is None:
            if len(self._handles) >= 2:
                self._close_handles()
            fh = open(self.root / name, "ab")
            self._handles[name] = fh
        fh.write(data)
        if self.fsync:
            fh.flush()
            os.fsync(fh.fileno())

    def truncate(self, name: str, size: int) -> None:
        if not self.available:
            raise MediumError("medium unavailable")
        fh = self._handles.pop(name, None)
        if fh is not None:
            fh.close()
        p = self.root / name
        if p.exists():
            os.truncate(p, size)

    def close(self) -> None:
        self._close_handles()


# -- buffers ----------------------------------------------------------------

class LogBufferPair:
    """Active buffer for appends, flushing buffer owned by the flusher.

    The swap is the only operation both sides touch and it happens under a
    lock; appends never wait for a flush to finish.
    """

    def __init__(self, capacity: int = 60, flush_interval_s: float = 60.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.flush_interval_s = flush_interval_s
        self.active: list[Record] = []
        self.flushing: list[Record] = []
        self.overflow = 0
        self._lock = threading.Lock()

    def append(self, record: Record) -> bool:
        """Add a record; True once the active buffer reached capacity."""
        with self._lock:
            active = self.active
            if len(active) >= self.capacity:
                # flush unavailable and buffer full: keep the newest
                del active[0]
                self.overflow += 1
            active.append(record)
            return len(active) >= self.capacity

    def swap(self) -> list[Record]:
        """Hand the active records to the flusher.

        A flushing buffer that still holds records from a failed write is
        kept as is and returned again.
        """
        with self._lock:
            if not self.flushing:
                self.flushing, self.active = self.active, []
            return self.flushing

    def flushed(self, count: Optional[int] = None) -> None:
        """Release the first ``count`` flushing records (all by default)."""
        with self._lock:
            self.flushing = [] if count is None else self.flushing[count:]

    def drain(self) -> list[Record]:
        """Remove and return everything held, oldest first."""
        with self._lock:
            out = self.flushing + self.active
            self.flushing, self.active = [], []
            return out

    def __len__(self):
        return len(self.active) + len(self.flushing)


class RamRing:
    """Bounded buffer-only store used while the card is unusable."""

    def __init__(self, capacity: int = 3600):
        self.items: deque = deque()
        self.capacity = capacity
        self.dropped = 0

    def push(self, record: Record) -> None:
        if len(self.items) >= self.capacity:
            self.items.popleft()
            self.dropped += 1
        self.items.append(record)

    def extend(self, records: Iterable[Record]) -> None:
        for r in records:
            self.push(r)

    def __len__(self):
        return len(self.items)


# -- writer -----------------------------------------------------------------

@dataclass
class FlushResult:
    ok: bool
    records: int = 0
    error: Optional[str] = None


def encode_segment(records: list[Record], with_header: bool) -> tuple[bytes, bytes]:
    """Bytes of one segment: (header + rows + footer, marker)."""
    rows = "".join([serialize_record(r) + "\n" for r in records]).encode()
    footer = b"# crc32=%08x count=%d\n" % (zlib.crc32(rows), len(records))
    head = HEADER_LINE if with_header else b""
    return head + rows + footer, MARKER


class SegmentWriter:
    """Flusher side: owns the medium and the committed length of each file."""

    def __init__(self, medium, commit_marker: bool = True):
        self.medium = medium
        self.committed_end: dict[str, int] = {}
        self.commit_marker = commit_marker  # test hook for negative controls
        self.segments_committed = 0

    def adopt(self, committed_end: dict[str, int]) -> None:
        self.committed_end = dict(committed_end)

    @staticmethod
    def _groups(records: list[Record]) -> list[tuple[str, list[Record]]]:
        """Split a batch by UTC day; stamps are non-decreasing within a batch."""
        if records[0][0] // 86400 == records[-1][0] // 86400:
            return [(segment_name(records[0][0]), records)]
        groups: list[tuple[str, list[Record]]] = []
        for r in records:
            name = segment_name(r[0])
            if groups and groups[-1][0] == name:
                groups[-1][1].append(r)
            else:
                groups.append((name, [r]))
        return groups

    def write(self, records: list[Record]) -> FlushResult:
        if not records:
            return FlushResult(True, 0)
        groups = self._groups(records)
        medium = self.medium
        done = 0
        try:
            for name, recs in groups:
                end = self.committed_end.get(name)
                if end is None:
                    end = 0 if medium.size(name) == 0 else self._scan_end(name)
                if medium.size(name) != end:
                    medium.truncate(name, end)  # drop a torn earlier attempt
                body, marker = encode_segment(recs, with_header=(end == 0))
                medium.append(name, body)
                if self.commit_marker:
                    medium.append(name, marker)
                # committed only once the marker is on the medium
                self.committed_end[name] = end + len(body) + (len(marker) if self.commit_marker else 0)
                self.segments_committed += 1
                done += len(recs)
        except MediumError as exc:
            # earlier day groups of this batch may already be committed
            return FlushResult(False, done, str(exc))
        return FlushResult(True, len(records))

    def planned_bytes(self, records: list[Record]) -> int:
        """Bytes the next write of ``records`` will put on the medium."""
        total = 0
        for name, recs in self._groups(records):
            end = self.committed_end.get(name)
            if end is None:
                end = 0 if self.medium.size(name) == 0 else self._scan_end(name)
            body, marker = encode_segment(recs, with_header=(end == 0))
            total += len(body) + (len(marker) if self.commit_marker else 0)
        return total

    def _scan_end(self, name: str) -> int:
        return scan_file(self.medium.read(name)).committed_end


def swap_and_flush(buffers: LogBufferPair, writer: SegmentWriter) -> FlushResult:
    batch = buffers.swap()
    result = writer.write(batch)
    buffers.flushed(None if result.ok else result.records)
    return result


# -- recovery ---------------------------------------------------------------

@dataclass
class SegmentStatus:
    file: str
    offset: int
    count: int
    status: str  # ok | crc_mismatch | count_mismatch | bad_marker | parse_error | bad_header | uncommitted
    detail: str = ""


@dataclass
class FileScan:
    segments: list = field(default_factory=list)
    records: list = field(default_factory=list)
    committed_end: int = 0
    tail_bytes: int = 0
    tail_rows: int = 0


def scan_file(data: bytes, name: str = "", parse: bool = False) -> FileScan:
    """Walk the segments of one file.

    ``committed_end`` is where the last structurally complete segment ends;
    anything after it is an uncommitted tail.
    """
    out = FileScan()
    n = len(data)
    if n == 0:
        return out
    if data.startswith(HEADER_LINE):
        pos = len(HEADER_LINE)
    elif HEADER_LINE.startswith(data):
        out.tail_bytes = n
        return out
    else:
        nl = data.find(b"\n")
        if nl < 0:
            out.tail_bytes = n
            return out
        out.segments.append(SegmentStatus(name, 0, 0, "bad_header"))
        pos = nl + 1
    out.committed_end = pos

    while pos < n:
        foot = data.find(b"\n" + FOOTER_PREFIX, pos - 1)
        mark = data.find(b"\n" + MARKER, pos - 1)
        if mark >= 0 and (foot < 0 or foot > mark):
            # a marker with no footer line in front of it: the footer was damaged
            seg_end = mark + 1 + len(MARKER)
            out.segments.append(SegmentStatus(name, pos, 0, "crc_mismatch", "footer line damaged"))
            pos = out.committed_end = seg_end
            continue
        if foot < 0:
            break
        foot += 1
        foot_end = data.find(b"\n", foot)
        if foot_end < 0:
            break
        after = foot_end + 1
        rest = data[after:after + len(MARKER)]
        if rest != MARKER:
            if MARKER.startswith(data[after:]):
                break  # torn marker at the very end: uncommitted
            # damaged marker with more data following: a committed segment gone bad
            line_end = data.find(b"\n", after)
            seg_end = n if line_end < 0 else line_end + 1
            out.segments.append(SegmentStatus(name, pos, 0, "bad_marker"))
            pos = out.committed_end = seg_end
            continue
        seg_end = after + len(MARKER)
        rows = data[pos:foot]
        status, detail, count = _check_footer(rows, data[foot:foot_end])
        if status == "ok" and parse:
            recs = []
            try:
                for line in rows.decode().splitlines():
                    recs.append(parse_record(line))
            except (RecordParseError, UnicodeDecodeError) as exc:
                status, detail = "parse_error", str(exc)
            else:
                out.records.extend(recs)
        out.segments.append(SegmentStatus(name, pos, count, status, detail))
        pos = out.committed_end = seg_end

    out.tail_bytes = n - out.committed_end
    if out.tail_bytes:
        tail = data[out.committed_end:]
        out.tail_rows = tail.count(b"\n") - tail.count(b"\n#") - (1 if tail.startswith(b"#") else 0)
        out.segments.append(SegmentStatus(name, out.committed_end, out.tail_rows, "uncommitted"))
    return out


def _check_footer(rows: bytes, footer: bytes) -> tuple[str, str, int]:
    try:
        text = footer.decode()
        crc_part, count_part = text[len("# crc32="):].split(" count=")
        crc = int(crc_part, 16)
        count = int(count_part)
    except (ValueError, UnicodeDecodeError):
        return "crc_mismatch", "unreadable footer", 0
    actual = zlib.crc32(rows)
    if actual != crc:
        return "crc_mismatch", f"footer {crc:08x} != payload {actual:08x}", count
    n_rows = rows.count(b"\n")
    if n_rows != count:
        return "count_mismatch", f"footer count {count} != rows {n_rows}", count
    return "ok", "", count


@dataclass
class RecoveryReport:
    files: int = 0
    segments: int = 0
    records: int = 0
    truncated_bytes: int = 0
    truncated_rows: int = 0
    quarantined_segments: int = 0
    integrity_events: int = 0
    last_stamp: Optional[tuple] = None
    committed_end: dict = field(default_factory=dict)


def recover(medium, repair: bool = True, names: Optional[list[str]] = None) -> tuple[list[Record], RecoveryReport]:
    """Return every committed record in order and cut off uncommitted tails."""
    report = RecoveryReport()
    records: list[Record] = []
    for name in (medium.names() if names is None else names):
        data = medium.read(name)
        scan = scan_file(data, name, parse=True)
        report.files += 1
        for seg in scan.segments:
            if seg.status == "ok":
                report.segments += 1
            elif seg.status != "uncommitted":
                report.quarantined_segments += 1
                report.integrity_events += 1
        records.extend(scan.records)
        report.truncated_bytes += scan.tail_bytes
        report.truncated_rows += scan.tail_rows
        report.committed_end[name] = scan.committed_end
        if repair and scan.tail_bytes:
            medium.truncate(name, scan.committed_end)
    report.records = len(records)
    if records:
        report.last_stamp = max((r[0], r[1]) for r in records)
    return records, report


@dataclass
class IntegrityReport:
    segments: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [s for s in self.segments if s.status not in ("ok", "uncommitted")]

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def integrity_events(self) -> int:
        return len(self.failures)


def verify(medium) -> IntegrityReport:
    """Re-read every segment, checking checksums, counts and row syntax."""
    report = IntegrityReport()
    for name in medium.names():
        scan = scan_file(medium.read(name), name, parse=True)
        report.segments.extend(scan.segments)
    return report
