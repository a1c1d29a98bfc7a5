"""Reading campaign directories back into records."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from ..model import Record
from ..storage import FOOTER_PREFIX, HEADER, SEGMENT_PREFIX, RecordParseError, parse_record, scan_file

log = logging.getLogger(__name__)


class IngestError(OSError):
    pass


@dataclass(frozen=True)
class ParseIssue:
    file: str
    line: int
    column: Optional[int]
    message: str

    def __str__(self):
        col = "" if self.column is None else f" column {self.column}"
        return f"{self.file}:{self.line}{col}: {self.message}"


@dataclass
class IngestStats:
    files: int = 0
    rows: int = 0
    integrity_events: int = 0
    uncommitted_rows: int = 0
    issues: list = field(default_factory=list)  # rows that did not parse
    damaged: list = field(default_factory=list)  # segments failing their checks


def segment_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise IngestError(f"not a readable directory: {d}")
    try:
        return sorted(d.glob(SEGMENT_PREFIX + "*.csv"))
    except OSError as exc:
        raise IngestError(str(exc)) from exc


def iter_file(path: Path, stats: IngestStats) -> Iterator[Record]:
    """Rows of one segment file in file order.

    Committed segments with a bad checksum still yield their parseable rows
    (the damage is counted as an integrity event); rows after the last
    commit marker were never committed and are skipped.
    """
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    stats.files += 1
    name = path.name
    scan = scan_file(data, name)
    for seg in scan.segments:
        if seg.status not in ("ok", "uncommitted"):
            stats.integrity_events += 1
            stats.damaged.append(ParseIssue(name, _line_of(data, seg.offset), None, f"segment {seg.status} {seg.detail}".strip()))
    # plain CSV without any footer is read in full
    has_segments = FOOTER_PREFIX in data
    end = scan.committed_end if has_segments else len(data)
    if has_segments and scan.tail_rows:
        stats.uncommitted_rows += scan.tail_rows
    text = data[:end].decode("utf-8", errors="replace")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line or line[0] == "#" or line == HEADER:
            continue
        stats.rows += 1
        try:
            yield parse_record(line)
        except RecordParseError as exc:
            stats.issues.append(ParseIssue(name, lineno, exc.column, str(exc)))


def _line_of(data: bytes, offset: int) -> int:
    return data.count(b"\n", 0, offset) + 1


def iter_campaign(directory: str | Path, stats: Optional[IngestStats] = None) -> Iterator[Record]:
    """All records of a campaign in segment order, one file at a time."""
    stats = stats if stats is not None else IngestStats()
    files = segment_files(directory)
    if not files:
        log.warning("no segment files in %s", directory)
    for p in files:
        yield from iter_file(p, stats)


def load_campaign(directory: str | Path) -> tuple[list[Record], list[ParseIssue]]:
    stats = IngestStats()
    records = list(iter_campaign(directory, stats))
    return records, stats.issues
