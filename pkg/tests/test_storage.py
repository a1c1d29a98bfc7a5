import threading
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from winddaq.model import ALL_FLAGS_MASK, make_record
from winddaq.storage import (
    COLUMNS,
    HEADER,
    MARKER,
    DirectoryMedium,
    LogBufferPair,
    MediumError,
    MemoryMedium,
    PowerLoss,
    RamRing,
    RecordParseError,
    SegmentWriter,
    encode_segment,
    format_timestamp,
    parse_record,
    parse_timestamp,
    recover,
    scan_file,
    segment_name,
    serialize_record,
    swap_and_flush,
    verify,
)
from winddaq.timekeeping import check_sequence

T0 = 1735689600  # 2025-01-01T00:00:00Z


def recs(n, t0=T0, step=1):
    return [make_record(t0 + i * step, 0, 6.0 + (i % 7) * 0.1, 120.0, 12.5664, 6.283, 3.0, 18.8,
                        15.0, 101325.0, 70.0, 1.225, 0.2, 2.0 + (i % 5) * 0.01, 0) for i in range(n)]


def committed(writer, batches):
    for b in batches:
        assert writer.write(b).ok


# -- rows -------------------------------------------------------------------

def test_row_matches_header(make_rec):
    row = serialize_record(make_rec(T0))
    assert len(row.split(",")) == len(HEADER.split(",")) == len(COLUMNS) == 15
    assert row.startswith("2025-01-01T00:00:00Z,0,")


def test_timestamp_text_round_trip():
    for t in (0, T0, T0 + 86399, 4102444800):
        assert parse_timestamp(format_timestamp(t)) == t
    with pytest.raises(ValueError):
        parse_timestamp("2025-13-01T00:00:00Z")


def test_missing_column_is_named(make_rec):
    row = serialize_record(make_rec(T0))
    short = row.rsplit(",", 1)[0]
    with pytest.raises(RecordParseError) as exc:
        parse_record(short)
    assert exc.value.column == 14
    assert "flags" in str(exc.value)


@pytest.mark.parametrize("i,bad", [(1, "x"), (2, "nan"), (14, "999"), (0, "yesterday"), (7, "inf")])
def test_bad_field_reports_column(make_rec, i, bad):
    parts = serialize_record(make_rec(T0)).split(",")
    parts[i] = bad
    with pytest.raises(RecordParseError) as exc:
        parse_record(",".join(parts))
    assert exc.value.column == i


def test_empty_optional_fields(make_rec):
    r = make_rec(T0)._replace(cp=None, tsr=None, air_density_kg_m3=None)
    assert parse_record(serialize_record(r)) == r


def _random_records(n, seed):
    g = np.random.default_rng(seed)
    out = []
    for i in range(n):
        opt = g.random(3) < 0.1
        out.append(make_record(
            int(g.integers(0, 4_000_000_000)), int(g.integers(0, 4)),
            g.uniform(0, 50), g.uniform(0, 2000), g.uniform(0, 200), g.uniform(0, 60), g.uniform(-20, 20),
            g.uniform(-500, 5000), g.uniform(-40, 85), g.uniform(30000, 110000), g.uniform(0, 100),
            None if opt[0] else g.uniform(0.8, 1.5), None if opt[1] else g.uniform(-1, 2),
            None if opt[2] else g.uniform(0, 10), int(g.integers(0, 512)),
        ))
    return out


def test_round_trip_ten_thousand_records():
    for r in _random_records(10_000, 5):
        assert parse_record(serialize_record(r)) == r


def _float(lo, hi):
    return st.floats(lo, hi, allow_nan=False)


records = st.builds(
    make_record,
    st.integers(0, 2**32), st.integers(0, 10),
    _float(0, 50), _float(0, 2000), _float(0, 300), _float(0, 60), _float(-20, 20), _float(-1e4, 1e4),
    _float(-40, 85), _float(3e4, 1.1e5), _float(0, 100),
    st.none() | _float(0.5, 2), st.none() | _float(-5, 5), st.none() | _float(0, 20),
    st.integers(0, ALL_FLAGS_MASK),
)


@given(records)
def test_round_trip_property(r):
    assert parse_record(serialize_record(r)) == r


# -- buffers ------------------------------------------------------------------

def test_buffer_append_and_high_water(make_rec):
    b = LogBufferPair(capacity=60)
    assert b.append(make_rec(T0)) is False
    assert len(b) == 1
    highs = [b.append(make_rec(T0 + i)) for i in range(1, 60)]
    assert highs[-1] is True and not any(highs[:-1])


def test_buffer_full_drops_oldest(make_rec):
    b = LogBufferPair(capacity=3)
    for i in range(5):
        b.append(make_rec(T0 + i))
    assert b.overflow == 2
    assert [r.timestamp_utc for r in b.active] == [T0 + 2, T0 + 3, T0 + 4]


def test_ring_drops_oldest(make_rec):
    ring = RamRing(2)
    ring.extend(make_rec(T0 + i) for i in range(3))
    assert ring.dropped == 1 and len(ring) == 2


class GatedMedium(MemoryMedium):
    """Blocks inside append until released, like a slow card."""

    def __init__(self):
        super().__init__()
        self.entered = threading.Event()
        self.release = threading.Event()

    def append(self, name, data):
        self.entered.set()
        assert self.release.wait(5)
        super().append(name, data)


def test_append_during_flush_does_not_block():
    medium = GatedMedium()
    buffers = LogBufferPair(capacity=100)
    for r in recs(10):
        buffers.append(r)
    writer = SegmentWriter(medium)
    th = threading.Thread(target=swap_and_flush, args=(buffers, writer))
    th.start()
    assert medium.entered.wait(5)
    done = threading.Event()

    def producer():
        for r in recs(20, T0 + 10):
            buffers.append(r)
        done.set()

    threading.Thread(target=producer).start()
    assert done.wait(2), "append waited for the flush"
    medium.release.set()
    th.join()
    assert len(buffers.active) == 20 and not buffers.flushing
    got, _ = recover(medium)
    assert got == recs(10)


def test_flush_with_card_missing_keeps_data():
    medium = MemoryMedium()
    medium.available = False
    buffers = LogBufferPair(capacity=100)
    for r in recs(5):
        buffers.append(r)
    res = swap_and_flush(buffers, SegmentWriter(medium))
    assert not res.ok
    assert len(buffers) == 5
    medium.available = True
    assert swap_and_flush(buffers, SegmentWriter(medium)).ok
    assert len(buffers) == 0


# -- commit protocol -----------------------------------------------------------

def test_flush_grows_by_committed_records():
    medium = MemoryMedium()
    w = SegmentWriter(medium)
    committed(w, [recs(60)])
    committed(w, [recs(60, T0 + 60)])
    got, rep = recover(medium)
    assert len(got) == 120 and rep.segments == 2


def test_segment_layout():
    body, marker = encode_segment(recs(2), with_header=True)
    lines = body.decode().splitlines()
    assert lines[0] == HEADER
    rows = "".join(line + "\n" for line in lines[1:3]).encode()
    assert lines[3] == f"# crc32={zlib.crc32(rows):08x} count=2"
    assert marker == MARKER


def _sweep(prior_batches, batch):
    """Crash at every byte of writing ``batch`` after ``prior_batches`` are committed."""
    base = MemoryMedium()
    w = SegmentWriter(base)
    committed(w, prior_batches)
    before = [r for b in prior_batches for r in b]
    total = w.planned_bytes(batch)
    for cut in range(total + 1):
        medium = MemoryMedium()
        medium.files = {k: bytearray(v) for k, v in base.files.items()}
        writer = SegmentWriter(medium)
        writer.adopt(w.committed_end)
        medium.arm_crash(cut)
        try:
            res = writer.write(batch)
            crashed = False
        except PowerLoss:
            crashed = True
        medium.disarm()
        got, rep = recover(medium)
        if not crashed:
            assert cut == total and res.ok
            assert got == before + batch
            continue
        # exactly the committed prefix: nothing torn, nothing missing
        n = len(got) - len(before)
        assert got[:len(before)] == before
        assert got[len(before):] == batch[:n]
        if cut < total:
            assert n < len(batch) or len({r.timestamp_utc // 86400 for r in batch}) > 1
        assert rep.quarantined_segments == 0
        assert verify(medium).ok
        # a retry after reboot completes the batch without duplicates
        again = SegmentWriter(medium)
        again.adopt(rep.committed_end)
        assert again.write(batch[n:]).ok
        final, _ = recover(medium)
        assert final == before + batch
    return total


def test_crash_sweep_every_byte_of_one_flush():
    assert _sweep([recs(30)], recs(30, T0 + 30)) > 2000


def test_crash_sweep_first_flush_of_a_file():
    _sweep([], recs(5))


def test_crash_sweep_flush_spanning_midnight():
    _sweep([recs(5, T0 + 86400 - 20)], recs(10, T0 + 86400 - 15))


@given(st.lists(st.integers(1, 8), min_size=1, max_size=5), st.integers(1, 8), st.floats(0, 1, exclude_max=True))
def test_prefix_durability(sizes, last, frac):
    medium = MemoryMedium()
    w = SegmentWriter(medium)
    t = T0
    batches = []
    for n in sizes:
        batches.append(recs(n, t))
        t += n
    committed(w, batches)
    batch = recs(last, t)
    medium.arm_crash(int(frac * w.planned_bytes(batch)))
    with pytest.raises(PowerLoss):
        w.write(batch)
    got, _ = recover(medium)
    assert got == [r for b in batches for r in b]


def test_no_duplicates_after_repeated_crashes():
    medium = MemoryMedium()
    w = SegmentWriter(medium)
    pending = recs(200)
    g = np.random.default_rng(3)
    while pending:
        batch = pending[:25]
        medium.arm_crash(int(g.integers(0, 2 * w.planned_bytes(batch))))
        try:
            w.write(batch)
            pending = pending[25:]
        except PowerLoss:
            _, rep = recover(medium)
            w = SegmentWriter(medium)
            w.adopt(rep.committed_end)
        medium.disarm()
    got, _ = recover(medium)
    prev = None
    for r in got:
        assert check_sequence(prev, r.stamp) == 0
        prev = r.stamp
    assert got == recs(200)


def test_marker_disabled_is_never_committed():
    medium = MemoryMedium()
    w = SegmentWriter(medium, commit_marker=False)
    w.write(recs(10))
    got, rep = recover(medium)
    assert got == [] and rep.truncated_rows == 10


# -- verify and recovery ----------------------------------------------------------

def test_verify_fresh_and_empty():
    assert verify(MemoryMedium()).ok
    medium = MemoryMedium()
    committed(SegmentWriter(medium), [recs(10)])
    assert verify(medium).ok


@given(st.data())
def test_single_bit_flip_is_detected(data):
    medium = MemoryMedium()
    committed(SegmentWriter(medium), [recs(10), recs(10, T0 + 10)])
    name = medium.names()[0]
    raw = medium.files[name]
    start = len(HEADER) + 1
    end = raw.index(b"# crc32=")
    pos = data.draw(st.integers(start, end - 1))
    bit = data.draw(st.integers(0, 7))
    raw[pos] ^= 1 << bit
    rep = verify(medium)
    assert not rep.ok
    assert rep.failures[0].status in ("crc_mismatch", "count_mismatch")
    got, rrep = recover(medium)
    assert rrep.quarantined_segments == 1
    assert got == recs(10, T0 + 10)


def test_damaged_marker_before_more_segments():
    medium = MemoryMedium()
    committed(SegmentWriter(medium), [recs(3), recs(3, T0 + 3)])
    name = medium.names()[0]
    raw = bytes(medium.files[name])
    i = raw.index(MARKER)
    medium.files[name] = bytearray(raw[:i] + b"# commitXed\n" + raw[i + len(MARKER):])
    rep = verify(medium)
    assert [s.status for s in rep.failures] == ["bad_marker"]
    assert recover(medium)[0] == recs(3, T0 + 3)


def test_torn_header_is_tail():
    scan = scan_file(HEADER.encode()[:10])
    assert scan.committed_end == 0 and scan.tail_bytes == 10


def test_daily_rotation_names():
    medium = MemoryMedium()
    committed(SegmentWriter(medium), [recs(10, T0 + 86400 - 5)])
    assert medium.names() == [segment_name(T0), segment_name(T0 + 86400)] == [
        "winddaq_20250101.csv", "winddaq_20250102.csv"]


def test_directory_medium(tmp_path):
    medium = DirectoryMedium(tmp_path)
    committed(SegmentWriter(medium), [recs(10)[:5], recs(10)[5:]])
    medium.close()
    again = DirectoryMedium(tmp_path)
    assert recover(again)[0] == recs(10)
    assert (tmp_path / "winddaq_20250101.csv").read_text().startswith(HEADER)
    again.truncate("winddaq_20250101.csv", 0)
    assert again.size("winddaq_20250101.csv") == 0
    again.close()


def test_directory_medium_unavailable(tmp_path):
    medium = DirectoryMedium(tmp_path)
    medium.available = False
    with pytest.raises(MediumError):
        medium.append("x.csv", b"1")


@given(st.data())
def test_bit_flip_anywhere_never_yields_a_wrong_record(data):
    medium = MemoryMedium()
    batches = [recs(4), recs(4, T0 + 4), recs(4, T0 + 8)]
    committed(SegmentWriter(medium), batches)
    name = medium.names()[0]
    raw = medium.files[name]
    pos = data.draw(st.integers(0, len(raw) - 1))
    raw[pos] ^= 1 << data.draw(st.integers(0, 7))
    assert not verify(medium).ok or scan_file(bytes(raw)).tail_bytes
    got, _ = recover(medium, repair=False)
    originals = {r.stamp: r for b in batches for r in b}
    assert all(originals[r.stamp] == r for r in got)
