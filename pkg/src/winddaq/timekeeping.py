"""RTC drift model, NTP correction and monotonic (second, seq) stamping."""
from __future__ import annotations

import math
from typing import NamedTuple, Optional

from .model import F_DUP_TIMESTAMP, F_OUT_OF_SEQUENCE

MAX_DRIFT_PPM = 50.0


class Timestamp(NamedTuple):
    t: int
    seq: int


class ClockState(NamedTuple):
    current_utc: float
    drift_ppm: float = 2.0
    last_sync: Optional[float] = None
    synced: bool = False
    last_stamp: Optional[Timestamp] = None
    step_threshold_s: float = 1.0

    @classmethod
    def start(cls, current_utc: float, drift_ppm: float = 2.0, step_threshold_s: float = 1.0) -> "ClockState":
        if abs(drift_ppm) > MAX_DRIFT_PPM:
            raise ValueError(f"|drift_ppm| must be <= {MAX_DRIFT_PPM}")
        return cls(float(current_utc), drift_ppm, None, False, None, step_threshold_s)

    @property
    def seq(self) -> int:
        return -1 if self.last_stamp is None else self.last_stamp.seq


def rtc_advance(clock: ClockState, true_dt: float) -> ClockState:
    if not true_dt > 0:
        raise ValueError("true_dt must be > 0")
    c = clock
    return ClockState(c[0] + true_dt * (1.0 + c[1] * 1e-6), c[1], c[2], c[3], c[4], c[5])


def ntp_sync(clock: ClockState, server_utc: float, network_up: bool = True) -> ClockState:
    """Correct the clock to the server instant.

    Offsets beyond the step threshold are stepped; smaller ones are slewed,
    which at 1 s stamp resolution means the full correction is applied at
    once. Without network the clock is returned unchanged.
    """
    if not network_up:
        return clock
    return clock._replace(current_utc=float(server_utc), synced=True, last_sync=float(server_utc))


def is_step(clock: ClockState, server_utc: float) -> bool:
    return abs(server_utc - clock.current_utc) > clock.step_threshold_s


def stamp(clock: ClockState) -> tuple[Timestamp, ClockState]:
    """Emit a stamp strictly greater than the previous one.

    If the clock was stepped backwards the guard holds the last emitted
    second and keeps counting seq.
    """
    sec = math.floor(clock.current_utc)
    last = clock.last_stamp
    if last is None or sec > last.t:
        ts = Timestamp(sec, 0)
    else:
        ts = Timestamp(last.t, last.seq + 1)
    c = clock
    return ts, ClockState(c[0], c[1], c[2], c[3], ts, c[5])


def check_sequence(prev: Optional[tuple[int, int]], nxt: tuple[int, int]) -> int:
    """Flags for ``nxt`` given the stamp before it (``None`` for the first)."""
    if prev is None:
        return 0
    if nxt == prev:
        return F_DUP_TIMESTAMP
    if nxt < prev:
        return F_OUT_OF_SEQUENCE
    return 0


def clock_error_bound(drift_ppm: float, since_sync_s: float, resolution_s: float = 1.0) -> float:
    return abs(drift_ppm) * 1e-6 * since_sync_s + resolution_s
