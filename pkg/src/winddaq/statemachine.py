"""Fault-aware controller: a total transition function plus a diagnostics sink."""
from __future__ import annotations

import enum
from typing import NamedTuple, Optional, TextIO


class Mode(str, enum.Enum):
    INIT = "INIT"
    TIME_SYNC = "TIME_SYNC"
    ACQUIRE = "ACQUIRE"
    LOG = "LOG"
    TRANSMIT = "TRANSMIT"
    FAULT_SENSOR = "FAULT_SENSOR"
    FAULT_SD = "FAULT_SD"
    FAULT_NET = "FAULT_NET"
    OFF = "OFF"  # between POWER_LOSS and POWER_RESTORED


class EventKind(str, enum.Enum):
    BOOT_OK = "BOOT_OK"
    SYNC_OK = "SYNC_OK"
    SYNC_FAIL = "SYNC_FAIL"
    TICK = "TICK"
    SAMPLE_OK = "SAMPLE_OK"
    SENSOR_ERR = "SENSOR_ERR"
    WRITE_OK = "WRITE_OK"
    WRITE_ERR = "WRITE_ERR"
    NET_UP = "NET_UP"
    NET_DOWN = "NET_DOWN"
    POWER_LOSS = "POWER_LOSS"
    POWER_RESTORED = "POWER_RESTORED"
    REMOUNT_OK = "REMOUNT_OK"


class Action(str, enum.Enum):
    RECOVER = "RECOVER"
    SYNC_CLOCK = "SYNC_CLOCK"
    MARK_UNSYNCED = "MARK_UNSYNCED"
    SAMPLE = "SAMPLE"
    FLAG_SENSOR_FAULT = "FLAG_SENSOR_FAULT"
    STORE = "STORE"
    STORE_RAM = "STORE_RAM"
    RETRY_WRITE = "RETRY_WRITE"
    ENTER_BUFFER_ONLY = "ENTER_BUFFER_ONLY"
    SCHEDULE_REMOUNT = "SCHEDULE_REMOUNT"
    FLUSH_RING = "FLUSH_RING"
    ENQUEUE_TELEMETRY = "ENQUEUE_TELEMETRY"
    TRANSMIT = "TRANSMIT"
    DEFER = "DEFER"
    DROP_RAM = "DROP_RAM"


M, E, A = Mode, EventKind, Action
FAULT_MODES = frozenset({M.FAULT_SENSOR, M.FAULT_SD, M.FAULT_NET, M.OFF, M.INIT, M.TIME_SYNC})


class Event(NamedTuple):
    kind: EventKind
    t: float = 0.0


class DaqState(NamedTuple):
    mode: Mode = Mode.INIT
    sd_retries: int = 0
    buffer_only: bool = False
    entered_at: float = 0.0
    telemetry_enabled: bool = False
    max_sd_retries: int = 3


class Hop(NamedTuple):
    src: Mode
    event: EventKind
    dst: Mode


def _rules(mode: Mode, kind: EventKind, retries: int, buffer_only: bool, telemetry: bool, max_retries: int):
    """Return (mode, retries, buffer_only, actions, hops) or None for a no-op."""
    if kind is E.POWER_LOSS:
        if mode is M.OFF:
            return None
        return M.OFF, 0, False, (A.DROP_RAM,), ((mode, kind, M.OFF),)
    if mode is M.OFF:
        if kind is E.POWER_RESTORED:
            return M.INIT, 0, False, (A.RECOVER,), ((mode, kind, M.INIT),)
        return None
    if kind is E.REMOUNT_OK:
        if not buffer_only:
            return None
        return mode, 0, False, (A.FLUSH_RING,), ((mode, kind, mode),)

    store = A.STORE_RAM if buffer_only else A.STORE
    if mode is M.INIT:
        if kind is E.BOOT_OK:
            return M.TIME_SYNC, retries, buffer_only, (A.SYNC_CLOCK,), ((mode, kind, M.TIME_SYNC),)
    elif mode is M.TIME_SYNC:
        if kind is E.SYNC_OK:
            return M.ACQUIRE, retries, buffer_only, (), ((mode, kind, M.ACQUIRE),)
        if kind is E.SYNC_FAIL:
            return M.ACQUIRE, retries, buffer_only, (A.MARK_UNSYNCED,), ((mode, kind, M.ACQUIRE),)
    elif mode is M.ACQUIRE:
        if kind is E.TICK:
            return M.ACQUIRE, retries, buffer_only, (A.SAMPLE,), ()
        if kind is E.SAMPLE_OK:
            return M.LOG, retries, buffer_only, (store,), ((mode, kind, M.LOG),)
        if kind is E.SENSOR_ERR:
            # flag and continue: the fault state is left immediately
            return (
                M.LOG, retries, buffer_only, (A.FLAG_SENSOR_FAULT, store),
                ((mode, kind, M.FAULT_SENSOR), (M.FAULT_SENSOR, kind, M.LOG)),
            )
    elif mode is M.LOG:
        nxt = M.TRANSMIT if telemetry else M.ACQUIRE
        if kind is E.WRITE_OK:
            return nxt, 0, buffer_only, (), ((mode, kind, nxt),)
        if kind is E.WRITE_ERR:
            if retries < max_retries:
                return (
                    M.LOG, retries + 1, buffer_only, (A.RETRY_WRITE,),
                    ((mode, kind, M.FAULT_SD), (M.FAULT_SD, kind, M.LOG)),
                )
            # retries exhausted: keep acquiring into RAM, remount later
            return (
                nxt, 0, True, (A.ENTER_BUFFER_ONLY, A.SCHEDULE_REMOUNT),
                ((mode, kind, M.FAULT_SD), (M.FAULT_SD, kind, nxt)),
            )
    elif mode is M.TRANSMIT:
        if kind is E.NET_UP:
            return M.ACQUIRE, retries, buffer_only, (A.ENQUEUE_TELEMETRY, A.TRANSMIT), ((mode, kind, M.ACQUIRE),)
        if kind is E.NET_DOWN:
            return (
                M.ACQUIRE, retries, buffer_only, (A.ENQUEUE_TELEMETRY, A.DEFER),
                ((mode, kind, M.FAULT_NET), (M.FAULT_NET, kind, M.ACQUIRE)),
            )
    return None


_memo: dict = {}


def step(state: DaqState, event: Event) -> tuple[DaqState, tuple, tuple]:
    """Full transition: new state, actions and the modes passed through.

    The hop list has two entries when a transient fault mode is entered and
    left within the same event.
    """
    mode, retries, buffer_only, entered_at, telemetry, max_retries = state
    kind = event[0]
    key = (mode, kind, retries, buffer_only, telemetry, max_retries)
    hit = _memo.get(key)
    if hit is None:
        hit = _rules(mode, kind, retries, buffer_only, telemetry, max_retries) or ()
        _memo[key] = hit
    if not hit:
        return state, (), ()
    new_mode, new_retries, new_bo, actions, hops = hit
    if new_mode is not mode:
        entered_at = event[1]
    return DaqState(new_mode, new_retries, new_bo, entered_at, telemetry, max_retries), actions, hops


def transition(state: DaqState, event: Event) -> tuple[DaqState, list[Action]]:
    new, actions, _ = step(state, event)
    return new, list(actions)


class Diagnostics:
    """One line per hop: time, from, event, to.

    ``level`` "all" writes every hop, "faults" skips the routine
    ACQUIRE/LOG/TRANSMIT cycle (it is still counted), "none" only counts.
    """

    def __init__(self, level: str = "faults", stream: Optional[TextIO] = None):
        if level not in ("all", "faults", "none"):
            raise ValueError(f"unknown diagnostics level {level!r}")
        self.level = level
        self.stream = stream
        self.lines: list[str] = [] if stream is None else None
        self.hops = 0
        self.by_edge: dict[tuple, int] = {}

    def hop(self, t: float, hops: tuple) -> None:
        edges = self.by_edge
        for h in hops:
            self.hops += 1
            edges[h] = edges.get(h, 0) + 1
            if self.level == "none":
                continue
            src, ev, dst = h
            if self.level == "faults" and src not in FAULT_MODES and dst not in FAULT_MODES and ev is not E.REMOUNT_OK:
                continue
            self.write(f"{t:.1f} {src.value} {ev.value} {dst.value}")

    def note(self, t: float, text: str) -> None:
        if self.level != "none":
            self.write(f"{t:.1f} # {text}")

    def write(self, line: str) -> None:
        if self.stream is not None:
            self.stream.write(line + "\n")
        else:
            self.lines.append(line)

    def count(self, src: Mode, event: EventKind, dst: Mode) -> int:
        return self.by_edge.get((src, event, dst), 0)


class Machine:
    """Holds the current state and routes hops to diagnostics."""

    def __init__(self, telemetry_enabled: bool = False, max_sd_retries: int = 3, diagnostics: Optional[Diagnostics] = None):
        self.state = DaqState(Mode.INIT, 0, False, 0.0, telemetry_enabled, max_sd_retries)
        self.diag = diagnostics if diagnostics is not None else Diagnostics("none")

    @property
    def mode(self) -> Mode:
        return self.state.mode

    def fire(self, kind: EventKind, t: float) -> tuple:
        st = self.state
        mode = st[0]
        key = (mode, kind, st[1], st[2], st[4], st[5])
        hit = _memo.get(key)
        if hit is None:
            hit = _rules(mode, kind, st[1], st[2], st[4], st[5]) or ()
            _memo[key] = hit
        if not hit:
            return ()
        new_mode, retries, bo, actions, hops = hit
        if new_mode is not mode or retries != st[1] or bo != st[2]:
            self.state = DaqState(new_mode, retries, bo, t if new_mode is not mode else st[3], st[4], st[5])
        if hops:
            self.diag.hop(t, hops)
        return actions
