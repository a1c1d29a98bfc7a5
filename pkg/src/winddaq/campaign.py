"""Tick-by-tick campaign driver composing simulator, firmware and storage."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .acquisition import AcquisitionState, acquire_tick
from .model import F_SENSOR_FAULT, Config
from .sim import DEFAULT_CURVE, CpCurve, Fault, FaultSchedule, FaultTimeline, Simulator
from .statemachine import Action, Diagnostics, EventKind, Machine, Mode
from .storage import (
    DirectoryMedium,
    LogBufferPair,
    MediumError,
    MemoryMedium,
    PowerLoss,
    RamRing,
    SegmentWriter,
    recover,
)
from .telemetry import TelemetryQueue
from .timekeeping import ClockState, Timestamp, ntp_sync, rtc_advance

DAY = 86400.0
MONTH = 30 * DAY


@dataclass
class CampaignSpec:
    config: Config
    faults: FaultSchedule = field(default_factory=FaultSchedule)
    duration_s: float = 600.0
    accel: Optional[float] = None  # None runs as fast as possible
    seed: int = 0
    out: Optional[str] = None  # None keeps segments in memory

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if self.accel is not None and not self.accel >= 1:
            raise ValueError("accel must be >= 1 or max")


@dataclass
class CampaignResult:
    ticks: int = 0
    expected: int = 0
    powered_ticks: int = 0
    records_acquired: int = 0
    records_committed: int = 0
    lost_at_power_loss: int = 0
    ring_dropped: int = 0
    buffer_overflow: int = 0
    write_errors: int = 0
    buffer_only_entries: int = 0
    remounts: int = 0
    power_cycles: int = 0
    recovered_truncated_bytes: int = 0
    integrity_events: int = 0
    ntp_syncs: int = 0
    late_ticks: int = 0
    telemetry_sent: int = 0
    telemetry_drops: int = 0
    telemetry_pending: int = 0
    transitions: int = 0
    wall_s: float = 0.0
    medium: object = None
    diagnostics: object = None
    telemetry: object = None
    truth: Optional[dict] = None

    @property
    def completeness(self) -> float:
        return min(1.0, self.records_committed / self.expected) if self.expected else 0.0

    def summary(self) -> dict:
        keys = (
            "ticks", "expected", "records_acquired", "records_committed", "completeness",
            "lost_at_power_loss", "ring_dropped", "buffer_overflow", "write_errors",
            "buffer_only_entries", "remounts", "power_cycles", "integrity_events",
            "ntp_syncs", "late_ticks", "telemetry_sent", "telemetry_drops",
            "telemetry_pending", "transitions",
        )
        out = {k: getattr(self, k) for k in keys}
        out["completeness"] = f"{self.completeness:.6f}"
        return out


class Campaign:
    """One deployment run.

    ``crash_plan`` maps a flush index to a fraction in [0, 1); when that
    flush starts, the medium is armed to lose power after that fraction of
    the flush's bytes, so the crash always lands before the commit marker
    is complete.
    ``on_recover`` is called after every boot-time recovery (test hook).
    """

    def __init__(
        self,
        spec: CampaignSpec,
        medium=None,
        curve: CpCurve = DEFAULT_CURVE,
        collect_truth: bool = False,
        crash_plan: Optional[dict] = None,
        commit_marker: bool = True,
        on_recover: Optional[Callable] = None,
        on_commit: Optional[Callable] = None,
    ):
        self.spec = spec
        cfg = self.cfg = spec.config
        if medium is None:
            medium = DirectoryMedium(spec.out) if spec.out else MemoryMedium()
        self.medium = medium
        self.sim = Simulator(cfg, spec.seed, curve)
        self.timeline = FaultTimeline(spec.faults)
        self.writer = SegmentWriter(medium, commit_marker=commit_marker)
        self.buffers = LogBufferPair(cfg.buffer_capacity, cfg.flush_interval_s)
        self.ring = RamRing(cfg.ring_capacity)
        self.acq = AcquisitionState(cfg.ema_alpha)
        self.diag = Diagnostics(cfg.diagnostics)
        tel = cfg.telemetry
        self.machine = Machine(tel.enabled, cfg.sd_max_retries, self.diag)
        self.telemetry = TelemetryQueue(tel, spec.seed) if tel.enabled else None
        self.collect_truth = collect_truth
        self.crash_plan = dict(crash_plan or {})
        self.on_recover = on_recover
        self.on_commit = on_commit
        self.flush_index = 0
        self.result = CampaignResult(medium=medium, diagnostics=self.diag, telemetry=self.telemetry)
        if collect_truth:
            self.result.truth = {}

    # -- helpers ----------------------------------------------------------

    def _flush(self, now: float) -> bool:
        batch = self.buffers.swap()
        if not batch:
            return True
        frac = self.crash_plan.pop(self.flush_index, None)
        self.flush_index += 1
        budget = None
        if frac is not None:
            budget = int(frac * self.writer.planned_bytes(batch))
            self.medium.arm_crash(budget)
        res = self.writer.write(batch)
        if budget is not None:
            self.medium.disarm()
        if res.records:
            self.result.records_committed += res.records
            if self.on_commit is not None:
                self.on_commit(batch[:res.records])
        if not res.ok:
            self.result.write_errors += 1
            self.buffers.flushed(res.records)
            return False
        self.buffers.flushed()
        return True

    def _flush_ring(self) -> None:
        held = list(self.ring.items)
        self.ring.items.clear()
        if not held:
            return
        res = self.writer.write(held)
        if res.records:
            self.result.records_committed += res.records
            if self.on_commit is not None:
                self.on_commit(held[:res.records])
        if not res.ok:
            self.ring.extend(held[res.records:])

    def _boot(self, now: float, net_up: bool) -> None:
        m = self.machine
        actions = m.fire(EventKind.POWER_RESTORED, now) if m.mode is Mode.OFF else (Action.RECOVER,)
        if Action.RECOVER in actions:
            self._recover(now)
        m.fire(EventKind.BOOT_OK, now)
        if net_up:
            self.clock = ntp_sync(self.clock, self.true_now)
            self.next_sync = self.true_now + self.cfg.clock.ntp_sync_interval_s
            self.result.ntp_syncs += 1
            m.fire(EventKind.SYNC_OK, now)
        else:
            m.fire(EventKind.SYNC_FAIL, now)
            self.next_sync = -math.inf  # retry as soon as the network is back
        self.acq.reset(now)

    def _recover(self, now: float) -> None:
        names = self.medium.names()
        try:
            # older days were closed before the newest one was opened
            _, rep = recover(self.medium, repair=True, names=names[-1:])
        except MediumError:
            self.diag.note(now, "recovery deferred: medium unavailable")
            self.writer.adopt({})
            return
        self.writer.adopt(rep.committed_end)
        self.result.recovered_truncated_bytes += rep.truncated_bytes
        self.result.integrity_events += rep.integrity_events
        if rep.last_stamp is not None:
            last = Timestamp(*rep.last_stamp)
            cur = self.clock.last_stamp
            if cur is None or last > cur:
                self.clock = self.clock._replace(last_stamp=last)
        if self.on_recover is not None:
            self.on_recover(self, rep)

    def _power_loss(self, now: float) -> None:
        self.machine.fire(EventKind.POWER_LOSS, now)
        r = self.result
        r.power_cycles += 1
        r.lost_at_power_loss += len(self.buffers.drain()) + len(self.ring)
        self.ring.items.clear()
        if self.telemetry is not None:
            self.telemetry.drop_all()
        # RAM is gone; the battery-backed RTC keeps running and keeps its last sync
        self.clock = self.clock._replace(last_stamp=None)

    # -- main loop --------------------------------------------------------

    def run(self) -> CampaignResult:
        spec, cfg, r = self.spec, self.cfg, self.result
        dt = cfg.tick_s
        n_ticks = int(round(spec.duration_s * cfg.sample_rate_hz))
        r.expected = n_ticks
        start = float(cfg.site.start_utc)
        # ticks sit mid-slot so sub-second clock error never changes the second
        self.true_now = start + 0.5 * dt
        self.clock = ClockState.start(
            self.true_now + cfg.clock.initial_offset_s, cfg.clock.drift_ppm, cfg.clock.ntp_step_threshold_s
        )
        self.next_sync = math.inf
        sync_interval = cfg.clock.ntp_sync_interval_s
        flush_interval = cfg.flush_interval_s
        remount_interval = cfg.remount_interval_s
        next_flush = flush_interval
        next_remount = math.inf

        sim, acq, machine, buffers, ring, medium = self.sim, self.acq, self.machine, self.buffers, self.ring, self.medium
        timeline = self.timeline
        telemetry = self.telemetry
        truth_map = r.truth
        fire = machine.fire
        E, A = EventKind, Action
        STORE, STORE_RAM, RETRY, BUFFER_ONLY = A.STORE, A.STORE_RAM, A.RETRY_WRITE, A.ENTER_BUFFER_ONLY
        NO_STUCK = ()
        booted = False
        pacing = spec.accel is not None
        wall0 = time.perf_counter()
        period = dt / spec.accel if pacing else 0.0

        for k in range(n_ticks):
            t_rel = k * dt
            if pacing:
                deadline = wall0 + k * period
                lag = time.perf_counter() - deadline
                if lag < 0:
                    time.sleep(-lag)
                elif lag > period:
                    r.late_ticks += 1
            if k:
                self.true_now = start + t_rel + 0.5 * dt
                self.clock = rtc_advance(self.clock, dt)
            active = timeline.at(t_rel)
            stuck = NO_STUCK
            power_off = net_up = False
            sd_ok = True
            if active:
                power_off = "POWER_OUTAGE" in active
                net_up = "NET_OUTAGE" not in active
                sd_ok = "SD_FAIL" not in active
                stuck = tuple(lbl[13:] for lbl in active if lbl.startswith("SENSOR_STUCK:"))
            else:
                net_up = True
            medium.available = sd_ok

            env, truth, meas = sim.step(stuck)
            if power_off:
                if machine.state.mode is not Mode.OFF and booted:
                    self._power_loss(t_rel)
                continue
            if machine.state.mode is Mode.OFF or not booted:
                booted = True
                self._boot(t_rel, net_up)
                next_flush = t_rel + flush_interval
            r.powered_ticks += 1

            if net_up and self.true_now >= self.next_sync:
                self.clock = ntp_sync(self.clock, self.true_now)
                self.next_sync = self.true_now + sync_interval
                r.ntp_syncs += 1

            state = machine.state
            if state.buffer_only and t_rel >= next_remount:
                if sd_ok:
                    fire(E.REMOUNT_OK, t_rel)
                    r.remounts += 1
                    next_remount = math.inf
                    self._flush_ring()
                else:
                    next_remount = t_rel + remount_interval

            # pulses arrive on the interrupt side during the slot
            acq.counter.add(meas.pulses)
            fire(E.TICK, t_rel)
            rec, self.clock = acquire_tick(meas, acq, self.clock, cfg, t_rel + dt)
            r.records_acquired += 1
            if truth_map is not None:
                truth_map[(rec[0], rec[1])] = (truth.cp_true, truth.tsr_true)
            actions = fire(E.SENSOR_ERR if rec[14] & F_SENSOR_FAULT else E.SAMPLE_OK, t_rel)

            ok = True
            if STORE_RAM in actions:
                ring.push(rec)
            elif STORE in actions:
                high = buffers.append(rec)
                if high or t_rel + dt >= next_flush:
                    next_flush = t_rel + dt + flush_interval
                    try:
                        ok = self._flush(t_rel)
                    except PowerLoss:
                        self._power_loss(t_rel)
                        continue
            while True:
                actions = fire(E.WRITE_OK if ok else E.WRITE_ERR, t_rel)
                if ok or BUFFER_ONLY in actions:
                    break
                if RETRY in actions:
                    ok = self._flush(t_rel)
            if BUFFER_ONLY in actions:
                r.buffer_only_entries += 1
                ring.extend(buffers.drain())
                next_remount = t_rel + remount_interval

            if telemetry is not None:
                actions = fire(E.NET_UP if net_up else E.NET_DOWN, t_rel)
                telemetry.enqueue(rec)
                telemetry.try_transmit(net_up, self.true_now)

        # orderly end of campaign: flush what is held
        if booted and machine.state.mode is not Mode.OFF:
            end_t = n_ticks * dt
            if machine.state.buffer_only and medium.available:
                self._flush_ring()
            try:
                if not self._flush(end_t):
                    self.diag.note(end_t, "final flush failed")
            except PowerLoss:
                self._power_loss(end_t)

        r.ticks = n_ticks
        r.ring_dropped = ring.dropped
        r.buffer_overflow = buffers.overflow
        r.transitions = self.diag.hops
        if telemetry is not None:
            r.telemetry_sent = telemetry.sent_total
            r.telemetry_drops = telemetry.drops
            r.telemetry_pending = len(telemetry)
        r.wall_s = time.perf_counter() - wall0
        return r


def run_campaign(spec: CampaignSpec, **kw) -> CampaignResult:
    camp = Campaign(spec, **kw)
    try:
        return camp.run()
    finally:
        camp.medium.close()


def write_run_artifacts(out: str | Path, result: CampaignResult) -> None:
    """Diagnostics next to the segments in a run directory."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    diag = result.diagnostics
    (out / "diagnostics.log").write_text("".join(line + "\n" for line in diag.lines or ()))
    if result.telemetry is not None:
        result.telemetry.broker.write_transcript(out / "telemetry_transcript.log")
    (out / "summary.txt").write_text("".join(f"{k}={v}\n" for k, v in result.summary().items()))


def nominal_fault_profile(duration_s: float, seed: int = 0) -> FaultSchedule:
    """Field-typical faults over a campaign.

    A 4 h maintenance stop every 30 days (the first on day 3), a 5 h grid
    outage every 90 days (the first around day 45) of which the battery
    bridges the first 4 h, and a 30 min network outage every week. Start
    times get a seeded jitter.
    """
    rng = np.random.default_rng(seed)
    faults: list[Fault] = []
    h = 3600.0
    start = 3 * DAY
    while start < duration_s:
        s = start + rng.uniform(-DAY, DAY)
        faults.append(Fault(s, s + 4 * h, "POWER_OUTAGE"))
        start += MONTH
    start = 45 * DAY
    while start < duration_s:
        s = start + rng.uniform(-5 * DAY, 5 * DAY)
        # battery covers 4 h of the 5 h grid outage
        faults.append(Fault(s + 4 * h, s + 5 * h, "POWER_OUTAGE"))
        start += 3 * MONTH
    week = 7 * DAY
    w = 0
    while w * week < duration_s:
        s = w * week + rng.uniform(h, week - h)
        faults.append(Fault(s, s + 0.5 * h, "NET_OUTAGE"))
        w += 1
    faults = [f for f in faults if f.start_s < duration_s]
    return FaultSchedule(_merge_overlaps(faults))


def _merge_overlaps(faults: list[Fault]) -> list[Fault]:
    """Merge overlapping intervals of the same kind so totals stay exact."""
    out: list[Fault] = []
    for kind in sorted({f.kind for f in faults}):
        items = sorted((f for f in faults if f.kind == kind), key=lambda f: (f.channel or "", f.start_s))
        for f in items:
            if out and out[-1].kind == kind and out[-1].channel == f.channel and f.start_s <= out[-1].end_s:
                last = out.pop()
                out.append(Fault(last.start_s, max(last.end_s, f.end_s), kind, f.channel))
            else:
                out.append(f)
    out.sort(key=lambda f: (f.start_s, f.kind))
    return out
