"""Named verification scenarios with pass/fail criteria."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .campaign import DAY, Campaign, CampaignSpec, nominal_fault_profile, run_campaign
from .model import Config, TurbineGeometry
from .pipeline.quality import quality_report
from .storage import MemoryMedium, recover, verify

PROFILES = ("endurance72h", "powercycle50", "shakedown")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class BenchReport:
    profile: str
    checks: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"profile={self.profile}"]
        out += [f"{k}={v}" for k, v in self.stats.items()]
        out += [f"check.{c.name}={'PASS' if c.passed else 'FAIL'} {c.detail}".rstrip() for c in self.checks]
        out.append(f"result={'PASS' if self.passed else 'FAIL'}")
        return out


def default_config(**over) -> Config:
    return Config(geometry=TurbineGeometry(0.5, 1.0), **over)


def endurance72h(seed: int = 0, config: Optional[Config] = None, duration_s: float = 3 * DAY) -> BenchReport:
    cfg = config or default_config()
    medium = MemoryMedium()
    res = run_campaign(CampaignSpec(cfg, duration_s=duration_s, seed=seed), medium=medium)
    records, _ = recover(medium, repair=False)
    integrity = verify(medium).integrity_events
    q = quality_report(records, expected=res.expected, integrity_events=integrity)
    rep = BenchReport("endurance72h")
    rep.stats = {"records": len(records), "expected": res.expected, "completeness": f"{q.completeness:.6f}"}
    rep.checks = [
        Check("record_count", len(records) == res.expected, f"{len(records)}/{res.expected}"),
        Check("completeness", q.completeness == 1.0, f"{q.completeness:.6f}"),
        Check("integrity_events", integrity == 0 and q.consistency == 0, f"integrity={integrity} consistency={q.consistency}"),
    ]
    return rep


def powercycle50(
    seed: int = 0,
    iterations: int = 50,
    config: Optional[Config] = None,
    commit_marker: bool = True,
    flush_spacing: int = 6,
) -> BenchReport:
    """Lose power part-way through ``iterations`` randomly chosen flushes.

    After every reboot the whole medium is read back and compared with the
    records that had been reported committed before the crash.
    """
    cfg = config or default_config()
    rng = np.random.default_rng(seed)
    # one crash every few flushes, each at a random byte of that flush
    gaps = rng.integers(1, 2 * flush_spacing, size=iterations)
    flush_ids = np.cumsum(gaps)
    plan = {int(i): float(u) for i, u in zip(flush_ids, rng.random(iterations))}
    n_flushes = int(flush_ids[-1]) + flush_spacing
    duration = n_flushes * cfg.flush_interval_s

    committed: list = []
    outcomes: list[tuple[bool, bool]] = []

    def on_commit(batch):
        committed.extend(batch)

    def on_recover(camp: Campaign, _report):
        if camp.result.power_cycles == 0:
            return
        got, _ = recover(camp.medium, repair=False)
        stamps = [(r[0], r[1]) for r in got]
        outcomes.append((got == committed, len(set(stamps)) == len(stamps)))

    medium = MemoryMedium()
    camp = Campaign(
        CampaignSpec(cfg, duration_s=duration, seed=seed),
        medium=medium, crash_plan=plan, commit_marker=commit_marker,
        on_commit=on_commit, on_recover=on_recover,
    )
    res = camp.run()
    final, _ = recover(medium, repair=False)
    no_loss = sum(1 for ok, _ in outcomes if ok)
    no_dup = sum(1 for _, ok in outcomes if ok)
    rep = BenchReport("powercycle50")
    rep.stats = {
        "iterations": len(outcomes),
        "crashes": res.power_cycles,
        "records_committed": len(committed),
        "lost_uncommitted": res.lost_at_power_loss,
    }
    rep.checks = [
        Check("iterations", len(outcomes) == iterations, f"{len(outcomes)}/{iterations}"),
        Check("zero_committed_loss", no_loss == len(outcomes) and final == committed, f"{no_loss}/{len(outcomes)}"),
        Check("zero_duplicates", no_dup == len(outcomes), f"{no_dup}/{len(outcomes)}"),
    ]
    return rep


def shakedown(seed: int = 0, config: Optional[Config] = None, duration_s: float = 7 * DAY) -> BenchReport:
    cfg = config or default_config()
    medium = MemoryMedium()
    faults = nominal_fault_profile(duration_s, seed)
    res = run_campaign(CampaignSpec(cfg, faults, duration_s=duration_s, seed=seed), medium=medium)
    records, _ = recover(medium, repair=False)
    q = quality_report(records, expected=res.expected, integrity_events=verify(medium).integrity_events)
    rep = BenchReport("shakedown")
    rep.stats = {
        "records": len(records),
        "expected": res.expected,
        "completeness": f"{q.completeness:.6f}",
        "power_cycles": res.power_cycles,
    }
    rep.checks = [
        Check("completeness", q.completeness > 0.95, f"{q.completeness:.6f} > 0.95"),
        Check("consistency", q.consistency == 0, f"{q.consistency}"),
    ]
    return rep


def run_profile(name: str, seed: int = 0) -> BenchReport:
    if name == "endurance72h":
        return endurance72h(seed)
    if name == "powercycle50":
        return powercycle50(seed)
    if name == "shakedown":
        return shakedown(seed)
    raise ValueError(f"unknown profile {name!r}; expected one of {PROFILES}")
