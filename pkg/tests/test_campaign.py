from collections import Counter

import pytest

from winddaq.benchtest import default_config, endurance72h, powercycle50, run_profile, shakedown
from winddaq.campaign import DAY, Campaign, CampaignSpec, nominal_fault_profile, run_campaign
from winddaq.model import F_SENSOR_FAULT, TelemetrySettings
from winddaq.pipeline.quality import quality_report
from winddaq.sim import Fault, FaultSchedule
from winddaq.statemachine import EventKind, Mode
from winddaq.storage import MemoryMedium, recover


def campaign(duration, faults=(), seed=1, medium=None, **over):
    cfg = default_config(**over)
    medium = medium if medium is not None else MemoryMedium()
    res = run_campaign(CampaignSpec(cfg, FaultSchedule(list(faults)), duration, seed=seed), medium=medium)
    records, _ = recover(medium, repair=False)
    return res, records, medium


def test_fault_free_hour():
    res, records, _ = campaign(3600)
    assert res.expected == res.records_committed == len(records) == 3600
    assert [r.timestamp_utc for r in records] == list(range(records[0].timestamp_utc, records[0].timestamp_utc + 3600))
    q = quality_report(records, expected=res.expected)
    assert q.completeness == 1.0 and q.consistency == 0
    assert res.power_cycles == 0 and res.integrity_events == 0


def test_two_hertz_uses_seq():
    res, records, _ = campaign(600, sample_rate_hz=2)
    assert len(records) == res.expected == 1200
    assert Counter(r.seq for r in records) == {0: 600, 1: 600}
    assert quality_report(records, expected=1200).consistency == 0


def test_seeded_runs_are_identical():
    faults = [Fault(600, 700, "POWER_OUTAGE"), Fault(1000, 1300, "SD_FAIL")]
    a = campaign(1800, faults, seed=4)[2].snapshot()
    b = campaign(1800, faults, seed=4)[2].snapshot()
    c = campaign(1800, faults, seed=5)[2].snapshot()
    assert a == b
    assert a != c


def test_power_outage_loses_only_the_outage_and_open_buffer():
    res, records, _ = campaign(3600, [Fault(1800, 2100, "POWER_OUTAGE")])
    assert res.power_cycles == 1
    assert res.records_committed == len(records)
    assert res.records_acquired == 3600 - 300
    assert res.lost_at_power_loss + res.records_committed == res.records_acquired
    assert res.lost_at_power_loss < 60
    q = quality_report(records, expected=res.expected)
    assert q.consistency == 0


def test_power_outage_at_midnight():
    # starts 100 s before midnight and comes back after it
    cfg = default_config()
    start = cfg.site.start_utc
    pre = 86400 - start % 86400 - 100
    res, records, medium = campaign(pre + 400, [Fault(pre + 50, pre + 200, "POWER_OUTAGE")])
    assert len(medium.names()) == 2
    assert len(records) == res.records_committed
    assert quality_report(records).consistency == 0


def test_sd_failure_is_bridged_by_ram():
    res, records, _ = campaign(1800, [Fault(600, 900, "SD_FAIL")])
    assert res.buffer_only_entries == 1 and res.remounts == 1
    assert res.write_errors >= 1
    assert res.records_committed == len(records) == 1800
    assert res.ring_dropped == 0
    assert res.diagnostics.count(Mode.FAULT_SD, EventKind.WRITE_ERR, Mode.ACQUIRE) == 1


def test_sd_failure_longer_than_ring():
    res, records, _ = campaign(1200, [Fault(100, 1100, "SD_FAIL")], ring_capacity=300)
    assert res.ring_dropped > 0
    assert len(records) == res.records_committed == 1200 - res.ring_dropped


def test_stuck_sensor_is_visible():
    res, records, _ = campaign(900, [Fault(200, 500, "SENSOR_STUCK", "wind")])
    stuck = {r.wind_speed_mps for r in records if 210 <= r.timestamp_utc - records[0].timestamp_utc < 500}
    assert len(stuck) == 1
    assert quality_report(records).stuck_runs["wind_speed_mps"] >= 1


def test_stuck_temperature_keeps_density():
    res, records, _ = campaign(600, [Fault(100, 400, "SENSOR_STUCK", "temp")])
    assert quality_report(records).stuck_runs["temp_c"] >= 1
    assert not any(r.flags & F_SENSOR_FAULT for r in records)


def test_telemetry_counts():
    tel = TelemetrySettings(enabled=True, queue_capacity=500)
    res, records, _ = campaign(1200, [Fault(300, 900, "NET_OUTAGE")], telemetry=tel)
    assert len(records) == 1200
    # 600 s offline against a 500 slot queue, plus whatever backoff adds after the link returns
    assert res.telemetry_drops >= 100
    assert res.telemetry_sent > 0
    assert res.telemetry_sent + res.telemetry_pending + res.telemetry_drops == 1200


def test_nominal_profile_totals():
    for seed in range(4):
        kinds = Counter()
        hours = Counter()
        for f in nominal_fault_profile(180 * DAY, seed):
            kinds[f.kind] += 1
            hours[f.kind] += (f.end_s - f.start_s) / 3600
        # six maintenance stops, two unbridged grid-outage tails, weekly network drops
        assert hours["POWER_OUTAGE"] == pytest.approx(6 * 4 + 2 * 1)
        assert kinds["POWER_OUTAGE"] == 8
        assert 24 <= kinds["NET_OUTAGE"] <= 26
        assert hours["NET_OUTAGE"] == pytest.approx(kinds["NET_OUTAGE"] / 2)


def test_crash_hook_lands_inside_a_flush():
    medium = MemoryMedium()
    camp = Campaign(CampaignSpec(default_config(), duration_s=600, seed=2), medium=medium, crash_plan={3: 0.5})
    res = camp.run()
    assert res.power_cycles == 1
    records, _ = recover(medium, repair=False)
    assert len(records) == res.records_committed
    assert quality_report(records).consistency == 0


# -- benchtests -------------------------------------------------------------

def test_powercycle50_passes():
    rep = powercycle50(seed=11)
    assert rep.passed, rep.lines()
    assert rep.stats["iterations"] == 50


def test_powercycle_without_commit_marker_fails():
    rep = powercycle50(seed=11, commit_marker=False)
    assert not rep.passed
    assert rep.lines()[-1] == "result=FAIL"


def test_endurance_short():
    assert endurance72h(seed=3, duration_s=6 * 3600).passed


def test_shakedown_passes():
    rep = shakedown(seed=0)
    assert rep.passed, rep.lines()
    assert rep.stats["power_cycles"] >= 1


def test_unknown_profile():
    with pytest.raises(ValueError):
        run_profile("soak")
