import json

import pytest

from carboncert import aggregator as agg_mod
from carboncert.aggregator import (
    PF_BOUNDS,
    RAMP,
    RANGE_POWER,
    RANGE_VOLTAGE,
    AnomalyRules,
    DuplicatePhase,
    Rejected,
    Unauthorized,
    aggregate_minute,
    detect_anomalies,
    flag_aggregate,
    make_batches,
    mark_processed,
    scan_new_files,
    submit,
)
from carboncert.chaincode import CreditContract
from carboncert.ledger import Ledger
from carboncert.model import (
    METER_IDS,
    WINDOWS_PER_DAY,
    Identity,
    MinuteRecord,
    Quality,
    Role,
    parse_date,
)

DAY0 = parse_date("2025-06-01")
RULES = AnomalyRules()


def _rec(meter, phase, minute=DAY0, power=4000.0, voltage=230.0, freq=50.0, pf=0.97, count=40):
    return MinuteRecord(
        meter, phase, minute, power, voltage, power / voltage / pf, pf, freq, power / pf, count
    )


def _full_minute(minute=DAY0, power=4000.0, **kw):
    return [_rec(m, p, minute, power, **kw) for m in METER_IDS for p in (1, 2, 3)]


def test_aggregate_minute_full_grid():
    agg = aggregate_minute(_full_minute(power=4000.0))
    assert agg.total_power == pytest.approx(24 * 4000.0)
    assert agg.avg_voltage == pytest.approx(230.0)
    assert agg.avg_frequency == pytest.approx(50.0)
    assert agg.phase_count == 24
    assert agg.quality is Quality.OK and agg.flags == []


def test_aggregate_minute_partial():
    records = _full_minute()
    records[5] = records[5]._replace(sample_count=0, avg_active_power=None, avg_voltage=None, avg_frequency=None)
    agg = aggregate_minute(records)
    assert agg.phase_count == 23
    assert agg.quality is Quality.PARTIAL
    assert agg.total_power == pytest.approx(23 * 4000.0)


def test_aggregate_minute_all_absent():
    records = [
        _rec(m, p)._replace(sample_count=0, avg_active_power=None, avg_voltage=None, avg_frequency=None)
        for m in METER_IDS
        for p in (1, 2, 3)
    ]
    agg = aggregate_minute(records)
    assert agg.phase_count == 0 and agg.total_power == 0.0
    assert agg.avg_voltage is None and agg.avg_frequency is None
    assert agg.quality is Quality.OK


def test_aggregate_minute_rejects_duplicate_phase():
    with pytest.raises(DuplicatePhase):
        aggregate_minute([_rec(1, 1), _rec(1, 1)])


def test_aggregate_minute_rejects_mixed_minutes():
    with pytest.raises(ValueError):
        aggregate_minute([_rec(1, 1, DAY0), _rec(1, 2, DAY0 + 60)])


def test_detect_anomalies_clean():
    records = _full_minute()
    agg = aggregate_minute(records)
    assert detect_anomalies(agg, None, records, RULES) == []


def test_detect_power_range():
    records = _full_minute()
    records[0] = records[0]._replace(avg_active_power=7000.0)
    agg = aggregate_minute(records)
    codes = {a.code for a in detect_anomalies(agg, None, records, RULES)}
    assert codes == {RANGE_POWER}


def test_detect_voltage_and_pf():
    records = _full_minute()
    records[0] = records[0]._replace(avg_voltage=190.0, avg_power_factor=1.2)
    agg = aggregate_minute(records)
    codes = {a.code for a in detect_anomalies(agg, None, records, RULES)}
    assert codes == {RANGE_VOLTAGE, PF_BOUNDS}


def test_detect_ramp_against_previous_minute():
    prev = aggregate_minute(_full_minute(DAY0, power=100.0))
    records = _full_minute(DAY0 + 60, power=4000.0)
    agg = aggregate_minute(records)
    anomalies = detect_anomalies(agg, prev, records, RULES)
    assert {a.code for a in anomalies} == {RAMP}
    # no previous minute -> no ramp check
    assert detect_anomalies(agg, None, records, RULES) == []


def test_flag_aggregate_sets_quality_and_sorted_codes():
    records = _full_minute()
    records[0] = records[0]._replace(avg_voltage=190.0, avg_active_power=9000.0)
    agg = aggregate_minute(records)
    flag_aggregate(agg, detect_anomalies(agg, None, records, RULES))
    assert agg.quality is Quality.FLAGGED
    assert agg.flags == sorted(agg.flags) == [RANGE_POWER, RANGE_VOLTAGE]


def test_rules_validation():
    with pytest.raises(ValueError):
        AnomalyRules(voltage_range=(250.0, 210.0))
    with pytest.raises(ValueError):
        AnomalyRules(max_ramp_watts_per_minute=0.0)
    r = AnomalyRules.from_dict({"voltage_range": [200.0, 260.0], "max_ramp_watts_per_minute": 5.0})
    assert r.voltage_range == (200.0, 260.0) and r.max_ramp_watts_per_minute == 5.0


def test_make_batches_groups_by_window():
    aggs = [aggregate_minute(_full_minute(DAY0 + 60 * m)) for m in range(10)]
    batches, missing = make_batches(aggs, "plant-1")
    assert len(batches) == 2
    assert [b.batch_id for b in batches] == ["plant-1-20250601-000", "plant-1-20250601-001"]
    assert all(len(b.aggregates) == 5 for b in batches)
    assert batches[0].window_start == DAY0 and batches[0].window_end == DAY0 + 300
    assert missing == list(range(2, WINDOWS_PER_DAY))


def test_make_batches_short_window():
    aggs = [aggregate_minute(_full_minute(DAY0 + 60 * m)) for m in (0, 2, 4)]
    batches, missing = make_batches(aggs, "plant-1")
    assert len(batches) == 1 and len(batches[0].aggregates) == 3
    assert 0 not in missing


def test_make_batches_empty():
    batches, missing = make_batches([], "plant-1")
    assert batches == [] and missing == list(range(WINDOWS_PER_DAY))


def test_scan_and_mark_processed(tmp_path):
    root_a = tmp_path / "A"
    day = root_a / "2025-06-01"
    day.mkdir(parents=True)
    for k in (2, 1):
        (day / f"SEM{k}.csv").write_text("x")
    result = scan_new_files([root_a, tmp_path / "B"])
    assert [f.name for f in result.files] == ["SEM1.csv", "SEM2.csv"]
    assert result.notices and "MissingCollector" in result.notices[0]
    mark_processed(result.files[:1])
    again = scan_new_files([root_a])
    assert [f.name for f in again.files] == ["SEM2.csv"]
    mark_processed(again.files)
    assert scan_new_files([root_a]).files == []


def _ledger(tmp_path):
    ledger = Ledger(tmp_path / "chain", CreditContract())
    producer = ledger.register_identity("plant-1", Role.PRODUCER)
    return ledger, producer


def test_submit_round_trip(tmp_path):
    ledger, producer = _ledger(tmp_path)
    aggs = [aggregate_minute(_full_minute(DAY0 + 60 * m)) for m in range(5)]
    batch = make_batches(aggs, "plant-1")[0][0]
    receipt = submit(batch, producer, ledger)
    assert receipt.status == "VALID"
    assert ledger.query_state("batch/plant-1/plant-1-20250601-000") is not None


def test_submit_requires_producer_role(tmp_path):
    ledger, _ = _ledger(tmp_path)
    auditor = ledger.register_identity("auditor-1", Role.AUDITOR)
    aggs = [aggregate_minute(_full_minute(DAY0))]
    batch = make_batches(aggs, "auditor-1")[0][0]
    with pytest.raises(Unauthorized):
        submit(batch, auditor, ledger)


def test_submit_raises_rejected_with_reason(tmp_path):
    ledger, producer = _ledger(tmp_path)
    aggs = [aggregate_minute(_full_minute(DAY0))]
    batch = make_batches(aggs, "plant-1")[0][0]
    submit(batch, producer, ledger)
    with pytest.raises(Rejected) as exc:
        submit(batch, producer, ledger)
    assert exc.value.reason == "duplicate"


def test_run_day_aggregation_end_to_end(sim_day):
    # the shared fault-free day: full volumes, nothing flagged or missing
    config, result = sim_day
    assert result.aggregate_count == 1440
    assert result.batch_count == 288
    assert result.flagged_minutes == 0
    assert result.missing_windows == []


def test_run_day_aggregation_writes_quarantine_file(sim_day):
    config, _ = sim_day
    path = config.aggregator_dir / "anomalies-2025-06-01.jsonl"
    assert path.exists()
    assert path.read_text() == ""  # clean day, no quarantined minutes


def test_quarantine_entries_are_json_lines(tmp_path):
    # exercise the quarantine sidecar through a tiny synthetic day
    ledger, producer = _ledger(tmp_path)
    day = tmp_path / "colls" / "A" / "2025-06-01"
    day.mkdir(parents=True)
    from carboncert.collector import CSV_HEADER

    rows = [CSV_HEADER]
    rows.append("2025-06-01T00:00:00Z,1,1,9500.000,230.000,42.000,0.970,50.000,9794.000,40")
    (day / "SEM1.csv").write_text("\n".join(rows) + "\n")
    summary = agg_mod.run_day_aggregation(
        "2025-06-01",
        [tmp_path / "colls" / "A"],
        RULES,
        producer,
        ledger,
        tmp_path / "out",
    )
    assert summary.flagged_minutes == 1
    lines = (tmp_path / "out" / "anomalies-2025-06-01.jsonl").read_text().splitlines()
    entry = json.loads(lines[0])
    assert entry["codes"] == [RANGE_POWER]
    assert entry["aggregate"]["quality"] == "FLAGGED"
    # quarantine landed on chain under the minute index key
    assert ledger.query_state("quarantine/2025-06-01/0000") is not None
    # 287 windows were reported missing (only window 0 had data)
    missing = json.loads(ledger.query_state("missing/plant-1/2025-06-01").decode())
    assert missing["windows"] == list(range(1, WINDOWS_PER_DAY))
