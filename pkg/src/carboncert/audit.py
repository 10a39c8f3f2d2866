"""Third-party verification: independent replay of raw CSVs against the chain.

This module deliberately re-implements CSV parsing, minute fusion, anomaly
rules, canonical serialization, and the energy arithmetic instead of calling
the pipeline modules: an audit must not assume the system under audit is
honest. Only the shared type definitions are reused.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .aggregator import AnomalyRules

WINDOWS_PER_DAY = 288
TOTAL_PHASES = 24
REL_TOL = 1e-9

CSV_COLUMNS = [
    "timestamp_utc",
    "meter_id",
    "phase",
    "active_power_w",
    "voltage_v",
    "current_a",
    "power_factor",
    "frequency_hz",
    "apparent_power_va",
    "sample_count",
]


class MissingData(RuntimeError):
    def __init__(self, date: str):
        super().__init__(f"no collector CSV data for {date}")
        self.date = date


@dataclass
class Mismatch:
    stage: str
    key: str
    expected: Optional[str]
    found: Optional[str]


@dataclass
class AuditReport:
    date: str
    chain_ok: bool
    first_bad_height: Optional[int]
    replay_matches: bool
    mismatches: List[Mismatch] = field(default_factory=list)
    quarantine_summary: Dict = field(default_factory=dict)
    credit_summary: Dict = field(default_factory=dict)
    notices: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.chain_ok and self.replay_matches


# -- independent canonical serialization ------------------------------------


def _canon(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return "%.3f" % (value + 0.0)
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_canon(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{" + ",".join(json.dumps(k) + ":" + _canon(value[k]) for k in sorted(value)) + "}"
    raise TypeError(type(value))


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _ts(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _epoch(text: str) -> int:
    dt = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


# -- independent replay ------------------------------------------------------


@dataclass
class DayReplay:
    """Everything the auditor recomputes from raw CSVs for one day."""

    date: str
    batches: Dict[int, dict]  # window index -> canonical batch dict
    batch_bytes: Dict[int, bytes]
    flagged_minutes: List[str]
    missing_windows: List[int]
    energy_kwh: float
    co2_by_factor: Dict[float, float] = field(default_factory=dict)
    notices: List[str] = field(default_factory=list)


def _parse_csv(path: Path) -> List[dict]:
    rows = []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",") != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header: {path}")
    for line in lines[1:]:
        cells = line.split(",")
        rows.append(
            {
                "minute": _epoch(cells[0]),
                "meter_id": int(cells[1]),
                "phase": int(cells[2]),
                "power": float(cells[3]) if cells[3] else None,
                "voltage": float(cells[4]) if cells[4] else None,
                "pf": float(cells[6]) if cells[6] else None,
                "frequency": float(cells[7]) if cells[7] else None,
                "samples": int(cells[9]),
            }
        )
    return rows


def replay_day(csv_roots, date: str, rules: AnomalyRules, producer: str) -> DayReplay:
    """Recompute aggregates, flags, batches, and energy from raw CSVs."""
    files = []
    for root in sorted(Path(r) for r in csv_roots):
        day_dir = root / date
        if day_dir.is_dir():
            files.extend(sorted(day_dir.glob("SEM*.csv")))
    if not files:
        raise MissingData(date)

    per_minute: Dict[int, List[dict]] = {}
    for f in files:
        for row in _parse_csv(f):
            per_minute.setdefault(row["minute"], []).append(row)

    day0 = _epoch(f"{date}T00:00:00Z")
    compact = date.replace("-", "")
    batches: Dict[int, dict] = {}
    batch_bytes: Dict[int, bytes] = {}
    flagged: List[str] = []
    per_window: Dict[int, List[dict]] = {}
    prev_total: Optional[float] = None
    energy = 0.0

    for minute in sorted(per_minute):
        rows = sorted(per_minute[minute], key=lambda r: (r["meter_id"], r["phase"]))
        present = [r for r in rows if r["samples"] > 0]
        n = len(present)
        total = sum(r["power"] for r in present)
        avg_v = sum(r["voltage"] for r in present) / n if n else None
        avg_f = sum(r["frequency"] for r in present) / n if n else None

        codes = set()
        p_lo, p_hi = rules.phase_power_range
        v_lo, v_hi = rules.voltage_range
        f_lo, f_hi = rules.frequency_range
        for r in present:
            if not p_lo <= r["power"] <= p_hi:
                codes.add("RANGE_POWER")
            if not v_lo <= r["voltage"] <= v_hi:
                codes.add("RANGE_VOLTAGE")
            if not f_lo <= r["frequency"] <= f_hi:
                codes.add("RANGE_FREQUENCY")
            if abs(r["pf"]) > 1.0:
                codes.add("PF_BOUNDS")
        if prev_total is not None and abs(total - prev_total) > rules.max_ramp_watts_per_minute:
            codes.add("RAMP")
        prev_total = total

        quality = "FLAGGED" if codes else ("PARTIAL" if 0 < n < TOTAL_PHASES else "OK")
        agg = {
            "minute_start": _ts(minute),
            "total_power": float(total),
            "avg_voltage": None if avg_v is None else float(avg_v),
            "avg_frequency": None if avg_f is None else float(avg_f),
            "phase_count": n,
            "quality": quality,
            "flags": sorted(codes),
        }
        if codes:
            flagged.append(_ts(minute))
        else:
            # energy uses the canonically rendered (3-decimal) power, matching
            # what the chaincode reads back from the stored batch
            energy += float("%.3f" % total) * 1 / 60000.0
        per_window.setdefault((minute % 86400) // 300, []).append(agg)

    for w, aggs in sorted(per_window.items()):
        start = day0 + w * 300
        batch = {
            "batch_id": f"{producer}-{compact}-{w:03d}",
            "window_start": _ts(start),
            "window_end": _ts(start + 300),
            "producer_id": producer,
            "schema_version": 1,
            "aggregates": sorted(aggs, key=lambda a: a["minute_start"]),
        }
        batches[w] = batch
        batch_bytes[w] = _canon(batch).encode("utf-8")

    missing = [w for w in range(WINDOWS_PER_DAY) if w not in per_window]
    return DayReplay(
        date=date,
        batches=batches,
        batch_bytes=batch_bytes,
        flagged_minutes=flagged,
        missing_windows=missing,
        energy_kwh=energy,
    )


# -- comparison against the chain --------------------------------------------


def compare_with_chain(replay: DayReplay, chain, producer: str) -> AuditReport:
    """Compare an independent replay against chain contents for one day."""
    first_bad = chain.verify_chain()
    report = AuditReport(
        date=replay.date,
        chain_ok=first_bad is None,
        first_bad_height=first_bad,
        replay_matches=True,
        notices=list(replay.notices),
    )

    compact = replay.date.replace("-", "")
    prefix = f"batch/{producer}/{producer}-{compact}-"
    on_chain = chain.state_items(prefix)
    chain_windows = {int(k.rsplit("-", 1)[1]): v for k, v in on_chain.items()}

    for w, expected_bytes in sorted(replay.batch_bytes.items()):
        expected_digest = _sha(expected_bytes)
        found = chain_windows.pop(w, None)
        found_digest = _sha(found) if found is not None else None
        if found_digest == expected_digest:
            continue
        stage, key = _localize(replay.batches[w], found, w, producer, compact)
        report.mismatches.append(
            Mismatch(stage=stage, key=key, expected=expected_digest, found=found_digest)
        )
    for w, found in sorted(chain_windows.items()):
        report.mismatches.append(
            Mismatch(
                stage="batch",
                key=f"{producer}-{compact}-{w:03d}",
                expected=None,
                found=_sha(found),
            )
        )

    # quarantine keys
    expected_q = {(_epoch(m) % 86400) // 60 for m in replay.flagged_minutes}
    chain_q = {
        int(k.rsplit("/", 1)[1])
        for k in chain.state_items(f"quarantine/{replay.date}/")
    }
    for minute_index in sorted(expected_q ^ chain_q):
        report.mismatches.append(
            Mismatch(
                stage="quarantine",
                key=f"quarantine/{replay.date}/{minute_index:04d}",
                expected="present" if minute_index in expected_q else None,
                found="present" if minute_index in chain_q else None,
            )
        )
    report.quarantine_summary = {
        "replayed_flagged_minutes": len(expected_q),
        "on_chain_entries": len(chain_q),
    }

    # missing-window report
    missing_raw = chain.query_state(f"missing/{producer}/{replay.date}")
    chain_missing = json.loads(missing_raw.decode())["windows"] if missing_raw else []
    if sorted(chain_missing) != sorted(replay.missing_windows):
        report.mismatches.append(
            Mismatch(
                stage="missing",
                key=f"missing/{producer}/{replay.date}",
                expected=",".join(map(str, sorted(replay.missing_windows))),
                found=",".join(map(str, sorted(chain_missing))),
            )
        )

    # credit totals
    accrual_raw = chain.query_state(f"accrual/{producer}/{replay.date}")
    if accrual_raw is not None:
        serial = json.loads(accrual_raw.decode())["serial"]
        credit_raw = chain.query_state(f"credit/{serial}")
        if credit_raw is None:
            report.mismatches.append(
                Mismatch(stage="credit", key=serial, expected="record", found=None)
            )
        else:
            credit = json.loads(credit_raw.decode("utf-8"))
            expected_energy = replay.energy_kwh
            expected_co2 = expected_energy * credit["factor_used"]
            for name, expected, found in (
                ("energy_kwh", expected_energy, credit["energy_kwh"]),
                ("co2_kg", expected_co2, credit["co2_kg"]),
            ):
                if abs(found - expected) > REL_TOL * max(1.0, abs(expected)):
                    report.mismatches.append(
                        Mismatch(
                            stage="credit",
                            key=f"{serial}:{name}",
                            expected=repr(expected),
                            found=repr(found),
                        )
                    )
            report.credit_summary = {
                "serial": serial,
                "state": credit["state"],
                "energy_kwh": credit["energy_kwh"],
                "co2_kg": credit["co2_kg"],
                "factor_used": credit["factor_used"],
            }

    report.replay_matches = not report.mismatches
    return report


def _localize(expected_batch, found_bytes, w, producer, compact):
    """Attribute a digest mismatch to an aggregate when possible."""
    batch_key = f"{producer}-{compact}-{w:03d}"
    if found_bytes is None:
        return "batch", batch_key
    try:
        found_batch = json.loads(found_bytes.decode("utf-8"))
        found_aggs = {a["minute_start"]: a for a in found_batch["aggregates"]}
    except (ValueError, KeyError, TypeError):
        return "batch", batch_key
    for agg in expected_batch["aggregates"]:
        other = found_aggs.get(agg["minute_start"])
        if other is None or _canon(agg) != _canon(other):
            return "aggregate", f"{batch_key}@{agg['minute_start']}"
    return "batch", batch_key


def replay_verify(
    csv_roots,
    chain,
    date: str,
    producer: str,
    rules: Optional[AnomalyRules] = None,
    replay: Optional[DayReplay] = None,
) -> AuditReport:
    """Full third-party verification for one day.

    A precomputed replay may be passed when the CSV inputs are known
    unchanged (e.g. repeated chain checks over the same day).
    """
    rules = rules or AnomalyRules()
    try:
        if replay is None:
            replay = replay_day(csv_roots, date, rules, producer)
    except MissingData as exc:
        first_bad = chain.verify_chain()
        return AuditReport(
            date=date,
            chain_ok=first_bad is None,
            first_bad_height=first_bad,
            replay_matches=False,
            notices=[f"MissingData: {exc}"],
        )
    return compare_with_chain(replay, chain, producer)


# -- report emission ----------------------------------------------------------


def report_to_dict(report: AuditReport) -> dict:
    return {
        "date": report.date,
        "result": "PASS" if report.passed else "FAIL",
        "chain_ok": report.chain_ok,
        "first_bad_height": report.first_bad_height,
        "replay_matches": report.replay_matches,
        "mismatches": [
            {"stage": m.stage, "key": m.key, "expected": m.expected, "found": m.found}
            for m in report.mismatches
        ],
        "quarantine_summary": report.quarantine_summary,
        "credit_summary": report.credit_summary,
        "notices": report.notices,
    }


def emit_report(report: AuditReport, out_dir) -> Tuple[Path, Path]:
    """Write audit-<date>.json and audit-<date>.txt; byte-stable on re-emission."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"audit-{report.date}.json"
    txt_path = out_dir / f"audit-{report.date}.txt"
    json_path.write_text(
        json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    lines = [f"AUDIT {'PASS' if report.passed else 'FAIL'} {report.date}"]
    if not report.chain_ok:
        lines.append(f"chain inconsistent at height {report.first_bad_height}")
    for m in report.mismatches:
        lines.append(
            f"mismatch stage={m.stage} key={m.key} expected={m.expected} found={m.found}"
        )
    for notice in report.notices:
        lines.append(notice)
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return json_path, txt_path
