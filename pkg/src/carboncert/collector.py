"""Data collection layer: ingest, deduplicate, minute-close, persist CSVs.

Each collector owns a disjoint meter subset (A: 1-4, B: 5-8 in the
reference configuration). Ingestion is idempotent under at-least-once
redelivery: the (meter_id, phase, ts) key of every accepted sample is
remembered and redeliveries are classified as duplicates.

CSV contract (bit-exact): one file per meter per day at
``<output_root>/<collector_id>/<YYYY-MM-DD>/SEM<meter_id>.csv``, header
``timestamp_utc,meter_id,phase,active_power_w,voltage_v,current_a,power_factor,frequency_hz,apparent_power_va,sample_count``,
reals at 3 decimals, empty fields for absent averages, LF endings, UTF-8.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from .model import (
    MINUTES_PER_DAY,
    PHASES,
    MinuteRecord,
    align_to_minute,
    date_str,
    format_ts,
    parse_date,
    parse_ts,
)
from .metersim import TransportMessage

CSV_HEADER = (
    "timestamp_utc,meter_id,phase,active_power_w,voltage_v,current_a,"
    "power_factor,frequency_hz,apparent_power_va,sample_count"
)

DEFAULT_ASSIGNMENTS = {"A": frozenset({1, 2, 3, 4}), "B": frozenset({5, 6, 7, 8})}

ACCEPTED = "accepted"
DUPLICATE = "duplicate"
REJECTED = "rejected"


class IoFailure(OSError):
    def __init__(self, path, cause):
        super().__init__(f"I/O failure at {path}: {cause}")
        self.path = Path(path)


@dataclass
class CollectorConfig:
    collector_id: str
    assigned_meters: frozenset
    output_root: Path
    watermark_seconds: int = 30

    @classmethod
    def reference(cls, collector_id: str, output_root) -> "CollectorConfig":
        return cls(
            collector_id=collector_id,
            assigned_meters=DEFAULT_ASSIGNMENTS[collector_id],
            output_root=Path(output_root),
        )


@dataclass
class CollectorMinuteSummary:
    collector_id: str
    minute_start: int
    collector_power: float  # sum of present phases' average active power
    present_phases: int


class Collector:
    """One ingestion context; buffers samples per (meter, phase, minute)."""

    def __init__(self, config: CollectorConfig, retain_samples: bool = False):
        self.config = config
        self._seen = set()
        self._sums: Dict[tuple, list] = {}  # (meter, phase, minute) -> [6 sums, count]
        self._raw: Optional[Dict[tuple, list]] = {} if retain_samples else None

    def ingest(self, msg: TransportMessage) -> str:
        r = msg.reading
        if r.meter_id not in self.config.assigned_meters:
            return REJECTED
        key = (r.meter_id, r.phase, r.ts)
        seen = self._seen
        if key in seen:
            return DUPLICATE
        seen.add(key)
        bucket_key = (r.meter_id, r.phase, r.ts - r.ts % 60)
        bucket = self._sums.get(bucket_key)
        if bucket is None:
            bucket = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0]
            self._sums[bucket_key] = bucket
        bucket[0] += r.active_power
        bucket[1] += r.voltage
        bucket[2] += r.current
        bucket[3] += r.power_factor
        bucket[4] += r.frequency
        bucket[5] += r.apparent_power
        bucket[6] += 1
        if self._raw is not None:
            self._raw.setdefault(bucket_key, []).append(r)
        return ACCEPTED

    def raw_samples(self, meter_id: int, phase: int, minute_start: int) -> list:
        """Debug sidecar: retained raw samples for one closed-or-open minute."""
        if self._raw is None:
            raise RuntimeError("collector was not built with retain_samples=True")
        return list(self._raw.get((meter_id, phase, minute_start), []))

    def close_minute(self, meter_id: int, phase: int, minute_start: int) -> MinuteRecord:
        """Arithmetic mean of buffered samples in the minute; buffer is released."""
        bucket = self._sums.pop((meter_id, phase, minute_start), None)
        if bucket is None or bucket[6] == 0:
            return MinuteRecord(meter_id, phase, minute_start, None, None, None, None, None, None, 0)
        n = bucket[6]
        return MinuteRecord(
            meter_id,
            phase,
            minute_start,
            bucket[0] / n,
            bucket[1] / n,
            bucket[2] / n,
            bucket[3] / n,
            bucket[4] / n,
            bucket[5] / n,
            n,
        )

    def close_day(self, date: str) -> List[MinuteRecord]:
        """Close every minute of the date for every assigned meter-phase."""
        day0 = parse_date(date)
        records = []
        for meter_id in sorted(self.config.assigned_meters):
            for phase in PHASES:
                for m in range(MINUTES_PER_DAY):
                    records.append(self.close_minute(meter_id, phase, day0 + 60 * m))
        return records

    def write_day_csv(self, date: str, records: Iterable[MinuteRecord]) -> List[Path]:
        """One CSV per assigned meter; atomic publish; byte-stable on rewrite."""
        per_meter: Dict[int, List[MinuteRecord]] = {m: [] for m in sorted(self.config.assigned_meters)}
        for rec in records:
            if rec.meter_id not in per_meter:
                raise ValueError(f"record for unassigned meter {rec.meter_id}")
            per_meter[rec.meter_id].append(rec)
        day_dir = Path(self.config.output_root) / self.config.collector_id / date
        paths = []
        for meter_id, recs in per_meter.items():
            recs.sort(key=lambda r: (r.minute_start, r.phase))
            path = day_dir / f"SEM{meter_id}.csv"
            lines = [CSV_HEADER]
            for r in recs:
                lines.append(
                    ",".join(
                        (
                            format_ts(r.minute_start),
                            str(r.meter_id),
                            str(r.phase),
                            _fmt(r.avg_active_power),
                            _fmt(r.avg_voltage),
                            _fmt(r.avg_current),
                            _fmt(r.avg_power_factor),
                            _fmt(r.avg_frequency),
                            _fmt(r.avg_apparent_power),
                            str(r.sample_count),
                        )
                    )
                )
            data = ("\n".join(lines) + "\n").encode("utf-8")
            try:
                day_dir.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".csv.tmp")
                tmp.write_bytes(data)
                os.replace(tmp, path)
            except OSError as exc:
                raise IoFailure(path, exc) from exc
            paths.append(path)
        return paths


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else format(value + 0.0, ".3f")


def collector_minute_power(
    collector_id: str, records: Iterable[MinuteRecord]
) -> CollectorMinuteSummary:
    """Sum present phases' average active power for one minute."""
    records = list(records)
    minutes = {r.minute_start for r in records}
    if len(minutes) > 1:
        raise ValueError("records span multiple minutes")
    present = [r for r in records if r.sample_count > 0]
    total = sum(r.avg_active_power for r in present)
    minute = minutes.pop() if minutes else 0
    return CollectorMinuteSummary(collector_id, minute, total, len(present))


def read_day_csv(path) -> List[MinuteRecord]:
    """Parse one per-meter day file back into minute records."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or ",".join(rows[0]) != CSV_HEADER:
        raise ValueError(f"bad CSV header in {path}")
    records = []
    for row in rows[1:]:
        records.append(
            MinuteRecord(
                meter_id=int(row[1]),
                phase=int(row[2]),
                minute_start=parse_ts(row[0]),
                avg_active_power=_parse(row[3]),
                avg_voltage=_parse(row[4]),
                avg_current=_parse(row[5]),
                avg_power_factor=_parse(row[6]),
                avg_frequency=_parse(row[7]),
                avg_apparent_power=_parse(row[8]),
                sample_count=int(row[9]),
            )
        )
    return records


def _parse(cell: str) -> Optional[float]:
    return None if cell == "" else float(cell)
