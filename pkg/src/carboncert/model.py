"""Shared domain types: timestamps, canonical JSON serialization, hashing.

Timestamps are carried as integer epoch seconds (UTC, second resolution)
throughout the pipeline; the canonical wire form is ``YYYY-MM-DDTHH:MM:SSZ``.

Content hashing uses SHA-256 (hashlib.sha256); digests are 32 raw bytes,
rendered as 64 lowercase hex characters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import NamedTuple, Optional

SECONDS_PER_DAY = 86400
WINDOW_SECONDS = 300
WINDOWS_PER_DAY = 288
MINUTES_PER_DAY = 1440
METER_IDS = tuple(range(1, 9))
PHASES = (1, 2, 3)
TOTAL_PHASES = 24
SCHEMA_VERSION = 1

ZERO_HASH_HEX = "0" * 64

_TS_FMT = "%Y-%m-%dT%H:%M:%SZ"


class NonAligned(ValueError):
    """Timestamp does not sit on the required boundary."""


def parse_ts(text: str) -> int:
    dt = datetime.strptime(text, _TS_FMT).replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_ts(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime(_TS_FMT)


def parse_date(text: str) -> int:
    """Midnight epoch of a YYYY-MM-DD date."""
    dt = datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def date_str(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%d")


def compact_date(epoch: int) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y%m%d")


def align_to_minute(epoch: int) -> int:
    """Truncate seconds to the containing minute; idempotent."""
    return epoch - epoch % 60


def window_index(minute_start: int) -> int:
    """Five-minute window index within the day, 0..287."""
    if minute_start % 60 != 0:
        raise NonAligned(f"not minute-aligned: {format_ts(minute_start)}")
    return (minute_start % SECONDS_PER_DAY) // WINDOW_SECONDS


class Role(str, Enum):
    PRODUCER = "PRODUCER"
    CERTIFIER = "CERTIFIER"
    AUDITOR = "AUDITOR"


class Quality(str, Enum):
    OK = "OK"
    PARTIAL = "PARTIAL"
    FLAGGED = "FLAGGED"


class PhaseReading(NamedTuple):
    """One electrical sample from one phase of one meter.

    (meter_id, phase, ts) is the identity key.
    """

    meter_id: int
    phase: int
    ts: int
    active_power: float
    voltage: float
    current: float
    power_factor: float
    frequency: float
    apparent_power: float


class MinuteRecord(NamedTuple):
    """Per-phase minute averages; sample_count 0 means all averages absent."""

    meter_id: int
    phase: int
    minute_start: int
    avg_active_power: Optional[float]
    avg_voltage: Optional[float]
    avg_current: Optional[float]
    avg_power_factor: Optional[float]
    avg_frequency: Optional[float]
    avg_apparent_power: Optional[float]
    sample_count: int


@dataclass
class PlantMinuteAggregate:
    """Plant-wide minute fusion of up to 24 phase records."""

    minute_start: int
    total_power: float
    avg_voltage: Optional[float]
    avg_frequency: Optional[float]
    phase_count: int
    quality: Quality
    flags: list = field(default_factory=list)  # anomaly code strings


@dataclass
class Batch:
    """Five consecutive minute aggregates, canonically serialized for submission."""

    batch_id: str
    window_start: int
    window_end: int
    producer_id: str
    schema_version: int
    aggregates: list  # PlantMinuteAggregate, minute_start strictly increasing


@dataclass(frozen=True)
class Identity:
    name: str
    role: Role
    key_id: str


@dataclass
class EmissionConfig:
    """Carbon conversion configuration; factor bounded to the plausible range."""

    factor_kg_per_kwh: float = 0.4
    plant_capacity_watts: float = 100_000.0

    def __post_init__(self):
        if not 0.25 <= self.factor_kg_per_kwh <= 1.06:
            raise ValueError(f"emission factor out of range: {self.factor_kg_per_kwh}")
        if self.plant_capacity_watts <= 0:
            raise ValueError("plant capacity must be positive")


def _emit(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, int):
        return repr(value)
    if isinstance(value, float):
        return format(value + 0.0, ".3f")  # +0.0 normalizes -0.0
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_emit(v) for v in value) + "]"
    if isinstance(value, dict):
        items = []
        for key in sorted(value):
            items.append(json.dumps(key) + ":" + _emit(value[key]))
        return "{" + ",".join(items) + "}"
    raise TypeError(f"not canonically serializable: {type(value)!r}")


def canonical_json(value) -> bytes:
    """Deterministic JSON: sorted keys, no whitespace, reals at 3 decimals."""
    return _emit(value).encode("utf-8")


def aggregate_to_dict(agg: PlantMinuteAggregate) -> dict:
    return {
        "minute_start": format_ts(agg.minute_start),
        "total_power": float(agg.total_power),
        "avg_voltage": None if agg.avg_voltage is None else float(agg.avg_voltage),
        "avg_frequency": None if agg.avg_frequency is None else float(agg.avg_frequency),
        "phase_count": agg.phase_count,
        "quality": agg.quality.value,
        "flags": sorted(agg.flags),
    }


def batch_to_dict(batch: Batch) -> dict:
    aggs = sorted(batch.aggregates, key=lambda a: a.minute_start)
    return {
        "batch_id": batch.batch_id,
        "window_start": format_ts(batch.window_start),
        "window_end": format_ts(batch.window_end),
        "producer_id": batch.producer_id,
        "schema_version": batch.schema_version,
        "aggregates": [aggregate_to_dict(a) for a in aggs],
    }


def canonical_serialize(batch: Batch) -> bytes:
    return canonical_json(batch_to_dict(batch))


def digest(payload: bytes) -> bytes:
    """SHA-256 content digest."""
    return hashlib.sha256(payload).digest()


def digest_hex(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def batch_id_for(producer_id: str, window_start: int) -> str:
    return f"{producer_id}-{compact_date(window_start)}-{window_index(window_start):03d}"
