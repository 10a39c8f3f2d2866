"""Smart-contract logic: batch validation, energy accounting, credit lifecycle.

Energy and carbon conversion:

    energy_kwh = p_avg_watts * duration_min / 60000
    co2_kg     = energy_kwh * factor        (factor defaults to 0.4 kg/kWh)

Credits advance PENDING -> VERIFIED -> ISSUED -> (SOLD | RETIRED); the two
terminal states are mutually exclusive, and each (producer, date) accrues
at most one credit, so no unit of energy can be counted twice.
"""

from __future__ import annotations

import json
import re
from typing import List, Optional, Tuple

from .aggregator import AnomalyRules
from .ledger import ChainResult, StateView
from .model import (
    WINDOW_SECONDS,
    WINDOWS_PER_DAY,
    EmissionConfig,
    Identity,
    Quality,
    Role,
    canonical_json,
    compact_date,
    parse_date,
    parse_ts,
)

CREDIT_STATES = ("PENDING", "VERIFIED", "ISSUED", "SOLD", "RETIRED")
LEGAL_STEPS = {
    "PENDING": ("VERIFIED",),
    "VERIFIED": ("ISSUED",),
    "ISSUED": ("SOLD", "RETIRED"),
    "SOLD": (),
    "RETIRED": (),
}

_BATCH_KEYS = {
    "batch_id",
    "window_start",
    "window_end",
    "producer_id",
    "schema_version",
    "aggregates",
}
_AGG_KEYS = {
    "minute_start",
    "total_power",
    "avg_voltage",
    "avg_frequency",
    "phase_count",
    "quality",
    "flags",
}
_TS_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")


class ChaincodeError(ValueError):
    pass


class NegativePower(ChaincodeError):
    pass


class NonPositiveDuration(ChaincodeError):
    pass


class FactorOutOfRange(ChaincodeError):
    pass


def compute_energy(p_avg: float, duration_min: float) -> float:
    """kWh produced by p_avg watts sustained for duration_min minutes."""
    if p_avg < 0:
        raise NegativePower(f"p_avg must be >= 0, got {p_avg}")
    if duration_min <= 0:
        raise NonPositiveDuration(f"duration must be positive, got {duration_min}")
    return p_avg * duration_min / 60000.0


def compute_co2(energy_kwh: float, config: EmissionConfig) -> float:
    """kg CO2 avoided for the given energy at the configured factor."""
    if energy_kwh < 0:
        raise NegativePower(f"energy must be >= 0, got {energy_kwh}")
    factor = config.factor_kg_per_kwh
    if not 0.25 <= factor <= 1.06:
        raise FactorOutOfRange(str(factor))
    return energy_kwh * factor


def _ts_or_none(value) -> Optional[int]:
    if isinstance(value, str) and _TS_RE.match(value):
        try:
            return parse_ts(value)
        except ValueError:
            return None
    return None


def _check_structure(batch, submitter: Identity) -> Optional[str]:
    if not isinstance(batch, dict) or set(batch) != _BATCH_KEYS:
        return "structure"
    if not isinstance(batch["batch_id"], str) or not isinstance(batch["producer_id"], str):
        return "structure"
    if not isinstance(batch["schema_version"], int):
        return "structure"
    if not isinstance(batch["aggregates"], list) or len(batch["aggregates"]) > 5:
        return "structure"
    for agg in batch["aggregates"]:
        if not isinstance(agg, dict) or set(agg) != _AGG_KEYS:
            return "structure"
        if not isinstance(agg["total_power"], (int, float)):
            return "structure"
        for opt in ("avg_voltage", "avg_frequency"):
            if agg[opt] is not None and not isinstance(agg[opt], (int, float)):
                return "structure"
        if not isinstance(agg["phase_count"], int) or not 0 <= agg["phase_count"] <= 24:
            return "structure"
        if agg["quality"] not in {q.value for q in Quality}:
            return "structure"
        if not isinstance(agg["flags"], list):
            return "structure"
    if batch["producer_id"] != submitter.name:
        return "unauthorized"
    return None


def _check_timestamps(batch, state: StateView) -> Optional[str]:
    start = _ts_or_none(batch["window_start"])
    end = _ts_or_none(batch["window_end"])
    if start is None or end is None:
        return "timestamps"
    if start % WINDOW_SECONDS != 0 or end != start + WINDOW_SECONDS:
        return "timestamps"
    expected_id = f"{batch['producer_id']}-{compact_date(start)}-{(start % 86400) // WINDOW_SECONDS:03d}"
    if batch["batch_id"] != expected_id:
        return "timestamps"
    prev = None
    for agg in batch["aggregates"]:
        minute = _ts_or_none(agg["minute_start"])
        if minute is None or minute % 60 != 0:
            return "timestamps"
        if not start <= minute < end:
            return "timestamps"
        if prev is not None and minute <= prev:
            return "timestamps"
        prev = minute
    head_raw = state.get(f"head/{batch['producer_id']}")
    if head_raw is not None:
        head = json.loads(head_raw.decode())["window_end"]
        if start < parse_ts(head):
            return "timestamps"
    return None


def _check_ranges(batch, rules: AnomalyRules, emission: EmissionConfig) -> Optional[str]:
    cap = emission.plant_capacity_watts * 1.1
    v_lo, v_hi = rules.voltage_range
    f_lo, f_hi = rules.frequency_range
    for agg in batch["aggregates"]:
        if agg["quality"] == Quality.FLAGGED.value:
            continue  # flagged minutes are carried for audit, not range-enforced
        if not 0 <= agg["total_power"] <= cap:
            return "ranges"
        if agg["avg_voltage"] is not None and not v_lo <= agg["avg_voltage"] <= v_hi:
            return "ranges"
        if agg["avg_frequency"] is not None and not f_lo <= agg["avg_frequency"] <= f_hi:
            return "ranges"
    return None


def validate_batch(
    batch,
    submitter: Identity,
    state: StateView,
    rules: AnomalyRules,
    emission: EmissionConfig,
) -> Tuple[bool, Optional[str]]:
    """Checks: structure, duplicate batch_id, timestamps, ranges; first failure wins."""
    reason = _check_structure(batch, submitter)
    if reason:
        return False, reason
    if state.get(f"batch/{batch['producer_id']}/{batch['batch_id']}") is not None:
        return False, "duplicate"
    reason = _check_timestamps(batch, state)
    if reason:
        return False, reason
    reason = _check_ranges(batch, rules, emission)
    if reason:
        return False, reason
    return True, None


def _store(value: dict) -> bytes:
    return json.dumps(value, sort_keys=True).encode("utf-8")


class CreditContract:
    """Chaincode entry point dispatching on the payload's ``op`` field."""

    def __init__(
        self,
        emission: Optional[EmissionConfig] = None,
        rules: Optional[AnomalyRules] = None,
    ):
        self.emission = emission or EmissionConfig()
        self.rules = rules or AnomalyRules()

    def __call__(self, op: dict, submitter: Identity, state: StateView) -> ChainResult:
        handler = {
            "submit_batch": self._submit_batch,
            "report_missing": self._report_missing,
            "quarantine": self._quarantine,
            "accrue": self._accrue,
            "credit_verify": self._credit_verify,
            "credit_issue": self._credit_issue,
            "credit_transition": self._credit_transition,
        }.get(op.get("op"))
        if handler is None:
            return ChainResult(False, "structure", {}, ())
        return handler(op, submitter, state)

    # -- batches ------------------------------------------------------------

    def _submit_batch(self, op, submitter, state) -> ChainResult:
        batch = op.get("batch")
        touched = []
        if isinstance(batch, dict) and isinstance(batch.get("batch_id"), str):
            touched.append(f"batch/{batch.get('producer_id')}/{batch['batch_id']}")
        if submitter.role != Role.PRODUCER:
            return ChainResult(False, "unauthorized", {}, tuple(touched))
        ok, reason = validate_batch(batch, submitter, state, self.rules, self.emission)
        if not ok:
            return ChainResult(False, reason, {}, tuple(touched))
        key = f"batch/{batch['producer_id']}/{batch['batch_id']}"
        head_key = f"head/{batch['producer_id']}"
        writes = {
            key: canonical_json(batch),
            head_key: _store({"window_end": batch["window_end"]}),
        }
        return ChainResult(True, None, writes, (key, head_key))

    def _report_missing(self, op, submitter, state) -> ChainResult:
        if submitter.role != Role.PRODUCER or op.get("producer") != submitter.name:
            return ChainResult(False, "unauthorized", {}, ())
        windows = op.get("windows")
        date = op.get("date")
        if not isinstance(date, str) or not isinstance(windows, list):
            return ChainResult(False, "structure", {}, ())
        if not all(isinstance(w, int) and 0 <= w < WINDOWS_PER_DAY for w in windows):
            return ChainResult(False, "structure", {}, ())
        key = f"missing/{submitter.name}/{date}"
        return ChainResult(True, None, {key: _store({"windows": sorted(windows)})}, (key,))

    def _quarantine(self, op, submitter, state) -> ChainResult:
        if submitter.role != Role.PRODUCER:
            return ChainResult(False, "unauthorized", {}, ())
        date = op.get("date")
        entries = op.get("entries")
        if not isinstance(date, str) or not isinstance(entries, list):
            return ChainResult(False, "structure", {}, ())
        writes = {}
        for entry in entries:
            minute = _ts_or_none(entry.get("minute_start")) if isinstance(entry, dict) else None
            if minute is None:
                return ChainResult(False, "structure", {}, ())
            minute_index = (minute % 86400) // 60
            key = f"quarantine/{date}/{minute_index:04d}"
            writes[key] = _store(entry)
        return ChainResult(True, None, writes, tuple(sorted(writes)))

    # -- credits ------------------------------------------------------------

    def _accrue(self, op, submitter, state) -> ChainResult:
        producer = op.get("producer")
        date = op.get("date")
        if not isinstance(producer, str) or not isinstance(date, str):
            return ChainResult(False, "structure", {}, ())
        accrual_key = f"accrual/{producer}/{date}"
        touched = (accrual_key,)
        if submitter.role != Role.PRODUCER or producer != submitter.name:
            return ChainResult(False, "unauthorized", {}, touched)
        if state.get(accrual_key) is not None:
            return ChainResult(False, "already_accrued", {}, touched)
        try:
            day0 = parse_date(date)
        except ValueError:
            return ChainResult(False, "structure", {}, touched)
        compact = compact_date(day0)
        prefix = f"batch/{producer}/{producer}-{compact}-"
        batches = state.scan(prefix)
        covered = set()
        for key in batches:
            covered.add(int(key.rsplit("-", 1)[1]))
        missing_raw = state.get(f"missing/{producer}/{date}")
        missing = set(json.loads(missing_raw.decode())["windows"]) if missing_raw else set()
        if covered | missing != set(range(WINDOWS_PER_DAY)):
            return ChainResult(False, "unresolved_windows", {}, touched)

        energy = 0.0
        power_sum = 0.0
        unflagged = 0
        excluded: List[str] = []
        for key in sorted(batches):
            batch = json.loads(batches[key].decode("utf-8"))
            for agg in batch["aggregates"]:
                if agg["quality"] == Quality.FLAGGED.value:
                    excluded.append(agg["minute_start"])
                    continue
                power = float(agg["total_power"])
                energy += compute_energy(power, 1)
                power_sum += power
                unflagged += 1
        if energy <= 0.0:
            return ChainResult(False, "no_valid_energy", {}, touched)
        co2 = compute_co2(energy, self.emission)

        seq_key = f"creditseq/{producer}"
        seq_raw = state.get(seq_key)
        seq = (json.loads(seq_raw.decode())["next"] if seq_raw else 1)
        serial = f"CC-{producer}-{compact}-{seq}"
        credit_key = f"credit/{serial}"
        record = {
            "serial": serial,
            "producer": producer,
            "date": date,
            "state": "PENDING",
            "energy_kwh": energy,
            "co2_kg": co2,
            "factor_used": self.emission.factor_kg_per_kwh,
            "p_avg_watts": power_sum / unflagged,
            "duration_min": unflagged,
            "excluded_minutes": excluded,
            "certifier": None,
        }
        writes = {
            credit_key: _store(record),
            accrual_key: _store({"serial": serial}),
            seq_key: _store({"next": seq + 1}),
        }
        return ChainResult(True, None, writes, (credit_key, accrual_key, seq_key))

    def _load_credit(self, op, state):
        serial = op.get("serial")
        if not isinstance(serial, str):
            return None, None, ChainResult(False, "structure", {}, ())
        key = f"credit/{serial}"
        raw = state.get(key)
        if raw is None:
            return None, key, ChainResult(False, "unknown_credit", {}, (key,))
        return json.loads(raw.decode("utf-8")), key, None

    def _credit_verify(self, op, submitter, state) -> ChainResult:
        credit, key, err = self._load_credit(op, state)
        if err:
            return err
        if submitter.role != Role.CERTIFIER:
            return ChainResult(False, "unauthorized", {}, (key,))
        if credit["state"] != "PENDING":
            return ChainResult(False, "illegal_transition", {}, (key,))
        credit["state"] = "VERIFIED"
        credit["certifier"] = submitter.name
        return ChainResult(True, None, {key: _store(credit)}, (key,))

    def _credit_issue(self, op, submitter, state) -> ChainResult:
        credit, key, err = self._load_credit(op, state)
        if err:
            return err
        if submitter.role != Role.CERTIFIER:
            return ChainResult(False, "unauthorized", {}, (key,))
        if credit["state"] != "VERIFIED":
            return ChainResult(False, "illegal_transition", {}, (key,))
        credit["state"] = "ISSUED"
        return ChainResult(True, None, {key: _store(credit)}, (key,))

    def _credit_transition(self, op, submitter, state) -> ChainResult:
        credit, key, err = self._load_credit(op, state)
        if err:
            return err
        target = op.get("target")
        if target not in ("SOLD", "RETIRED"):
            return ChainResult(False, "structure", {}, (key,))
        if submitter.role != Role.PRODUCER or credit["producer"] != submitter.name:
            return ChainResult(False, "unauthorized", {}, (key,))
        if target not in LEGAL_STEPS[credit["state"]]:
            return ChainResult(False, "illegal_transition", {}, (key,))
        credit["state"] = target
        return ChainResult(True, None, {key: _store(credit)}, (key,))
