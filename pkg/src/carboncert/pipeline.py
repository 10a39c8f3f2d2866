"""End-to-end orchestration: simulate -> collect -> aggregate -> commit.

The data root (``CARBON_LEDGER_HOME`` or --home) is laid out as:

    collectors/<A|B>/<date>/SEM<k>.csv   collector output
    aggregator/anomalies-<date>.jsonl    quarantine sidecar
    chain/                               ledger emulation (blocks, identities)
    reports/                             audit reports
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from . import aggregator as agg_mod
from . import collector as col_mod
from . import metersim
from .aggregator import AnomalyRules
from .chaincode import CreditContract
from .ledger import Ledger
from .model import EmissionConfig, Role


@dataclass
class RunConfig:
    home: Path
    date: str = "2025-06-01"
    seed: int = 0
    fleet: metersim.FleetConfig = field(default_factory=metersim.FleetConfig)
    faults: metersim.FaultConfig = field(default_factory=metersim.FaultConfig)
    rules: AnomalyRules = field(default_factory=AnomalyRules)
    emission: EmissionConfig = field(default_factory=EmissionConfig)
    certifier: str = "certifier-1"
    auditor: str = "auditor-1"

    def __post_init__(self):
        self.home = Path(self.home)
        self.fleet.seed = self.seed

    @property
    def producer(self) -> str:
        return self.fleet.producer_id

    @property
    def collectors_root(self) -> Path:
        return self.home / "collectors"

    @property
    def collector_roots(self) -> List[Path]:
        return [self.collectors_root / cid for cid in sorted(self.fleet.assignments)]

    @property
    def chain_root(self) -> Path:
        return self.home / "chain"

    @property
    def aggregator_dir(self) -> Path:
        return self.home / "aggregator"

    @property
    def reports_dir(self) -> Path:
        return self.home / "reports"


def load_run_config(
    path: Optional[str],
    home: Path,
    date: Optional[str] = None,
    seed: Optional[int] = None,
) -> RunConfig:
    raw: dict = {}
    if path:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    fleet = metersim.FleetConfig.from_dict(raw)
    faults = metersim.FaultConfig(**raw.get("faults", {}))
    rules = AnomalyRules.from_dict(raw.get("rules", {}))
    emission = EmissionConfig(**raw.get("emission", {}))
    cfg = RunConfig(
        home=home,
        date=raw.get("date", "2025-06-01"),
        seed=int(raw.get("seed", 0)),
        fleet=fleet,
        faults=faults,
        rules=rules,
        emission=emission,
        certifier=raw.get("certifier", "certifier-1"),
        auditor=raw.get("auditor", "auditor-1"),
    )
    if date is not None:
        cfg.date = date
    if seed is not None:
        cfg.seed = seed
        cfg.fleet.seed = seed
    return cfg


def open_ledger(config: RunConfig) -> Ledger:
    contract = CreditContract(emission=config.emission, rules=config.rules)
    return Ledger(config.chain_root, contract)


def bootstrap_identities(ledger: Ledger, config: RunConfig) -> None:
    for name, role in (
        (config.producer, Role.PRODUCER),
        (config.certifier, Role.CERTIFIER),
        (config.auditor, Role.AUDITOR),
    ):
        if name not in ledger.identities:
            ledger.register_identity(name, role)


@dataclass
class DayResult:
    date: str
    csv_rows: int
    aggregate_count: int
    batch_count: int
    flagged_minutes: int
    missing_windows: List[int]
    tip_hash: str
    csv_paths: List[Path]


def run_simulation(config: RunConfig, ledger: Optional[Ledger] = None) -> DayResult:
    """Drive all four pipeline stages for one simulated day."""
    own_ledger = ledger is None
    if own_ledger:
        ledger = open_ledger(config)
    bootstrap_identities(ledger, config)
    producer = ledger.get_identity(config.producer)

    messages = metersim.run_day(config.fleet, config.date, config.faults)

    collectors: Dict[str, col_mod.Collector] = {}
    for cid, meters in sorted(config.fleet.assignments.items()):
        collectors[cid] = col_mod.Collector(
            col_mod.CollectorConfig(
                collector_id=cid,
                assigned_meters=frozenset(meters),
                output_root=config.collectors_root,
            )
        )
    route: Dict[int, col_mod.Collector] = {}
    for cid, meters in config.fleet.assignments.items():
        for meter in meters:
            route[meter] = collectors[cid]
    for msg in messages:
        owner = route.get(msg.reading.meter_id)
        if owner is not None:
            owner.ingest(msg)

    csv_paths: List[Path] = []
    csv_rows = 0
    for cid, instance in sorted(collectors.items()):
        records = instance.close_day(config.date)
        csv_rows += sum(1 for r in records)
        csv_paths.extend(instance.write_day_csv(config.date, records))

    summary = agg_mod.run_day_aggregation(
        date=config.date,
        collector_roots=config.collector_roots,
        rules=config.rules,
        producer=producer,
        client=ledger,
        out_dir=config.aggregator_dir,
    )
    ledger.cut_all()
    return DayResult(
        date=config.date,
        csv_rows=csv_rows,
        aggregate_count=summary.aggregate_count,
        batch_count=summary.batch_count,
        flagged_minutes=summary.flagged_minutes,
        missing_windows=summary.missing_windows,
        tip_hash=ledger.tip_hash,
        csv_paths=csv_paths,
    )
