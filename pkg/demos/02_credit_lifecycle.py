"""Carbon-credit lifecycle on the ledger emulation.

After a simulated day is on chain (run 01_simulate_day.py first, or let
this script simulate one), the producer accrues the day's energy into one
credit; a certifier verifies and issues it; the producer then retires it.
Every step is a chaincode transaction, and illegal steps are rejected with
a reason but still recorded on chain.

Run:  python3 demos/02_credit_lifecycle.py [home-dir]
"""

import json
import sys
from pathlib import Path

from carboncert import pipeline
from carboncert.model import canonical_json

home = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo-data")
config = pipeline.RunConfig(home=home, date="2025-06-01", seed=42)

if not (config.chain_root / "blocks" / "1.json").exists():
    print("no chain yet - simulating one day first ...")
    pipeline.run_simulation(config)

ledger = pipeline.open_ledger(config)
producer = config.producer


def submit(op, who):
    tx = ledger.get_transaction(ledger.submit_tx(canonical_json(op), who))
    verdict = tx.status if tx.status == "VALID" else f"{tx.status} ({tx.reason})"
    print(f"  {op['op']:<17} by {who:<12} -> {verdict}")
    return tx


print("1. producer accrues the day into a credit")
submit({"op": "accrue", "producer": producer, "date": config.date}, producer)
serial = json.loads(ledger.query_state(f"accrual/{producer}/{config.date}").decode())["serial"]
credit = json.loads(ledger.query_state(f"credit/{serial}").decode())
print(f"  -> {serial}: {credit['energy_kwh']:.3f} kWh, {credit['co2_kg']:.3f} kg CO2, "
      f"state {credit['state']}")

print("\n2. double counting is impossible: a second accrual for the same day fails")
submit({"op": "accrue", "producer": producer, "date": config.date}, producer)

print("\n3. only the certifier may verify and issue")
submit({"op": "credit_verify", "serial": serial}, producer)      # wrong role
submit({"op": "credit_verify", "serial": serial}, config.certifier)
submit({"op": "credit_issue", "serial": serial}, config.certifier)

print("\n4. the producer retires the issued credit ...")
submit({"op": "credit_transition", "serial": serial, "target": "RETIRED"}, producer)

print("\n5. ... after which selling it is an illegal transition")
submit({"op": "credit_transition", "serial": serial, "target": "SOLD"}, producer)

ledger.cut_all()
credit = json.loads(ledger.query_state(f"credit/{serial}").decode())
print(f"\nfinal state of {serial}: {credit['state']} "
      f"(certified by {credit['certifier']})")

print("\nfull on-chain history of the credit key (rejections included):")
for tx in ledger.get_history(f"credit/{serial}"):
    line = f"  seq {tx.sequence:<4} by {tx.submitter:<12} {tx.status}"
    if tx.reason:
        line += f" ({tx.reason})"
    print(line)
