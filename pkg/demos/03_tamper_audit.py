"""Third-party audit replay, and what happens when someone tampers.

The auditor never trusts the pipeline: it re-parses the raw collector CSVs
with its own code, recomputes every aggregate, flag, and batch, re-derives
the credit energy, and compares digests against the chain. This script
shows a clean PASS, then two tampering attempts - one on a collector CSV,
one on a committed block file - and how each flips the verdict to FAIL.

Run:  python3 demos/03_tamper_audit.py [home-dir]
"""

import sys
from pathlib import Path

from carboncert import audit, pipeline

home = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo-data")
config = pipeline.RunConfig(home=home, date="2025-06-01", seed=42)

if not (config.chain_root / "blocks" / "1.json").exists():
    print("no chain yet - simulating one day first ...")
    pipeline.run_simulation(config)

ledger = pipeline.open_ledger(config)


def run_audit(label):
    report = audit.replay_verify(
        config.collector_roots, ledger, config.date, config.producer, config.rules
    )
    print(f"{label}: AUDIT {'PASS' if report.passed else 'FAIL'}")
    if not report.chain_ok:
        print(f"  chain inconsistent at height {report.first_bad_height}")
    for m in report.mismatches[:3]:
        print(f"  mismatch stage={m.stage} key={m.key}")
    return report


print("=== clean data ===")
run_audit("baseline")

print("\n=== tamper with a collector CSV (inflate one minute by 500 W) ===")
csv_path = config.collector_roots[0] / config.date / "SEM1.csv"
original_csv = csv_path.read_bytes()
lines = original_csv.decode().splitlines()
for i, line in enumerate(lines[1:], start=1):
    cells = line.split(",")
    if cells[3] and float(cells[3]) > 0:
        cells[3] = format(float(cells[3]) + 500.0, ".3f")
        lines[i] = ",".join(cells)
        print(f"  edited {csv_path.name} row {i}: active power +500 W")
        break
csv_path.write_bytes(("\n".join(lines) + "\n").encode())
run_audit("after CSV edit")
csv_path.write_bytes(original_csv)
print("  (restored)")

print("\n=== tamper with a committed block (flip one byte) ===")
block_path = ledger.blocks_dir / "5.json"
original_block = block_path.read_bytes()
mutated = bytearray(original_block)
mutated[100] ^= 0x01
block_path.write_bytes(bytes(mutated))
print(f"  flipped one bit in {block_path.name}")
run_audit("after block edit")
block_path.write_bytes(original_block)
print("  (restored)")

print("\n=== everything restored ===")
report = run_audit("final")
json_path, txt_path = audit.emit_report(report, config.reports_dir)
print(f"report written to {txt_path}")
