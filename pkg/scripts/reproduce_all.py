#!/usr/bin/env python3
"""Run every built-in scenario and tabulate outcomes against expectations.

Writes one subdirectory per scenario (metrics.csv + manifest.txt) under
--out and exits nonzero if any scenario lands in an unexpected outcome.
"""

import argparse
import sys
from pathlib import Path

from formloc.cli import EXPECTED_OUTCOME, SCENARIOS, _run_and_save


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="formloc_runs", help="base output directory")
    args = parser.parse_args()

    base = Path(args.out)
    failures = 0
    print(f"{'scenario':<10} {'outcome':<26} expected")
    for name in sorted(SCENARIOS):
        config = SCENARIOS[name]()
        series, outcome = _run_and_save(config, base / name)
        expected = EXPECTED_OUTCOME[name]
        mark = "" if outcome == expected else "  <-- MISMATCH"
        print(f"{name:<10} {outcome:<26} {expected}{mark}")
        failures += outcome != expected
    print(f"\nwrote per-scenario artifacts under {base}/")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
