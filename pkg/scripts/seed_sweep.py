#!/usr/bin/env python3
"""Sweep spawn seeds for the shared-estimate scenario and tally outcomes.

Convergence of the closed loop is local: a wide random spawn can outrun the
measurement cadence, stall on a translation of the wrong shape, or escape
entirely.  This sweep maps that basin.  Divergent runs are reported as
their own category rather than crashing the sweep.

Example:
    python3 scripts/seed_sweep.py --seeds 60
    python3 scripts/seed_sweep.py --seeds 60 --dt 0.002   # finer sampling
"""

import argparse
import collections
import sys
from dataclasses import replace

from formloc.sim import DivergenceError, detect_outcome, run, scenario_nominal


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=30, help="seeds 0..N-1")
    parser.add_argument("--dt", type=float, default=0.01)
    parser.add_argument("--duration", type=float, default=12.0)
    parser.add_argument("--verbose", action="store_true", help="one line per seed")
    args = parser.parse_args()

    base = replace(scenario_nominal(), dt=args.dt, duration=args.duration)
    tally = collections.Counter()
    for seed in range(args.seeds):
        config = replace(base, seed=seed)
        try:
            series = run(config)
        except DivergenceError:
            tally["diverged"] += 1
            if args.verbose:
                print(f"seed {seed:>3}: diverged")
            continue
        outcome = detect_outcome(series, config.thresholds)
        tally[outcome] += 1
        if args.verbose:
            w = max(1, series.steps // 10)
            print(f"seed {seed:>3}: {outcome:<26} "
                  f"est={series.est_errors[-w:].max():.3g} "
                  f"cspd={series.centroid_speed[-1]:.3g}")

    total = sum(tally.values())
    print(f"\ndt={args.dt} duration={args.duration} seeds={total}")
    for outcome, count in tally.most_common():
        print(f"  {outcome:<26} {count:>4}  ({100.0 * count / total:.0f}%)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
