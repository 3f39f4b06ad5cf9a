#!/usr/bin/env python3
"""Plot a metrics.csv produced by `formloc run` as a four-panel figure."""

import argparse
import csv
import sys
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("metrics", help="path to a metrics.csv")
    parser.add_argument("--out", help="output image (default: alongside the csv)")
    args = parser.parse_args()

    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plot_metrics needs matplotlib (pip install matplotlib)", file=sys.stderr)
        return 1

    path = Path(args.metrics)
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) for x in row] for row in reader]
    if not rows:
        print(f"{path}: no data rows", file=sys.stderr)
        return 1
    cols = {name: [row[i] for row in rows] for i, name in enumerate(header)}
    t = cols["t"]
    dist_names = [n for n in header if n.startswith("dist_")]
    est_names = [n for n in header if n.startswith("esterr_")]

    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    for name in dist_names:
        axes[0, 0].plot(t, cols[name], label=name[5:])
    axes[0, 0].set_ylabel("inter-agent distance")
    axes[0, 0].legend(fontsize=8)

    for name in est_names:
        axes[0, 1].plot(t, cols[name], label=name[7:])
    axes[0, 1].set_ylabel("estimate error")
    axes[0, 1].set_yscale("log")
    axes[0, 1].legend(fontsize=8)

    axes[1, 0].plot(t, cols["centroid_speed"])
    axes[1, 0].set_ylabel("centroid speed")
    axes[1, 0].set_xlabel("t")

    axes[1, 1].plot(t, cols["angular_rate"])
    axes[1, 1].set_ylabel("formation angular rate")
    axes[1, 1].set_xlabel("t")

    fig.tight_layout()
    out = Path(args.out) if args.out else path.with_suffix(".png")
    fig.savefig(out, dpi=130)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
