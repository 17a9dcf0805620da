#!/usr/bin/env python3
"""Score curves from run directories.

Groups runs by the (env, girm) pair in their config.txt, plots the median and
min/max band of a metrics.csv column against frames, one panel per env.

    scripts/plot_scores.py acceptance/runs/* -o scores.png
    scripts/plot_scores.py acceptance/runs/scroller-* --column furthest_x
"""

import argparse
import collections
import csv
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_config(run):
    cfg = {}
    for line in (run / "config.txt").read_text().splitlines():
        key, _, value = line.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def read_column(run, column):
    frames, values = [], []
    with open(run / "metrics.csv", newline="") as f:
        for row in csv.DictReader(f):
            frames.append(int(row["frame"]))
            values.append(float(row[column]) if row[column] else 0.0)
    return np.array(frames), np.array(values)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("runs", nargs="+", type=pathlib.Path)
    ap.add_argument("--column", default="mean_return")
    ap.add_argument("-o", "--output", default="scores.png")
    args = ap.parse_args()

    groups = collections.defaultdict(list)
    for run in args.runs:
        if not (run / "metrics.csv").exists():
            continue
        cfg = read_config(run)
        arm = "A2C+GIRM" if cfg.get("girm") == "on" else "A2C"
        groups[(cfg.get("env", "?"), arm)].append(read_column(run, args.column))
    if not groups:
        raise SystemExit("no run directories with metrics.csv")

    envs = sorted({env for env, _ in groups})
    fig, axes = plt.subplots(1, len(envs), figsize=(5 * len(envs), 3.5), squeeze=False)
    for ax, env in zip(axes[0], envs):
        for (e, arm), curves in sorted(groups.items()):
            if e != env:
                continue
            n = min(len(fr) for fr, _ in curves)
            frames = curves[0][0][:n]
            ys = np.stack([v[:n] for _, v in curves])
            med = np.median(ys, axis=0)
            ax.plot(frames, med, label=f"{arm} (n={len(curves)})")
            ax.fill_between(frames, ys.min(axis=0), ys.max(axis=0), alpha=0.2)
        ax.set_title(env)
        ax.set_xlabel("frames")
        ax.set_ylabel(args.column)
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
