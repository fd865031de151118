# Render training-trace CSVs (epoch vs log10 error, grades shaded).
#
# The CLI and the trainer only emit CSV; plotting stays out of process.
#
# Usage: python demos/plot_traces.py TRACE.csv [TRACE2.csv ...] [-o OUT.png]

import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def load(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "epoch": np.array([int(r["epoch"]) for r in rows]),
        "grade": np.array([int(r["grade"]) for r in rows]),
        "train_mse": np.array([float(r["train_mse"]) for r in rows]),
        "test_mse": np.array([float(r["test_mse"]) for r in rows]),
        "test_max": np.array([float(r["test_max"]) for r in rows]),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("traces", nargs="+")
    ap.add_argument("-o", "--out", default="traces.png")
    args = ap.parse_args()

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6), sharex=True)
    metrics = ["train_mse", "test_mse", "test_max"]
    for path in args.traces:
        data = load(path)
        for ax, metric in zip(axes, metrics):
            ax.plot(data["epoch"], np.log10(data[metric]), label=path, lw=1)
    data = load(args.traces[0])
    for ax, metric in zip(axes, metrics):
        # shade the grades of the first trace
        for g in np.unique(data["grade"]):
            span = data["epoch"][data["grade"] == g]
            if len(span) and g % 2 == 0:
                ax.axvspan(span.min(), span.max(), color="0.92", zorder=0)
        ax.set_title(metric)
        ax.set_xlabel("epoch")
    axes[0].set_ylabel("log10 error")
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
