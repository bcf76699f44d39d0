#!/usr/bin/env python3
"""Overlay contour plot of method sample clouds from a run directory.

Usage:
    plot_contours.py --dir <out> --methods rfis,cmc,nonpara,oracle --png <path>

Reads the run's samples_<method>.csv files (and pooled_atoms.csv for the
weighted rfis measure), evaluates each method's kernel density on one shared
grid, and draws one contour set per method.  Rendering is read-only and
deterministic: the same inputs give a pixel-identical image.
"""

import argparse
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from gridkde import METHOD_COLORS, grid_density, load_method_samples, shared_grid


def render_contours(run_dir, methods, png_path, resolution=128, levels=8):
    if not methods:
        raise ValueError("at least one method is required")
    sample_sets = [load_method_samples(run_dir, m) for m in methods]
    for m, (pts, _) in zip(methods, sample_sets):
        if pts.shape[1] != 2:
            raise ValueError(f"{m}: contour plots are 2-d only, got dimension {pts.shape[1]}")
    xs, ys = shared_grid(sample_sets, resolution)
    grids = {m: grid_density(pts, w, xs, ys) for m, (pts, w) in zip(methods, sample_sets)}

    fig, ax = plt.subplots(figsize=(7, 6), dpi=100)
    for m in methods:
        ax.contour(xs, ys, grids[m].T, levels=levels, colors=METHOD_COLORS[m], linewidths=1.2)
        ax.plot([], [], color=METHOD_COLORS[m], label=m)
    ax.set_xlabel("theta_1")
    ax.set_ylabel("theta_2")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return grids


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dir", required=True, help="run directory with samples_*.csv")
    parser.add_argument("--methods", default="rfis,cmc,nonpara,oracle",
                        help="comma-separated method list")
    parser.add_argument("--png", required=True, help="output image path")
    parser.add_argument("--grid", type=int, default=128, help="grid resolution per axis")
    parser.add_argument("--levels", type=int, default=8, help="contour levels per method")
    args = parser.parse_args(argv)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    try:
        render_contours(args.dir, methods, args.png, resolution=args.grid, levels=args.levels)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.png}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
