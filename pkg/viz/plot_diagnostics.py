#!/usr/bin/env python3
"""Importance-weight and ESS diagnostics for a run directory.

Usage:
    plot_diagnostics.py --dir <out> --out-prefix <path>

Writes <prefix>_weights.png (sorted pooled weights on a log scale) and
<prefix>_ess.png (per-shard effective sample sizes).  A shard holding more
than half the total ESS is flagged on the chart: it usually means the other
chains barely overlap the surrogate product.
"""

import argparse
import json
import sys
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from gridkde import read_pooled_atoms_csv


def load_ess(run_dir) -> list[dict]:
    path = Path(run_dir) / "ess.json"
    if not path.exists():
        raise FileNotFoundError(f"missing ESS report: {path}")
    return json.loads(path.read_text())


def dominant_shard(rows) -> int | None:
    """Shard id holding over half the total ESS, if any."""
    total = sum(r["ess"] for r in rows)
    for r in rows:
        if r["ess"] > 0.5 * total and len(rows) > 1:
            return r["k"]
    return None


def render_diagnostics(run_dir, out_prefix) -> tuple[str, str]:
    _, weights, _ = read_pooled_atoms_csv(Path(run_dir) / "pooled_atoms.csv")
    rows = load_ess(run_dir)

    weights_png = f"{out_prefix}_weights.png"
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    ax.semilogy(np.arange(1, weights.size + 1), np.sort(weights)[::-1], color="steelblue")
    ax.set_xlabel("atom rank")
    ax.set_ylabel("pooled weight")
    fig.tight_layout()
    fig.savefig(weights_png)
    plt.close(fig)

    ess_png = f"{out_prefix}_ess.png"
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    ks = [r["k"] for r in rows]
    ax.bar(ks, [r["ess"] for r in rows], color="darkseagreen")
    ax.set_xlabel("shard")
    ax.set_ylabel("effective sample size")
    dom = dominant_shard(rows)
    if dom is not None:
        ax.set_title(f"warning: shard {dom} dominates the pooled measure")
    fig.tight_layout()
    fig.savefig(ess_png)
    plt.close(fig)
    return weights_png, ess_png


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dir", required=True, help="run directory")
    parser.add_argument("--out-prefix", required=True, help="output path prefix")
    args = parser.parse_args(argv)
    try:
        weights_png, ess_png = render_diagnostics(args.dir, args.out_prefix)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {weights_png} and {ess_png}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
