"""Grid density estimation and schema readers shared by the plot scripts.

These scripts consume only the run directory's CSV/JSON files; nothing here
imports the sampling package.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

METHOD_FILES = {
    "oracle": "samples_oracle.csv",
    "rfis": "samples_rfis.csv",
    "rfmh": "samples_rfmh.csv",
    "cmc": "samples_cmc.csv",
    "nonpara": "samples_nonpara.csv",
}

# fixed per-method palette: reference red, RF-IS blue, consensus orange,
# KDE violet
METHOD_COLORS = {
    "oracle": "red",
    "rfis": "blue",
    "cmc": "orange",
    "nonpara": "violet",
    "rfmh": "green",
}


def read_samples_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing sample file: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("theta_1"):
        raise ValueError(f"{path}: not a sample CSV")
    rows = [[float(v) for v in line.split(",")] for line in lines[1:] if line]
    return np.asarray(rows, dtype=float)


def read_pooled_atoms_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (points, weights, source shard ids)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing pooled atoms file: {path}")
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    if "weight" not in header:
        raise ValueError(f"{path}: not a pooled atoms CSV")
    d = header.index("weight")
    rows = [line.split(",") for line in lines[1:] if line]
    pts = np.asarray([[float(v) for v in r[:d]] for r in rows])
    w = np.asarray([float(r[d]) for r in rows])
    src = np.asarray([int(r[d + 1]) for r in rows])
    return pts, w, src


def load_method_samples(run_dir, method: str) -> tuple[np.ndarray, np.ndarray]:
    """Equal-weight samples for a method, or the weighted pooled atoms for rfis."""
    run_dir = Path(run_dir)
    if method not in METHOD_FILES:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHOD_FILES)}")
    if method == "rfis" and (run_dir / "pooled_atoms.csv").exists():
        pts, w, _ = read_pooled_atoms_csv(run_dir / "pooled_atoms.csv")
        return pts, w
    pts = read_samples_csv(run_dir / METHOD_FILES[method])
    return pts, np.full(pts.shape[0], 1.0 / pts.shape[0])


def weighted_bandwidth(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-dimension Silverman-style bandwidth with the effective sample size."""
    mean = weights @ points
    var = weights @ (points - mean) ** 2
    n_eff = 1.0 / float(np.sum(weights**2))
    d = points.shape[1]
    h = n_eff ** (-1.0 / (d + 4)) * np.sqrt(var)
    span = points.max(axis=0) - points.min(axis=0)
    # degenerate clouds (point masses) still need a positive kernel width
    floor = np.where(span > 0, 1e-3 * span, 1e-6)
    return np.maximum(h, floor)


def grid_density(points, weights, xs, ys, bandwidth=None) -> np.ndarray:
    """Weighted Gaussian-kernel density on a 2-d grid; shape (len(xs), len(ys))."""
    points = np.asarray(points, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"contour grids need 2-d samples, got shape {points.shape}")
    h = weighted_bandwidth(points, weights) if bandwidth is None else np.asarray(bandwidth, float)
    # a kernel narrower than the grid spacing cannot be rendered
    h = np.maximum(h, [xs[1] - xs[0], ys[1] - ys[0]])
    gx = np.exp(-0.5 * ((xs[:, None] - points[None, :, 0]) / h[0]) ** 2)
    gy = np.exp(-0.5 * ((ys[:, None] - points[None, :, 1]) / h[1]) ** 2)
    norm = 1.0 / (2.0 * np.pi * h[0] * h[1])
    return norm * (gx * weights[None, :]) @ gy.T


def shared_grid(sample_sets, resolution: int, pad: float = 0.08):
    """Common evaluation grid covering every method's samples."""
    if resolution < 32:
        raise ValueError(f"grid resolution must be >= 32, got {resolution}")
    stacked = np.vstack([pts for pts, _ in sample_sets])
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo = lo - pad * span
    hi = hi + pad * span
    return np.linspace(lo[0], hi[0], resolution), np.linspace(lo[1], hi[1], resolution)


def count_local_maxima(grid: np.ndarray, frac_of_max: float = 0.5) -> int:
    """Local maxima above frac_of_max * global max, 8-neighbour sense.

    Cells not exceeded by any neighbour form the candidate mask; a plateau of
    tied cells counts once (connected components, 8-connectivity).
    """
    g = np.asarray(grid, dtype=float)
    padded = np.full((g.shape[0] + 2, g.shape[1] + 2), -np.inf)
    padded[1:-1, 1:-1] = g
    center = padded[1:-1, 1:-1]
    is_max = np.ones_like(g, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= center >= padded[1 + di : 1 + di + g.shape[0], 1 + dj : 1 + dj + g.shape[1]]
    mask = is_max & (center > frac_of_max * g.max())

    count = 0
    seen = np.zeros_like(mask)
    for i, j in zip(*np.nonzero(mask)):
        if seen[i, j]:
            continue
        count += 1
        stack = [(i, j)]
        seen[i, j] = True
        while stack:
            ci, cj = stack.pop()
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    ni, nj = ci + di, cj + dj
                    if 0 <= ni < mask.shape[0] and 0 <= nj < mask.shape[1]:
                        if mask[ni, nj] and not seen[ni, nj]:
                            seen[ni, nj] = True
                            stack.append((ni, nj))
    return count
