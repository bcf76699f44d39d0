"""Random-partition-tree regression ensembles over (point, log density) pairs.

Trees are grown by choosing a uniformly random split dimension and a
uniformly random threshold inside that dimension's data range at the node,
so training needs no tuned split criterion and costs O(n log n) per tree.
Prediction routes a query to one leaf per tree and averages the leaf means,
which is O(depth) = O(log n) comparisons per tree.

Trees are stored as flat parallel arrays in preorder; routing is a
vectorized pointer chase, and a batch of queries descends all trees at once.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FOREST_FILE_VERSION = 1


class ForestFormatError(ValueError):
    """Raised when a forest file is malformed or has the wrong version."""


@dataclass(frozen=True)
class TrainingSet:
    """Query points with finite scalar labels."""

    points: np.ndarray  # (M, d)
    labels: np.ndarray  # (M,)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        lbl = np.asarray(self.labels, dtype=float).ravel()
        if pts.shape[0] != lbl.size:
            raise ValueError("points and labels disagree in length")
        if lbl.size < 1:
            raise ValueError("training set is empty")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(lbl)):
            raise ValueError("training set contains non-finite entries")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lbl)

    @property
    def M(self) -> int:
        return self.labels.size

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass
class Forest:
    """Flat preorder node storage shared by all trees in the ensemble.

    feature[i] >= 0 marks an internal node splitting on that dimension;
    feature[i] == -1 marks a leaf whose prediction is value[i].  left/right
    hold absolute node indices.  Built forests are immutable in practice and
    safe for concurrent readers.
    """

    d: int
    n_trees: int
    min_leaf: int
    subsample_size: int
    seed: int
    feature: np.ndarray    # (n_nodes,) int32
    threshold: np.ndarray  # (n_nodes,) float64, nan at leaves
    left: np.ndarray       # (n_nodes,) int32, -1 at leaves
    right: np.ndarray      # (n_nodes,) int32, -1 at leaves
    value: np.ndarray      # (n_nodes,) float64, nan at internal nodes
    count: np.ndarray      # (n_nodes,) int32, training points reaching the node
    roots: np.ndarray      # (n_trees,) int32
    tree_sizes: np.ndarray  # (n_trees,) int32
    bbox_lo: np.ndarray    # (d,) training bounding box
    bbox_hi: np.ndarray

    def predict(self, theta: np.ndarray) -> float:
        """Mean over trees of the leaf value the query routes to."""
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.d:
            raise ValueError(f"expected dimension {self.d}, got {theta.size}")
        ptr = self.roots.copy()
        feat = self.feature[ptr]
        while True:
            internal = feat >= 0
            if not internal.any():
                break
            pi = ptr[internal]
            go_left = theta[feat[internal]] < self.threshold[pi]
            ptr[internal] = np.where(go_left, self.left[pi], self.right[pi])
            feat = self.feature[ptr]
        return float(self.value[ptr].mean())

    def predict_batch(self, points: np.ndarray) -> np.ndarray:
        """Predictions for a (Q, d) batch, descending all trees at once."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.d:
            raise ValueError(f"expected dimension {self.d}, got {points.shape[1]}")
        q = points.shape[0]
        ptr = np.tile(self.roots, q)
        qidx = np.repeat(np.arange(q), self.n_trees)
        feat = self.feature[ptr]
        active = feat >= 0
        while active.any():
            pa = ptr[active]
            go_left = points[qidx[active], feat[active]] < self.threshold[pa]
            ptr[active] = np.where(go_left, self.left[pa], self.right[pa])
            feat[active] = self.feature[ptr[active]]
            active = feat >= 0
        return self.value[ptr].reshape(q, self.n_trees).mean(axis=1)

    def outside_bbox(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of queries outside the training bounding box."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.any((points < self.bbox_lo) | (points > self.bbox_hi), axis=1)


def _draw_split(values_at, node_idx, d, min_leaf, rng):
    """Random dimension + random threshold, retrying up to d dimensions.

    The threshold is drawn uniformly between the min_leaf-th smallest and
    min_leaf-th largest value on the chosen dimension so both children keep
    at least min_leaf points; degenerate ranges fall through to a leaf.
    """
    n = node_idx.size
    for _ in range(d):
        dim = int(rng.integers(d))
        vals = values_at(node_idx, dim)
        if min_leaf == 1:
            lo, hi = vals.min(), vals.max()
        else:
            part = np.partition(vals, [min_leaf - 1, n - min_leaf])
            lo, hi = part[min_leaf - 1], part[n - min_leaf]
        if not hi > lo:
            continue
        t = rng.uniform(lo, hi)
        mask = vals < t
        n_left = int(mask.sum())
        if n_left < min_leaf or n - n_left < min_leaf:
            continue
        return dim, float(t), mask
    return None


def _build_tree(points, labels, sample_idx, min_leaf, rng):
    """Grow one tree; returns preorder node arrays with local child indices."""
    feature, threshold, left, right, value, count = [], [], [], [], [], []
    values_at = lambda idx, dim: points[idx, dim]
    stack = [(sample_idx, -1, True)]
    while stack:
        node_idx, parent, is_left = stack.pop()
        pos = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = pos
        n = node_idx.size
        split = _draw_split(values_at, node_idx, points.shape[1], min_leaf, rng) if n >= 2 * min_leaf else None
        if split is None:
            feature.append(-1)
            threshold.append(math.nan)
            left.append(-1)
            right.append(-1)
            value.append(float(labels[node_idx].mean()))
            count.append(n)
        else:
            dim, t, mask = split
            feature.append(dim)
            threshold.append(t)
            left.append(-1)
            right.append(-1)
            value.append(math.nan)
            count.append(n)
            # push right first so the left subtree is emitted next (preorder)
            stack.append((node_idx[~mask], pos, False))
            stack.append((node_idx[mask], pos, True))
    return (
        np.asarray(feature, dtype=np.int32),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int32),
        np.asarray(right, dtype=np.int32),
        np.asarray(value, dtype=float),
        np.asarray(count, dtype=np.int32),
    )


def _assemble(trees, d, n_trees, min_leaf, subsample_size, seed, bbox_lo, bbox_hi) -> Forest:
    sizes = np.asarray([t[0].size for t in trees], dtype=np.int32)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int32)
    feature = np.concatenate([t[0] for t in trees])
    threshold = np.concatenate([t[1] for t in trees])
    left = np.concatenate([np.where(t[2] >= 0, t[2] + off, -1) for t, off in zip(trees, offsets)])
    right = np.concatenate([np.where(t[3] >= 0, t[3] + off, -1) for t, off in zip(trees, offsets)])
    value = np.concatenate([t[4] for t in trees])
    count = np.concatenate([t[5] for t in trees])
    return Forest(
        d=d,
        n_trees=n_trees,
        min_leaf=min_leaf,
        subsample_size=subsample_size,
        seed=seed,
        feature=feature.astype(np.int32),
        threshold=threshold,
        left=left.astype(np.int32),
        right=right.astype(np.int32),
        value=value,
        count=count.astype(np.int32),
        roots=offsets,
        tree_sizes=sizes,
        bbox_lo=np.asarray(bbox_lo, dtype=float),
        bbox_hi=np.asarray(bbox_hi, dtype=float),
    )


def train(data: TrainingSet, n_trees: int = 10, min_leaf: int = 5, subsample_size: int | None = None, seed: int = 0) -> Forest:
    """Fit an ensemble of random partition trees.

    Each tree draws its own subsample without replacement (the whole set
    when subsample_size is None or exceeds M) from a per-tree substream of
    the seed, so the result is reproducible and independent of tree build
    order.
    """
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    if min_leaf < 1:
        raise ValueError(f"min_leaf must be >= 1, got {min_leaf}")
    take = data.M if subsample_size is None else min(subsample_size, data.M)
    streams = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        idx = rng.choice(data.M, size=take, replace=False) if take < data.M else np.arange(data.M)
        trees.append(_build_tree(data.points, data.labels, idx, min_leaf, rng))
    return _assemble(
        trees,
        d=data.d,
        n_trees=n_trees,
        min_leaf=min_leaf,
        subsample_size=take,
        seed=seed,
        bbox_lo=data.points.min(axis=0),
        bbox_hi=data.points.max(axis=0),
    )


def _none_at(values, mask):
    return [None if m else float(v) for v, m in zip(values, mask)]


def save_forest(forest: Forest, path) -> None:
    """Write a forest as JSON with per-tree preorder node arrays."""
    trees = []
    for root, size in zip(forest.roots, forest.tree_sizes):
        sl = slice(int(root), int(root) + int(size))
        feat = forest.feature[sl]
        leaf = feat < 0
        trees.append(
            {
                "feature": feat.tolist(),
                "threshold": _none_at(forest.threshold[sl], leaf),
                "left": np.where(leaf, -1, forest.left[sl] - root).tolist(),
                "right": np.where(leaf, -1, forest.right[sl] - root).tolist(),
                "value": _none_at(forest.value[sl], ~leaf),
                "count": forest.count[sl].tolist(),
            }
        )
    doc = {
        "version": FOREST_FILE_VERSION,
        "d": forest.d,
        "n_trees": forest.n_trees,
        "min_leaf": forest.min_leaf,
        "subsample_size": forest.subsample_size,
        "seed": forest.seed,
        "bbox_lo": forest.bbox_lo.tolist(),
        "bbox_hi": forest.bbox_hi.tolist(),
        "trees": trees,
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_forest(path) -> Forest:
    """Read a forest written by save_forest; malformed input raises ForestFormatError."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ForestFormatError(f"{path}: cannot parse forest file: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise ForestFormatError(f"{path}: missing version field")
    if doc["version"] != FOREST_FILE_VERSION:
        raise ForestFormatError(
            f"{path}: forest file version {doc['version']!r} not supported (expected {FOREST_FILE_VERSION})"
        )
    try:
        d = int(doc["d"])
        trees_doc = doc["trees"]
        if len(trees_doc) != int(doc["n_trees"]) or not trees_doc:
            raise ForestFormatError(f"{path}: tree count disagrees with n_trees")
        trees = []
        for t in trees_doc:
            feat = np.asarray(t["feature"], dtype=np.int32)
            n = feat.size
            arrays = (
                feat,
                np.asarray([math.nan if v is None else v for v in t["threshold"]], dtype=float),
                np.asarray(t["left"], dtype=np.int32),
                np.asarray(t["right"], dtype=np.int32),
                np.asarray([math.nan if v is None else v for v in t["value"]], dtype=float),
                np.asarray(t["count"], dtype=np.int32),
            )
            if any(a.size != n for a in arrays):
                raise ForestFormatError(f"{path}: ragged node arrays")
            internal = feat >= 0
            if np.any(feat >= d) or np.any(arrays[2][internal] < 0) or np.any(arrays[2][internal] >= n) or np.any(arrays[3][internal] < 0) or np.any(arrays[3][internal] >= n):
                raise ForestFormatError(f"{path}: node indices out of range")
            trees.append(arrays)
        return _assemble(
            trees,
            d=d,
            n_trees=len(trees),
            min_leaf=int(doc["min_leaf"]),
            subsample_size=int(doc["subsample_size"]),
            seed=int(doc["seed"]),
            bbox_lo=np.asarray(doc["bbox_lo"], dtype=float),
            bbox_hi=np.asarray(doc["bbox_hi"], dtype=float),
        )
    except ForestFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ForestFormatError(f"{path}: malformed forest file: {exc}") from exc
