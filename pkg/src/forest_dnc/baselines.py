"""Comparison combiners: consensus averaging and the KDE-product sampler.

Both consume the same object: K aligned shard chains sampled with scale
factor 1.  Consensus precision-weights aligned draws; the KDE product treats
each chain as an equal-weight Gaussian mixture and samples the product of
the K mixtures by Metropolis-within-Gibbs on the kernel-index vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SubchainSet:
    """K aligned shard chains of equal length and dimension."""

    chains: np.ndarray  # (K, T, d)

    def __post_init__(self):
        arr = np.asarray(self.chains, dtype=float)
        if arr.ndim == 2:  # K chains of scalars
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("need a (K, T, d) stack of aligned chains")
        object.__setattr__(self, "chains", arr)

    @classmethod
    def from_chains(cls, chains) -> "SubchainSet":
        arrays = []
        for c in chains:
            c = np.asarray(c, dtype=float)
            arrays.append(c[:, None] if c.ndim == 1 else c)
        shapes = {c.shape for c in arrays}
        if len(shapes) != 1:
            raise ValueError(f"chains disagree in shape: {sorted(shapes)}")
        return cls(np.stack(arrays))

    @property
    def K(self) -> int:
        return self.chains.shape[0]

    @property
    def T(self) -> int:
        return self.chains.shape[1]

    @property
    def d(self) -> int:
        return self.chains.shape[2]


def consensus_combine(chains: SubchainSet) -> np.ndarray:
    """Precision-weighted average of aligned draws.

    Draw t of the output is (sum_k W_k)^-1 sum_k W_k theta_t^k with W_k the
    inverse sample covariance of shard k's chain.
    """
    K, T, d = chains.K, chains.T, chains.d
    weights = []
    for k in range(K):
        cov = np.atleast_2d(np.cov(chains.chains[k], rowvar=False, ddof=1))
        try:
            w = np.linalg.inv(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"shard {k + 1} has singular sample covariance") from exc
        if not np.all(np.isfinite(w)):
            raise ValueError(f"shard {k + 1} has singular sample covariance")
        weights.append(w)
    w_sum = np.sum(weights, axis=0)
    weighted = np.zeros((T, d))
    for k in range(K):
        weighted += chains.chains[k] @ weights[k].T
    return np.linalg.solve(w_sum, weighted.T).T


def silverman_bandwidth(samples: np.ndarray) -> np.ndarray:
    """Per-dimension rule-of-thumb bandwidth T^(-1/(d+4)) * sigma_j."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    t, d = samples.shape
    sigma = samples.std(axis=0, ddof=1)
    return t ** (-1.0 / (d + 4)) * sigma


def product_mixture_log_weight(centers: np.ndarray, bandwidth, indices) -> float:
    """Unnormalized log weight of one kernel-index vector of the product mixture.

    centers is (K, T, d); the selected kernels' centers c_k contribute
    -sum_j (c_kj - cbar_j)^2 / (2 h_j^2) with cbar the across-shard mean.
    """
    centers = np.asarray(centers, dtype=float)
    h2 = np.asarray(bandwidth, dtype=float) ** 2
    sel = centers[np.arange(centers.shape[0]), np.asarray(indices, dtype=int)]
    cbar = sel.mean(axis=0)
    return float(-np.sum((sel - cbar) ** 2 / (2.0 * h2)))


def _gibbs_index_chain(centers: np.ndarray, bandwidth, n_sweeps: int, rng, on_sweep) -> None:
    """Metropolis-within-Gibbs over the kernel-index vector.

    Keeps per-dimension running sums S1 = sum_k c_kj and S2 = sum_k c_kj^2;
    the log weight is -sum_j (S2_j - S1_j^2/K) / (2 h_j^2), so a single-index
    proposal is evaluated in O(d).  The inner loop runs on plain floats with
    block-drawn random numbers.
    """
    K, T, d = centers.shape
    h2 = [2.0 * float(h) ** 2 for h in np.asarray(bandwidth, dtype=float).ravel()]
    rows = [[tuple(float(v) for v in centers[k, t]) for t in range(T)] for k in range(K)]

    idx = [0] * K
    s1 = [sum(rows[k][0][j] for k in range(K)) for j in range(d)]
    s2 = [sum(rows[k][0][j] ** 2 for k in range(K)) for j in range(d)]

    def log_weight(s1_, s2_):
        return -sum((s2_[j] - s1_[j] * s1_[j] / K) / h2[j] for j in range(d))

    cur = log_weight(s1, s2)
    n_updates = n_sweeps * K
    block = 1 << 16
    drawn = 0
    proposals = uniforms = None
    for sweep in range(n_sweeps):
        for k in range(K):
            if drawn % block == 0:
                take = min(block, n_updates - drawn)
                proposals = rng.integers(0, T, size=take)
                uniforms = rng.random(take)
            t_new = int(proposals[drawn % block])
            u = float(uniforms[drawn % block])
            drawn += 1
            old = rows[k][idx[k]]
            new = rows[k][t_new]
            s1_new = [s1[j] - old[j] + new[j] for j in range(d)]
            s2_new = [s2[j] - old[j] ** 2 + new[j] ** 2 for j in range(d)]
            proposed = log_weight(s1_new, s2_new)
            diff = proposed - cur
            if diff >= 0 or u < math.exp(diff):
                idx[k] = t_new
                s1, s2, cur = s1_new, s2_new, proposed
        on_sweep(sweep, idx, s1)


def kde_product_indices(chains: SubchainSet, bandwidth, n_sweeps: int, seed) -> np.ndarray:
    """Index vectors visited by the Gibbs chain, one row per sweep."""
    out = np.empty((n_sweeps, chains.K), dtype=int)

    def record(sweep, idx, _s1):
        out[sweep] = idx

    rng = np.random.default_rng(seed)
    _gibbs_index_chain(chains.chains, bandwidth, n_sweeps, rng, record)
    return out


def kde_product_sample(chains: SubchainSet, bandwidth, n_out: int, n_gibbs_sweeps: int, seed) -> np.ndarray:
    """Draws from the product of per-shard kernel density estimates.

    Runs n_gibbs_sweeps index sweeps of burn-in, then one draw every
    n_gibbs_sweeps sweeps: a Gaussian with mean the average of the K
    selected kernel centers and covariance diag(bandwidth^2) / K.
    """
    if chains.T < 2:
        raise ValueError("need at least two draws per chain")
    if n_out < 1 or n_gibbs_sweeps < 1:
        raise ValueError("n_out and n_gibbs_sweeps must be positive")
    h = np.asarray(bandwidth, dtype=float).ravel()
    if h.size != chains.d or not np.all(h > 0):
        raise ValueError("bandwidth must be positive per dimension")
    seq = np.random.SeedSequence(seed).spawn(2)
    rng_idx = np.random.default_rng(seq[0])
    rng_emit = np.random.default_rng(seq[1])

    K, d = chains.K, chains.d
    scale = h / math.sqrt(K)
    out = np.empty((n_out, d))
    emitted = 0

    def maybe_emit(sweep, _idx, s1):
        nonlocal emitted
        if sweep + 1 <= n_gibbs_sweeps or (sweep + 1) % n_gibbs_sweeps != 0:
            return
        if emitted < n_out:
            mean = np.asarray(s1) / K
            out[emitted] = mean + rng_emit.standard_normal(d) * scale
            emitted += 1

    total_sweeps = n_gibbs_sweeps * (n_out + 1)
    _gibbs_index_chain(chains.chains, h, total_sweeps, rng_idx, maybe_emit)
    return out
