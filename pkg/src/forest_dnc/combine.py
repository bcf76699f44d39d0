"""Recombination of shard chains into a full-posterior approximation.

Two routes share the per-shard surrogates f_k of the unscaled shard log
densities:

* product MCMC: run Metropolis-Hastings on sum_k f_k(theta);
* importance pooling: weight each shard's thinned samples by
  exp(sum_j f_j(theta) - lam_k * f_k(theta)), truncate the sorted weights at
  cumulative probability p, and pool the per-shard atom sets proportionally
  to their effective sample sizes.

Scale factors lam_k are either fixed or chosen from cheap mean/spread
summaries so that each widened shard chain covers the full posterior's high
probability region.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .forest import Forest
from .model import Dataset, ShardSpec, log_shard_density
from .sampler import ChainOutput, MhConfig, rwmh


@dataclass(frozen=True)
class MleSummary:
    """Location and per-dimension spread estimates for one dataset."""

    theta_hat: np.ndarray
    sigma_hat: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta_hat, dtype=float).ravel()
        sg = np.asarray(self.sigma_hat, dtype=float).ravel()
        if th.size != sg.size:
            raise ValueError("theta_hat and sigma_hat disagree in dimension")
        if not np.all(sg > 0):
            raise ValueError("sigma_hat must be positive")
        object.__setattr__(self, "theta_hat", th)
        object.__setattr__(self, "sigma_hat", sg)


@dataclass(frozen=True)
class LambdaPlan:
    """Per-shard scale factors, optionally with the per-dimension candidates."""

    lambdas: np.ndarray
    method: str = "fixed"
    per_dim_lambdas: np.ndarray | None = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if not np.all(lam > 0):
            raise ValueError("scale factors must be positive")
        object.__setattr__(self, "lambdas", lam)
        if self.per_dim_lambdas is not None:
            object.__setattr__(self, "per_dim_lambdas", np.asarray(self.per_dim_lambdas, dtype=float))


@dataclass(frozen=True)
class WeightedAtoms:
    """Discrete measure: support points with normalized positive weights."""

    thetas: np.ndarray   # (Q, d)
    weights: np.ndarray  # (Q,)
    source_shard: np.ndarray | None = None
    ess: float | None = None

    def __post_init__(self):
        th = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if th.shape[0] != w.size or w.size == 0:
            raise ValueError("atoms are empty or sized inconsistently")
        if not np.all(w > 0):
            raise ValueError("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "weights", w)
        if self.source_shard is not None:
            object.__setattr__(self, "source_shard", np.asarray(self.source_shard, dtype=int).ravel())

    @property
    def size(self) -> int:
        return self.weights.size


def mle_summary_gaussian(data: Dataset) -> MleSummary:
    """Gaussian-family summaries: theta_hat = (mean, mean squared deviation),
    sigma_hat = (sqrt(var/N), sqrt(2 var^2 / N))."""
    if data.n < 2:
        raise ValueError("need at least two observations")
    x = data.observations
    mean = float(x.mean())
    var = float(((x - mean) ** 2).mean())
    if var == 0.0:
        raise ValueError("zero sample variance")
    n = data.n
    return MleSummary(
        theta_hat=np.array([mean, var]),
        sigma_hat=np.array([math.sqrt(var / n), math.sqrt(2.0 * var * var / n)]),
    )


def choose_lambda(full: MleSummary, shard_summaries: list[MleSummary]) -> LambdaPlan:
    """Scale factors from location/spread summaries.

    Per dimension, delta is how far the shard's center can sit from the full
    posterior's 2-sigma band; (delta / shard sigma)^-2 then widens the shard
    density enough that the band stays covered with high probability.  The
    per-shard factor is the minimum over dimensions; a shard centered
    exactly on the full summary in every dimension falls back to 1.
    """
    d = full.theta_hat.size
    K = len(shard_summaries)
    per_dim = np.empty((K, d))
    lambdas = np.empty(K)
    for i, sk in enumerate(shard_summaries):
        if sk.theta_hat.size != d:
            raise ValueError("shard summary dimension mismatch")
        diff = sk.theta_hat - full.theta_hat
        delta = np.maximum(np.abs(diff - 2.0 * full.sigma_hat), np.abs(diff + 2.0 * full.sigma_hat))
        with np.errstate(divide="ignore", over="ignore"):
            per_dim[i] = np.where(delta > 0, (sk.sigma_hat / np.where(delta > 0, delta, 1.0)) ** 2, np.inf)
        lam = per_dim[i].min()
        lambdas[i] = lam if np.isfinite(lam) else 1.0
    return LambdaPlan(lambdas=lambdas, method="mle_markov", per_dim_lambdas=per_dim)


class ExactLogDensity:
    """Surrogate stand-in that evaluates the shard log density exactly.

    Shares the predict interface with Forest so oracle and learned pipelines
    are interchangeable in tests and calibration runs.
    """

    def __init__(self, shard: ShardSpec):
        self.shard = shard
        self.d = shard.model.d

    def predict(self, theta) -> float:
        return log_shard_density(self.shard, np.asarray(theta, dtype=float))

    def predict_batch(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray([self.predict(p) for p in points])


class SurrogateSum:
    """Callable sum of per-shard surrogate predictions.

    Real forests are concatenated into one flat node pool so a proposal
    routes through every tree of every forest in a single vectorized pointer
    chase; other surrogates fall back to summing their predict calls.
    """

    def __init__(self, surrogates):
        if not surrogates:
            raise ValueError("no surrogates given")
        dims = {getattr(s, "d") for s in surrogates}
        if len(dims) != 1:
            raise ValueError(f"surrogates disagree in dimension: {sorted(dims)}")
        self.d = dims.pop()
        self.surrogates = list(surrogates)
        self._flat = None
        if all(isinstance(s, Forest) for s in surrogates):
            offsets = np.concatenate([[0], np.cumsum([s.feature.size for s in surrogates])[:-1]])
            self._flat = (
                np.concatenate([s.feature for s in surrogates]),
                np.concatenate([s.threshold for s in surrogates]),
                np.concatenate([np.where(s.left >= 0, s.left + off, -1) for s, off in zip(surrogates, offsets)]).astype(np.int64),
                np.concatenate([np.where(s.right >= 0, s.right + off, -1) for s, off in zip(surrogates, offsets)]).astype(np.int64),
                np.concatenate([s.value for s in surrogates]),
                np.concatenate([s.roots + off for s, off in zip(surrogates, offsets)]).astype(np.int64),
                np.concatenate([np.full(s.n_trees, 1.0 / s.n_trees) for s in surrogates]),
            )

    def __call__(self, theta: np.ndarray) -> float:
        if self._flat is None:
            return float(sum(s.predict(theta) for s in self.surrogates))
        feature, threshold, left, right, value, roots, tree_w = self._flat
        ptr = roots.copy()
        feat = feature[ptr]
        while True:
            internal = feat >= 0
            if not internal.any():
                break
            pi = ptr[internal]
            go_left = theta[feat[internal]] < threshold[pi]
            ptr[internal] = np.where(go_left, left[pi], right[pi])
            feat = feature[ptr]
        return float(value[ptr] @ tree_w)

    def batch(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        total = np.zeros(points.shape[0])
        for s in self.surrogates:
            total += s.predict_batch(points)
        return total


def rf_mh(forests, cfg: MhConfig, support=None) -> ChainOutput:
    """Metropolis-Hastings over the product of shard surrogates.

    The surrogates only know the sampled region and extrapolate flat beyond
    it, but the parameter support is known exactly: off-support proposals
    score -inf and are never accepted.
    """
    total = SurrogateSum(forests)
    if support is None:
        return rwmh(total, cfg)

    def gated(theta: np.ndarray) -> float:
        return total(theta) if support(theta) else -math.inf

    return rwmh(gated, cfg)


def rf_is_weights(samples: np.ndarray, forests, lambda_k: float, k: int) -> np.ndarray:
    """Normalized importance weights for shard k's thinned samples.

    The log weight of each sample is sum_j f_j(theta) - lam_k * f_k(theta),
    exponentiated after subtracting the maximum.  k is the 1-based shard
    index into forests.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("no samples to weight")
    if not 1 <= k <= len(forests):
        raise ValueError(f"shard index {k} outside 1..{len(forests)}")
    preds = np.vstack([f.predict_batch(samples) for f in forests])
    with np.errstate(invalid="ignore"):
        log_w = preds.sum(axis=0) - lambda_k * preds[k - 1]
    # a -inf surrogate value makes the sum -inf and the difference nan;
    # either way the sample carries no weight
    log_w[np.isnan(log_w)] = -math.inf
    peak = log_w.max()
    if not np.isfinite(peak):
        raise ValueError("no overlap between shard and product surrogate")
    w = np.exp(log_w - peak)
    return w / w.sum()


def truncate_weights(weights: np.ndarray, p: float) -> tuple[int, np.ndarray, np.ndarray]:
    """Smallest descending-sorted prefix with cumulative mass >= p, renormalized.

    Returns (i_k, kept atom indices in descending weight order, renormalized
    kept weights).
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"truncation probability must be in (0, 1], got {p}")
    weights = np.asarray(weights, dtype=float).ravel()
    order = np.argsort(-weights, kind="stable")
    if p == 1.0:
        i_k = weights.size
    else:
        csum = np.cumsum(weights[order])
        i_k = min(int(np.searchsorted(csum, p, side="left")) + 1, weights.size)
    kept = order[:i_k]
    kept_w = weights[kept]
    # weights that underflowed to exactly zero carry no mass; dropping them
    # keeps the truncated measure strictly positive
    if kept_w.size and kept_w[-1] == 0.0:
        positive = kept_w > 0
        kept, kept_w = kept[positive], kept_w[positive]
        i_k = kept.size
    return i_k, kept, kept_w / kept_w.sum()


def ess(truncated: WeightedAtoms) -> float:
    """Effective sample size i_k / (1 + V) with V the population variance of
    the weights scaled by the atom count."""
    i_k = truncated.size
    scaled = i_k * truncated.weights
    return i_k / (1.0 + float(scaled.var()))


def pool(per_shard: list[WeightedAtoms]) -> WeightedAtoms:
    """ESS-weighted union of the per-shard truncated measures."""
    if not per_shard:
        raise ValueError("nothing to pool")
    for atoms in per_shard:
        if atoms.ess is None:
            raise ValueError("pool inputs need their ess set")
    thetas = np.concatenate([a.thetas for a in per_shard])
    weights = np.concatenate([a.ess * a.weights for a in per_shard])
    source = np.concatenate(
        [a.source_shard if a.source_shard is not None else np.full(a.size, -1) for a in per_shard]
    )
    return WeightedAtoms(thetas=thetas, weights=weights / weights.sum(), source_shard=source)


def resample(pooled: WeightedAtoms, n: int, seed) -> np.ndarray:
    """Equal-weight draws from a weighted measure (multinomial)."""
    if n < 1:
        raise ValueError(f"resample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(pooled.size, size=n, p=pooled.weights)
    return pooled.thetas[idx]


def rf_is(samples_per_shard: list[np.ndarray], forests, lambdas, p: float) -> tuple[WeightedAtoms, list[WeightedAtoms]]:
    """Full importance-pooling pipeline over all shards.

    Returns the pooled measure and the per-shard truncated measures (each
    carrying its ess).  A shard reduced to a single atom signals that its
    chain barely overlaps the surrogate product; it stays in the pool but a
    warning is emitted.
    """
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if len(samples_per_shard) != len(forests) or lambdas.size != len(forests):
        raise ValueError("samples, forests and lambdas must align per shard")
    per_shard = []
    for i, samples in enumerate(samples_per_shard):
        k = i + 1
        w = rf_is_weights(samples, forests, float(lambdas[i]), k)
        i_k, kept, kept_w = truncate_weights(w, p)
        atoms = WeightedAtoms(
            thetas=np.atleast_2d(np.asarray(samples, dtype=float))[kept],
            weights=kept_w,
            source_shard=np.full(i_k, k),
        )
        atoms = replace(atoms, ess=ess(atoms))
        if i_k == 1:
            warnings.warn(
                f"shard {k} truncated to a single atom; its chain may not overlap the surrogate product",
                stacklevel=2,
            )
        per_shard.append(atoms)
    return pool(per_shard), per_shard
