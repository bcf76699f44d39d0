"""Observation models, datasets, random sharding, and shard log densities.

All densities are computed in log space; products over observations would
underflow otherwise.  A shard's unnormalized log density is

    (1/K) * log_prior(theta) + sum(log_lik(x, theta) for x in shard)

and the scaled variant multiplies that by the shard's scale factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def gaussian_logpdf(x, mean, var):
    """Log density of N(mean, var) evaluated at x (vectorized over x)."""
    return -0.5 * (LOG_2PI + np.log(var)) - (x - mean) ** 2 / (2.0 * var)


@dataclass(frozen=True)
class Dataset:
    """Ordered scalar observations.  May be empty (a degenerate shard)."""

    observations: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim != 1:
            raise ValueError("Dataset needs a 1-d observation array")
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.size

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.observations[indices])


class Model:
    """An observation model: support predicate, log prior, log likelihood.

    log_prior and log_lik are finite on the support and -inf outside.
    Subclasses are immutable and safe to share across worker processes.
    """

    name: str = "model"
    d: int = 1

    def support(self, theta: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(theta)))

    def log_prior(self, theta: np.ndarray) -> float:
        # Flat (improper) prior on the support.
        return 0.0 if self.support(theta) else -math.inf

    def log_lik(self, x, theta: np.ndarray):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int, theta: np.ndarray) -> Dataset:
        raise NotImplementedError


class BimodalMixtureModel(Model):
    """Equal mixture of two Gaussians, N(t1, 2) and N(t1 + t2, 2).

    The second parameter of the normal notation is read as a variance by
    default; set variance_convention="stddev" to read it as a standard
    deviation instead.
    """

    name = "bimodal"
    d = 2

    def __init__(self, variance_convention: str = "variance"):
        if variance_convention not in ("variance", "stddev"):
            raise ValueError(f"unknown variance convention {variance_convention!r}")
        self.var = 2.0 if variance_convention == "variance" else 4.0
        self.variance_convention = variance_convention

    def log_lik(self, x, theta):
        a = gaussian_logpdf(x, theta[0], self.var)
        b = gaussian_logpdf(x, theta[0] + theta[1], self.var)
        return np.logaddexp(a, b) - math.log(2.0)

    def sample(self, rng, n, theta):
        pick = rng.random(n) < 0.5
        means = np.where(pick, theta[0], theta[0] + theta[1])
        return Dataset(rng.normal(means, math.sqrt(self.var)))


class MoonModel(Model):
    """N(sqrt(t1) + sqrt(t2), 2) with t1, t2 >= 0.

    Non-identifiable in (t1, t2); the posterior is a curved band.
    """

    name = "moon"
    d = 2

    def __init__(self, variance_convention: str = "variance"):
        if variance_convention not in ("variance", "stddev"):
            raise ValueError(f"unknown variance convention {variance_convention!r}")
        self.var = 2.0 if variance_convention == "variance" else 4.0
        self.variance_convention = variance_convention

    def support(self, theta):
        return bool(np.all(np.isfinite(theta)) and theta[0] >= 0 and theta[1] >= 0)

    def log_prior(self, theta):
        return 0.0 if self.support(theta) else -math.inf

    def log_lik(self, x, theta):
        mean = math.sqrt(theta[0]) + math.sqrt(theta[1])
        return gaussian_logpdf(x, mean, self.var)

    def sample(self, rng, n, theta):
        mean = math.sqrt(theta[0]) + math.sqrt(theta[1])
        return Dataset(rng.normal(mean, math.sqrt(self.var), size=n))


class GaussianMeanVarianceModel(Model):
    """N(mu, sigma2) with theta = (mu, sigma2), sigma2 > 0."""

    name = "gaussian"
    d = 2

    def support(self, theta):
        return bool(np.all(np.isfinite(theta)) and theta[1] > 0)

    def log_prior(self, theta):
        return 0.0 if self.support(theta) else -math.inf

    def log_lik(self, x, theta):
        return gaussian_logpdf(x, theta[0], theta[1])

    def sample(self, rng, n, theta):
        return Dataset(rng.normal(theta[0], math.sqrt(theta[1]), size=n))


class GaussianKnownVarianceModel(Model):
    """N(mu, lik_var) with known variance and a conjugate N(m0, s0^2) prior.

    The posterior is available in closed form, which makes this the
    reference problem for pipeline-exactness tests.
    """

    name = "gaussian_known_var"
    d = 1

    def __init__(self, prior_mean: float = 0.0, prior_sd: float = 10.0, lik_var: float = 1.0):
        self.prior_mean = prior_mean
        self.prior_sd = prior_sd
        self.lik_var = lik_var

    def log_prior(self, theta):
        if not self.support(theta):
            return -math.inf
        return float(gaussian_logpdf(theta[0], self.prior_mean, self.prior_sd**2))

    def log_lik(self, x, theta):
        return gaussian_logpdf(x, theta[0], self.lik_var)

    def sample(self, rng, n, theta):
        return Dataset(rng.normal(theta[0], math.sqrt(self.lik_var), size=n))

    def posterior(self, data: Dataset) -> tuple[float, float]:
        """Exact posterior (mean, variance) of mu given the data."""
        prec = 1.0 / self.prior_sd**2 + data.n / self.lik_var
        mean = (self.prior_mean / self.prior_sd**2 + data.observations.sum() / self.lik_var) / prec
        return mean, 1.0 / prec


MODEL_REGISTRY = {
    "bimodal": BimodalMixtureModel,
    "moon": MoonModel,
    "gaussian": GaussianMeanVarianceModel,
    "gaussian_known_var": GaussianKnownVarianceModel,
}


def make_model(name: str, **kwargs) -> Model:
    try:
        cls = MODEL_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_REGISTRY)}") from None
    return cls(**kwargs)


@dataclass(frozen=True)
class ShardSpec:
    """One data shard: index k in 1..K, its slice, and its scale factor."""

    k: int
    data: Dataset
    lam: float = 1.0
    K: int = 1
    model: Model | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (1 <= self.k <= self.K):
            raise ValueError(f"shard index {self.k} outside 1..{self.K}")
        if not self.lam > 0:
            raise ValueError(f"scale factor must be positive, got {self.lam}")

    def with_lambda(self, lam: float) -> "ShardSpec":
        return replace(self, lam=lam)


def shard_data(data: Dataset, K: int, seed, model: Model | None = None) -> list[ShardSpec]:
    """Split a dataset into K equal shards by a seeded random permutation.

    K must divide N exactly; remainders are rejected rather than silently
    spread around.  Scale factors start at 1.
    """
    if K < 1:
        raise ValueError(f"shard count must be >= 1, got {K}")
    if data.n % K != 0:
        raise ValueError(f"shard count {K} does not divide dataset size {data.n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    m = data.n // K
    return [
        ShardSpec(k=k + 1, data=data.subset(perm[k * m : (k + 1) * m]), lam=1.0, K=K, model=model)
        for k in range(K)
    ]


def log_shard_density(shard: ShardSpec, theta: np.ndarray) -> float:
    """Unnormalized log shard density: (1/K) log prior + shard log likelihood.

    Returns -inf off the model's support.
    """
    model = shard.model
    if model is None:
        raise ValueError("shard has no model attached")
    lp = model.log_prior(theta)
    if lp == -math.inf:
        return -math.inf
    ll = float(np.sum(model.log_lik(shard.data.observations, theta))) if shard.data.n else 0.0
    return lp / shard.K + ll


def log_scaled_subposterior(shard: ShardSpec, theta: np.ndarray) -> float:
    """Scaled shard log density, lam * log_shard_density.

    Unnormalized: the scaled density's normalizing constant is never needed
    because every consumer works with ratios or self-normalized weights.
    """
    g = log_shard_density(shard, theta)
    return shard.lam * g if g != -math.inf else -math.inf


def log_full_posterior(model: Model, data: Dataset, theta: np.ndarray) -> float:
    """Unnormalized log posterior over the complete dataset."""
    lp = model.log_prior(theta)
    if lp == -math.inf:
        return -math.inf
    return lp + float(np.sum(model.log_lik(data.observations, theta)))


def sample_reference_data(dist: str, n: int, rng: np.random.Generator) -> Dataset:
    """Draw data from a reference law outside any fitted model family."""
    if dist in ("standard_normal", "normal"):
        return Dataset(rng.standard_normal(n))
    if dist == "lognormal":
        return Dataset(rng.lognormal(mean=0.0, sigma=1.0, size=n))
    raise ValueError(f"unknown reference distribution {dist!r}")


def write_dataset(path, data: Dataset, sidecar: dict | None = None) -> None:
    """One observation per line; optional sidecar JSON describing provenance."""
    path = Path(path)
    lines = ["# d=1"] + [repr(float(x)) for x in data.observations]
    path.write_text("\n".join(lines) + "\n")
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_dataset(path) -> Dataset:
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "d=" in line and int(line.split("d=")[1]) != 1:
                raise ValueError("only scalar observations are supported")
            continue
        values.append(float(line))
    return Dataset(np.asarray(values))
