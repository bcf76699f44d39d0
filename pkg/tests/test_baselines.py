import itertools
import math

import numpy as np
import pytest

from forest_dnc.baselines import (
    SubchainSet,
    consensus_combine,
    kde_product_indices,
    kde_product_sample,
    product_mixture_log_weight,
    silverman_bandwidth,
)
from forest_dnc.model import make_model, shard_data
from forest_dnc.sampler import MhConfig, rwmh
from forest_dnc.model import log_scaled_subposterior

from helpers import batch_means_se


class TestSubchainSet:
    def test_shape_validation(self):
        with pytest.raises(ValueError, match="disagree"):
            SubchainSet.from_chains([np.zeros((5, 2)), np.zeros((4, 2))])
        with pytest.raises(ValueError, match="disagree"):
            SubchainSet.from_chains([np.zeros((5, 2)), np.zeros((5, 1))])
        s = SubchainSet.from_chains([np.zeros((5, 2)), np.ones((5, 2))])
        assert (s.K, s.T, s.d) == (2, 5, 2)


class TestConsensusCombine:
    def test_single_shard_identity(self):
        rng = np.random.default_rng(0)
        chain = rng.normal(size=(200, 2))
        out = consensus_combine(SubchainSet.from_chains([chain]))
        assert np.allclose(out, chain, atol=1e-12)

    def test_identical_chains_pass_through(self):
        rng = np.random.default_rng(1)
        chain = rng.normal(size=(150, 2))
        out = consensus_combine(SubchainSet.from_chains([chain, chain, chain]))
        assert np.allclose(out, chain, atol=1e-10)

    def test_equal_variance_pair_averages(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(300, 1))
        b = a[::-1].copy()  # same sample variance by construction
        out = consensus_combine(SubchainSet.from_chains([a, b]))
        assert np.allclose(out, (a + b) / 2, atol=1e-12)

    def test_singular_covariance_names_the_shard(self):
        good = np.random.default_rng(3).normal(size=(50, 1))
        constant = np.full((50, 1), 2.0)
        with pytest.raises(ValueError, match="shard 2"):
            consensus_combine(SubchainSet.from_chains([good, constant]))

    def test_exact_on_conjugate_gaussian(self):
        model = make_model("gaussian_known_var", prior_mean=0.0, prior_sd=5.0, lik_var=1.0)
        rng = np.random.default_rng(4)
        data = model.sample(rng, 1_000, np.array([0.4]))
        shards = shard_data(data, 5, seed=1, model=model)
        chains = []
        for s in shards:
            out = rwmh(
                lambda th, s=s: log_scaled_subposterior(s, th),
                MhConfig(n_iters=30_000, burn_in=5_000, thin=5, step_scale=0.2,
                         init=np.array([0.0]), seed=100 + s.k),
            )
            chains.append(out.retained)
        combined = consensus_combine(SubchainSet.from_chains(chains))
        post_mean, post_var = model.posterior(data)
        x = combined[:, 0]
        se = batch_means_se(x)
        assert abs(x.mean() - post_mean) < 3 * se
        assert x.var() == pytest.approx(post_var, rel=0.15)


class TestSilvermanBandwidth:
    def test_formula(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(400, 2))
        h = silverman_bandwidth(x)
        expected = 400 ** (-1 / 6) * x.std(axis=0, ddof=1)
        assert np.allclose(h, expected)
        assert np.all(h > 0)


class TestKdeProductSample:
    def test_constant_chains_give_shrunken_kernel(self):
        K, T, c, h = 4, 10, 2.5, 0.8
        chains = SubchainSet.from_chains([np.full((T, 1), c) for _ in range(K)])
        out = kde_product_sample(chains, [h], n_out=20_000, n_gibbs_sweeps=1, seed=0)
        assert out.shape == (20_000, 1)
        assert out.mean() == pytest.approx(c, abs=0.02)
        assert out.std() == pytest.approx(h / math.sqrt(K), rel=0.05)

    def test_single_shard_is_plain_kde(self):
        rng = np.random.default_rng(6)
        chain = rng.normal(size=(2_000, 1))
        h = silverman_bandwidth(chain)
        chains = SubchainSet.from_chains([chain])
        out = kde_product_sample(chains, h, n_out=20_000, n_gibbs_sweeps=1, seed=1)
        assert out.mean() == pytest.approx(chain.mean(), abs=0.05)
        # KDE inflates the variance by h^2
        assert out.var() == pytest.approx(chain.var() + h[0] ** 2, rel=0.10)

    def test_small_bandwidth_concentrates_on_support(self):
        rng = np.random.default_rng(7)
        chain = rng.normal(size=(50, 1))
        chains = SubchainSet.from_chains([chain, chain.copy()])
        out = kde_product_sample(chains, [1e-4], n_out=500, n_gibbs_sweeps=2, seed=2)
        dist = np.abs(out - chain[:, 0][None, :]).min(axis=1)
        assert np.all(dist < 1e-2)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        chains = SubchainSet.from_chains([rng.normal(size=(30, 2)) for _ in range(3)])
        a = kde_product_sample(chains, [0.5, 0.5], n_out=100, n_gibbs_sweeps=3, seed=9)
        b = kde_product_sample(chains, [0.5, 0.5], n_out=100, n_gibbs_sweeps=3, seed=9)
        assert np.array_equal(a, b)

    def test_validation(self):
        chains = SubchainSet.from_chains([np.zeros((1, 1))])
        with pytest.raises(ValueError, match="two draws"):
            kde_product_sample(chains, [0.5], n_out=10, n_gibbs_sweeps=1, seed=0)
        two = SubchainSet.from_chains([np.array([[0.0], [1.0]])])
        with pytest.raises(ValueError, match="bandwidth"):
            kde_product_sample(two, [0.0], n_out=10, n_gibbs_sweeps=1, seed=0)
        with pytest.raises(ValueError, match="positive"):
            kde_product_sample(two, [0.5], n_out=0, n_gibbs_sweeps=1, seed=0)


class TestGibbsInvariantDistribution:
    def test_index_frequencies_match_enumeration(self):
        # two shards, three kernels each: enumerate all nine index vectors
        chains = SubchainSet.from_chains(
            [np.array([[0.0], [1.0], [2.0]]), np.array([[0.5], [1.5], [2.5]])]
        )
        h = [0.8]
        visited = kde_product_indices(chains, h, n_sweeps=1_000_000, seed=5)

        exact = {}
        for pair in itertools.product(range(3), repeat=2):
            sel = np.array([chains.chains[0, pair[0], 0], chains.chains[1, pair[1], 0]])
            m = sel.mean()
            exact[pair] = math.exp(-float(((sel - m) ** 2).sum()) / (2 * h[0] ** 2))
        z = sum(exact.values())

        for pair, weight in exact.items():
            emp = np.mean(np.all(visited == pair, axis=1))
            assert abs(emp - weight / z) < 0.01

    def test_log_weight_helper_matches_enumeration_formula(self):
        chains = np.random.default_rng(10).normal(size=(3, 4, 2))
        h = [0.7, 1.3]
        sel = chains[np.arange(3), [1, 0, 3]]
        m = sel.mean(axis=0)
        expected = -float(np.sum((sel - m) ** 2 / (2 * np.asarray(h) ** 2)))
        assert product_mixture_log_weight(chains, h, [1, 0, 3]) == pytest.approx(expected, rel=1e-12)
