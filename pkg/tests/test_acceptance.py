"""Acceptance suite: one test per release criterion, one printed line each.

The expensive experiment runs are shared through module-scoped fixtures;
every run is seed-fixed, so results are reproducible bit for bit.
"""

import itertools
import math
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from forest_dnc.baselines import SubchainSet, kde_product_indices
from forest_dnc.combine import ExactLogDensity, ess, pool, resample, rf_is, rf_is_weights, truncate_weights
from forest_dnc.forest import TrainingSet, train
from forest_dnc.harness import experiment_config, run_experiment
from forest_dnc.metrics import wasserstein1_marginal
from forest_dnc.model import Dataset, log_shard_density, make_model, shard_data
from forest_dnc.rng import derive_seed
from forest_dnc.sampler import MhConfig, rwmh, shared_evaluation

from helpers import batch_means_se

MOON_SEEDS = (0, 1, 2)
MISSPEC_SEEDS = (0, 1, 2)


def report(criterion: str, ok: bool, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}: {criterion} — {detail}")
    return ok


@pytest.fixture(scope="module")
def bimodal_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bimodal")
    start = time.perf_counter()
    doc = run_experiment(experiment_config("bimodal", K=10, seed=0, out_dir=str(out)))
    return doc, time.perf_counter() - start, out


@pytest.fixture(scope="module")
def moon_runs(tmp_path_factory):
    docs = {}
    for seed, K in itertools.product(MOON_SEEDS, (10, 20)):
        out = tmp_path_factory.mktemp(f"moon_{K}_{seed}")
        docs[(seed, K)] = run_experiment(experiment_config("moon", K=K, seed=seed, out_dir=str(out)))
    return docs


@pytest.fixture(scope="module")
def misspec_runs(tmp_path_factory):
    docs = {}
    for seed in MISSPEC_SEEDS:
        out = tmp_path_factory.mktemp(f"misspec_{seed}")
        docs[seed] = run_experiment(experiment_config("misspec", K=10, seed=seed, out_dir=str(out)))
    return docs


class TestBimodality:
    def test_criterion_bimodality(self, bimodal_run):
        doc, runtime, _ = bimodal_run
        mm = doc["mode_mass"]
        rfis_ok = all(m >= 0.10 for m in mm["rfis"])
        cmc_ok = any(m < 0.05 for m in mm["cmc"])
        time_ok = runtime <= 600.0
        detail = (
            f"rfis mode masses {np.round(mm['rfis'], 3).tolist()} (need each >= 0.10); "
            f"cmc {np.round(mm['cmc'], 4).tolist()} (need one < 0.05); runtime {runtime:.0f}s <= 600s"
        )
        report("bimodality (K=10, seed 0)", rfis_ok and cmc_ok and time_ok, detail)
        assert rfis_ok, f"RF-IS mode masses {mm['rfis']} fall below 10%"
        assert time_ok, f"runtime {runtime:.0f}s exceeds 10 minutes"
        assert cmc_ok, (
            f"CMC mode masses {mm['cmc']} never drop below 5%: consensus averaging of freely "
            f"mode-hopping shard chains yields a central cloud whose tails keep ~20% of mass "
            f"within 0.75 of each mode (see decisions ledger)"
        )


class TestTimingTableStructure:
    def test_timing_rows_and_cost_ordering(self, bimodal_run):
        # wall-clock values are machine-dependent; only the row structure and
        # the qualitative ordering (the KDE-product combination dominating at
        # this draw count) are checked
        import json

        _, _, out = bimodal_run
        timing = json.loads((out / "timing.json").read_text())
        assert set(timing) == {"rfis", "rfmh", "cmc", "nonpara", "oracle"}
        assert set(timing["rfis"]) == {"mcmc", "training", "weighting", "total"}
        assert set(timing["cmc"]) == {"mcmc", "combination", "total"}
        ordering_ok = timing["nonpara"]["combination"] > timing["cmc"]["combination"]
        report(
            "timing table structure",
            ordering_ok,
            f"nonpara combination {timing['nonpara']['combination']:.2f}s vs "
            f"cmc {timing['cmc']['combination']:.2f}s",
        )
        assert ordering_ok


class TestMoonSuperiority:
    def test_criterion_moon_w1(self, moon_runs):
        rows = []
        ok = True
        for (seed, K), doc in moon_runs.items():
            w = {m: doc["wasserstein1"][m]["sum"] for m in ("rfis", "cmc", "nonpara")}
            strict = w["rfis"] < w["cmc"] and w["rfis"] < w["nonpara"]
            ok &= strict
            rows.append(f"seed {seed} K={K}: rfis {w['rfis']:.5f} vs cmc {w['cmc']:.5f}, nonpara {w['nonpara']:.5f}")
        report("moon W1 superiority (K=10,20 x 3 seeds)", ok, "; ".join(rows))
        assert ok, "RF-IS W1 sum not strictly smallest in some run:\n" + "\n".join(rows)


class TestMisspecRobustness:
    def test_criterion_misspec_w1(self, misspec_runs):
        rows = []
        ok = True
        for seed, doc in misspec_runs.items():
            rfis = doc["wasserstein1"]["rfis"]["sum"]
            cmc = doc["wasserstein1"]["cmc"]["sum"]
            lam_max = max(doc["lambdas"])
            ok &= rfis <= cmc
            rows.append(f"seed {seed}: rfis {rfis:.4f} <= cmc {cmc:.4f}; max lambda {lam_max:.4f}")
        report("misspecification robustness (lognormal, 3 seeds)", ok, "; ".join(rows))
        # informational, not asserted: the scale rule shrinks all factors below 1
        assert ok, "RF-IS W1 sum exceeded CMC's on lognormal data:\n" + "\n".join(rows)


class TestOracleEquivalence:
    def test_criterion_oracle_equivalence(self):
        start = time.perf_counter()
        model = make_model("gaussian_known_var", prior_mean=0.0, prior_sd=10.0, lik_var=1.0)
        data = model.sample(np.random.default_rng(derive_seed(0, "data")), 1_000, np.array([0.5]))
        shards = shard_data(data, 5, derive_seed(0, "shard"), model=model)
        post_mean, post_var = model.posterior(data)

        chains = []
        for s in shards:
            base = shared_evaluation(lambda th, s=s: log_shard_density(s, th))
            out = rwmh(
                base,
                MhConfig(n_iters=30_000, burn_in=5_000, thin=5, step_scale=0.2,
                         init=np.array([float(data.observations.mean())]),
                         seed=derive_seed(0, f"chain:{s.k}")),
            )
            chains.append(out)
        retained = [c.retained for c in chains]
        lambdas = [1.0] * 5

        exact = [ExactLogDensity(s) for s in shards]
        pooled_exact, per_shard = rf_is(retained, exact, lambdas, p=0.999)
        forests = [
            train(TrainingSet(c.trace_points, c.trace_values), n_trees=10, min_leaf=5,
                  subsample_size=10_000, seed=derive_seed(0, f"forest:{k}"))
            for k, c in enumerate(chains)
        ]
        pooled_forest, _ = rf_is(retained, forests, lambdas, p=0.999)

        mean_exact = float(pooled_exact.weights @ pooled_exact.thetas[:, 0])
        var_exact = float(pooled_exact.weights @ (pooled_exact.thetas[:, 0] - mean_exact) ** 2)
        se = math.sqrt(post_var / sum(a.ess for a in per_shard))

        reference = stats.norm.ppf(
            (np.arange(20_000) + 0.5) / 20_000, loc=post_mean, scale=math.sqrt(post_var)
        )[:, None]
        w1_exact = wasserstein1_marginal(
            resample(pooled_exact, 20_000, derive_seed(0, "r1")), reference
        )
        w1_forest = wasserstein1_marginal(
            resample(pooled_forest, 20_000, derive_seed(0, "r2")), reference
        )
        runtime = time.perf_counter() - start

        mean_ok = abs(mean_exact - post_mean) < 3 * se
        var_ok = abs(var_exact / post_var - 1.0) <= 0.10
        degrade_ok = w1_forest <= 2.0 * w1_exact
        time_ok = runtime <= 120.0
        detail = (
            f"exact-density pipeline mean err {abs(mean_exact - post_mean):.2e} (3SE {3 * se:.2e}), "
            f"var ratio {var_exact / post_var:.3f}; W1 forest/exact {w1_forest:.2e}/{w1_exact:.2e} "
            f"= {w1_forest / w1_exact:.2f}x (<= 2x); runtime {runtime:.0f}s <= 120s"
        )
        report("oracle equivalence (conjugate, N=1000, K=5)", mean_ok and var_ok and degrade_ok and time_ok, detail)
        assert mean_ok and var_ok and degrade_ok and time_ok, detail


class TestInvariantSuites:
    def test_criterion_invariants(self):
        checks = {}

        # sharding is a partition
        data = Dataset(np.arange(300, dtype=float))
        shards = shard_data(data, 6, seed=0)
        seen = sorted(int(v) for s in shards for v in s.data.observations)
        checks["sharding partition"] = seen == list(range(300)) and all(s.data.n == 50 for s in shards)

        # chain determinism and Gaussian-target moments
        cfg = MhConfig(n_iters=40_000, burn_in=4_000, thin=1, step_scale=2.4,
                       init=np.array([0.0]), seed=3, adapt_during_burnin=False)
        target = lambda th: float(-0.5 * th[0] ** 2)
        a, b = rwmh(target, cfg), rwmh(target, cfg)
        x = a.retained[:, 0]
        checks["chain determinism"] = np.array_equal(a.retained, b.retained)
        checks["chain gaussian moments"] = (
            abs(x.mean()) < 3 * batch_means_se(x) and abs(x.var() - 1.0) < 0.10
        )

        # forest prediction bounds and singleton-leaf exactness
        rng = np.random.default_rng(7)
        X, y = rng.normal(size=(500, 2)), rng.normal(size=500)
        f1 = train(TrainingSet(X, y), n_trees=1, min_leaf=1, seed=0)
        f5 = train(TrainingSet(X, y), n_trees=5, min_leaf=5, seed=0)
        probes = rng.normal(scale=4.0, size=(200, 2))
        preds = f5.predict_batch(probes)
        checks["forest prediction bounds"] = bool(np.all(preds >= y.min()) and np.all(preds <= y.max()))
        checks["forest singleton exactness"] = np.array_equal(f1.predict_batch(X), y)

        # weight shift invariance
        forests = [train(TrainingSet(X, y), n_trees=3, min_leaf=5, seed=s) for s in range(3)]
        samples = rng.normal(size=(50, 2))
        base_w = rf_is_weights(samples, forests, 0.7, 1)
        shifted = [train(TrainingSet(X, y), n_trees=3, min_leaf=5, seed=s) for s in range(3)]
        for g in shifted:
            g.value += 77.0
        checks["weight shift invariance"] = np.allclose(
            base_w, rf_is_weights(samples, shifted, 0.7, 1), atol=1e-12
        )

        # truncation monotone in p, ESS bounds
        w = rng.random(200)
        w /= w.sum()
        sizes = [truncate_weights(w, p)[0] for p in (0.5, 0.9, 0.99, 0.999, 1.0)]
        checks["truncation monotone in p"] = sizes == sorted(sizes) and sizes[-1] == 200
        ess_ok = True
        for p in (0.5, 0.9, 0.999):
            i_k, kept, kw = truncate_weights(w, p)
            from forest_dnc.combine import WeightedAtoms

            atoms = WeightedAtoms(thetas=np.arange(i_k, dtype=float)[:, None], weights=kw)
            e = ess(atoms)
            ess_ok &= 1.0 - 1e-9 <= e <= i_k + 1e-9
        checks["ess bounds"] = ess_ok

        # pool permutation invariance
        from forest_dnc.combine import WeightedAtoms

        parts = []
        for k in range(3):
            pw = rng.random(4)
            parts.append(
                WeightedAtoms(thetas=rng.normal(size=(4, 2)), weights=pw / pw.sum(),
                              ess=float(rng.uniform(1, 4)), source_shard=np.full(4, k + 1))
            )
        fwd, rev = pool(parts), pool(parts[::-1])
        of, orv = np.lexsort(fwd.thetas.T), np.lexsort(rev.thetas.T)
        checks["pool permutation invariance"] = np.allclose(fwd.weights[of], rev.weights[orv])

        # KDE-product Gibbs frequencies vs brute-force enumeration (T=3, K=2)
        chains = SubchainSet.from_chains([np.array([[0.0], [1.0], [2.0]]), np.array([[0.5], [1.5], [2.5]])])
        visited = kde_product_indices(chains, [0.8], n_sweeps=1_000_000, seed=5)
        worst = 0.0
        for pair in itertools.product(range(3), repeat=2):
            sel = np.array([chains.chains[0, pair[0], 0], chains.chains[1, pair[1], 0]])
            m = sel.mean()
            exact = math.exp(-float(((sel - m) ** 2).sum()) / (2 * 0.8**2))
            worst = max(worst, abs(float(np.mean(np.all(visited == pair, axis=1))) - exact / _z(chains)))
        checks["kde gibbs vs enumeration"] = worst < 0.01

        ok = all(checks.values())
        report("invariant suites", ok, "; ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))
        assert ok, checks


def _z(chains):
    total = 0.0
    for pair in itertools.product(range(3), repeat=2):
        sel = np.array([chains.chains[0, pair[0], 0], chains.chains[1, pair[1], 0]])
        m = sel.mean()
        total += math.exp(-float(((sel - m) ** 2).sum()) / (2 * 0.8**2))
    return total


class TestPredictionCostBenchmark:
    def test_criterion_prediction_cost(self):
        rng = np.random.default_rng(0)

        def mean_predict_time(m):
            X = rng.uniform(-1, 1, size=(m, 2))
            f = train(TrainingSet(X, 3 * X[:, 0] + X[:, 1] ** 2), n_trees=10, min_leaf=5, seed=1)
            probes = rng.uniform(-1, 1, size=(2_000, 2))
            f.predict(probes[0])  # warm up
            start = time.perf_counter()
            for p in probes:
                f.predict(p)
            return (time.perf_counter() - start) / probes.shape[0]

        t_small = mean_predict_time(10_000)
        t_large = mean_predict_time(40_000)
        factor = t_large / t_small
        ok = factor < 2.5
        report(
            "prediction cost growth (M=1e4 -> 4e4)",
            ok,
            f"mean predict {t_small * 1e6:.1f}us -> {t_large * 1e6:.1f}us, factor {factor:.2f} (soft bound 2.5)",
        )
        if not ok:
            warnings.warn(f"prediction-time factor {factor:.2f} exceeds 2.5 (soft criterion)")


class TestEndToEndDeterminism:
    def test_criterion_determinism(self, tmp_path):
        outputs = {}
        for name in ("first", "second"):
            out = tmp_path / name
            cfg = experiment_config("bimodal", K=10, seed=0, out_dir=str(out))
            cfg = replace(cfg, n_iters=5_000, burn_in=1_000, thin=5, oracle_n_iters=8_000,
                          oracle_burn_in=2_000, oracle_thin=5, subsample_size=2_000,
                          resample_size=500)
            run_experiment(cfg)
            outputs[name] = {
                p.name: p.read_bytes()
                for p in sorted(out.iterdir())
                if p.name == "metrics.json" or (p.name.startswith("samples_") and p.suffix == ".csv")
            }
        ok = outputs["first"] == outputs["second"]
        report("end-to-end determinism", ok, f"{len(outputs['first'])} files byte-compared")
        assert ok
