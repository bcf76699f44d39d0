"""Experiment orchestration: data, shards, chains, surrogates, recombination,
baselines, the full-data oracle chain, metrics, timing, and file emission.

A run is reproducible byte for byte from its master seed: every random
stage draws from a labeled stream, floats are written with repr, and the
deterministic outputs (sample CSVs, metrics.json) never mix in wall-clock
numbers, which live in timing.json/timing.txt instead.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import baselines, combine, forest, metrics, model as models, sampler
from .rng import derive_rng, derive_seed

METHODS = ("rfis", "rfmh", "cmc", "nonpara", "oracle")
TIMING_STAGES = ("mcmc", "training", "weighting", "combination")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str, timings: dict | None = None, key: str | None = None):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    if timings is not None:
        timings[key or name] = timings.get(key or name, 0.0) + time.perf_counter() - start


@dataclass
class ExperimentConfig:
    """Everything a run needs; round-trips through a key = value text file."""

    experiment: str = "bimodal"
    model: str = "bimodal"
    N: int = 200
    K: int = 10
    true_theta: list = field(default_factory=lambda: [0.0, 1.0])
    data_dist: str = "model"  # "model" | "standard_normal" | "lognormal"
    variance_convention: str = "variance"
    lambda_method: str = "fixed"  # "fixed" | "mle_markov"
    lambda_fixed: float = 1.0
    n_iters: int = 50_000
    burn_in: int = 10_000
    thin: int = 10
    step_scale: float = 0.5
    oracle_n_iters: int = 200_000
    oracle_burn_in: int = 20_000
    oracle_thin: int = 20
    n_trees: int = 10
    min_leaf: int = 5
    subsample_size: int = 10_000
    truncation_p: float = 0.99
    resample_size: int = 4_000
    nonpara_sweeps: int = 5
    master_seed: int = 0
    out_dir: str = "out"
    workers: int = 0  # 0 = one per shard up to the CPU count

    def to_text(self) -> str:
        lines = [f"{key} = {json.dumps(value)}" for key, value in asdict(self).items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        fields = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            fields[key.strip()] = json.loads(value.strip())
        return cls(**fields)


EXPERIMENTS = {
    "bimodal": dict(
        model="bimodal", N=200, true_theta=[0.0, 1.0], data_dist="model",
        lambda_method="fixed", step_scale=0.5,
        mode_centers=[[0.0, 1.0], [1.0, -1.0]], mode_radius=0.75,
    ),
    "moon": dict(
        model="moon", N=1000, true_theta=[0.0, 0.0], data_dist="standard_normal",
        lambda_method="fixed", step_scale=0.05,
        mode_centers=None, mode_radius=None,
    ),
    "misspec": dict(
        model="gaussian", N=10_000, true_theta=[0.0, 1.0], data_dist="lognormal",
        lambda_method="mle_markov", step_scale=0.5,
        mode_centers=None, mode_radius=None,
    ),
}


def experiment_config(
    experiment: str,
    K: int | None = None,
    seed: int = 0,
    out_dir: str = "out",
    paper_scale: bool = False,
    data_dist: str | None = None,
) -> ExperimentConfig:
    """Preset configuration for one of the built-in experiments.

    Desk-scale budgets keep a full run in the minutes range; --paper-scale
    restores the full-size budgets.
    """
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {sorted(EXPERIMENTS)}")
    preset = EXPERIMENTS[experiment]
    cfg = ExperimentConfig(
        experiment=experiment,
        model=preset["model"],
        N=preset["N"],
        K=K if K is not None else 10,
        true_theta=list(preset["true_theta"]),
        data_dist=data_dist if data_dist is not None else preset["data_dist"],
        lambda_method=preset["lambda_method"],
        step_scale=preset["step_scale"],
        master_seed=seed,
        out_dir=out_dir,
    )
    if paper_scale:
        lognormal = cfg.data_dist == "lognormal"
        cfg = replace(
            cfg,
            n_iters=500_000,
            burn_in=100_000,
            thin=10 if (experiment == "misspec" and lognormal) else 100,
            subsample_size=50_000,
            oracle_n_iters=500_000,
            oracle_burn_in=100_000,
            oracle_thin=50,
        )
    return cfg


def _build_model(cfg: ExperimentConfig) -> models.Model:
    if cfg.model in ("bimodal", "moon"):
        return models.make_model(cfg.model, variance_convention=cfg.variance_convention)
    return models.make_model(cfg.model)


def synthesize_data(cfg: ExperimentConfig, mdl: models.Model) -> models.Dataset:
    rng = derive_rng(cfg.master_seed, "data")
    if cfg.data_dist == "model":
        return mdl.sample(rng, cfg.N, np.asarray(cfg.true_theta, dtype=float))
    return models.sample_reference_data(cfg.data_dist, cfg.N, rng)


def _chain_init(mdl: models.Model, data: models.Dataset) -> np.ndarray:
    """Data-driven starting point on the model's support."""
    x = data.observations
    mean = float(x.mean()) if x.size else 0.0
    if mdl.name == "bimodal":
        return np.array([mean, 0.0])
    if mdl.name == "moon":
        s = max(mean, 0.0)
        return np.array([(s / 2.0) ** 2, (s / 2.0) ** 2])
    if mdl.name == "gaussian":
        var = float(((x - mean) ** 2).mean()) if x.size else 1.0
        return np.array([mean, max(var, 1e-8)])
    if mdl.name == "gaussian_known_var":
        return np.array([mean])
    raise ValueError(f"no initialization rule for model {mdl.name!r}")


def _run_shard_chain(args) -> sampler.ChainOutput:
    shard, cfg = args
    base = sampler.shared_evaluation(lambda th: models.log_shard_density(shard, th))
    if shard.lam == 1.0:
        return sampler.rwmh(base, cfg)
    return sampler.rwmh(lambda th: shard.lam * base(th), cfg, byproduct_log=base)


def run_shard_chains(shards, mh_cfgs, workers: int) -> list[sampler.ChainOutput]:
    """Run one chain per shard, concurrently; output order follows shard order."""
    jobs = list(zip(shards, mh_cfgs))
    if workers == 0:
        workers = min(len(jobs), os.cpu_count() or 1)
    if workers <= 1 or len(jobs) == 1:
        return [_run_shard_chain(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_shard_chain, jobs))


def oracle_full_mcmc(cfg: ExperimentConfig, mdl: models.Model, data: models.Dataset) -> np.ndarray:
    """Long single-machine chain over the complete dataset (the reference measure)."""
    target = lambda th: models.log_full_posterior(mdl, data, th)
    mh = sampler.MhConfig(
        n_iters=cfg.oracle_n_iters,
        burn_in=cfg.oracle_burn_in,
        thin=cfg.oracle_thin,
        step_scale=cfg.step_scale,
        init=_chain_init(mdl, data),
        seed=derive_seed(cfg.master_seed, "oracle"),
    )
    return sampler.rwmh(target, mh).retained


def _lambda_plan(cfg: ExperimentConfig, data: models.Dataset, shards) -> combine.LambdaPlan:
    if cfg.lambda_method == "fixed":
        return combine.LambdaPlan(lambdas=np.full(cfg.K, cfg.lambda_fixed), method="fixed")
    if cfg.lambda_method == "mle_markov":
        full = combine.mle_summary_gaussian(data)
        shard_summaries = [combine.mle_summary_gaussian(s.data) for s in shards]
        return combine.choose_lambda(full, shard_summaries)
    raise ValueError(f"unknown lambda method {cfg.lambda_method!r}")


def write_lambda_plan(path, plan: combine.LambdaPlan) -> None:
    doc = {
        "method": plan.method,
        "lambdas": [float(v) for v in plan.lambdas],
        "per_dim_lambdas": None if plan.per_dim_lambdas is None else [
            [float(v) for v in row] for row in plan.per_dim_lambdas
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_ess_report(path, per_shard) -> None:
    rows = [{"k": int(a.source_shard[0]), "i_k": int(a.size), "ess": float(a.ess)} for a in per_shard]
    Path(path).write_text(json.dumps(rows, indent=2) + "\n")


def write_pooled_atoms(path, pooled: combine.WeightedAtoms) -> None:
    d = pooled.thetas.shape[1]
    header = ",".join(f"theta_{j + 1}" for j in range(d)) + ",weight,source_shard"
    lines = [header]
    source = pooled.source_shard if pooled.source_shard is not None else np.full(pooled.size, -1)
    for row, w, s in zip(pooled.thetas, pooled.weights, source):
        lines.append(",".join(repr(float(v)) for v in row) + f",{float(w)!r},{int(s)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_pooled_atoms(path) -> combine.WeightedAtoms:
    lines = Path(path).read_text().splitlines()
    if not lines or "weight" not in lines[0]:
        raise ValueError(f"{path}: not a pooled atoms CSV")
    d = len(lines[0].split(",")) - 2
    thetas, weights, source = [], [], []
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        thetas.append([float(v) for v in parts[:d]])
        weights.append(float(parts[d]))
        source.append(int(parts[d + 1]))
    return combine.WeightedAtoms(
        thetas=np.asarray(thetas), weights=np.asarray(weights), source_shard=np.asarray(source)
    )


@dataclass
class TimingReport:
    """Per-method wall-clock seconds for each pipeline stage."""

    per_method: dict

    def with_totals(self) -> dict:
        out = {}
        for method, stages in self.per_method.items():
            row = {s: float(v) for s, v in stages.items() if v is not None}
            row["total"] = sum(row.values())
            out[method] = row
        return out


def emit_timing(report: TimingReport, json_path, txt_path) -> None:
    data = report.with_totals()
    Path(json_path).write_text(json.dumps(data, indent=2) + "\n")

    methods = list(data)
    rows = [("stage", *methods)]
    for stage in (*TIMING_STAGES, "total"):
        cells = []
        for m in methods:
            v = data[m].get(stage)
            cells.append("—" if v is None else f"{v:.2f}")
        rows.append((stage, *cells))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    Path(txt_path).write_text("\n".join(lines) + "\n")


def read_timing(json_path) -> dict:
    return json.loads(Path(json_path).read_text())


def emit_metrics(doc: dict, json_path) -> None:
    Path(json_path).write_text(json.dumps(doc, indent=2) + "\n")


def read_metrics(json_path) -> dict:
    return json.loads(Path(json_path).read_text())


def compute_metrics(cfg: ExperimentConfig, samples_by_method: dict, extra: dict | None = None) -> dict:
    """W1-to-oracle per marginal plus mode masses where the experiment defines modes."""
    oracle = samples_by_method["oracle"]
    d = np.atleast_2d(oracle).shape[1]
    doc = {
        "experiment": cfg.experiment,
        "K": cfg.K,
        "master_seed": cfg.master_seed,
        "note": "distances quantify closeness to the oracle full-data chain",
        "wasserstein1": {},
    }
    for method, samples in samples_by_method.items():
        if method == "oracle":
            continue
        per_dim = [metrics.wasserstein1_marginal(samples, oracle, dim=j) for j in range(d)]
        doc["wasserstein1"][method] = {"per_dim": per_dim, "sum": float(sum(per_dim))}
    preset = EXPERIMENTS.get(cfg.experiment, {})
    centers = preset.get("mode_centers")
    if centers is not None:
        radius = preset["mode_radius"]
        doc["mode_mass"] = {
            "centers": centers,
            "radius": radius,
            **{
                method: [float(v) for v in metrics.mode_mass(samples, centers, radius)]
                for method, samples in samples_by_method.items()
            },
        }
    if extra:
        doc.update(extra)
    return doc


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute the full pipeline and emit every artifact under cfg.out_dir.

    Returns the metrics document.  Any failure is re-raised as a StageError
    naming the pipeline stage.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    with _stage("config"):
        (out / "config.txt").write_text(cfg.to_text())
        mdl = _build_model(cfg)

    with _stage("data"):
        data = synthesize_data(cfg, mdl)
        models.write_dataset(
            out / "data.txt",
            data,
            sidecar={"model": cfg.model, "true_theta": list(cfg.true_theta), "seed": cfg.master_seed,
                     "data_dist": cfg.data_dist},
        )

    with _stage("shard"):
        shards = models.shard_data(data, cfg.K, derive_seed(cfg.master_seed, "shard"), model=mdl)

    with _stage("lambda"):
        plan = _lambda_plan(cfg, data, shards)
        write_lambda_plan(out / "lambda_plan.json", plan)
        shards = [s.with_lambda(float(lam)) for s, lam in zip(shards, plan.lambdas)]

    init = _chain_init(mdl, data)

    def shard_mh(seed_label: str, k: int) -> sampler.MhConfig:
        return sampler.MhConfig(
            n_iters=cfg.n_iters,
            burn_in=cfg.burn_in,
            thin=cfg.thin,
            step_scale=cfg.step_scale,
            init=init,
            seed=derive_seed(cfg.master_seed, f"{seed_label}:{k}"),
        )

    with _stage("mcmc", timings, "mcmc_scaled"):
        chains = run_shard_chains(shards, [shard_mh("chain", s.k) for s in shards], cfg.workers)
        for s, ch in zip(shards, chains):
            sampler.write_samples_csv(out / f"chain_k{s.k}.csv", ch.retained)
            sampler.write_trace_csv(out / f"trace_k{s.k}.csv", ch.trace_points, ch.trace_values)

    all_unit = bool(np.all(plan.lambdas == 1.0))
    if all_unit:
        unit_chains = chains
        timings["mcmc_unit"] = timings["mcmc_scaled"]
    else:
        # Baselines are defined on plain (scale 1) subposterior chains.
        with _stage("mcmc", timings, "mcmc_unit"):
            unit_shards = [s.with_lambda(1.0) for s in shards]
            unit_chains = run_shard_chains(
                unit_shards, [shard_mh("chain_unit", s.k) for s in unit_shards], cfg.workers
            )

    with _stage("training", timings):
        forests = []
        for s, ch in zip(shards, chains):
            training = forest.TrainingSet(ch.trace_points, ch.trace_values)
            forests.append(
                forest.train(
                    training,
                    n_trees=cfg.n_trees,
                    min_leaf=cfg.min_leaf,
                    subsample_size=cfg.subsample_size,
                    seed=derive_seed(cfg.master_seed, f"forest:{s.k}"),
                )
            )

    with _stage("weighting", timings):
        retained = [ch.retained for ch in chains]
        pooled, per_shard = combine.rf_is(retained, forests, plan.lambdas, cfg.truncation_p)
        write_pooled_atoms(out / "pooled_atoms.csv", pooled)
        write_ess_report(out / "ess.json", per_shard)
        rfis_samples = combine.resample(pooled, cfg.resample_size, derive_seed(cfg.master_seed, "resample:rfis"))
        sampler.write_samples_csv(out / "samples_rfis.csv", rfis_samples)
        outside = float(np.mean([f.outside_bbox(r).mean() for f in forests for r in retained]))

    with _stage("combination", timings, "combination_rfmh"):
        best_atom = pooled.thetas[int(np.argmax(pooled.weights))]
        atom_spread = np.maximum(pooled.thetas.std(axis=0), 1e-6)
        rfmh_cfg = sampler.MhConfig(
            n_iters=cfg.n_iters,
            burn_in=cfg.burn_in,
            thin=cfg.thin,
            step_scale=atom_spread,
            init=best_atom,
            seed=derive_seed(cfg.master_seed, "rfmh"),
        )
        rfmh_chain = combine.rf_mh(forests, rfmh_cfg, support=mdl.support)
        sampler.write_samples_csv(out / "samples_rfmh.csv", rfmh_chain.retained)
        sampler.write_samples_csv(out / "rfmh_chain.csv", rfmh_chain.retained)

    with _stage("combination", timings, "combination_cmc"):
        subchains = baselines.SubchainSet.from_chains([ch.retained for ch in unit_chains])
        cmc_samples = baselines.consensus_combine(subchains)
        sampler.write_samples_csv(out / "samples_cmc.csv", cmc_samples)

    with _stage("combination", timings, "combination_nonpara"):
        bandwidth = np.mean([baselines.silverman_bandwidth(c) for c in subchains.chains], axis=0)
        nonpara_samples = baselines.kde_product_sample(
            subchains,
            bandwidth,
            n_out=cfg.resample_size,
            n_gibbs_sweeps=cfg.nonpara_sweeps,
            seed=derive_seed(cfg.master_seed, "nonpara"),
        )
        sampler.write_samples_csv(out / "samples_nonpara.csv", nonpara_samples)

    with _stage("oracle", timings):
        oracle_samples = oracle_full_mcmc(cfg, mdl, data)
        sampler.write_samples_csv(out / "samples_oracle.csv", oracle_samples)

    with _stage("metrics"):
        samples_by_method = {
            "rfis": rfis_samples,
            "rfmh": rfmh_chain.retained,
            "cmc": cmc_samples,
            "nonpara": nonpara_samples,
            "oracle": oracle_samples,
        }
        doc = compute_metrics(
            cfg,
            samples_by_method,
            extra={
                "outside_bbox_fraction": outside,
                "lambdas": [float(v) for v in plan.lambdas],
            },
        )
        emit_metrics(doc, out / "metrics.json")

    with _stage("timing"):
        report = TimingReport(
            per_method={
                "rfis": {"mcmc": timings["mcmc_scaled"], "training": timings["training"],
                         "weighting": timings["weighting"]},
                "rfmh": {"mcmc": timings["mcmc_scaled"], "training": timings["training"],
                         "combination": timings["combination_rfmh"]},
                "cmc": {"mcmc": timings["mcmc_unit"], "combination": timings["combination_cmc"]},
                "nonpara": {"mcmc": timings["mcmc_unit"], "combination": timings["combination_nonpara"]},
                "oracle": {"mcmc": timings["oracle"]},
            }
        )
        emit_timing(report, out / "timing.json", out / "timing.txt")

    return doc


def recompute_metrics(out_dir) -> dict:
    """Rebuild metrics.json from the sample CSVs already in a run directory."""
    out = Path(out_dir)
    cfg = ExperimentConfig.from_text((out / "config.txt").read_text())
    samples_by_method = {}
    for method in METHODS:
        path = out / f"samples_{method}.csv"
        if path.exists():
            samples_by_method[method] = sampler.read_samples_csv(path)
    if "oracle" not in samples_by_method:
        raise ValueError(f"{out}: no samples_oracle.csv to compare against")
    extra = {}
    old_path = out / "metrics.json"
    if old_path.exists():
        old = json.loads(old_path.read_text())
        for key in ("outside_bbox_fraction", "lambdas"):
            if key in old:
                extra[key] = old[key]
    doc = compute_metrics(cfg, samples_by_method, extra=extra)
    emit_metrics(doc, old_path)
    return doc
