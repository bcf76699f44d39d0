"""Random-walk Metropolis-Hastings with a proposal/log-density byproduct trace.

The sampler records two things: the retained (burned-in, thinned) chain, and
every finite post-burn-in proposal together with its log density.  The trace
is the free byproduct that surrogate regression trains on, so when the chain
targets a scaled density the trace must record the unscaled one; callers pass
that as ``byproduct_log``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

ADAPT_WINDOW = 50
ADAPT_GAIN = 1.0


@dataclass
class MhConfig:
    n_iters: int
    burn_in: int
    thin: int
    step_scale: float | np.ndarray
    init: np.ndarray
    seed: int
    adapt_during_burnin: bool = True

    def __post_init__(self):
        if self.burn_in > self.n_iters or self.burn_in < 0:
            raise ValueError(f"burn_in {self.burn_in} exceeds n_iters {self.n_iters}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if not np.all(np.asarray(self.step_scale) > 0):
            raise ValueError("step_scale must be positive elementwise")


@dataclass
class ChainOutput:
    """Retained samples plus the (proposal, log density) byproduct trace."""

    retained: np.ndarray       # (T, d)
    trace_points: np.ndarray   # (M, d), finite post-burn-in proposals
    trace_values: np.ndarray   # (M,), byproduct log density at those points
    acceptance_rate: float

    @property
    def trace(self) -> list[tuple[np.ndarray, float]]:
        return [(p, float(v)) for p, v in zip(self.trace_points, self.trace_values)]


def adapt_step(step_scale, acceptance_history, target_rate: float):
    """Multiplicative step update pushing acceptance toward the target rate.

    Strictly increases the step under sustained acceptance, strictly decreases
    it (but never to zero) under sustained rejection, and is a fixed point
    when the observed rate equals the target.
    """
    rate = float(np.mean(acceptance_history))
    return np.asarray(step_scale, dtype=float) * math.exp(ADAPT_GAIN * (rate - target_rate))


def thin_retained(chain, stride: int):
    """Keep entries 0, stride, 2*stride, ... of a retained sequence."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return chain[::stride]


def rwmh(
    log_target: Callable[[np.ndarray], float],
    cfg: MhConfig,
    byproduct_log: Callable[[np.ndarray], float] | None = None,
) -> ChainOutput:
    """Symmetric Gaussian random-walk Metropolis-Hastings.

    Proposes theta + step_scale * z with z standard normal and accepts with
    probability min(1, exp(log_target(proposal) - log_target(current))).
    Off-support (-inf) proposals are rejected and kept out of the trace.
    The step scale adapts only during burn-in (target acceptance 0.44 in one
    dimension, 0.234 otherwise), so the post-burn-in kernel is fixed.

    The random stream consumes one normal vector and one uniform per
    iteration regardless of the target, so two runs with the same config are
    bit-identical and acceptance decisions survive constant shifts of the
    target.
    """
    theta = np.array(cfg.init, dtype=float).ravel()
    d = theta.size
    current = float(log_target(theta))
    if current == -math.inf:
        raise ValueError("initial point off support")

    rng = np.random.default_rng(cfg.seed)
    step = np.broadcast_to(np.asarray(cfg.step_scale, dtype=float), (d,)).copy()
    target_rate = 0.44 if d == 1 else 0.234

    retained: list[np.ndarray] = []
    trace_points: list[np.ndarray] = []
    trace_values: list[float] = []
    window: list[bool] = []
    accepted_post = 0
    proposals_post = 0

    for t in range(1, cfg.n_iters + 1):
        z = rng.standard_normal(d)
        u = rng.random()
        proposal = theta + step * z

        if byproduct_log is None:
            value = float(log_target(proposal))
            proposed = value
        else:
            value = float(byproduct_log(proposal))
            proposed = float(log_target(proposal))

        in_burnin = t <= cfg.burn_in
        if not in_burnin and value > -math.inf:
            trace_points.append(proposal)
            trace_values.append(value)

        diff = proposed - current
        accept = proposed > -math.inf and (diff >= 0 or u < math.exp(diff))
        if accept:
            theta = proposal
            current = proposed

        if in_burnin:
            if cfg.adapt_during_burnin:
                window.append(accept)
                if len(window) == ADAPT_WINDOW:
                    step = adapt_step(step, window, target_rate)
                    window.clear()
        else:
            proposals_post += 1
            accepted_post += accept
            if (t - cfg.burn_in) % cfg.thin == 0:
                retained.append(theta.copy())

    return ChainOutput(
        retained=np.array(retained, dtype=float).reshape(len(retained), d),
        trace_points=np.array(trace_points, dtype=float).reshape(len(trace_points), d),
        trace_values=np.asarray(trace_values, dtype=float),
        acceptance_rate=accepted_post / proposals_post if proposals_post else 0.0,
    )


def shared_evaluation(fn):
    """Wrap fn with a one-point memo so target and byproduct share one call.

    rwmh evaluates the byproduct and the target back to back at the same
    proposal; when the target is a scalar multiple of the byproduct this
    avoids paying for the density twice.
    """
    last_key: bytes | None = None
    last_val: float = 0.0

    def wrapped(theta: np.ndarray) -> float:
        nonlocal last_key, last_val
        key = theta.tobytes()
        if key != last_key:
            last_key = key
            last_val = fn(theta)
        return last_val

    return wrapped


def _format_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def write_samples_csv(path, samples: np.ndarray) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    header = ",".join(f"theta_{j + 1}" for j in range(samples.shape[1]))
    lines = [header] + [_format_row(row) for row in samples]
    Path(path).write_text("\n".join(lines) + "\n")


def read_samples_csv(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("theta_1"):
        raise ValueError(f"{path}: not a sample CSV")
    d = len(lines[0].split(","))
    rows = [[float(v) for v in line.split(",")] for line in lines[1:] if line]
    return np.asarray(rows, dtype=float).reshape(len(rows), d)


def write_trace_csv(path, points: np.ndarray, values: np.ndarray) -> None:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    header = ",".join(f"theta_{j + 1}" for j in range(points.shape[1])) + ",log_gamma"
    lines = [header]
    for row, v in zip(points, values):
        lines.append(_format_row(row) + "," + repr(float(v)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].endswith("log_gamma"):
        raise ValueError(f"{path}: not a trace CSV")
    d = len(lines[0].split(",")) - 1
    pts, vals = [], []
    for line in lines[1:]:
        if not line:
            continue
        parts = [float(v) for v in line.split(",")]
        pts.append(parts[:d])
        vals.append(parts[d])
    return np.asarray(pts, dtype=float).reshape(len(pts), d), np.asarray(vals, dtype=float)
