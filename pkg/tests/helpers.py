"""Shared test oracles, kept independent of the implementation under test."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def batch_means_se(x: np.ndarray, n_batches: int = 40) -> float:
    """Autocorrelation-adjusted standard error of a chain mean."""
    x = np.asarray(x, dtype=float).ravel()
    n = (x.size // n_batches) * n_batches
    batches = x[:n].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / math.sqrt(n_batches))


def mixture_logpdf(x, mean1, mean2, var):
    """Equal two-component Gaussian mixture log density via scipy."""
    a = stats.norm.logpdf(x, loc=mean1, scale=math.sqrt(var))
    b = stats.norm.logpdf(x, loc=mean2, scale=math.sqrt(var))
    return np.logaddexp(a, b) - math.log(2.0)


def exact_w1_sorted(a: np.ndarray, b: np.ndarray) -> float:
    """W1 between equal-size empirical measures via matched order statistics."""
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
