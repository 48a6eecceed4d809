"""Distribution metrics used to judge generative recovery of action sets."""

from __future__ import annotations

import numpy as np

Array = np.ndarray


def _pairwise_mean_distance(x: Array, y: Array) -> float:
    d2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return float(np.mean(np.sqrt(np.maximum(d2, 0.0))))


def energy_distance(x: Array, y: Array, max_points: int = 2000, seed: int = 0) -> float:
    """Energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'|; zero iff laws agree.

    Subsamples each set to ``max_points`` with a fixed seed so the cost of
    the all-pairs distance matrices stays bounded and the value is
    reproducible.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    rng = np.random.default_rng(seed)
    if x.shape[0] > max_points:
        x = x[rng.choice(x.shape[0], size=max_points, replace=False)]
    if y.shape[0] > max_points:
        y = y[rng.choice(y.shape[0], size=max_points, replace=False)]
    return (
        2.0 * _pairwise_mean_distance(x, y)
        - _pairwise_mean_distance(x, x)
        - _pairwise_mean_distance(y, y)
    )


def mode_coverage(samples: Array, centers: Array, radius: float) -> int:
    """Number of centers that have at least one sample within ``radius``."""
    samples = np.atleast_2d(samples)
    centers = np.atleast_2d(centers)
    d2 = np.sum((samples[:, None, :] - centers[None, :, :]) ** 2, axis=-1)
    hit = (d2 <= radius * radius).any(axis=0)
    return int(hit.sum())


def ks_statistic(samples: Array, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a CDF."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.shape[0]
    theory = cdf(x)
    upper = np.arange(1, n + 1) / n - theory
    lower = theory - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))
