"""Synthetic inputs for tests and the benchmark harness.

Real temporal datasets from production simulations run to many gigabytes,
so the test suite works against three reproducible stand-ins: a
multiplicative drift series, a multimodal change-ratio mixture (for
comparing binning strategies), and a planted-outlier pair (for checking
incompressible-ratio accounting).
"""

from __future__ import annotations

import numpy as np


def temporal_series(
    n: int,
    steps: int,
    seed: int = 0,
    dtype: str = "f4",
    growth_lo: float = 0.002,
    growth_hi: float = 0.012,
) -> list[np.ndarray]:
    """Multiplicative drift chain: every element grows by a per-step factor
    drawn from ``[1 + growth_lo, 1 + growth_hi]``.

    Values start in [1, 2) and stay strictly positive, so change ratios are
    always well-defined and positive.
    """
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    snaps = [rng.uniform(1.0, 2.0, n).astype(dt)]
    for _ in range(steps):
        factors = rng.uniform(1.0 + growth_lo, 1.0 + growth_hi, n)
        snaps.append((snaps[-1].astype(np.float64) * factors).astype(dt))
    return snaps


def multimodal_pair(
    n: int,
    seed: int = 0,
    dtype: str = "f8",
    background: float = 0.01,
):
    """Pair whose change ratios form a multimodal mixture.

    A handful of tight modes at assorted magnitudes and signs sit on a thin
    uniform background, which is the regime where histogram-driven center
    selection shines and range-splitting strategies struggle.
    """
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    modes = np.array([-0.6, 0.002, 0.31, 0.9, 2.4])
    weights = np.array([0.15, 0.25, 0.25, 0.20, 0.15])
    sigma = 2e-4

    n_bg = int(n * background)
    n_modes = n - n_bg
    which = rng.choice(len(modes), size=n_modes, p=weights / weights.sum())
    deltas = modes[which] + rng.normal(0.0, sigma, n_modes)
    bg = rng.uniform(-1.0, 3.0, n_bg)
    delta = np.concatenate([deltas, bg])
    rng.shuffle(delta)

    base = rng.uniform(1.0, 2.0, n)
    current = base * (1.0 + delta)
    return base.astype(dt), current.astype(dt)


def planted_outlier_pair(
    n: int,
    seed: int = 0,
    outlier_fraction: float = 0.02,
    tolerance: float = 1e-3,
    dtype: str = "f8",
):
    """Pair with a tight ratio cluster plus far, pairwise-distant outliers.

    Outlier ratios are spread so widely that each lands in its own histogram
    bin, leaving them uncovered by any small top-k selection.
    """
    rng = np.random.default_rng(seed)
    dt = np.dtype(dtype)
    n_out = int(round(n * outlier_fraction))
    delta = rng.uniform(-tolerance / 2, tolerance / 2, n)
    out_pos = rng.choice(n, size=n_out, replace=False)
    delta[out_pos] = rng.uniform(1e3, 1e6, n_out)
    base = rng.uniform(1.0, 2.0, n)
    current = base * (1.0 + delta)
    return base.astype(dt), current.astype(dt)
