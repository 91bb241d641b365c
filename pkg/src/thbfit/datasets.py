"""Synthetic test data and graded initial grids."""

from __future__ import annotations

import numpy as np

PEAK_CENTER = (0.3, -0.3)


def peak(X) -> np.ndarray:
    """2 / (3 exp((10x - 3)^2 + (10y + 3)^2)), a sharp bump at (0.3, -0.3)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return 2.0 / (3.0 * np.exp((10 * X[:, 0] - 3) ** 2 + (10 * X[:, 1] + 3) ** 2))


def peak_samples(n: int = 16000, seed: int = 0, lo=(-1.0, -1.0), hi=(1.0, 1.0)):
    """``n`` uniformly random sites in the box and their peak values."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(n, 2))
    return X, peak(X)


def graded_breaks(lo: float, hi: float, cells: int, center: float, width: float, strength: float):
    """Breakpoints whose density is ``1 + strength * exp(-((x - center) / width)^2)``.

    The cumulative density is inverted on a fine grid, so the result is
    monotone with exact end points.
    """
    if cells < 1:
        raise ValueError("need at least one cell")
    x = np.linspace(lo, hi, 20001)
    dens = 1.0 + strength * np.exp(-(((x - center) / width) ** 2))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    b = np.interp(np.linspace(0.0, 1.0, cells + 1), cdf, x)
    b[0], b[-1] = lo, hi
    return b
