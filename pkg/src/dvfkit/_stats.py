"""Shared percentile core: smallest value whose cumulative fraction exceeds beta%."""

from __future__ import annotations

import numpy as np

from .errors import EmptyField


def percentile_exact(values: np.ndarray, beta: float) -> float:
    """Upper-bound percentile on a finite sample, by full sort.

    Returns the smallest sample value v with  #{x <= v} / N > beta/100.
    """
    if not 0.0 < beta < 100.0:
        raise ValueError(f"percentile level must be in (0, 100), got {beta}")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptyField("no valid samples to summarize")
    s = np.sort(vals)
    k = int(np.floor(s.size * beta / 100.0))
    return float(s[min(k, s.size - 1)])


def percentile_histogram(values: np.ndarray, beta: float, bins: int = 4096) -> float:
    """Histogram approximation of the same quantity, within one bin width.

    Returns the upper edge of the first bin whose cumulative fraction
    exceeds beta%.
    """
    if not 0.0 < beta < 100.0:
        raise ValueError(f"percentile level must be in (0, 100), got {beta}")
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise EmptyField("no valid samples to summarize")
    lo = float(vals.min())
    hi = float(vals.max())
    if lo == hi:
        return lo
    counts, edges = np.histogram(vals, bins=int(bins), range=(lo, hi))
    cum = np.cumsum(counts) / vals.size
    i = int(np.searchsorted(cum, beta / 100.0, side="right"))
    return float(edges[min(i + 1, len(edges) - 1)])
