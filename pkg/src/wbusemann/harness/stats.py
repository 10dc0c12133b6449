"""Correlation statistics and the pair bootstrap."""
import numpy as np
from scipy.stats import rankdata

from .._rng import substream
from ..errors import DomainError


def _pair(x, y):
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size < 2:
        raise DomainError("need two arrays of equal length >= 2")
    return x, y


def pearson(x, y):
    """Sample Pearson correlation."""
    x, y = _pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise DomainError("correlation undefined for a constant input")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


def spearman(x, y):
    """Spearman rank correlation; ties receive average ranks."""
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))


def bootstrap_correlation(ref, other, n_sets=10, set_size=50, seed=0, stat=spearman):
    """Mean and std of ``stat`` over resampled pair sets (with replacement).

    The distances are reused from the base table; only the pair indices
    are resampled.
    """
    ref, other = _pair(ref, other)
    vals = []
    for s in range(n_sets):
        idx = substream(seed, "bootstrap", s).integers(0, ref.size, set_size)
        try:
            vals.append(stat(ref[idx], other[idx]))
        except DomainError:
            vals.append(np.nan)
    vals = np.array(vals)
    return float(np.nanmean(vals)), float(np.nanstd(vals))
