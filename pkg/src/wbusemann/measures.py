"""Probability measure containers, quantiles, moments and dataset I/O.

All containers are immutable: arrays are copied on construction and
flagged read-only, so instances can be shared freely between threads.
"""
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import DatasetError, DomainError, InvalidMeasureError

WEIGHT_TOL = 1e-12
SYM_TOL = 1e-10
#: covariances whose smallest eigenvalue falls below this get jittered
JITTER_TRIGGER = 1e-12
JITTER_REL = 1e-9


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _check_weights(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise InvalidMeasureError(f"expected {n} weights, got {w.shape[0]}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidMeasureError("weights must be finite and non-negative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL * max(1, n):
        raise InvalidMeasureError(f"weights sum to {w.sum()!r}, expected 1")
    return w


@dataclass(frozen=True, eq=False)
class Discrete1D:
    """Weighted atoms on the real line, stored in sorted order."""

    values: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.values, dtype=float).reshape(-1)
        if x.size == 0:
            raise InvalidMeasureError("empty measure")
        if not np.all(np.isfinite(x)):
            raise InvalidMeasureError("atoms must be finite")
        w = _check_weights(self.weights, x.size)
        order = np.argsort(x, kind="stable")
        object.__setattr__(self, "values", _frozen(x[order]))
        object.__setattr__(self, "weights", _frozen(w[order]))

    @property
    def n(self):
        return self.values.size

    def mean(self):
        return float(self.weights @ self.values)

    def second_moment(self):
        return float(self.weights @ self.values**2)

    def cumulative(self):
        """Right end-points of the quantile cells; the last one is exactly 1."""
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c

    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def __repr__(self):
        return f"Discrete1D(n={self.n}, mean={self.mean():.4g})"


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted point cloud in R^d."""

    points: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0:
            raise InvalidMeasureError("points must be a non-empty n x d array")
        if not np.all(np.isfinite(x)):
            raise InvalidMeasureError("points must be finite")
        object.__setattr__(self, "points", _frozen(x))
        object.__setattr__(self, "weights", _frozen(_check_weights(self.weights, x.shape[0])))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def to_1d(self):
        if self.dim != 1:
            raise DomainError("measure is not one-dimensional")
        return Discrete1D(self.points[:, 0], self.weights)


def jitter_covariance(cov):
    """Add ``eps * I`` when ``cov`` is numerically singular.

    ``eps = 1e-9 * trace(cov) / d``, falling back to ``1e-9`` for a zero
    matrix.  Returns the input untouched when it is comfortably definite.
    """
    d = cov.shape[0]
    lo = np.linalg.eigvalsh(cov)[0]
    if lo >= JITTER_TRIGGER:
        return cov
    scale = np.trace(cov) / d
    eps = JITTER_REL * (scale if scale > 0 else 1.0)
    return cov + eps * np.eye(d)


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """``N(mean, cov)`` with a symmetric positive-definite covariance."""

    mean: np.ndarray
    cov: np.ndarray
    jitter: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float)).reshape(-1)
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = m.size
        if c.shape != (d, d):
            raise InvalidMeasureError(f"covariance shape {c.shape} does not match mean dimension {d}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(c))):
            raise InvalidMeasureError("non-finite Gaussian parameters")
        scale = max(1.0, float(np.abs(c).max()))
        if np.abs(c - c.T).max() > SYM_TOL * scale:
            raise InvalidMeasureError("covariance is not symmetric")
        c = 0.5 * (c + c.T)
        if self.jitter:
            c = jitter_covariance(c)
        if np.linalg.eigvalsh(c)[0] <= 0:
            raise InvalidMeasureError("covariance is not positive definite")
        object.__setattr__(self, "mean", _frozen(m))
        object.__setattr__(self, "cov", _frozen(c))

    @classmethod
    def from_1d(cls, m, sigma):
        if sigma <= 0:
            raise InvalidMeasureError("standard deviation must be positive")
        return cls([m], [[sigma * sigma]])

    @property
    def dim(self):
        return self.mean.size

    @property
    def std(self):
        """Standard deviation of a one-dimensional Gaussian."""
        if self.dim != 1:
            raise DomainError("std is only defined for 1D Gaussians")
        return math.sqrt(self.cov[0, 0])

    def sample(self, n, rng):
        return rng.multivariate_normal(self.mean, self.cov, size=n, method="eigh")

    def to_dict(self):
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidMeasureError("mixture needs at least one component")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise InvalidMeasureError("mixture components have different dimensions")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", _frozen(_check_weights(self.weights, len(comps))))

    @classmethod
    def from_arrays(cls, weights, means, covs):
        return cls(weights, [GaussianMeasure(m, c) for m, c in zip(means, covs)])

    @property
    def k(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def means(self):
        return np.stack([c.mean for c in self.components])

    @property
    def covs(self):
        return np.stack([c.cov for c in self.components])

    def to_dict(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls.from_arrays(data["weights"], data["means"], data["covs"])
        except KeyError as exc:
            raise InvalidMeasureError(f"mixture JSON is missing key {exc}") from None

    def sample(self, n, rng):
        idx = rng.choice(self.k, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for j, comp in enumerate(self.components):
            sel = idx == j
            out[sel] = comp.sample(int(sel.sum()), rng)
        return out, idx


def save_mixture_json(mix, path):
    with open(path, "w") as fh:
        json.dump(mix.to_dict(), fh)


def load_mixture_json(path):
    with open(path) as fh:
        return GaussianMixture.from_dict(json.load(fh))


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Features with contiguous integer labels ``1..C``."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DatasetError("features must be a non-empty n x d array")
        if y.shape != (x.shape[0],):
            raise DatasetError(f"{y.shape[0] if y.ndim else 0} labels for {x.shape[0]} rows")
        if not np.all(np.isfinite(x)):
            bad = int(np.nonzero(~np.all(np.isfinite(x), axis=1))[0][0])
            raise DatasetError("non-finite feature", row=bad)
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise DatasetError("labels must be integers")
        y = y.astype(np.int64)
        present = np.unique(y)
        c = int(present.size)
        if present[0] != 1 or present[-1] != c:
            raise DatasetError(f"labels must be contiguous from 1 to C, found {present.tolist()}")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y, np.int64))
        index = tuple(_frozen(np.nonzero(y == k)[0], np.int64) for k in range(1, c + 1))
        object.__setattr__(self, "_class_index", index)

    @classmethod
    def from_arrays(cls, features, raw_labels):
        """Remap arbitrary integer labels to ``1..C`` by first appearance."""
        raw = np.asarray(raw_labels).reshape(-1)
        mapping = {}
        y = np.empty(raw.size, dtype=np.int64)
        for i, v in enumerate(raw.tolist()):
            y[i] = mapping.setdefault(v, len(mapping) + 1)
        return cls(features, y)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return len(self._class_index)

    @property
    def class_index(self):
        return self._class_index

    def class_sizes(self):
        return np.array([ix.size for ix in self._class_index])

    def subset(self, rows):
        rows = np.asarray(rows)
        return LabeledDataset.from_arrays(self.features[rows], self.labels[rows])


def quantile_eval(m, u):
    """Left-continuous quantile of a 1D measure at ``u`` in (0, 1].

    Works for :class:`Discrete1D` and one-dimensional
    :class:`GaussianMeasure`; ``u`` may be an array.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0)) or np.any(u_arr > 1):
        raise DomainError("quantile level must lie in (0, 1]")
    if isinstance(m, Discrete1D):
        idx = np.searchsorted(m.cumulative(), u_arr, side="left")
        out = m.values[np.minimum(idx, m.n - 1)]
    elif isinstance(m, GaussianMeasure):
        out = m.mean[0] + m.std * ndtri(u_arr)
    else:
        raise DomainError(f"no quantile function for {type(m).__name__}")
    return float(out) if out.ndim == 0 else out


def gaussian_moments(m):
    """Gaussian with the weighted mean and population covariance of ``m``."""
    if isinstance(m, Discrete1D):
        m = EmpiricalMeasure(m.values[:, None], m.weights)
    x, w = m.points, m.weights
    mean = w @ x
    xc = x - mean
    cov = (xc * w[:, None]).T @ xc
    return GaussianMeasure(mean, cov)


def class_conditional(data, y):
    """Uniform empirical measure over the rows of class ``y``."""
    if not (1 <= int(y) <= data.n_classes):
        raise DomainError(f"unknown class {y}; dataset has classes 1..{data.n_classes}")
    return EmpiricalMeasure(data.features[data.class_index[int(y) - 1]])


def load_dataset_csv(path, delimiter=","):
    """Read ``f0,...,f{d-1},label`` rows (header required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty file") from None
        if len(header) < 2:
            raise DatasetError("need at least one feature column and a label column", row=1)
        d = len(header) - 1
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d + 1:
                raise DatasetError(f"expected {d + 1} columns, got {len(row)}", row=lineno)
            try:
                vals = [float(c) for c in row[:d]]
            except ValueError:
                raise DatasetError("unparseable feature value", row=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError("NaN or infinite feature value", row=lineno)
            try:
                lab = int(row[d].strip())
            except ValueError:
                raise DatasetError(f"label {row[d]!r} is not an integer", row=lineno) from None
            feats.append(vals)
            labels.append(lab)
    if not feats:
        raise DatasetError("no data rows")
    return LabeledDataset.from_arrays(np.array(feats), labels)


def save_dataset_csv(data, path, delimiter=","):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow([f"f{j}" for j in range(data.dim)] + ["label"])
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])
