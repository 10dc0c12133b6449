"""Monte-Carlo sliced distances between labeled datasets and Gaussian mixtures.

Every estimator follows the same pattern: projection ``l`` draws its
randomness from the substream ``(seed, "proj", l)``, maps both inputs to
1D measures, and contributes one squared 1D Wasserstein term.  The
reported value is the square root of the mean term.

Projections are evaluated in fixed-size chunks; chunks may run on a
thread pool, but each chunk's arithmetic and the final reduction do not
depend on the thread count, so results are bit-identical.
"""
import functools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import substream
from .busemann import busemann_bw_standard
from .errors import DomainError
from .measures import Discrete1D, EmpiricalMeasure, LabeledDataset, gaussian_moments
from .ot import otdd_exact, w2sq_sorted_uniform
from .quantiles import normal_quantile_weights
from .rays import (
    sample_bw_direction,
    sample_ray_1d_dirac,
    sample_ray_1d_gaussian,
    sample_sphere,
)

CHUNK = 64

METRICS = ("swb1dg", "swbg", "sotdd", "sw", "b1dgmsw", "bgmsw")


@dataclass(frozen=True, eq=False)
class SlicedEstimate:
    """Monte-Carlo estimate with its per-projection squared terms."""

    value: float
    L: int
    seed: int
    terms: np.ndarray = field(repr=False)
    metric: str = ""

    @property
    def std_error(self):
        """Standard error of ``value`` (delta method on the mean of terms)."""
        if self.L < 2 or self.value == 0:
            return 0.0
        se_sq = float(np.std(self.terms, ddof=1)) / math.sqrt(self.L)
        return se_sq / (2.0 * self.value)

    def to_dict(self):
        return {
            "metric": self.metric,
            "value": self.value,
            "L": self.L,
            "seed": self.seed,
            "std_error": self.std_error,
        }


@dataclass(frozen=True, eq=False)
class ProjectionSpec:
    """One draw of the hierarchical projection ``a1 <theta, x> + a2 Q(y)``."""

    theta: np.ndarray
    alpha: np.ndarray
    ray: object = None
    lambdas: np.ndarray = None

    def __post_init__(self):
        for name in ("theta", "alpha"):
            v = getattr(self, name)
            if v is not None and abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise DomainError(f"{name} must be a unit vector")


# ---------------------------------------------------------------------------
# plumbing


def _estimate(term_fn, L, seed, threads, metric):
    if L < 1:
        raise DomainError("need at least one projection")
    starts = list(range(0, L, CHUNK))
    out = np.empty(L)

    def run(s):
        idx = np.arange(s, min(s + CHUNK, L))
        out[idx] = term_fn(idx)

    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    out = np.maximum(out, 0.0)
    return SlicedEstimate(float(np.sqrt(np.mean(out))), L, int(seed), out, metric)


def _rng(seed, ell):
    return substream(seed, "proj", ell)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@functools.lru_cache(maxsize=512)
def _uniform_normal_weights(n):
    w = normal_quantile_weights(np.arange(n + 1) / n)
    w.setflags(write=False)
    return w


def project_labeled(P, spec, label_proj):
    """1D pushforward ``a1 <theta, x_i> + a2 label_proj[y_i]`` of a dataset."""
    label_proj = np.asarray(label_proj, dtype=float)
    if label_proj.shape != (P.n_classes,):
        raise DomainError(f"need one label scalar per class ({P.n_classes})")
    z = spec.alpha[0] * (P.features @ spec.theta) + spec.alpha[1] * label_proj[P.labels - 1]
    return Discrete1D(z)


class _Grouped:
    """Rows of a dataset ordered by class, for block-wise sorting."""

    def __init__(self, data):
        order = np.argsort(data.labels, kind="stable")
        self.X = np.ascontiguousarray(data.features[order])
        self.labels = data.labels[order] - 1
        sizes = data.class_sizes()
        self.bounds = np.concatenate(([0], np.cumsum(sizes)))
        self.C = data.n_classes
        self.n = data.n

    def blocks(self):
        return zip(self.bounds[:-1], self.bounds[1:])


def _sorted_class_blocks(g, proj):
    """Sort ``proj`` (n x B, class-grouped rows) inside every class block in place."""
    for s, e in g.blocks():
        proj[s:e].sort(axis=0)
    return proj


def _hier_sorted(g, proj, alpha, q):
    z = alpha[:, 0] * proj + alpha[:, 1] * q[g.labels]
    # blocks are already sorted runs, so timsort merges them in O(n log C)
    return np.sort(z, axis=0, kind="stable")


def _check_pair(P, Q):
    if P.dim != Q.dim:
        raise DomainError(f"feature dimensions differ ({P.dim} vs {Q.dim})")


def _draw_alpha(rng, fixed_alpha):
    return sample_sphere(2, rng) if fixed_alpha is None else _unit(fixed_alpha)


# ---------------------------------------------------------------------------
# projection draws (shared with the flow module)


def draw_swb1dg(seed, ell, d, fixed_alpha=None, legacy_sigma=False):
    rng = _rng(seed, ell)
    theta = sample_sphere(d, rng)
    alpha = _draw_alpha(rng, fixed_alpha)
    return ProjectionSpec(theta, alpha, sample_ray_1d_dirac(rng, legacy_sigma=legacy_sigma))


def draw_swbg(seed, ell, d, d_red, fixed_alpha=None):
    rng = _rng(seed, ell)
    theta = sample_sphere(d, rng)
    alpha = _draw_alpha(rng, fixed_alpha)
    m1, S = sample_bw_direction(d_red, rng)
    return ProjectionSpec(theta, alpha, (m1, S))


def sample_truncated_poisson(rng, rate, size, lam_max):
    """Zero-truncated Poisson draws (zeros redrawn), capped at ``lam_max``."""
    out = rng.poisson(rate, size)
    while np.any(out == 0):
        bad = out == 0
        out[bad] = rng.poisson(rate, int(bad.sum()))
    return np.minimum(out, lam_max)


def draw_sotdd(seed, ell, d, k, lam_max, rate):
    """``theta``, ``alpha`` on the k-sphere and ``k`` moment orders."""
    rng = _rng(seed, ell)
    theta = sample_sphere(d, rng)
    alpha = sample_sphere(k + 1, rng)
    return theta, alpha, sample_truncated_poisson(rng, rate, k, lam_max)


def draw_sw(seed, ell, d):
    return sample_sphere(d, _rng(seed, ell))


# ---------------------------------------------------------------------------
# label-scalar helpers


def swb1dg_label_scalars(g, sorted_proj, m1, s1, speed):
    """Busemann values of every projected class for a batch of Dirac rays.

    ``sorted_proj`` holds class-wise sorted projections (n x B); returns
    ``C x B``.
    """
    q = np.empty((g.C, sorted_proj.shape[1]))
    for c, (s, e) in enumerate(g.blocks()):
        blk = sorted_proj[s:e]
        w = _uniform_normal_weights(e - s)
        q[c] = -(m1 * blk.mean(axis=0) + s1 * (w @ blk)) / speed
    return q


def class_gaussians(data, reducer=None):
    """Per-class Gaussian moments (optionally after a reducer), stacked."""
    means, covs = [], []
    for idx in data.class_index:
        x = data.features[idx]
        if reducer is not None:
            x = reducer(x)
        g = gaussian_moments(EmpiricalMeasure(x))
        means.append(g.mean)
        covs.append(g.cov)
    return np.array(means), np.array(covs)


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True, eq=False)
class PCAReducer:
    mean: np.ndarray
    components: np.ndarray  # d x d'
    explained_variance: np.ndarray

    @property
    def d_out(self):
        return self.components.shape[1]

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) @ self.components


def _sum_unordered(parts):
    # a + b == b + a in IEEE arithmetic; for more terms fix a content order
    parts = sorted(parts, key=lambda a: a.tobytes())
    total = parts[0].copy()
    for p in parts[1:]:
        total = total + p
    return total


def pca_reduce(feature_sets, d_reduced):
    """PCA fitted on the pooled feature sets.

    The pooled moments do not depend on the order of ``feature_sets``.  Each
    component's largest-magnitude entry is made positive.  If the pooled
    rank is below ``d_reduced`` the output dimension drops to the rank with
    a warning.
    """
    sets = [np.asarray(x, dtype=float) for x in feature_sets]
    n = sum(x.shape[0] for x in sets)
    mean = _sum_unordered([x.sum(axis=0) for x in sets]) / n
    scatter = _sum_unordered([(x - mean).T @ (x - mean) for x in sets])
    cov = 0.5 * (scatter + scatter.T) / n
    w, v = np.linalg.eigh(cov)
    w, v = w[::-1], v[:, ::-1]
    tol = 1e-10 * max(float(w[0]), 1e-300)
    rank = int(np.sum(w > tol))
    k = min(d_reduced, cov.shape[0])
    if rank < k:
        warnings.warn(f"pooled features have rank {rank} < {k}; reducing to {max(rank, 1)} components", stacklevel=2)
        k = max(rank, 1)
    v = v[:, :k].copy()
    pivot = np.argmax(np.abs(v), axis=0)
    v *= np.where(v[pivot, np.arange(k)] < 0, -1.0, 1.0)
    return PCAReducer(mean, v, np.clip(w[:k], 0.0, None))


# ---------------------------------------------------------------------------
# dataset distances


def swb1dg(P, Q, L=500, seed=0, threads=1, fixed_alpha=None, legacy_sigma=False):
    """Sliced-Wasserstein with 1D-Gaussian Busemann label projections.

    Each class is projected to 1D by ``theta`` and then to a scalar by the
    Busemann function of a ray from ``delta_0`` through ``N(m1, s1^2)``.
    """
    _check_pair(P, Q)
    gp, gq = _Grouped(P), _Grouped(Q)
    d = P.dim

    def terms(idx):
        specs = [draw_swb1dg(seed, int(l), d, fixed_alpha, legacy_sigma) for l in idx]
        theta = np.stack([s.theta for s in specs], axis=1)
        alpha = np.stack([s.alpha for s in specs])
        m1 = np.array([s.ray.m1 for s in specs])
        s1 = np.array([s.ray.s1 for s in specs])
        speed = np.array([s.ray.speed for s in specs])
        zs = []
        for g in (gp, gq):
            proj = _sorted_class_blocks(g, g.X @ theta)
            q = swb1dg_label_scalars(g, proj, m1, s1, speed)
            zs.append(_hier_sorted(g, proj, alpha, q))
        return w2sq_sorted_uniform(*zs)

    return _estimate(terms, L, seed, threads, "swb1dg")


def swbg(P, Q, L=500, seed=0, threads=1, d_reduced=10, reducer="pca", fixed_alpha=None):
    """Sliced-Wasserstein with Bures-Wasserstein Busemann label projections.

    ``reducer`` is ``"pca"`` (fit on both feature sets), ``None`` for the
    identity, or a callable such as a :class:`PCAReducer` (share one across
    several calls to keep projections common).
    """
    _check_pair(P, Q)
    if reducer == "pca":
        reducer = pca_reduce([P.features, Q.features], d_reduced)
    d_red = P.dim if reducer is None else reducer(P.features[:1]).shape[1]
    gp, gq = _Grouped(P), _Grouped(Q)
    moments = [class_gaussians(D, reducer) for D in (P, Q)]
    d = P.dim

    def terms(idx):
        specs = [draw_swbg(seed, int(l), d, d_red, fixed_alpha) for l in idx]
        theta = np.stack([s.theta for s in specs], axis=1)
        alpha = np.stack([s.alpha for s in specs])
        zs = []
        for g, (means, covs) in zip((gp, gq), moments):
            q = np.stack([busemann_bw_standard(m1, S, means, covs) for m1, S in (s.ray for s in specs)], axis=1)
            proj = _sorted_class_blocks(g, g.X @ theta)
            zs.append(_hier_sorted(g, proj, alpha, q))
        return w2sq_sorted_uniform(*zs)

    return _estimate(terms, L, seed, threads, "swbg")


def sotdd_label_scalars(g, proj, lambdas):
    """Class moments ``int x^lam / lam! d mu`` for each (order, projection)."""
    k = lambdas.shape[0]
    q = np.empty((k, g.C, proj.shape[1]))
    fact = np.array([[math.factorial(int(v)) for v in row] for row in lambdas], dtype=float)
    for c, (s, e) in enumerate(g.blocks()):
        blk = proj[s:e]
        with np.errstate(over="ignore", invalid="ignore"):
            q[:, c, :] = np.mean(blk[None, :, :] ** lambdas[:, None, :], axis=1) / fact
    if not np.all(np.isfinite(q)):
        raise DomainError("moment overflow; lower lam_max")
    return q


def sotdd_baseline(P, Q, L=500, seed=0, threads=1, k=5, lam_max=8, rate=2.0):
    """Sliced OTDD baseline with moment-transform label projections."""
    _check_pair(P, Q)
    gp, gq = _Grouped(P), _Grouped(Q)
    d = P.dim

    def terms(idx):
        draws = [draw_sotdd(seed, int(l), d, k, lam_max, rate) for l in idx]
        theta = np.stack([t for t, _, _ in draws], axis=1)
        alpha = np.stack([a for _, a, _ in draws], axis=1)  # (k+1) x B
        lambdas = np.stack([lam for _, _, lam in draws], axis=1)  # k x B
        zs = []
        for g in (gp, gq):
            proj = g.X @ theta
            q = sotdd_label_scalars(g, proj, lambdas)
            z = alpha[0] * proj + np.einsum("kb,knb->nb", alpha[1:], q[:, g.labels, :])
            zs.append(np.sort(z, axis=0))
        return w2sq_sorted_uniform(*zs)

    return _estimate(terms, L, seed, threads, "sotdd")


def _points_weights(m):
    if isinstance(m, LabeledDataset):
        return m.features, None
    if isinstance(m, EmpiricalMeasure):
        return m.points, (None if m.is_uniform() else m.weights)
    x = np.asarray(m, dtype=float)
    return (x[:, None] if x.ndim == 1 else x), None


def sw_vanilla(a, b, L=500, seed=0, threads=1):
    """Plain sliced 2-Wasserstein between point clouds (or dataset features)."""
    xa, wa = _points_weights(a)
    xb, wb = _points_weights(b)
    if xa.shape[1] != xb.shape[1]:
        raise DomainError("point clouds have different dimensions")
    d = xa.shape[1]

    def terms(idx):
        theta = np.stack([draw_sw(seed, int(l), d) for l in idx], axis=1)
        pa, pb = xa @ theta, xb @ theta
        if wa is None and wb is None:
            return w2sq_sorted_uniform(np.sort(pa, axis=0), np.sort(pb, axis=0))
        return w2sq_weighted_columns(pa, _w(wa, len(xa)), pb, _w(wb, len(xb)))

    return _estimate(terms, L, seed, threads, "sw")


def _w(w, n):
    return np.full(n, 1.0 / n) if w is None else np.asarray(w)


# ---------------------------------------------------------------------------
# mixtures


def w2sq_weighted_columns(va, wa, vb, wb):
    """Column-wise squared W2 between weighted atoms ``va`` (Ka x B) and ``vb``."""
    va, vb = np.asarray(va, dtype=float), np.asarray(vb, dtype=float)
    oa, ob = np.argsort(va, axis=0, kind="stable"), np.argsort(vb, axis=0, kind="stable")
    sa, sb = np.take_along_axis(va, oa, 0), np.take_along_axis(vb, ob, 0)
    ca, cb = np.cumsum(np.asarray(wa)[oa], axis=0), np.cumsum(np.asarray(wb)[ob], axis=0)
    ca[-1], cb[-1] = 1.0, 1.0
    merged = np.sort(np.concatenate([ca, cb]), axis=0)
    du = np.diff(merged, axis=0, prepend=0.0)
    # index of the cell containing each merged break: number of breaks strictly below it
    ia = np.minimum((ca[:, None, :] < merged[None, :, :]).sum(axis=0), len(ca) - 1)
    ib = np.minimum((cb[:, None, :] < merged[None, :, :]).sum(axis=0), len(cb) - 1)
    diff = np.take_along_axis(sa, ia, 0) - np.take_along_axis(sb, ib, 0)
    return np.sum(du * diff * diff, axis=0)


def _check_mix(P, Q):
    if P.dim != Q.dim:
        raise DomainError(f"mixtures live in different dimensions ({P.dim} vs {Q.dim})")


def draw_b1dgmsw(seed, ell, d):
    rng = _rng(seed, ell)
    theta = sample_sphere(d, rng)
    return theta, sample_ray_1d_gaussian(rng)


def b1dgmsw_values(mix, theta, m1, s1, speed):
    """Busemann value of each projected component; ``K x B``.

    Component ``k`` projects to ``N(<m_k, theta>, theta^T S_k theta)`` and
    the ray starts at ``N(0, 1)``.
    """
    mu = mix.means @ theta
    sd = np.sqrt(np.einsum("db,kde,eb->kb", theta, mix.covs, theta))
    return -(m1 * mu + (s1 - 1.0) * (sd - 1.0)) / speed


def b1dgmsw(P, Q, L=500, seed=0, threads=1):
    """Sliced distance between Gaussian mixtures using 1D Gaussian Busemann projections."""
    _check_mix(P, Q)
    d = P.dim

    def terms(idx):
        draws = [draw_b1dgmsw(seed, int(l), d) for l in idx]
        theta = np.stack([t for t, _ in draws], axis=1)
        m1 = np.array([r.m1 for _, r in draws])
        s1 = np.array([r.s1 for _, r in draws])
        speed = np.array([r.speed for _, r in draws])
        va = b1dgmsw_values(P, theta, m1, s1, speed)
        vb = b1dgmsw_values(Q, theta, m1, s1, speed)
        return w2sq_weighted_columns(va, P.weights, vb, Q.weights)

    return _estimate(terms, L, seed, threads, "b1dgmsw")


def draw_bgmsw(seed, ell, d):
    return sample_bw_direction(d, _rng(seed, ell))


def bgmsw(P, Q, L=500, seed=0, threads=1):
    """Sliced distance between Gaussian mixtures using Bures-Wasserstein Busemann projections."""
    _check_mix(P, Q)
    d = P.dim

    def terms(idx):
        draws = [draw_bgmsw(seed, int(l), d) for l in idx]
        va = np.stack([busemann_bw_standard(m1, S, P.means, P.covs) for m1, S in draws], axis=1)
        vb = np.stack([busemann_bw_standard(m1, S, Q.means, Q.covs) for m1, S in draws], axis=1)
        return w2sq_weighted_columns(va, P.weights, vb, Q.weights)

    return _estimate(terms, L, seed, threads, "bgmsw")


# ---------------------------------------------------------------------------


def sliced_distance(metric, P, Q, L=500, seed=0, threads=1, **kw):
    """Name-based dispatch used by the CLI and the experiment drivers."""
    fns = {
        "swb1dg": swb1dg,
        "swbg": swbg,
        "sotdd": sotdd_baseline,
        "sw": sw_vanilla,
        "b1dgmsw": b1dgmsw,
        "bgmsw": bgmsw,
    }
    if metric == "otdd-exact":
        v = otdd_exact(P, Q, threads=threads, **kw)
        return SlicedEstimate(v, 0, int(seed), np.array([v * v]), metric)
    if metric not in fns:
        raise DomainError(f"unknown metric {metric!r}; choose from {sorted(fns) + ['otdd-exact']}")
    return fns[metric](P, Q, L=L, seed=seed, threads=threads, **kw)
