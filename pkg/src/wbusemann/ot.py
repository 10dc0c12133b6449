"""Closed-form and exact Wasserstein-2 computations.

1D distances integrate piecewise-constant quantiles exactly, Gaussian
distances use the Bures formula, and ``exact_ot_lp`` solves small discrete
problems exactly (Hungarian assignment or network simplex).
"""
import functools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import CapacityError, DomainError, InvalidMeasureError
from .linalg import inv_sqrtm_spd, sqrtm_psd, symmetrize, trace_sqrtm_psd
from .measures import Discrete1D, EmpiricalMeasure, GaussianMeasure, class_conditional
from .quantiles import QuantileFunction, cell_index, merge_cells

#: default cap on the number of entries of an exact OT cost matrix
DEFAULT_MAX_ENTRIES = 4_000_000

for _backend in ("PYTORCH", "TENSORFLOW", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")


def w2_1d_squared(a, b):
    """Squared W2 between two weighted discrete measures on R."""
    ca, cb = a.cumulative(), b.cumulative()
    merged = merge_cells(ca, cb)
    du = np.diff(merged, prepend=0.0)
    diff = a.values[cell_index(ca, merged)] - b.values[cell_index(cb, merged)]
    return float(du @ (diff * diff))


def w2_1d(a, b):
    """W2 between two :class:`Discrete1D` via merged quantile break-points."""
    return float(np.sqrt(w2_1d_squared(a, b)))


@functools.lru_cache(maxsize=256)
def uniform_merge_plan(n_a, n_b):
    """Cell lengths and atom indices for uniform measures of sizes n_a, n_b.

    Integer arithmetic on ``i * n_b`` vs ``j * n_a`` keeps the break-points
    exact, so the result is symmetric under swapping the two sides.
    """
    if n_a == n_b:
        idx = np.arange(n_a)
        du = np.full(n_a, 1.0 / n_a)
        return du, idx, idx
    lcm = np.lcm(n_a, n_b)
    ticks = np.union1d(np.arange(1, n_a + 1) * (lcm // n_a), np.arange(1, n_b + 1) * (lcm // n_b))
    ia = (ticks - 1) // (lcm // n_a)
    ib = (ticks - 1) // (lcm // n_b)
    du = np.diff(ticks, prepend=0) / lcm
    for arr in (du, ia, ib):
        arr.setflags(write=False)
    return du, ia, ib


def w2sq_sorted_uniform(a_sorted, b_sorted):
    """Column-wise squared W2 between sorted uniform samples.

    ``a_sorted`` is ``n_a x L`` and ``b_sorted`` is ``n_b x L``; each column
    is one 1D problem.  Returns a length-L array.
    """
    du, ia, ib = uniform_merge_plan(a_sorted.shape[0], b_sorted.shape[0])
    diff = a_sorted[ia] - b_sorted[ib]
    return du @ (diff * diff)


def bw_distance_squared(a, b):
    if a.dim != b.dim:
        raise DomainError("Gaussians live in different dimensions")
    dm = a.mean - b.mean
    if a.dim == 1:
        ds = np.sqrt(a.cov[0, 0]) - np.sqrt(b.cov[0, 0])
        return float(dm @ dm + ds * ds)
    # root the smaller-trace matrix first; keeps the cross term well scaled
    if np.trace(a.cov) > np.trace(b.cov):
        a, b = b, a
    ra = sqrtm_psd(a.cov)
    cross = trace_sqrtm_psd(ra @ b.cov @ ra)
    val = float(dm @ dm + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(val, 0.0)


def bw_distance(a, b):
    """Bures-Wasserstein distance between two Gaussians."""
    return float(np.sqrt(bw_distance_squared(a, b)))


@dataclass(frozen=True, eq=False)
class BWMap:
    """Affine OT map ``x -> target.mean + A (x - source.mean)``."""

    A: np.ndarray
    source: GaussianMeasure
    target: GaussianMeasure

    def __call__(self, x):
        return self.target.mean + (np.asarray(x) - self.source.mean) @ self.A.T


def bw_map_matrix(cov_a, cov_b):
    ra = sqrtm_psd(cov_a)
    ra_inv = inv_sqrtm_spd(cov_a)
    return symmetrize(ra_inv @ sqrtm_psd(ra @ cov_b @ ra) @ ra_inv)


def bw_map(a, b):
    """Monge map between two Gaussians."""
    try:
        A = bw_map_matrix(a.cov, b.cov)
    except InvalidMeasureError as exc:
        raise InvalidMeasureError(f"source covariance is singular: {exc}") from None
    return BWMap(A, a, b)


def _is_1d_gaussian(m):
    return isinstance(m, GaussianMeasure) and m.dim == 1


def geodesic_1d(a, b, t, strict=False):
    """Point at time ``t`` on the 1D geodesic with quantile ``(1-t)F_a + tF_b``.

    For ``t`` outside [0, 1] the affine quantile combination is pushed
    forward as-is; with ``strict=True`` a ``t`` at which it stops being
    non-decreasing (i.e. the curve is no longer a geodesic) raises.
    """
    if strict:
        from .rays import extension_interval_1d

        lo, hi = extension_interval_1d(a, b)
        if not (lo <= t <= hi):
            raise DomainError(f"t={t} outside the extension interval [{lo}, {hi}]")
    if _is_1d_gaussian(a) and _is_1d_gaussian(b):
        m = (1 - t) * a.mean[0] + t * b.mean[0]
        s = (1 - t) * a.std + t * b.std
        if s == 0:
            return Discrete1D([m])
        return GaussianMeasure.from_1d(m, abs(s))
    if isinstance(a, Discrete1D) and isinstance(b, Discrete1D):
        if t == 0:
            return a
        if t == 1:
            return b
    qa, qb = QuantileFunction.of(a), QuantileFunction.of(b)
    return qa.combine(qb, 1 - t, t).to_measure()


def geodesic_bw(a, b, t, strict=False):
    """Point at time ``t`` on the Bures-Wasserstein geodesic from ``a`` to ``b``."""
    A = bw_map(a, b).A
    d = a.dim
    M = (1 - t) * np.eye(d) + t * A
    eig = np.linalg.eigvalsh(M)
    if strict and eig[0] < 0:
        raise DomainError(f"t={t} leaves the extension interval of this geodesic")
    if np.abs(eig).min() <= 1e-14 * max(1.0, np.abs(eig).max()):
        raise DomainError(f"interpolating map is singular at t={t}")
    return GaussianMeasure((1 - t) * a.mean + t * b.mean, symmetrize(M @ a.cov @ M))


@dataclass(frozen=True, eq=False)
class TransportPlan:
    source_weights: np.ndarray
    target_weights: np.ndarray
    plan: np.ndarray
    cost: float
    assignment: np.ndarray = None

    def triplets(self):
        i, j = np.nonzero(self.plan > 0)
        return i, j, self.plan[i, j]

    def to_csv(self, path):
        i, j, mass = self.triplets()
        with open(path, "w") as fh:
            fh.write("i,j,mass\n")
            for a, b, m in zip(i, j, mass):
                fh.write(f"{a},{b},{m!r}\n")


def sq_euclidean(x, y):
    if x.shape[0] * y.shape[0] * x.shape[1] <= 4_000_000:
        # direct differences: exact zeros for coincident points
        diff = x[:, None, :] - y[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    x2 = np.einsum("ij,ij->i", x, x)
    y2 = np.einsum("ij,ij->i", y, y)
    return np.maximum(x2[:, None] + y2[None, :] - 2.0 * x @ y.T, 0.0)


def _as_weights(m, n):
    if m is None:
        return np.full(n, 1.0 / n)
    if isinstance(m, (EmpiricalMeasure, Discrete1D)):
        return np.asarray(m.weights)
    return np.asarray(m, dtype=float)


def exact_ot_lp(a, b, cost=None, max_entries=DEFAULT_MAX_ENTRIES):
    """Optimal coupling between two discrete measures.

    ``a`` and ``b`` are :class:`EmpiricalMeasure` (or plain weight vectors
    when ``cost`` is given).  Without ``cost`` the squared Euclidean cost
    between the supports is used.  Uniform equal-size problems go through
    the Hungarian algorithm, everything else through network simplex.
    """
    if cost is None:
        cost = sq_euclidean(a.points, b.points)
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n * m > max_entries:
        raise CapacityError(
            f"exact OT with a {n}x{m} cost exceeds the cap of {max_entries} entries; use a sliced estimator instead"
        )
    if not np.all(np.isfinite(cost)):
        raise DomainError("cost matrix must be finite")
    wa, wb = _as_weights(a, n), _as_weights(b, m)
    if n == m and np.all(wa == wa[0]) and np.all(wb == wb[0]):
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros((n, m))
        plan[rows, cols] = 1.0 / n
        value = float(cost[rows, cols].sum() / n)
        return TransportPlan(wa, wb, plan, value, assignment=cols)
    import ot as pot

    plan, log = pot.emd(wa, wb, cost, numItermax=max(100_000, 50 * n * m), log=True)
    if log.get("result_code", 1) != 1:
        raise DomainError(f"network simplex did not converge: {log.get('warning')}")
    return TransportPlan(wa, wb, plan, float(np.sum(plan * cost)))


def _inner_w2sq(mu, nu, max_entries):
    if mu.dim == 1:
        return w2_1d_squared(mu.to_1d(), nu.to_1d())
    return exact_ot_lp(mu, nu, max_entries=max_entries).cost


def class_distance_table(P, Q, max_entries=DEFAULT_MAX_ENTRIES, threads=1):
    """``C_P x C_Q`` table of squared W2 between class-conditional measures."""
    if P.dim != Q.dim:
        raise DomainError("datasets have different feature dimensions")
    pairs = [(i, j) for i in range(P.n_classes) for j in range(Q.n_classes)]
    condP = [class_conditional(P, i + 1) for i in range(P.n_classes)]
    condQ = [class_conditional(Q, j + 1) for j in range(Q.n_classes)]
    table = np.empty((P.n_classes, Q.n_classes))

    def fill(ij):
        i, j = ij
        table[i, j] = _inner_w2sq(condP[i], condQ[j], max_entries)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, pairs))
    else:
        for ij in pairs:
            fill(ij)
    return table


def otdd_cost_matrix(P, Q, table=None, max_entries=DEFAULT_MAX_ENTRIES):
    if table is None:
        table = class_distance_table(P, Q, max_entries)
    return sq_euclidean(P.features, Q.features) + table[np.ix_(P.labels - 1, Q.labels - 1)]


def otdd_exact(P, Q, max_entries=DEFAULT_MAX_ENTRIES, threads=1):
    """Exact optimal transport dataset distance between labeled datasets."""
    if P.n * Q.n > max_entries:
        raise CapacityError(
            f"OTDD between {P.n} and {Q.n} samples exceeds the cap of {max_entries} entries; subsample or use a sliced distance"
        )
    table = class_distance_table(P, Q, max_entries, threads)
    cost = otdd_cost_matrix(P, Q, table)
    plan = exact_ot_lp(np.full(P.n, 1.0 / P.n), np.full(Q.n, 1.0 / Q.n), cost, max_entries)
    return float(np.sqrt(max(plan.cost, 0.0)))


def wasserstein_bw_mixtures(P, Q, max_entries=DEFAULT_MAX_ENTRIES):
    """OT between Gaussian mixtures with squared Bures-Wasserstein ground cost."""
    cost = np.array([[bw_distance_squared(a, b) for b in Q.components] for a in P.components])
    return float(np.sqrt(max(exact_ot_lp(P.weights, Q.weights, cost, max_entries).cost, 0.0)))
