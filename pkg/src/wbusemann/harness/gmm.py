"""Expectation-maximisation for Gaussian mixtures."""
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .._rng import substream
from ..errors import DomainError
from ..measures import EmpiricalMeasure, GaussianMixture

COV_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class EMResult:
    mixture: GaussianMixture
    loglik: np.ndarray  # per-iteration weighted mean log-likelihood
    iterations: int
    reinitialised: int


def _kmeanspp(x, w, K, rng):
    centers = [x[rng.choice(len(x), p=w)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        p = w * d2
        tot = p.sum()
        idx = rng.choice(len(x), p=p / tot) if tot > 0 else rng.choice(len(x), p=w)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _floor_cov(c, floor):
    w, v = np.linalg.eigh(0.5 * (c + c.T))
    if w[0] >= floor:
        return c
    return (v * np.maximum(w, floor)) @ v.T


def _log_dens(x, means, covs):
    K, d = means.shape
    out = np.empty((x.shape[0], K))
    for k in range(K):
        L = np.linalg.cholesky(covs[k])
        z = np.linalg.solve(L, (x - means[k]).T)
        out[:, k] = -0.5 * np.sum(z * z, axis=0) - np.log(np.diag(L)).sum() - 0.5 * d * np.log(2 * np.pi)
    return out


def fit_gmm_em(data, K, seed=0, iters=200, tol=1e-6, floor=COV_FLOOR):
    """Fit a K-component mixture by EM.

    ``data`` is an :class:`EmpiricalMeasure` or an ``n x d`` array.  Means
    are seeded by k-means++ and covariances start at the pooled covariance.
    A component whose responsibility mass collapses is re-initialised at
    the worst-explained point with the pooled covariance; the count of such
    events is reported.  Covariance eigenvalues are kept above ``floor``.
    """
    if not isinstance(data, EmpiricalMeasure):
        data = EmpiricalMeasure(np.asarray(data, dtype=float))
    x, w = data.points, data.weights
    n, d = x.shape
    if n < K:
        raise DomainError(f"need at least K={K} points, got {n}")
    rng = substream(seed, "em-init", K)
    mean = w @ x
    pooled = _floor_cov(((x - mean) * w[:, None]).T @ (x - mean), floor)
    means = _kmeanspp(x, w, K, rng) if K > 1 else mean[None, :]
    covs = np.repeat(pooled[None], K, axis=0)
    pis = np.full(K, 1.0 / K)
    history = []
    reinit = 0
    it = 0
    for it in range(1, iters + 1):
        logp = _log_dens(x, means, covs) + np.log(pis)
        lse = logsumexp(logp, axis=1)
        history.append(float(w @ lse))
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * max(1.0, abs(history[-2])):
            break
        resp = np.exp(logp - lse[:, None]) * w[:, None]
        nk = resp.sum(axis=0)
        for k in range(K):
            if nk[k] <= 1e-10:
                worst = int(np.argmin(lse))
                resp[:, k] = 0.0
                resp[worst, k] = w[worst]
                nk[k] = w[worst]
                reinit += 1
        pis = nk / nk.sum()
        means = (resp.T @ x) / nk[:, None]
        for k in range(K):
            xc = x - means[k]
            if nk[k] <= 1e-10 or np.count_nonzero(resp[:, k]) < 2:
                covs[k] = pooled
            else:
                covs[k] = _floor_cov((xc * resp[:, k:k + 1]).T @ xc / nk[k], floor)
    mix = GaussianMixture.from_arrays(pis, means, covs)
    return EMResult(mix, np.array(history), it, reinit)
