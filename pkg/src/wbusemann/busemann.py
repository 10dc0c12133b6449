"""Busemann functions along geodesic rays of the Wasserstein space.

All functions return ``B(nu) = lim_t W2(mu_t, nu) - kappa t``.  The limit
does not depend on how fast the ray is traversed, so a ray and any
reparametrisation of it give the same number.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidRayError
from .linalg import sqrtm_psd, symmetrize
from .measures import Discrete1D, EmpiricalMeasure, GaussianMeasure
from .ot import bw_distance, exact_ot_lp, sq_euclidean
from .quantiles import QuantileFunction, normal_quantile_weights, w2_quantile
from .rays import Ray1DEmpirical, Ray1DGaussian, RayBW, RayDirac1D

__all__ = [
    "BusemannValue",
    "ProjectionResult",
    "busemann",
    "busemann_1d",
    "busemann_1d_gaussian",
    "busemann_bw",
    "busemann_bw_standard",
    "busemann_limit_oracle",
    "busemann_oracle_general",
    "busemann_project",
    "normal_quantile_weights",
]

_RAYS_1D = (Ray1DGaussian, RayDirac1D, Ray1DEmpirical)


@dataclass(frozen=True)
class BusemannValue:
    value: float
    speed: float
    method: str

    def to_dict(self):
        return {"value": self.value, "speed": self.speed, "method": self.method}


def _speed(ray):
    k = ray.speed
    if not k > 0:
        raise InvalidRayError("zero-speed ray")
    return k


def busemann_1d(ray, nu):
    """Busemann function of a 1D ray, ``-<F1 - F0, F_nu - F0> / kappa``.

    ``ray`` is any 1D ray (discrete, Gaussian or Dirac-based) and ``nu`` a
    :class:`Discrete1D` or 1D :class:`GaussianMeasure`.  Mixed
    Gaussian/step products are integrated exactly.
    """
    if not isinstance(ray, _RAYS_1D):
        raise DomainError(f"busemann_1d needs a 1D ray, got {type(ray).__name__}")
    k = _speed(ray)
    q0 = ray.base_quantile()
    direction = ray.through_quantile() - q0
    return -direction.inner(QuantileFunction.of(nu) - q0) / k


def busemann_1d_gaussian(ray, nu):
    """Closed form for a 1D Gaussian ray and a 1D Gaussian target."""
    if not isinstance(ray, Ray1DGaussian):
        raise DomainError("expected a Ray1DGaussian")
    if ray.s1 < ray.s0:
        raise InvalidRayError("sigma1 < sigma0: not a geodesic ray")
    m, s = float(nu.mean[0]), nu.std
    k = _speed(ray)
    return -((ray.m1 - ray.m0) * (m - ray.m0) + (ray.s1 - ray.s0) * (s - ray.s0)) / k


def _nuclear(x):
    return float(np.linalg.svd(x, compute_uv=False).sum())


def busemann_bw(ray, nu):
    """Busemann function of a Bures-Wasserstein ray at a Gaussian ``nu``.

    With ``A`` the Bures map of the ray,
    ``kappa B = -<m1-m0, m-m0> + Tr(S0 (A-I)) - Tr((C^{1/2}(A-I)S0(A-I)C^{1/2})^{1/2})``
    where ``C`` is the covariance of ``nu``.  The square-root trace is the
    nuclear norm of ``S0^{1/2}(A-I)C^{1/2}``, which avoids forming the
    product.  Rays based at ``N(0, I)`` take :func:`busemann_bw_standard`.
    """
    if not isinstance(ray, RayBW):
        raise DomainError("expected a RayBW")
    if nu.dim != ray.dim:
        raise DomainError("target Gaussian has the wrong dimension")
    if ray.has_standard_base:
        return busemann_bw_standard(ray.m1, ray.tangent, nu.mean, nu.cov) / _speed(ray)
    return _busemann_bw_general(ray, nu)


def _busemann_bw_general(ray, nu):
    k = _speed(ray)
    D = ray.tangent
    lin = -float((ray.m1 - ray.m0) @ (nu.mean - ray.m0)) + float(np.trace(ray.cov0 @ D))
    root = _nuclear(sqrtm_psd(ray.cov0) @ D @ sqrtm_psd(nu.cov))
    return (lin - root) / k


def busemann_bw_standard(m1, S, mean, cov):
    """Unnormalised Busemann value for a ray from ``N(0, I)`` with tangent ``(m1, S)``.

    ``-<m1, m> + Tr(S) - Tr((S C S)^{1/2})``.  ``mean`` may be ``K x d`` and
    ``cov`` ``K x d x d``, in which case a length-K array is returned.
    """
    S = symmetrize(S)
    mean, cov = np.asarray(mean, dtype=float), np.asarray(cov, dtype=float)
    inner = symmetrize(S @ cov @ S)
    w = np.linalg.eigvalsh(inner)
    root = np.sqrt(np.clip(w, 0.0, None)).sum(axis=-1)
    return -(mean @ m1) + np.trace(S) - root


def busemann(ray, nu):
    """Dispatch to the closed form matching ``ray`` and return a :class:`BusemannValue`."""
    if isinstance(ray, RayBW):
        val = busemann_bw(ray, nu)
    elif isinstance(ray, Ray1DGaussian) and isinstance(nu, GaussianMeasure):
        val = busemann_1d_gaussian(ray, nu)
    else:
        val = busemann_1d(ray, nu)
    return BusemannValue(float(val), float(ray.speed), "closed-form")


def busemann_oracle_general(mu0, mu1, nu, mode="dirac", T=None, max_entries=None):
    """Busemann value through the equivalent OT problem.

    mode="dirac"
        ``mu0`` is a point mass at ``x0``; the value is
        ``-sup_gamma int <x1 - x0, y - x0> d gamma(x1, y) / kappa`` over
        couplings of ``mu1`` and ``nu``.
    mode="ot-map"
        ``T`` holds the image of every atom of ``mu0`` under an optimal map
        to ``mu1``; couplings are between ``mu0`` and ``nu`` and the
        integrand is ``<T(x0) - x0, y - x0>``.

    The maximisation is solved as a squared-distance OT problem, which has
    the same optimal plans.
    """
    kw = {} if max_entries is None else {"max_entries": max_entries}
    mu0, nu = _as_empirical(mu0), _as_empirical(nu)
    if mode == "dirac":
        if mu0.n != 1:
            raise DomainError("dirac mode needs a point-mass base measure")
        mu1 = _as_empirical(mu1)
        x0 = mu0.points[0]
        v = mu1.points - x0
        w = nu.points - x0
        src = mu1.weights
    elif mode == "ot-map":
        if T is None:
            raise DomainError("ot-map mode needs the transport map images T")
        T = np.asarray(T, dtype=float).reshape(mu0.n, -1)
        v = T - mu0.points
        w = None
        src = mu0.weights
    else:
        raise DomainError(f"unknown mode {mode!r}")
    kappa = math.sqrt(float(src @ np.einsum("ij,ij->i", v, v)))
    if kappa <= 0:
        raise InvalidRayError("zero-speed ray")
    if w is None:
        # <v_i, x_i> depends on the source atom only, so it does not change the plan
        cost = sq_euclidean(v, nu.points)
        gain = v @ nu.points.T - np.einsum("ij,ij->i", v, mu0.points)[:, None]
    else:
        cost = sq_euclidean(v, w)
        gain = v @ w.T
    plan = exact_ot_lp(EmpiricalMeasure(v, src), nu, cost=cost, **kw).plan
    return -float(np.sum(plan * gain)) / kappa


def _as_empirical(m):
    if isinstance(m, EmpiricalMeasure):
        return m
    if isinstance(m, Discrete1D):
        return EmpiricalMeasure(m.values[:, None], m.weights)
    raise DomainError(f"expected a discrete measure, got {type(m).__name__}")


def _w2(a, b):
    if isinstance(a, GaussianMeasure) and isinstance(b, GaussianMeasure):
        return bw_distance(a, b)
    return w2_quantile(a, b)


def busemann_limit_oracle(ray, nu, t_list):
    """Finite-time differences ``W2(mu_t, nu) - kappa t`` for validation."""
    lo, hi = ray.extension_interval()
    k = ray.speed
    out = []
    for t in t_list:
        if not (max(lo, 0.0) <= t < hi):
            raise DomainError(f"t={t} outside the ray's validity range [{max(lo, 0.0)}, {hi})")
        if isinstance(ray, _RAYS_1D):
            # quantile arithmetic avoids materialising a far-away measure
            q = ray.base_quantile().combine(ray.through_quantile(), 1 - t, t)
            d = w2_quantile(q, nu)
        else:
            d = _w2(ray.point(t), nu)
        out.append((float(t), d - k * t))
    return out


@dataclass(frozen=True)
class ProjectionResult:
    t: float
    measure: object
    on_ray: bool
    interval: tuple
    value: float


def busemann_project(ray, nu):
    """Busemann projection of ``nu`` onto ``ray``.

    The coordinate is ``t = -B(nu) / kappa`` in the ray's own time.  When it
    leaves the ray's validity interval ``on_ray`` is False; Gaussian rays
    still return the (non-geodesic) extended curve point, other rays raise.
    """
    val = busemann(ray, nu).value
    k = ray.speed
    t = -val / k
    lo, hi = ray.extension_interval()
    on_ray = bool((t >= 0 or t > lo) and t < hi)
    if on_ray:
        return ProjectionResult(t, ray.point(t), True, (lo, hi), val)
    if isinstance(ray, (Ray1DGaussian, RayBW)):
        try:
            return ProjectionResult(t, _extended_point(ray, t), False, (lo, hi), val)
        except DomainError:
            pass
    raise DomainError(f"projection t={t} outside the extension interval ({lo}, {hi}) and no extension exists")


def _extended_point(ray, t):
    if isinstance(ray, Ray1DGaussian):
        return ray.point(t)
    M = (1 - t) * np.eye(ray.dim) + t * ray.A
    if abs(np.linalg.det(M)) <= 1e-14:
        raise DomainError("singular extension")
    return GaussianMeasure((1 - t) * ray.m0 + t * ray.m1, symmetrize(M @ ray.cov0 @ M))
