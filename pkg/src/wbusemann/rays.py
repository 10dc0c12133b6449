"""Geodesic rays in Wasserstein space: predicates, extension intervals, samplers.

A geodesic ``t -> mu_t`` between ``mu_0`` and ``mu_1`` is a *ray* when it
stays a constant-speed geodesic for every ``t >= 0``.  Only the cases with
a checkable criterion are exposed here: 1D measures (quantile difference
non-decreasing), 1D Gaussians (``sigma_1 >= sigma_0``) and Gaussians in any
dimension (Loewner order on the Bures map).  The general d-dimensional
criterion needs a Brenier potential and is deliberately not provided.

Rays carry their own ``point(t)`` so Busemann functions and limit checks
can treat them uniformly.  Samplers take an explicit ``numpy`` Generator.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidMeasureError, InvalidRayError
from .linalg import sqrtm_psd, symmetrize
from .measures import Discrete1D, GaussianMeasure
from .ot import bw_distance, bw_map_matrix, geodesic_1d
from .quantiles import QuantileFunction

INF = math.inf


def _predicate_slack(*arrays):
    scale = max(float(np.abs(a).max()) if np.size(a) else 0.0 for a in arrays)
    return 8 * np.finfo(float).eps * max(scale, 1.0)


def is_ray_1d(a, b):
    """True iff ``F_b^{-1} - F_a^{-1}`` is non-decreasing.

    Break-points of both quantile functions are merged, so unequal sizes and
    weights are handled.  The comparison allows round-off-level slack only.
    """
    qa, qb = QuantileFunction.of(a), QuantileFunction.of(b)
    diff = qb - qa
    if diff.gauss < 0:
        return False
    jumps = np.diff(diff.steps)
    return bool(np.all(jumps >= -_predicate_slack(qa.steps, qb.steps)))


def is_ray_1d_gaussian(sigma0, sigma1):
    if sigma0 <= 0 or sigma1 <= 0:
        raise DomainError("standard deviations must be positive")
    return sigma1 >= sigma0


def is_ray_bw(cov0, cov1):
    """Loewner test ``(cov0^{1/2} cov1 cov0^{1/2})^{1/2} >= cov0``."""
    cov0, cov1 = np.atleast_2d(cov0).astype(float), np.atleast_2d(cov1).astype(float)
    for c in (cov0, cov1):
        if np.linalg.eigvalsh(symmetrize(c))[0] <= 0:
            raise InvalidMeasureError("covariances must be symmetric positive-definite")
    r0 = sqrtm_psd(cov0)
    gap = sqrtm_psd(r0 @ cov1 @ r0) - cov0
    tol = 1e-10 * max(1.0, np.trace(cov0), np.trace(cov1))
    return bool(np.linalg.eigvalsh(symmetrize(gap))[0] >= -tol)


def ray_extension_interval_1d_gaussian(sigma0, sigma1):
    """Largest open interval on which the 1D Gaussian geodesic is defined."""
    if sigma1 > sigma0:
        return (-sigma0 / (sigma1 - sigma0), INF)
    if sigma1 < sigma0:
        return (-INF, sigma0 / (sigma0 - sigma1))
    return (-INF, INF)


def extension_interval_1d(a, b):
    """Times ``t`` for which ``(1-t)F_a + tF_b`` is still a quantile function.

    Returns ``(lo, hi)``; for 1D Gaussians this is the closure of
    :func:`ray_extension_interval_1d_gaussian` (the end-points are Diracs).
    """
    qa = QuantileFunction.of(a)
    diff = QuantileFunction.of(b) - qa
    base = qa.combine(diff, 1.0, 0.0)  # base on the merged cells
    lo, hi = -INF, INF
    ja, jd = np.diff(base.steps), np.diff(diff.steps)
    slack = _predicate_slack(base.steps, diff.steps)
    jd = np.where(np.abs(jd) <= slack, 0.0, jd)
    up, down = jd > 0, jd < 0
    if up.any():
        lo = max(lo, float(np.max(-ja[up] / jd[up])))
    if down.any():
        hi = min(hi, float(np.min(ja[down] / -jd[down])))
    g0, dg = base.gauss, diff.gauss
    if dg > 0:
        lo = max(lo, -g0 / dg)
    elif dg < 0:
        hi = min(hi, g0 / -dg)
    return (lo, hi)


def ray_extension_interval_bw(cov0, cov1):
    """Open interval where ``(1-t) I + t A`` stays positive-definite."""
    return _map_interval(bw_map_matrix(np.atleast_2d(cov0), np.atleast_2d(cov1)))


def _map_interval(A):
    lam = np.linalg.eigvalsh(A)
    lo, hi = -INF, INF
    for v in lam:
        if v > 1:
            lo = max(lo, -1.0 / (v - 1.0))
        elif v < 1:
            hi = min(hi, 1.0 / (1.0 - v))
    return (lo, hi)


# ---------------------------------------------------------------------------
# ray containers


@dataclass(frozen=True, eq=False)
class Ray1DGaussian:
    m0: float
    s0: float
    m1: float
    s1: float
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.s0 <= 0 or self.s1 < 0:
            raise InvalidMeasureError("standard deviations must be positive")
        if self.check and self.s1 < self.s0:
            raise InvalidRayError(f"sigma1={self.s1} < sigma0={self.s0}: not a geodesic ray")
        if self.speed <= 0:
            raise InvalidRayError("zero-speed ray")

    kind = "gaussian1d"

    @property
    def speed(self):
        return math.hypot(self.m1 - self.m0, self.s1 - self.s0)

    def base_quantile(self):
        return QuantileFunction([1.0], [self.m0], self.s0)

    def through_quantile(self):
        return QuantileFunction([1.0], [self.m1], self.s1)

    @property
    def base(self):
        return GaussianMeasure.from_1d(self.m0, self.s0)

    def point(self, t):
        m = (1 - t) * self.m0 + t * self.m1
        s = (1 - t) * self.s0 + t * self.s1
        if s == 0:
            return Discrete1D([m])
        return GaussianMeasure.from_1d(m, abs(s))

    def extension_interval(self):
        return ray_extension_interval_1d_gaussian(self.s0, self.s1)

    def unit_speed(self):
        k = self.speed
        return Ray1DGaussian(self.m0, self.s0, self.m0 + (self.m1 - self.m0) / k, self.s0 + (self.s1 - self.s0) / k)

    def to_dict(self):
        return {"kind": self.kind, "m0": self.m0, "s0": self.s0, "m1": self.m1, "s1": self.s1}


@dataclass(frozen=True, eq=False)
class RayDirac1D:
    """Ray from ``delta_0`` through ``N(m1, s1^2)`` (``s1 = 0`` gives ``delta_m1``)."""

    m1: float
    s1: float

    kind = "dirac1d"

    def __post_init__(self):
        if self.s1 < 0:
            raise InvalidMeasureError("s1 must be non-negative")
        if self.speed <= 0:
            raise InvalidRayError("zero-speed ray")

    @property
    def speed(self):
        return math.hypot(self.m1, self.s1)

    def base_quantile(self):
        return QuantileFunction([1.0], [0.0])

    def through_quantile(self):
        return QuantileFunction([1.0], [self.m1], self.s1)

    @property
    def base(self):
        return Discrete1D([0.0])

    def point(self, t):
        if t < 0:
            raise DomainError("rays from a Dirac cannot be extended to t < 0")
        if t == 0 or self.s1 == 0:
            return Discrete1D([t * self.m1])
        return GaussianMeasure.from_1d(t * self.m1, t * self.s1)

    def extension_interval(self):
        return (0.0, INF)

    def to_dict(self):
        return {"kind": self.kind, "m1": self.m1, "s1": self.s1}


@dataclass(frozen=True, eq=False)
class Ray1DEmpirical:
    """Ray through two discrete 1D measures."""

    mu0: Discrete1D
    mu1: Discrete1D
    check: bool = field(default=True, repr=False)

    kind = "empirical1d"

    def __post_init__(self):
        if self.check and not is_ray_1d(self.mu0, self.mu1):
            raise InvalidRayError("F1^-1 - F0^-1 is not non-decreasing")
        if self.speed <= 0:
            raise InvalidRayError("zero-speed ray")

    @property
    def speed(self):
        return (self.through_quantile() - self.base_quantile()).norm()

    def base_quantile(self):
        return QuantileFunction.of(self.mu0)

    def through_quantile(self):
        return QuantileFunction.of(self.mu1)

    @property
    def base(self):
        return self.mu0

    def point(self, t):
        return geodesic_1d(self.mu0, self.mu1, t)

    def extension_interval(self):
        return extension_interval_1d(self.mu0, self.mu1)

    def to_dict(self):
        return {
            "kind": self.kind,
            "mu0": {"values": self.mu0.values.tolist(), "weights": self.mu0.weights.tolist()},
            "mu1": {"values": self.mu1.values.tolist(), "weights": self.mu1.weights.tolist()},
        }


@dataclass(frozen=True, eq=False)
class RayBW:
    """Ray between two Gaussians in any dimension.

    ``A`` is the Bures map from ``N(m0, cov0)`` to ``N(m1, cov1)``; it is
    taken from ``tangent`` (``A = I + S``) for rays built around a standard
    base, otherwise computed.
    """

    m0: np.ndarray
    cov0: np.ndarray
    m1: np.ndarray
    cov1: np.ndarray
    A: np.ndarray = None
    check: bool = field(default=True, repr=False)

    kind = "bw"

    def __post_init__(self):
        for name in ("m0", "m1"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("cov0", "cov1"):
            object.__setattr__(self, name, symmetrize(np.atleast_2d(np.asarray(getattr(self, name), dtype=float))))
        if self.A is None:
            object.__setattr__(self, "A", bw_map_matrix(self.cov0, self.cov1))
        if self.check and np.linalg.eigvalsh(self.A)[0] < 1 - 1e-10:
            raise InvalidRayError("Bures map is not >= I: geodesic is not a ray")
        if self.speed <= 0:
            raise InvalidRayError("zero-speed ray")

    @classmethod
    def from_tangent(cls, m1, S):
        """Ray from ``N(0, I)`` with direction ``(m1, S)``; ``cov1 = (I + S)^2``."""
        S = symmetrize(np.atleast_2d(S))
        A = np.eye(S.shape[0]) + S
        return cls(np.zeros(S.shape[0]), np.eye(S.shape[0]), m1, A @ A, A=A)

    @property
    def dim(self):
        return self.m0.size

    @property
    def speed(self):
        dm = self.m1 - self.m0
        D = self.A - np.eye(self.dim)
        return math.sqrt(float(dm @ dm + np.trace(D @ self.cov0 @ D)))

    @property
    def tangent(self):
        return self.A - np.eye(self.dim)

    @property
    def has_standard_base(self):
        return not np.any(self.m0) and np.array_equal(self.cov0, np.eye(self.dim))

    @property
    def base(self):
        return GaussianMeasure(self.m0, self.cov0)

    def point(self, t):
        M = (1 - t) * np.eye(self.dim) + t * self.A
        return GaussianMeasure((1 - t) * self.m0 + t * self.m1, symmetrize(M @ self.cov0 @ M))

    def extension_interval(self):
        return _map_interval(self.A)

    def to_dict(self):
        return {
            "kind": self.kind,
            "m0": self.m0.tolist(),
            "cov0": self.cov0.tolist(),
            "m1": self.m1.tolist(),
            "cov1": self.cov1.tolist(),
        }


def ray_from_dict(data):
    kind = data.get("kind")
    if kind == "gaussian1d":
        return Ray1DGaussian(data["m0"], data["s0"], data["m1"], data["s1"])
    if kind == "dirac1d":
        return RayDirac1D(data["m1"], data["s1"])
    if kind == "empirical1d":
        return Ray1DEmpirical(Discrete1D(**data["mu0"]), Discrete1D(**data["mu1"]))
    if kind == "bw":
        return RayBW(data["m0"], data["cov0"], data["m1"], data["cov1"])
    raise DomainError(f"unknown ray kind {kind!r}")


# ---------------------------------------------------------------------------
# samplers


def sample_sphere(d, rng):
    """Uniform draw on the unit sphere of R^d."""
    while True:
        v = rng.standard_normal(d)
        nrm = np.linalg.norm(v)
        if nrm > 0:
            return v / nrm


def haar_orthogonal(d, rng):
    """Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def sample_bw_direction(d, rng):
    """Unit-speed tangent ``(m1, S)`` at ``N(0, I)`` with ``S`` PSD."""
    m1 = sample_sphere(d, rng)
    delta = haar_orthogonal(d, rng)
    theta = sample_sphere(d, rng)
    S = (delta * np.abs(theta)) @ delta.T
    norm = math.sqrt(float(m1 @ m1) + float(np.sum(S * S)))
    return m1 / norm, symmetrize(S / norm)


def sample_ray_bw(d, rng):
    if d < 1:
        raise DomainError("dimension must be >= 1")
    m1, S = sample_bw_direction(d, rng)
    return RayBW.from_tangent(m1, S)


def sample_ray_1d_dirac(rng, legacy_sigma=False):
    """Unit-speed ray from ``delta_0``: ``m1 ~ U[-1, 1]``, ``s1 = sqrt(1 - m1^2)``.

    ``legacy_sigma=True`` uses ``s1 = sqrt(1 - m1)`` instead, which does not
    give unit speed; kept only for comparison runs.
    """
    m1 = rng.uniform(-1.0, 1.0)
    s1 = math.sqrt(1.0 - m1) if legacy_sigma else math.sqrt(max(1.0 - m1 * m1, 0.0))
    return RayDirac1D(m1, s1)


def sample_ray_1d_gaussian(rng):
    """Unit-speed ray from ``N(0, 1)``: ``s1 = 1 + sqrt(1 - m1^2)``."""
    m1 = rng.uniform(-1.0, 1.0)
    return Ray1DGaussian(0.0, 1.0, m1, 1.0 + math.sqrt(max(1.0 - m1 * m1, 0.0)))


def check_unit_speed(ray, tol=1e-8):
    """Cross-check a ray's speed against the closed-form W2 distance."""
    if isinstance(ray, RayBW):
        return abs(bw_distance(ray.base, GaussianMeasure(ray.m1, ray.cov1)) - 1.0) <= tol
    return abs(ray.speed - 1.0) <= tol
