"""Wasserstein-over-Wasserstein particle flows and Gaussian-mixture flows.

A labeled dataset with ``C`` classes of ``n`` points each is a uniform
distribution over ``C`` empirical measures.  Its WoW gradient with respect
to particle ``x_{i,c}`` equals ``n C`` times the Euclidean gradient of the
objective, which is what :func:`sliced_particle_grad` returns.
"""
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._rng import substream
from .errors import DomainError, WBusemannError
from .measures import GaussianMixture, LabeledDataset
from .ot import class_distance_table, exact_ot_lp, uniform_merge_plan, wasserstein_bw_mixtures
from .sliced import (
    _Grouped,
    _uniform_normal_weights,
    b1dgmsw,
    bgmsw,
    class_gaussians,
    draw_sotdd,
    draw_sw,
    draw_swb1dg,
    draw_swbg,
    pca_reduce,
    sliced_distance,
    sotdd_label_scalars,
    swb1dg_label_scalars,
)

GRAD_METRICS = ("swb1dg", "swbg", "sotdd", "sw")


class FlowDiverged(WBusemannError):
    """Raised when particles blow up; ``trajectory`` holds the rows so far."""

    def __init__(self, message, trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True, eq=False)
class FlowState:
    particles: np.ndarray  # C x n x d
    iteration: int = 0
    velocity: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.particles, dtype=float)
        if x.ndim != 3:
            raise DomainError("particles must be a C x n x d array")
        if not np.all(np.isfinite(x)):
            raise DomainError("particles must be finite")
        object.__setattr__(self, "particles", x)
        if self.velocity is None:
            object.__setattr__(self, "velocity", np.zeros_like(x))

    @classmethod
    def from_dataset(cls, data):
        sizes = data.class_sizes()
        if np.any(sizes != sizes[0]):
            raise DomainError("flows need the same number of points in every class")
        return cls(np.stack([data.features[ix] for ix in data.class_index]))

    def to_dataset(self):
        C, n, d = self.particles.shape
        return LabeledDataset(self.particles.reshape(C * n, d), np.repeat(np.arange(1, C + 1), n))


@dataclass(frozen=True)
class FlowConfig:
    step: float = 1.0
    momentum: float = 0.9
    iterations: int = 1000
    projections: int = 64
    metric: str = "swbg"
    seed: int = 0
    target_batch: int = None  # None: use the full target every iteration
    eval_every: int = 0
    divergence_factor: float = 1e6
    d_reduced: int = 10

    def __post_init__(self):
        if not self.step > 0:
            raise DomainError("step must be positive")
        if not 0 <= self.momentum < 1:
            raise DomainError("momentum must lie in [0, 1)")
        if self.metric not in GRAD_METRICS:
            raise DomainError(f"no particle gradient for metric {self.metric!r}; choose from {GRAD_METRICS}")


# ---------------------------------------------------------------------------
# gradients


def _w2_grad_sorted(za, zb):
    """Derivative of column-wise uniform W2^2 with respect to sorted ``za``."""
    du, ia, ib = uniform_merge_plan(za.shape[0], zb.shape[0])
    contrib = 2.0 * du[:, None] * (za[ia] - zb[ib])
    starts = np.flatnonzero(np.diff(ia, prepend=-1))
    return np.add.reduceat(contrib, starts, axis=0), np.sum(du[:, None] * (za[ia] - zb[ib]) ** 2, axis=0)


def _unsort(g_sorted, order):
    g = np.empty_like(g_sorted)
    np.put_along_axis(g, order, g_sorted, axis=0)
    return g


def _class_sort(g, proj):
    """Class-wise sort returning sorted values and each row's rank in its class."""
    order = np.empty(proj.shape, dtype=np.intp)
    for s, e in g.blocks():
        order[s:e] = np.argsort(proj[s:e], axis=0, kind="stable") + s
    sorted_proj = np.take_along_axis(proj, order, axis=0)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(proj.shape[0])[:, None].repeat(proj.shape[1], 1), axis=0)
    return sorted_proj, rank


def _target_sorted(metric, gq, theta, alpha, extra):
    proj = gq.X @ theta
    if metric == "sw":
        return np.sort(proj, axis=0)
    if metric == "swb1dg":
        m1, s1, speed = extra
        sp, _ = _class_sort(gq, proj)
        q = swb1dg_label_scalars(gq, sp, m1, s1, speed)
        z = alpha[:, 0] * proj + alpha[:, 1] * q[gq.labels]
    elif metric == "swbg":
        q = extra[1]
        z = alpha[:, 0] * proj + alpha[:, 1] * q[gq.labels]
    else:
        lambdas = extra
        q = sotdd_label_scalars(gq, proj, lambdas)
        z = alpha[0] * proj + np.einsum("kb,knb->nb", alpha[1:], q[:, gq.labels, :])
    return np.sort(z, axis=0)


def _grad_chunk(metric, gp, gq, idx, seed, ctx):
    """Euclidean gradient (summed over ``idx``) and per-projection W2^2 terms."""
    d = gp.X.shape[1]
    X = gp.X
    if metric == "sw":
        theta = np.stack([draw_sw(seed, int(l), d) for l in idx], axis=1)
        proj = X @ theta
        order = np.argsort(proj, axis=0, kind="stable")
        gs, terms = _w2_grad_sorted(np.take_along_axis(proj, order, 0), _target_sorted("sw", gq, theta, None, None))
        return _unsort(gs, order) @ theta.T, terms

    if metric == "swb1dg":
        specs = [draw_swb1dg(seed, int(l), d) for l in idx]
        theta = np.stack([s.theta for s in specs], axis=1)
        alpha = np.stack([s.alpha for s in specs])
        m1 = np.array([s.ray.m1 for s in specs])
        s1 = np.array([s.ray.s1 for s in specs])
        speed = np.array([s.ray.speed for s in specs])
        proj = X @ theta
        sp, rank = _class_sort(gp, proj)
        q = swb1dg_label_scalars(gp, sp, m1, s1, speed)
        z = alpha[:, 0] * proj + alpha[:, 1] * q[gp.labels]
        order = np.argsort(z, axis=0, kind="stable")
        zt = _target_sorted("swb1dg", gq, theta, alpha, (m1, s1, speed))
        gs, terms = _w2_grad_sorted(np.take_along_axis(z, order, 0), zt)
        g = _unsort(gs, order)
        G = np.stack([g[s:e].sum(axis=0) for s, e in gp.blocks()])  # C x B
        coef = np.empty_like(proj)
        for s, e in gp.blocks():
            w = _uniform_normal_weights(e - s)
            coef[s:e] = -(m1 / (e - s) + s1 * w[rank[s:e] - s]) / speed
        dp = alpha[:, 0] * g + alpha[:, 1] * G[gp.labels] * coef
        return dp @ theta.T, terms

    if metric == "sotdd":
        k, lam_max, rate = ctx["k"], ctx["lam_max"], ctx["rate"]
        draws = [draw_sotdd(seed, int(l), d, k, lam_max, rate) for l in idx]
        theta = np.stack([t for t, _, _ in draws], axis=1)
        alpha = np.stack([a for _, a, _ in draws], axis=1)
        lambdas = np.stack([lam for _, _, lam in draws], axis=1)
        proj = X @ theta
        q = sotdd_label_scalars(gp, proj, lambdas)
        z = alpha[0] * proj + np.einsum("kb,knb->nb", alpha[1:], q[:, gp.labels, :])
        order = np.argsort(z, axis=0, kind="stable")
        zt = _target_sorted("sotdd", gq, theta, alpha, lambdas)
        gs, terms = _w2_grad_sorted(np.take_along_axis(z, order, 0), zt)
        g = _unsort(gs, order)
        G = np.stack([g[s:e].sum(axis=0) for s, e in gp.blocks()])
        fact = np.array([[math.factorial(int(v) - 1) for v in row] for row in lambdas])
        dp = alpha[0] * g
        for s, e in gp.blocks():
            c = gp.labels[s]
            # d/dp of mean(p^lam)/lam! is p^(lam-1)/(lam-1)!/n_c
            dq = proj[None, s:e, :] ** (lambdas[:, None, :] - 1) / fact[:, None, :] / (e - s)
            dp[s:e] += np.einsum("kb,knb->nb", alpha[1:] * G[c], dq)
        return dp @ theta.T, terms

    # swbg
    reducer, tq = ctx["reducer"], ctx["target_moments"]
    d_red = reducer.d_out
    specs = [draw_swbg(seed, int(l), d, d_red) for l in idx]
    theta = np.stack([s.theta for s in specs], axis=1)
    alpha = np.stack([s.alpha for s in specs])
    U = reducer(X)
    means, covs = _moments_grouped(gp, U)
    B = len(specs)
    q = np.empty((gp.C, B))
    qt = np.empty((gq.C, B))
    Hs = []
    for b, s in enumerate(specs):
        m1, S = s.ray
        q[:, b], H = _bw_busemann_and_hessian_factor(m1, S, means, covs)
        qt[:, b], _ = _bw_busemann_and_hessian_factor(m1, S, *tq)
        Hs.append(H)
    proj = X @ theta
    z = alpha[:, 0] * proj + alpha[:, 1] * q[gp.labels]
    order = np.argsort(z, axis=0, kind="stable")
    zt = _target_sorted("swbg", gq, theta, alpha, (None, qt))
    gs, terms = _w2_grad_sorted(np.take_along_axis(z, order, 0), zt)
    g = _unsort(gs, order)
    grad_x = (alpha[:, 0] * g) @ theta.T
    grad_u = np.zeros_like(U)
    for b, s in enumerate(specs):
        m1 = s.ray[0]
        for c, (lo, hi) in enumerate(gp.blocks()):
            Gc = alpha[b, 1] * g[lo:hi, b].sum()
            if Gc == 0.0:
                continue
            nc = hi - lo
            # dQ_c/du_j = -m1/n_c - (2/n_c) H_c (u_j - m_c)
            grad_u[lo:hi] += Gc * (-m1 / nc - (2.0 / nc) * (U[lo:hi] - means[c]) @ Hs[b][c])
    return grad_x + grad_u @ reducer.components.T, terms


def _moments_grouped(g, U):
    means = np.stack([U[s:e].mean(axis=0) for s, e in g.blocks()])
    covs = np.stack([(U[s:e] - m).T @ (U[s:e] - m) / (e - s) for (s, e), m in zip(g.blocks(), means)])
    return means, _jitter_stack(covs)


def _jitter_stack(covs):
    from .measures import jitter_covariance

    return np.stack([jitter_covariance(c) for c in covs])


def _bw_busemann_and_hessian_factor(m1, S, means, covs):
    """Busemann values ``-<m1,m> + Tr S - Tr (S C S)^{1/2}`` and ``1/2 S (S C S)^{-1/2} S``."""
    M = S @ covs @ S
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    w, V = np.linalg.eigh(M)
    w = np.clip(w, 0.0, None)
    vals = -(means @ m1) + np.trace(S) - np.sqrt(w).sum(axis=-1)
    inv_root = np.where(w > 1e-300, 1.0 / np.sqrt(np.maximum(w, 1e-300)), 0.0)
    Minv = (V * inv_root[:, None, :]) @ np.swapaxes(V, -1, -2)
    H = 0.5 * S @ Minv @ S
    return vals, H


def _flow_context(metric, target, d_reduced=10, reducer=None, k=5, lam_max=8, rate=2.0):
    ctx = {"k": k, "lam_max": lam_max, "rate": rate}
    if metric == "swbg":
        if reducer is None:
            reducer = pca_reduce([target.features], d_reduced)
        ctx["reducer"] = reducer
        ctx["target_moments"] = class_gaussians(target, reducer)
    return ctx


def sliced_particle_grad(metric, state, target, L, seed, ctx=None, wow=True):
    """Gradient of the squared sliced distance with respect to every particle.

    Sort permutations are frozen (ties go to the lower index), which gives
    the a.e. gradient.  With ``wow=True`` the result is the WoW gradient
    ``n C`` times the Euclidean one.  Returns ``(grad, terms)`` where
    ``terms`` are the per-projection squared distances, so ``terms.mean()``
    is the objective.  For ``swbg`` the dimension reducer in ``ctx`` stays
    fixed (fitted on the target by default).
    """
    if metric not in GRAD_METRICS:
        raise DomainError(f"no particle gradient for metric {metric!r}")
    if ctx is None:
        ctx = _flow_context(metric, target)
    C, n, d = state.particles.shape
    if d != target.dim:
        raise DomainError("state and target dimensions differ")
    data = state.to_dataset()
    gp, gq = _Grouped(data), _Grouped(target)
    grad = np.zeros((C * n, d))
    terms = np.empty(L)
    for s in range(0, L, 64):
        idx = np.arange(s, min(s + 64, L))
        g, t = _grad_chunk(metric, gp, gq, idx, seed, ctx)
        grad += g
        terms[idx] = t
    grad /= L
    if wow:
        grad *= n * C
    return grad.reshape(C, n, d), terms


def sliced_objective(metric, particles, target, L, seed, ctx=None):
    """The squared sliced distance whose gradient :func:`sliced_particle_grad` returns."""
    if ctx is None:
        ctx = _flow_context(metric, target)
    data = FlowState(particles).to_dataset()
    kw = {}
    if metric == "swbg":
        kw["reducer"] = ctx["reducer"]
    elif metric == "sotdd":
        kw = {"k": ctx["k"], "lam_max": ctx["lam_max"], "rate": ctx["rate"]}
    return sliced_distance(metric, data, target, L=L, seed=seed, **kw).value ** 2


# ---------------------------------------------------------------------------
# descent


def flow_step(state, grad, config):
    """Momentum step: ``v <- momentum v + grad``; ``x <- x - step v``."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.particles.shape:
        raise DomainError("gradient shape does not match the particles")
    v = config.momentum * state.velocity + grad
    return FlowState(state.particles - config.step * v, state.iteration + 1, v)


def _iteration_seed(seed, it):
    return int(substream(seed, "flow-iter", it).integers(2**62))


def _target_batch(target, size, seed, it):
    if size is None or size >= target.n:
        return target
    rng = substream(seed, "batch", it)
    rows = []
    for ix in target.class_index:
        k = max(1, int(round(size * ix.size / target.n)))
        rows.append(rng.choice(ix, size=min(k, ix.size), replace=False))
    return target.subset(np.sort(np.concatenate(rows)))


@dataclass
class FlowResult:
    state: FlowState
    trajectory: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,objective,wow_distance\n")
            for row in self.trajectory:
                wd = row.get("wow_distance")
                fh.write(f"{row['iteration']},{row['objective']!r},{'' if wd is None else repr(wd)}\n")


def run_flow(source, target, config, snapshot_every=0, ctx=None):
    """Run the particle flow from ``source`` towards ``target``.

    Each iteration draws fresh projections from the substream
    ``(seed, iteration)``.  Trajectory rows hold the objective estimate of
    the iterate before the step, plus ``wow_distance`` every
    ``config.eval_every`` iterations (and at the end).
    """
    if source.n_classes != target.n_classes or source.dim != target.dim:
        raise DomainError("source and target need the same number of classes and dimension")
    state = FlowState.from_dataset(source)
    if ctx is None:
        ctx = _flow_context(config.metric, target, d_reduced=config.d_reduced)
    scale0 = max(float(np.abs(state.particles).max()), 1e-12)
    result = FlowResult(state)
    for it in range(config.iterations):
        tgt = _target_batch(target, config.target_batch, config.seed, it)
        grad, terms = sliced_particle_grad(config.metric, state, tgt, config.projections, _iteration_seed(config.seed, it), ctx)
        row = {"iteration": it, "objective": float(terms.mean()), "wow_distance": None}
        if config.eval_every and it % config.eval_every == 0:
            row["wow_distance"] = wow_distance_eval(state.to_dataset(), target)
        result.trajectory.append(row)
        if snapshot_every and it % snapshot_every == 0:
            result.snapshots.append((it, state.particles.copy()))
        state = flow_step(state, grad, config)
        if not np.all(np.isfinite(state.particles)) or np.abs(state.particles).max() > config.divergence_factor * scale0:
            raise FlowDiverged(f"particles diverged at iteration {it}", result.trajectory)
    final = {"iteration": config.iterations, "objective": None, "wow_distance": None}
    if config.eval_every:
        final["wow_distance"] = wow_distance_eval(state.to_dataset(), target)
    result.trajectory.append(final)
    result.state = state
    return result


def write_snapshot(particles, path_prefix, iteration=None):
    """Binary row-major float64 dump plus a JSON sidecar with the shape."""
    arr = np.ascontiguousarray(particles, dtype="<f8")
    arr.tofile(f"{path_prefix}.bin")
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump({"shape": list(arr.shape), "dtype": "float64", "order": "C", "iteration": iteration}, fh)


def read_snapshot(path_prefix):
    with open(f"{path_prefix}.json") as fh:
        meta = json.load(fh)
    return np.fromfile(f"{path_prefix}.bin", dtype="<f8").reshape(meta["shape"])


# ---------------------------------------------------------------------------
# datasets and evaluation


def rings_target(n_per_class=80, radii=(1.0, 2.0, 3.0), seed=0, mode="even"):
    """Concentric rings, one class per radius.

    ``mode="even"`` spaces the points evenly (deterministic); ``"uniform"``
    draws angles uniformly at random.
    """
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii) or len(set(radii)) != len(radii):
        raise DomainError("radii must be distinct and positive")
    feats, labels = [], []
    for c, r in enumerate(radii):
        if mode == "even":
            ang = 2 * np.pi * np.arange(n_per_class) / n_per_class
        elif mode == "uniform":
            ang = substream(seed, "rings", c).uniform(0, 2 * np.pi, n_per_class)
        else:
            raise DomainError(f"unknown mode {mode!r}")
        feats.append(r * np.column_stack([np.cos(ang), np.sin(ang)]))
        labels.append(np.full(n_per_class, c + 1))
    return LabeledDataset(np.concatenate(feats), np.concatenate(labels))


def gaussian_source(like, seed=0, scale=1.0):
    """Standard-normal particles with the class layout of ``like``."""
    rng = substream(seed, "source")
    return LabeledDataset(scale * rng.standard_normal(like.features.shape), like.labels)


def wow_distance_eval(P, Q, return_plan=False, max_entries=None):
    """WoW distance between uniform distributions over class-conditionals."""
    kw = {} if max_entries is None else {"max_entries": max_entries}
    table = class_distance_table(P, Q, **kw)
    wp = np.full(P.n_classes, 1.0 / P.n_classes)
    wq = np.full(Q.n_classes, 1.0 / Q.n_classes)
    plan = exact_ot_lp(wp, wq, cost=table, **kw)
    value = float(np.sqrt(max(plan.cost, 0.0)))
    return (value, plan) if return_plan else value


# ---------------------------------------------------------------------------
# Gaussian mixture flow


@dataclass(frozen=True, eq=False)
class GMMFlowState:
    logits: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    floor: float = 1e-6

    @classmethod
    def from_mixture(cls, mix, floor=1e-6):
        return cls(np.log(mix.weights), mix.means.copy(), mix.covs.copy(), floor)

    @property
    def weights(self):
        z = self.logits - self.logits.max()
        w = np.exp(z)
        return w / w.sum()

    def to_mixture(self):
        return GaussianMixture.from_arrays(self.weights, self.means, self.covs)


@dataclass(frozen=True)
class GMMFlowConfig:
    step: float = 0.1
    L: int = 200
    seed: int = 0
    h: float = 1e-5


def _gmm_objective(metric, logits, means, covs, target, cfg):
    z = logits - logits.max()
    w = np.exp(z)
    mix = GaussianMixture.from_arrays(w / w.sum(), means, covs)
    if metric == "b1dgmsw":
        return b1dgmsw(mix, target, L=cfg.L, seed=cfg.seed).value ** 2
    if metric == "bgmsw":
        return bgmsw(mix, target, L=cfg.L, seed=cfg.seed).value ** 2
    if metric == "w_bw-exact":
        return wasserstein_bw_mixtures(mix, target) ** 2
    raise DomainError(f"unknown mixture metric {metric!r}")


def _clip_covs(covs, floor):
    w, V = np.linalg.eigh(0.5 * (covs + np.swapaxes(covs, -1, -2)))
    w = np.maximum(w, floor)
    return (V * w[:, None, :]) @ np.swapaxes(V, -1, -2)


def gmm_flow_step(state, target, metric="b1dgmsw", config=GMMFlowConfig()):
    """One descent step on (logits, means, covariances).

    Gradients are central finite differences of the squared metric with the
    projections held fixed (same seed), taken over the upper triangle of
    each covariance.  The covariance step shrinks to a quarter of the
    smallest eigenvalue when that is below ``h``.  After the step, covariance eigenvalues are clipped at
    ``state.floor``; weights stay on the simplex through the softmax.
    """
    h = config.h
    K, d = state.means.shape
    f = lambda lg, m, c: _gmm_objective(metric, lg, m, c, target, config)  # noqa: E731

    g_logits = np.zeros(K)
    for k in range(K):
        e = np.zeros(K)
        e[k] = h
        g_logits[k] = (f(state.logits + e, state.means, state.covs) - f(state.logits - e, state.means, state.covs)) / (2 * h)
    g_means = np.zeros_like(state.means)
    for k in range(K):
        for i in range(d):
            e = np.zeros_like(state.means)
            e[k, i] = h
            g_means[k, i] = (f(state.logits, state.means + e, state.covs) - f(state.logits, state.means - e, state.covs)) / (2 * h)
    g_covs = np.zeros_like(state.covs)
    for k in range(K):
        # near the floor a full step could leave the SPD cone
        hk = min(h, 0.25 * float(np.linalg.eigvalsh(state.covs[k])[0]))
        for i in range(d):
            for j in range(i, d):
                e = np.zeros_like(state.covs)
                e[k, i, j] = e[k, j, i] = hk
                val = (f(state.logits, state.means, state.covs + e) - f(state.logits, state.means, state.covs - e)) / (2 * hk)
                g_covs[k, i, j] = g_covs[k, j, i] = val if i == j else 0.5 * val
    s = config.step
    covs = _clip_covs(state.covs - s * g_covs, state.floor)
    return replace(state, logits=state.logits - s * g_logits, means=state.means - s * g_means, covs=covs)
