"""Experiment drivers: dataset-distance correlation and cluster-count detection."""
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__
from .._rng import substream
from ..errors import CapacityError, DomainError
from ..measures import EmpiricalMeasure, LabeledDataset
from ..sliced import METRICS, sliced_distance
from .gmm import fit_gmm_em
from .stats import bootstrap_correlation, pearson, spearman

REFERENCE = "otdd-exact"


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def repro_block(seed, cfg):
    return {"seed": int(seed), "version": __version__, "config_hash": config_hash(cfg)}


def make_blobs(C=5, n_per_class=100, d=10, separation=3.0, seed=0, spread=1.0):
    """Gaussian blobs whose class means sit at ``separation`` times random unit directions."""
    rng = substream(seed, "blobs")
    dirs = rng.standard_normal((C, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = separation * dirs
    x = np.concatenate([means[c] + spread * rng.standard_normal((n_per_class, d)) for c in range(C)])
    y = np.repeat(np.arange(1, C + 1), n_per_class)
    return LabeledDataset(x, y)


def make_cluster_mixture(n=1500, K=4, d=2, radius=10.0, seed=0):
    """Samples of a K-component mixture with well-separated, random-covariance clusters."""
    rng = substream(seed, "clusters")
    ang = 2 * np.pi * (np.arange(K) / K + rng.uniform(0, 1.0 / K))
    if d == 2:
        centers = radius * np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        centers = rng.standard_normal((K, d))
        centers = radius * centers / np.linalg.norm(centers, axis=1, keepdims=True)
    counts = rng.multinomial(n - K, np.full(K, 1.0 / K)) + 1
    pts = []
    for k in range(K):
        A = rng.standard_normal((d, d)) / np.sqrt(d)
        cov = A @ A.T + 0.3 * np.eye(d)
        pts.append(rng.multivariate_normal(centers[k], cov, counts[k]))
    return np.concatenate(pts)


# ---------------------------------------------------------------------------
# correlation study


@dataclass
class ExperimentConfig:
    experiment: str = "correlate"
    generator: dict = field(default_factory=lambda: {"C": 5, "n_per_class": 1000, "d": 10, "separation": 3.0})
    data_path: str = None
    metrics: tuple = ("swb1dg", "sotdd")
    L: tuple = (500,)
    pairs: int = 40
    size_range: tuple = (250, 500)
    class_concentration: float = 1.0
    bootstrap_sets: int = 10
    bootstrap_size: int = 50
    seed: int = 0
    threads: int = 1
    output: str = None

    def __post_init__(self):
        lo, hi = self.size_range
        if not 1 <= lo <= hi:
            raise DomainError("size_range must satisfy 1 <= lo <= hi")
        for m in self.metrics:
            if m not in METRICS and m != REFERENCE:
                raise DomainError(f"unknown metric {m!r}")
        if self.pairs < 2:
            raise DomainError("need at least two pairs")

    def to_dict(self):
        d = asdict(self)
        d["metrics"], d["L"], d["size_range"] = list(self.metrics), list(self.L), list(self.size_range)
        return d


@dataclass
class CorrelationReport:
    rows: list  # per (metric, L): dict with spearman, pearson, bootstrap stats
    table: dict  # column name -> per-pair distances
    pairs: list  # per-pair (size_a, size_b)
    repro: dict

    def to_dict(self):
        return {"correlations": self.rows, "table": self.table, "pairs": self.pairs, "reproducibility": self.repro}

    def correlation(self, metric, L=None, kind="spearman"):
        for r in self.rows:
            if r["metric"] == metric and (L is None or r["L"] == L):
                return r[kind]
        raise KeyError(metric)


def _class_proportional_subset(data, size, props, rng):
    rows = []
    counts = np.maximum(np.round(props * size).astype(int), 2)
    for ix, k in zip(data.class_index, counts):
        rows.append(rng.choice(ix, size=min(int(k), ix.size), replace=False))
    return data.subset(np.sort(np.concatenate(rows)))


def draw_pairs(base, cfg):
    """Seeded pair list: two subsets with random sizes and Dirichlet class proportions."""
    pairs = []
    lo, hi = cfg.size_range
    for p in range(cfg.pairs):
        rng = substream(cfg.seed, "pairs", p)
        sides = []
        for _ in range(2):
            size = int(rng.integers(lo, hi + 1))
            props = rng.dirichlet(np.full(base.n_classes, cfg.class_concentration))
            sides.append(_class_proportional_subset(base, size, props, rng))
        pairs.append(tuple(sides))
    return pairs


def _load_base(cfg):
    if cfg.data_path:
        from ..measures import load_dataset_csv

        return load_dataset_csv(cfg.data_path)
    g = dict(cfg.generator)
    g.setdefault("seed", cfg.seed)
    return make_blobs(**g)


def correlate_cmd(cfg, base=None):
    """Distances between seeded dataset pairs and their correlation with exact OTDD."""
    base = _load_base(cfg) if base is None else base
    pairs = draw_pairs(base, cfg)
    cols = [(REFERENCE, 0)] + [(m, L) for m in cfg.metrics for L in ([0] if m == REFERENCE else cfg.L)]
    cols = list(dict.fromkeys(cols))
    table = {f"{m}@{L}" if L else m: np.empty(len(pairs)) for m, L in cols}

    def work(i):
        a, b = pairs[i]
        for m, L in cols:
            pair_seed = int(substream(cfg.seed, "projections", i).integers(2**62))
            try:
                v = sliced_distance(m, a, b, L=L or 1, seed=pair_seed)
            except CapacityError as exc:
                raise CapacityError(f"{exc}; lower size_range") from None
            table[f"{m}@{L}" if L else m][i] = v.value

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            list(pool.map(work, range(len(pairs))))
    else:
        for i in range(len(pairs)):
            work(i)
    ref = table[REFERENCE]
    rows = []
    for m, L in cols:
        key = f"{m}@{L}" if L else m
        if m == REFERENCE and key == REFERENCE and m not in cfg.metrics:
            continue
        vals = table[key]
        bm, bs = bootstrap_correlation(ref, vals, cfg.bootstrap_sets, cfg.bootstrap_size, cfg.seed)
        pm, ps = bootstrap_correlation(ref, vals, cfg.bootstrap_sets, cfg.bootstrap_size, cfg.seed, stat=pearson)
        rows.append({
            "metric": m, "L": L, "spearman": spearman(ref, vals), "pearson": pearson(ref, vals),
            "spearman_boot_mean": bm, "spearman_boot_std": bs,
            "pearson_boot_mean": pm, "pearson_boot_std": ps,
        })
    return CorrelationReport(
        rows,
        {k: v.tolist() for k, v in table.items()},
        [[a.n, b.n] for a, b in pairs],
        repro_block(cfg.seed, cfg.to_dict()),
    )


# ---------------------------------------------------------------------------
# cluster-count detection


@dataclass
class ClusterReport:
    ks: list
    distances: list  # D(P_k, P_{k+1}) for k in ks
    suggested_k: int
    detected: bool
    threshold: float
    repro: dict

    def to_dict(self):
        return {
            "k": self.ks, "distance": self.distances, "suggested_k": self.suggested_k,
            "detected": self.detected, "threshold": self.threshold, "reproducibility": self.repro,
        }


def suggest_k(distances, rel_threshold=0.1):
    """Smallest ``k`` whose consecutive distance is below ``rel_threshold * max``.

    ``distances[i]`` is ``D(P_{i+1}, P_{i+2})``.  Returns ``(K, detected)``.
    A flat sequence (nothing below the threshold, or all zero) shows no
    cluster structure, so ``K = 1`` with ``detected=False``.
    """
    d = np.asarray(distances, dtype=float)
    top = d.max()
    if top == 0:
        return 1, False
    below = np.flatnonzero(d < rel_threshold * top)
    return (int(below[0] + 1), True) if below.size else (1, False)


def clusters_cmd(data, k_max=8, metric="b1dgmsw", L=500, seed=0, rel_threshold=0.1, threads=1, em_iters=200):
    """Fit mixtures for ``k = 1..k_max+1`` and measure consecutive distances."""
    if k_max < 2:
        raise DomainError("k_max must be >= 2")
    if metric not in ("b1dgmsw", "bgmsw", "w_bw-exact"):
        raise DomainError(f"metric {metric!r} does not compare mixtures")
    if not isinstance(data, EmpiricalMeasure):
        data = EmpiricalMeasure(np.asarray(data, dtype=float))
    ks = list(range(1, k_max + 2))

    def fit(k):
        return fit_gmm_em(data, k, seed=seed, iters=em_iters).mixture

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            fits = list(pool.map(fit, ks))
    else:
        fits = [fit(k) for k in ks]
    dists = []
    for a, b in zip(fits[:-1], fits[1:]):
        if metric == "w_bw-exact":
            from ..ot import wasserstein_bw_mixtures

            dists.append(wasserstein_bw_mixtures(a, b))
        else:
            dists.append(sliced_distance(metric, a, b, L=L, seed=seed).value)
    cfg = {"k_max": k_max, "metric": metric, "L": L, "rel_threshold": rel_threshold, "n": data.n, "dim": data.dim}
    k, detected = suggest_k(dists, rel_threshold)
    return ClusterReport(ks[:-1], dists, k, detected, rel_threshold, repro_block(seed, cfg))


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, 1000.0 * (time.perf_counter() - t)
