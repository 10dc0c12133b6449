"""Experiment drivers, correlation statistics, EM fitting and the CLI."""
from .experiments import (
    ClusterReport,
    CorrelationReport,
    ExperimentConfig,
    clusters_cmd,
    correlate_cmd,
    make_blobs,
    make_cluster_mixture,
    suggest_k,
)
from .gmm import fit_gmm_em
from .stats import bootstrap_correlation, pearson, spearman

__all__ = [
    "ClusterReport", "CorrelationReport", "ExperimentConfig",
    "clusters_cmd", "correlate_cmd", "make_blobs", "make_cluster_mixture", "suggest_k",
    "fit_gmm_em", "bootstrap_correlation", "pearson", "spearman",
]
