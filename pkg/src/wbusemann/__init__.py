"""Busemann functions on the Wasserstein space, with sliced dataset distances.

Submodules
----------
measures   probability-measure containers and dataset I/O
ot         closed-form and exact Wasserstein computations
rays       geodesic-ray predicates, extension intervals and samplers
busemann   Busemann function closed forms, oracles and projection
sliced     Monte-Carlo sliced distances on datasets and mixtures
flow       particle and mixture gradient flows
harness    experiment drivers, statistics and the command line
"""
__version__ = "0.1.0"

from .busemann import busemann, busemann_1d, busemann_1d_gaussian, busemann_bw, busemann_project
from .errors import CapacityError, DatasetError, DomainError, InvalidMeasureError, InvalidRayError
from .measures import (
    Discrete1D,
    EmpiricalMeasure,
    GaussianMeasure,
    GaussianMixture,
    LabeledDataset,
    load_dataset_csv,
    save_dataset_csv,
)
from .ot import bw_distance, exact_ot_lp, otdd_exact, w2_1d
from .rays import Ray1DEmpirical, Ray1DGaussian, RayBW, RayDirac1D
from .sliced import SlicedEstimate, b1dgmsw, bgmsw, sliced_distance, sotdd_baseline, sw_vanilla, swb1dg, swbg

__all__ = [
    "__version__",
    "CapacityError", "DatasetError", "DomainError", "InvalidMeasureError", "InvalidRayError",
    "Discrete1D", "EmpiricalMeasure", "GaussianMeasure", "GaussianMixture", "LabeledDataset",
    "load_dataset_csv", "save_dataset_csv",
    "bw_distance", "exact_ot_lp", "otdd_exact", "w2_1d",
    "Ray1DEmpirical", "Ray1DGaussian", "RayBW", "RayDirac1D",
    "busemann", "busemann_1d", "busemann_1d_gaussian", "busemann_bw", "busemann_project",
    "SlicedEstimate", "b1dgmsw", "bgmsw", "sliced_distance", "sotdd_baseline", "sw_vanilla", "swb1dg", "swbg",
]
