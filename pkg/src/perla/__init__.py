"""Bayesian spatial clustering of multivariate areal outcomes.

Areas are allocated to clusters through stick-breaking probabilities whose
latent fields carry CAR spatial priors; cluster intercepts get global-local
shrinkage priors.  Fitting is by Gibbs sampling with Polya-gamma
augmentation.
"""

__version__ = "0.1.0"

from .errors import PerlaError, SamplerError, ValidationError
from .graph import AdjacencyGraph, connected_components, load_adjacency, load_area_registry
from .ingest import Dataset, load_dataset
from .priors import RhoMode, ShrinkageConfig, ShrinkageState
from .sampler import FitConfig, ModelState, PosteriorDraws, fit, run_chain
from .post import dic3, ecr_relabel, hpd_interval, point_partition, posterior_mode, rand_index

__all__ = [
    "AdjacencyGraph",
    "Dataset",
    "FitConfig",
    "ModelState",
    "PerlaError",
    "PosteriorDraws",
    "RhoMode",
    "SamplerError",
    "ShrinkageConfig",
    "ShrinkageState",
    "ValidationError",
    "connected_components",
    "dic3",
    "ecr_relabel",
    "fit",
    "hpd_interval",
    "load_adjacency",
    "load_area_registry",
    "load_dataset",
    "point_partition",
    "posterior_mode",
    "rand_index",
    "run_chain",
]
