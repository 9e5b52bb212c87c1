"""Federated supernet training with per-client path personalization."""

from .adaptation import AdaptationResult, adapt_exhaustive, adapt_gradient
from .config import ExperimentConfig
from .data import Case, SiteProfile, SplitSet, generate_site, normalize, split
from .engine import SpatialField
from .federation import (Client, ClientUpdate, FLConfig, aggregate,
                         local_training, run_federated)
from .params import ParameterSet
from .supernet import (Candidate, SlotSpec, SupernetConfig, SupernetModel,
                       build, default_config, desk_config, extract_subnetwork,
                       forward, forward_mixture, sample_path)

__version__ = "0.1.0"

__all__ = [
    "AdaptationResult", "adapt_exhaustive", "adapt_gradient",
    "ExperimentConfig",
    "Case", "SiteProfile", "SplitSet", "generate_site", "normalize", "split",
    "SpatialField",
    "Client", "ClientUpdate", "FLConfig", "aggregate", "local_training",
    "run_federated",
    "ParameterSet",
    "Candidate", "SlotSpec", "SupernetConfig", "SupernetModel", "build",
    "default_config", "desk_config", "extract_subnetwork", "forward",
    "forward_mixture", "sample_path",
]
