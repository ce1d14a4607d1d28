"""Cache placement under unknown popularity with switching costs."""
from .backend import DEFAULT_BACKEND, available_backends
from .catalog import Catalog, DemandVector, PopularityProfile, build_zipf_profile, default_catalog, sample_demand
from .policies import PolicySpec, initialize
from .simulator import EpisodeTrace, run_episode, step
from .spo import CacheContent, measure_alpha, solve_exact, solve_greedy

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_BACKEND",
    "available_backends",
    "Catalog",
    "DemandVector",
    "PopularityProfile",
    "build_zipf_profile",
    "default_catalog",
    "sample_demand",
    "PolicySpec",
    "initialize",
    "EpisodeTrace",
    "run_episode",
    "step",
    "CacheContent",
    "measure_alpha",
    "solve_exact",
    "solve_greedy",
]
