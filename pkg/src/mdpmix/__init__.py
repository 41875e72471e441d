"""mdpmix: learning mixtures of Markov chains and MDPs from short trajectories."""

from .core import (
    CountTable,
    MarkovMixture,
    SegmentScheme,
    Trajectory,
    load_mixture,
    load_trajectories,
    save_mixture,
    save_trajectories,
    segment_trajectory,
    split_dataset,
)
from .estimators import SegmentEstimate, segment_estimates
from .simulator import (
    GridworldSpec,
    MixingReport,
    build_gridworld_mixture,
    build_random_mixture,
    estimate_mixing_time,
    mixing_report,
    sample_dataset,
    sample_trajectory,
)

__all__ = [
    "CountTable",
    "MarkovMixture",
    "SegmentScheme",
    "Trajectory",
    "GridworldSpec",
    "MixingReport",
    "SegmentEstimate",
    "build_gridworld_mixture",
    "build_random_mixture",
    "estimate_mixing_time",
    "mixing_report",
    "load_mixture",
    "load_trajectories",
    "sample_dataset",
    "sample_trajectory",
    "save_mixture",
    "save_trajectories",
    "segment_estimates",
    "segment_trajectory",
    "split_dataset",
]

__version__ = "0.1.0"
