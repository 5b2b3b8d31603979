"""Pluggable policies resolving choices and maps from reward statistics."""

from .policies import (
    UCB1,
    EpsilonGreedy,
    InOrder,
    MapTable,
    Policy,
    PolicyRegistry,
    Thompson,
    Uniform,
    default_policies,
)
from .search import (
    DEFAULT_MAX_REJECTIONS,
    MapResolution,
    ResolutionProposal,
    constrained_sample,
    StreamCache,
    derive_rng,
    feasible_assignments,
    map_table,
    resolve_choice,
    resolve_map,
)
from .stats import EMPTY, ArmKey, ArmStats, posterior_sample, ucb_score

__all__ = [
    "DEFAULT_MAX_REJECTIONS",
    "EMPTY",
    "UCB1",
    "ArmKey",
    "ArmStats",
    "EpsilonGreedy",
    "InOrder",
    "MapResolution",
    "MapTable",
    "Policy",
    "PolicyRegistry",
    "ResolutionProposal",
    "Thompson",
    "Uniform",
    "constrained_sample",
    "default_policies",
    "StreamCache",
    "derive_rng",
    "feasible_assignments",
    "map_table",
    "posterior_sample",
    "resolve_choice",
    "resolve_map",
    "ucb_score",
]
