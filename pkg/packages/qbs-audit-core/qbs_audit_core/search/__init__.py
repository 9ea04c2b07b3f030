"""Attack-discovery strategies."""

from .base import FitnessTrace, SearchOutcome, SearchParams, StageCandidate, StageResult, stability_metric
from .differential import (
    AttackStatus,
    DifferencePair,
    DifferentialOutcome,
    difference_pair,
    differential_attack,
    play_differential_game,
)
from .evolutionary import EvolutionParams, evolutionary_search, mutate_multiset
from .local import local_search, retained_positions, run_local
from .multistage import candidate_axes, multi_stage_search

__all__ = [
    "AttackStatus",
    "DifferencePair",
    "DifferentialOutcome",
    "EvolutionParams",
    "FitnessTrace",
    "SearchOutcome",
    "SearchParams",
    "StageCandidate",
    "StageResult",
    "candidate_axes",
    "difference_pair",
    "differential_attack",
    "evolutionary_search",
    "local_search",
    "multi_stage_search",
    "mutate_multiset",
    "play_differential_game",
    "retained_positions",
    "run_local",
    "stability_metric",
]
