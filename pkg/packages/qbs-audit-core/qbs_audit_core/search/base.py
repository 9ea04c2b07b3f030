"""Shared search state: parameters, fitness traces and search outcomes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from qbs_audit_core.game import FitnessResult
from qbs_audit_core.inference import LogisticModel, TrainConfig
from qbs_audit_core.protocol import STABILITY_WINDOW
from qbs_audit_core.query import Axis, QueryMultiset, QuerySyntax


@dataclass(frozen=True)
class SearchParams:
    """Knobs of the multiset searches.

    ``new_per_iter`` queries are replaced per iteration, so
    ``m - new_per_iter`` are kept.  ``axes`` are the extensions the
    multi-stage search may explore; ``stage_iterations`` overrides
    ``iterations`` per stage (stage 0 first).
    """

    m: int = 100
    new_per_iter: int = 1
    iterations: int = 5000
    axes: frozenset[Axis] = frozenset()
    master_seed: int = 0
    stage_iterations: Optional[tuple[int, ...]] = None
    train_config: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}.")
        if not 1 <= self.new_per_iter <= self.m:
            raise ValueError(f"new_per_iter must be in [1, m={self.m}], got {self.new_per_iter}.")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}.")
        object.__setattr__(self, "axes", frozenset(Axis(a) for a in self.axes))

    def iterations_for(self, stage: int) -> int:
        if self.stage_iterations and stage < len(self.stage_iterations):
            return self.stage_iterations[stage]
        return self.iterations


@dataclass(eq=False)
class FitnessTrace:
    """Fitness per iteration; ``values[0]`` is the starting multiset's."""

    values: list[float]
    best_index: int
    best_multiset: QueryMultiset
    best_fitness: float
    best_model: LogisticModel

    @classmethod
    def start(cls, multiset: QueryMultiset, result: FitnessResult) -> FitnessTrace:
        return cls([result.fitness], 0, multiset, result.fitness, result.model)

    def record(self, multiset: QueryMultiset, result: FitnessResult) -> None:
        self.values.append(result.fitness)
        if result.fitness > self.best_fitness:
            self.best_index = len(self.values) - 1
            self.best_multiset = multiset
            self.best_fitness = result.fitness
            self.best_model = result.model

    @property
    def iterations(self) -> int:
        return len(self.values) - 1

    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(np.asarray(self.values, dtype=np.float64))


@dataclass(eq=False)
class StageCandidate:
    """One local search of a stage, run with ``axes`` enabled."""

    axes: frozenset[Axis]
    trace: FitnessTrace

    @property
    def fitness(self) -> float:
        return self.trace.best_fitness

    @property
    def label(self) -> str:
        return QuerySyntax(self.axes).label


@dataclass(eq=False)
class StageResult:
    stage: int
    candidates: list[StageCandidate]
    chosen: int

    @property
    def winner(self) -> StageCandidate:
        return self.candidates[self.chosen]

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "chosen": self.winner.label,
            "candidates": {c.label: c.fitness for c in self.candidates},
        }


@dataclass(eq=False)
class SearchOutcome:
    """What any attack-discovery method returns."""

    method: str
    syntax: QuerySyntax
    best_multiset: QueryMultiset
    best_fitness: float
    model: LogisticModel
    traces: list[FitnessTrace] = field(default_factory=list)
    stages: list[StageResult] = field(default_factory=list)

    @classmethod
    def from_trace(cls, method: str, syntax: QuerySyntax, trace: FitnessTrace) -> SearchOutcome:
        return cls(method, syntax, trace.best_multiset, trace.best_fitness, trace.best_model, [trace])


def stability_metric(trace: FitnessTrace | list[float]) -> float:
    """|last fitness - mean of the last 100 fitness values|."""
    values = trace.values if isinstance(trace, FitnessTrace) else list(trace)
    if len(values) < STABILITY_WINDOW:
        raise ValueError(
            f"Stability needs at least {STABILITY_WINDOW} iterations, trace has {len(values)}."
        )
    window = np.asarray(values[-STABILITY_WINDOW:], dtype=np.float64)
    return float(abs(window[-1] - window.mean()))
