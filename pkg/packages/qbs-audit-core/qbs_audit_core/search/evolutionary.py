"""Evolutionary baseline over limited-syntax multisets.

Each generation keeps the ``elite`` fittest multisets unchanged and
refills the population with mutated copies of uniformly chosen elites.
A mutation redraws each condition with probability ``p_mut`` and then
swaps one uniformly chosen query for a fresh random one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from qbs_audit_core.data import Dataset, TargetRecord
from qbs_audit_core.game import FitnessResult, Fleet, estimate_fitness
from qbs_audit_core.generation import random_condition, random_multiset, random_query
from qbs_audit_core.query import Query, QueryMultiset, QuerySyntax

from .base import FitnessTrace, SearchOutcome, SearchParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvolutionParams:
    population: int = 100
    elite: int = 10
    generations: int = 200
    p_mut: float = 0.1

    def __post_init__(self) -> None:
        if not self.population >= self.elite >= 1:
            raise ValueError(
                f"Need population >= elite >= 1, got population={self.population}, elite={self.elite}."
            )
        if not 0.0 <= self.p_mut <= 1.0:
            raise ValueError(f"p_mut must be a probability, got {self.p_mut}.")


def mutate_query(
    query: Query,
    syntax: QuerySyntax,
    target: TargetRecord,
    aux: Dataset,
    p_mut: float,
    rng: np.random.Generator,
) -> Query:
    conditions = tuple(
        random_condition(cond.attribute_index, syntax, target, aux, rng)
        if rng.random() < p_mut else cond
        for cond in query.conditions
    )
    return Query(conditions)


def mutate_multiset(
    multiset: QueryMultiset,
    syntax: QuerySyntax,
    target: TargetRecord,
    aux: Dataset,
    p_mut: float,
    rng: np.random.Generator,
) -> QueryMultiset:
    queries = [mutate_query(q, syntax, target, aux, p_mut, rng) for q in multiset]
    queries[rng.integers(len(queries))] = random_query(syntax, target, aux, rng)
    return QueryMultiset(tuple(queries))


def evolutionary_search(
    params: SearchParams,
    fleet: Fleet,
    evolution: Optional[EvolutionParams] = None,
) -> SearchOutcome:
    evolution = evolution or EvolutionParams()
    syntax = QuerySyntax.limited()
    rng = np.random.default_rng([params.master_seed, 0, 0])
    target, aux = fleet.target, fleet.aux

    population = [random_multiset(syntax, target, aux, params.m, rng) for _ in range(evolution.population)]
    scores = [estimate_fitness(s, fleet, params.train_config) for s in population]

    def ranking() -> list[int]:
        return sorted(range(len(population)), key=lambda i: (-scores[i].fitness, i))

    order = ranking()
    trace = FitnessTrace.start(population[order[0]], scores[order[0]])

    for generation in range(1, evolution.generations + 1):
        elites = [population[i] for i in order[: evolution.elite]]
        elite_scores: list[FitnessResult] = [scores[i] for i in order[: evolution.elite]]
        children = [
            mutate_multiset(elites[rng.integers(len(elites))], syntax, target, aux, evolution.p_mut, rng)
            for _ in range(evolution.population - evolution.elite)
        ]
        fleet.retain_columns([q for s in elites + children for q in s])
        population = elites + children
        scores = elite_scores + [estimate_fitness(c, fleet, params.train_config) for c in children]
        order = ranking()
        trace.record(population[order[0]], scores[order[0]])
        logger.debug("Generation %d: best fitness %.4f", generation, scores[order[0]].fitness)

    logger.info("Evolutionary search: best fitness %.4f", trace.best_fitness)
    return SearchOutcome.from_trace("evolutionary", syntax, trace)
