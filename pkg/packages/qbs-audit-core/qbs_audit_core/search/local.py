"""Single-stage local search over query multisets.

Each iteration keeps the ``m - new_per_iter`` queries the fitted model
weighs most, swaps the rest for fresh random queries and refits.  Only
the fresh queries are answered by the fleet; kept columns are cached.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from qbs_audit_core.game import Fleet, estimate_fitness
from qbs_audit_core.generation import random_multiset, random_query
from qbs_audit_core.inference import query_importance
from qbs_audit_core.query import QueryMultiset, QuerySyntax

from .base import FitnessTrace, SearchOutcome, SearchParams

logger = logging.getLogger(__name__)


def retained_positions(importance: np.ndarray, keep: int) -> list[int]:
    """Positions of the *keep* largest importances (lower index wins ties), in position order."""
    ranked = sorted(range(len(importance)), key=lambda j: (-float(importance[j]), j))
    return sorted(ranked[:keep])


def local_search(
    syntax: QuerySyntax,
    start: Optional[QueryMultiset],
    params: SearchParams,
    fleet: Fleet,
    *,
    rng: Optional[np.random.Generator] = None,
    iterations: Optional[int] = None,
) -> FitnessTrace:
    rng = rng or np.random.default_rng([params.master_seed, 0, 0])
    iterations = params.iterations if iterations is None else iterations
    if start is None:
        multiset = random_multiset(syntax, fleet.target, fleet.aux, params.m, rng)
    elif len(start) != params.m:
        raise ValueError(f"Start multiset has {len(start)} queries, expected m={params.m}.")
    else:
        multiset = start

    fleet.retain_columns(multiset.queries)
    result = estimate_fitness(multiset, fleet, params.train_config)
    trace = FitnessTrace.start(multiset, result)
    keep = params.m - params.new_per_iter

    for iteration in range(1, iterations + 1):
        kept = retained_positions(query_importance(result.model), keep)
        fresh = tuple(random_query(syntax, fleet.target, fleet.aux, rng) for _ in range(params.new_per_iter))
        multiset = QueryMultiset(tuple(multiset[j] for j in kept) + fresh)
        fleet.retain_columns(multiset.queries)
        result = estimate_fitness(multiset, fleet, params.train_config)
        trace.record(multiset, result)
        logger.debug("[%s] iteration %d: fitness %.4f", syntax.label, iteration, result.fitness)

    logger.info(
        "Local search (%s): best fitness %.4f at iteration %d of %d",
        syntax.label, trace.best_fitness, trace.best_index, iterations,
    )
    return trace


def run_local(params: SearchParams, fleet: Fleet, syntax: Optional[QuerySyntax] = None) -> SearchOutcome:
    """Single-stage search in *syntax* (default: every axis in ``params.axes``)."""
    syntax = syntax or QuerySyntax(params.axes)
    trace = local_search(syntax, None, params, fleet)
    return SearchOutcome.from_trace("local", syntax, trace)
