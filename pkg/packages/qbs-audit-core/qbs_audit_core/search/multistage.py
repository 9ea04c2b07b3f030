"""Multi-stage search: grow the syntax one extension axis at a time.

Stage 0 searches the limited syntax.  Every later stage runs one local
search per unexplored axis, each starting from the previous stage's
best multiset, and adopts the axis whose search did best.  Ranges (D2)
are only tried once arbitrary values (D1) have been adopted.
"""

from __future__ import annotations

import logging

import numpy as np

from qbs_audit_core.game import Fleet
from qbs_audit_core.query import Axis, QuerySyntax

from .base import SearchOutcome, SearchParams, StageCandidate, StageResult
from .local import local_search

logger = logging.getLogger(__name__)


def candidate_axes(available: frozenset[Axis], explored: frozenset[Axis]) -> list[Axis]:
    return [
        axis for axis in sorted(available, key=lambda a: a.value)
        if axis not in explored
        and not (axis is Axis.RANGES and Axis.ARBITRARY_VALUES not in explored)
    ]


def multi_stage_search(params: SearchParams, fleet: Fleet) -> SearchOutcome:
    seed = params.master_seed
    logger.info("Stage 0: limited syntax")
    first = StageCandidate(
        frozenset(),
        local_search(
            QuerySyntax.limited(), None, params, fleet,
            rng=np.random.default_rng([seed, 0, 0]),
            iterations=params.iterations_for(0),
        ),
    )
    stages = [StageResult(0, [first], 0)]
    best = first
    explored: frozenset[Axis] = frozenset()
    stage = 1

    while axes := candidate_axes(params.axes, explored):
        logger.info("Stage %d: trying %s", stage, ", ".join(a.value for a in axes))
        start = stages[-1].winner.trace.best_multiset
        candidates = [
            StageCandidate(
                explored | {axis},
                local_search(
                    QuerySyntax(explored | {axis}), start, params, fleet,
                    rng=np.random.default_rng([seed, stage, k + 1]),
                    iterations=params.iterations_for(stage),
                ),
            )
            for k, axis in enumerate(axes)
        ]
        chosen = max(range(len(candidates)), key=lambda k: (candidates[k].fitness, -k))
        result = StageResult(stage, candidates, chosen)
        stages.append(result)
        explored = result.winner.axes
        logger.info("Stage %d: adopted %s (fitness %.4f)", stage, axes[chosen].value, result.winner.fitness)
        if result.winner.fitness > best.fitness:
            best = result.winner
        stage += 1

    return SearchOutcome(
        "multistage",
        QuerySyntax(best.axes),
        best.trace.best_multiset,
        best.fitness,
        best.trace.best_model,
        [c.trace for s in stages for c in s.candidates],
        stages,
    )
