"""Differential noise-exploitation attack.

For a set ``A''`` of known attributes on which the target is unique, the
two queries::

    q1: a_i1 != r_i1 AND a_j = r_j (j in A'' \\ {i1}) AND a_n = v
    q2:                  a_j = r_j (j in A'' \\ {i1}) AND a_n = v

differ only by the target's record when the target's bit is ``v``.  The
difference of their noisy answers is then tested against the two noise
hypotheses, and the votes of all usable subsets decide the guess.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterator
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np

from qbs_audit_core.data import Dataset, TargetRecord, check_uniqueness
from qbs_audit_core.game import GameKind, GameParams, GameResult, QbsFactory, default_factory, game_round
from qbs_audit_core.inference import likelihood_ratio_predict
from qbs_audit_core.protocol import QueryAnswerer, parallel_map
from qbs_audit_core.query import Condition, Query, QueryMultiset

logger = logging.getLogger(__name__)

SENSITIVE_VALUES = (0, 1)


class AttackStatus(str, Enum):
    PREDICTED = "predicted"
    ABSTAINED = "abstained"


@dataclass(frozen=True)
class DifferencePair:
    attributes: tuple[int, ...]
    v_n: int
    q1: Query
    q2: Query

    @property
    def shared_conditions(self) -> int:
        """Conditions common to q1 and q2: the equalities plus the sensitive one."""
        return len(self.attributes)


@dataclass(frozen=True)
class DifferentialVote:
    pair: DifferencePair
    delta: float
    vote: int


@dataclass(frozen=True)
class DifferentialOutcome:
    status: AttackStatus
    prediction: Optional[int]
    votes: tuple[DifferentialVote, ...] = ()

    @property
    def multiset(self) -> QueryMultiset:
        return QueryMultiset(tuple(q for v in self.votes for q in (v.pair.q1, v.pair.q2)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "prediction": self.prediction,
            "votes": [
                {"attributes": list(v.pair.attributes), "v_n": v.pair.v_n, "delta": v.delta, "vote": v.vote}
                for v in self.votes
            ],
        }


def difference_pair(
    target: TargetRecord,
    n_attributes: int,
    sensitive_index: int,
    attributes: tuple[int, ...],
    v_n: int,
) -> DifferencePair:
    """Build (q1, q2) for *attributes*; the first attribute carries the NEQ."""
    shared = [Condition.eq(i, target.value_of(i)) for i in attributes[1:]]
    shared.append(Condition.eq(sensitive_index, v_n))
    q2 = Query.from_conditions(n_attributes, shared)
    q1 = q2.with_condition(Condition.neq(attributes[0], target.value_of(attributes[0])))
    return DifferencePair(attributes, v_n, q1, q2)


def unique_subsets(target: TargetRecord, aux: Dataset) -> Iterator[tuple[int, ...]]:
    """Known-attribute subsets, by increasing size, on which the target is unique in *aux*."""
    known = target.known_attributes
    for size in range(1, len(known) + 1):
        for subset in itertools.combinations(known, size):
            if check_uniqueness(aux, target, subset):
                yield subset


def differential_attack(target: TargetRecord, aux: Dataset, qbs: QueryAnswerer) -> DifferentialOutcome:
    """Vote over every unique, unsuppressed pair; ties predict 1."""
    votes = []
    for subset in unique_subsets(target, aux):
        for v_n in SENSITIVE_VALUES:
            pair = difference_pair(target, aux.n_attributes, aux.sensitive_index, subset, v_n)
            first, second = qbs.answer(pair.q1), qbs.answer(pair.q2)
            if first == 0 or second == 0:
                continue
            delta = float(second - first)
            votes.append(DifferentialVote(pair, delta, likelihood_ratio_predict(delta, pair.shared_conditions, v_n)))
    if not votes:
        logger.warning("Differential attack on user %d abstains: no usable query pair", target.user_id)
        return DifferentialOutcome(AttackStatus.ABSTAINED, None)
    ones = sum(v.vote for v in votes)
    prediction = 1 if 2 * ones >= len(votes) else 0
    return DifferentialOutcome(AttackStatus.PREDICTED, prediction, tuple(votes))


def play_differential_game(
    target: TargetRecord,
    aux: Dataset,
    distribution: Dataset,
    params: GameParams,
    *,
    qbs_factory: Optional[QbsFactory] = None,
) -> GameResult:
    """Attribute-inference game where the attacker runs :func:`differential_attack`.

    Abstaining repetitions guess 1 and are counted in ``abstentions``.
    """
    factory = qbs_factory or default_factory(params.mitigations)

    def repetition(index: int) -> tuple[bool, bool]:
        qbs, secret = game_round(GameKind.AIA, distribution, target, params, index, factory)
        outcome = differential_attack(target, aux, qbs)
        guess = 1 if outcome.prediction is None else outcome.prediction
        return guess == secret, outcome.status is AttackStatus.ABSTAINED

    results = parallel_map(repetition, range(params.repetitions), params.threads)
    wins = [won for won, _ in results]
    abstained = int(np.sum([a for _, a in results]))
    game_params = {**params.to_dict(), "kind": "differential"}
    return GameResult.from_wins(wins, params.master_seed, game_params, abstained)
