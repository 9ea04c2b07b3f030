"""Random query and value generation for the attack searches.

Every draw consumes the ``numpy.random.Generator`` it is given, so a
fixed seed reproduces the same queries.
"""

from __future__ import annotations

import math

import numpy as np

from qbs_audit_core.data import AttributeRole, Dataset, TargetRecord
from qbs_audit_core.protocol import ABSENT_VALUE, RANGE_WIDTHS, SEARCH_SENSITIVE_VALUE
from qbs_audit_core.query import (
    SIMPLE_OPERATORS,
    Axis,
    Condition,
    Operator,
    Query,
    QueryMultiset,
    QuerySyntax,
)

_SIMPLE_TYPE = (Operator.EQ, Operator.NEQ)


def round_half_away(value: float) -> float:
    """Round to the nearest integer, halves away from zero."""
    return math.copysign(math.floor(abs(value) + 0.5), value)


def range_offset(target_value: float, width: float) -> float:
    """Grid-aligned interval start closest to *target_value* (ties go to the even grid)."""
    even = width * 2 * round_half_away(target_value / (2 * width))
    shifted = width * (2 * round_half_away((2 * target_value - width) / (4 * width)) + 0.5)
    offset = even if abs(even - target_value) <= abs(shifted - target_value) else shifted
    return round(offset + 0.0, 10)


def _aux_candidates(aux: Dataset, attribute_index: int, target_value: float) -> np.ndarray:
    candidates = aux.distinct_values(attribute_index)
    return candidates[candidates != target_value]


def _pick(candidates: np.ndarray, rng: np.random.Generator) -> float:
    return float(candidates[rng.integers(len(candidates))])


def random_value_for_operator(
    operator: Operator,
    attribute_index: int,
    target_value: float,
    aux: Dataset,
    rng: np.random.Generator,
    *,
    arbitrary_values: bool = True,
) -> tuple[float, ...]:
    """Draw a payload for *operator* around the target's value ``r``.

    Without arbitrary values EQ/NEQ use ``r`` itself; sets are always
    ``{r, x}`` with ``x`` an auxiliary value or the absent sentinel.  When
    the auxiliary data holds no value besides ``r``, sets always take the
    sentinel and EQ keeps ``r``.
    """
    if operator is Operator.SKIP:
        raise ValueError("SKIP conditions have no value.")

    candidates = _aux_candidates(aux, attribute_index, target_value)
    if operator in (Operator.IN, Operator.NOT_IN):
        if not len(candidates) or rng.integers(2):
            return (target_value, ABSENT_VALUE)
        return (target_value, _pick(candidates, rng))

    if not arbitrary_values:
        if operator is Operator.BETWEEN:
            raise ValueError("BETWEEN needs arbitrary values (axis D1).")
        return (target_value,)

    width = float(RANGE_WIDTHS[rng.integers(len(RANGE_WIDTHS))])
    offset = range_offset(target_value, width)
    if operator is Operator.BETWEEN:
        return (offset, round(offset + width, 10))
    if operator is Operator.EQ:
        if len(candidates) and rng.integers(2):
            return (_pick(candidates, rng),)
        return (target_value,)
    return (offset if rng.integers(2) else target_value,)


def random_operator(syntax: QuerySyntax, ordinal: bool, rng: np.random.Generator) -> Operator:
    """Pick an operator type uniformly, then an operator within it."""
    extended = syntax.extended_operators(ordinal)
    if not extended:
        return SIMPLE_OPERATORS[rng.integers(len(SIMPLE_OPERATORS))]
    kind = rng.integers(3)
    if kind == 0:
        return Operator.SKIP
    group = _SIMPLE_TYPE if kind == 1 else extended
    return group[rng.integers(len(group))]


def random_condition(
    attribute_index: int,
    syntax: QuerySyntax,
    target: TargetRecord,
    aux: Dataset,
    rng: np.random.Generator,
) -> Condition:
    attr = aux.schema[attribute_index]
    if attr.role is AttributeRole.USER_ID:
        return Condition.skip(attribute_index)
    if attr.role is AttributeRole.SENSITIVE:
        op = SIMPLE_OPERATORS[rng.integers(len(SIMPLE_OPERATORS))]
        payload = () if op is Operator.SKIP else (float(SEARCH_SENSITIVE_VALUE),)
        return Condition(attribute_index, op, payload)
    if not target.knows(attribute_index):
        return Condition.skip(attribute_index)
    op = random_operator(syntax, attr.is_ordinal, rng)
    if op is Operator.SKIP:
        return Condition.skip(attribute_index)
    payload = random_value_for_operator(
        op,
        attribute_index,
        target.value_of(attribute_index),
        aux,
        rng,
        arbitrary_values=Axis.ARBITRARY_VALUES in syntax.axes,
    )
    return Condition(attribute_index, op, payload)


def random_query(
    syntax: QuerySyntax,
    target: TargetRecord,
    aux: Dataset,
    rng: np.random.Generator,
) -> Query:
    """Draw one query over ``aux.schema`` conditioned around the target."""
    return Query(tuple(
        random_condition(i, syntax, target, aux, rng) for i in range(aux.n_attributes)
    ))


def random_multiset(
    syntax: QuerySyntax,
    target: TargetRecord,
    aux: Dataset,
    m: int,
    rng: np.random.Generator,
) -> QueryMultiset:
    return QueryMultiset(tuple(random_query(syntax, target, aux, rng) for _ in range(m)))
