from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbs_audit_core.data import AttributeSchema, Dataset, TargetRecord
from qbs_audit_core.query import (
    Axis,
    Condition,
    Operator,
    Query,
    QuerySyntax,
    canonical_form,
    count_multisets,
    evaluate_userset,
    extended_query_count,
    is_supported,
    limited_query_count,
    on_range_grid,
    query_from_dict,
    query_to_dict,
)


def _one_attribute(values: list[float]) -> Dataset:
    schema = [AttributeSchema.user_id(), AttributeSchema.ordinal("a"), AttributeSchema.sensitive("sens")]
    return Dataset.build(schema, [[i, v, 0] for i, v in enumerate(values)])


# ---------------------------------------------------------------------------
# Conditions and queries
# ---------------------------------------------------------------------------


def test_condition_payload_shape_is_checked():
    with pytest.raises(ValueError):
        Condition(1, Operator.EQ, ())
    with pytest.raises(ValueError, match="lo < hi"):
        Condition.between(1, 5, 5)
    with pytest.raises(ValueError, match="distinct"):
        Condition.in_(1, 3, 3)


def test_set_payloads_compare_as_sets():
    assert Condition.in_(1, 7, 2) == Condition.in_(1, 2, 7)
    assert Condition.not_in(1, 7, 2).payload == (2.0, 7.0)


def test_query_slots_must_follow_attribute_order():
    with pytest.raises(ValueError, match="slot 0"):
        Query((Condition.skip(1), Condition.skip(0)))
    with pytest.raises(ValueError, match="more than one"):
        Query.from_conditions(3, [Condition.eq(1, 0), Condition.neq(1, 2)])


def test_without_drops_one_condition():
    query = Query.from_conditions(3, [Condition.eq(1, 4), Condition.eq(2, 1)])
    assert query.without(1).active == (Condition.eq(2, 1),)


# ---------------------------------------------------------------------------
# Userset evaluation
# ---------------------------------------------------------------------------


def test_userset_of_condition_free_query_is_everyone():
    dataset = _one_attribute([5, 3, 5])
    assert evaluate_userset(dataset, Query.empty(3)) == {0, 1, 2}


def test_userset_equality():
    dataset = _one_attribute([5, 3, 5])
    assert evaluate_userset(dataset, Query.from_conditions(3, [Condition.eq(1, 5)])) == {0, 2}


def test_between_is_an_open_interval():
    dataset = _one_attribute([12, 12.5, 13, 17.5])
    query = Query.from_conditions(3, [Condition.between(1, 12.5, 17.5)])
    assert evaluate_userset(dataset, query) == {2}


def _naive_match(row: np.ndarray, query: Query) -> bool:
    for cond in query.active:
        value = row[cond.attribute_index]
        op, payload = cond.operator, cond.payload
        if op is Operator.EQ and not value == payload[0]:
            return False
        if op is Operator.NEQ and not value != payload[0]:
            return False
        if op is Operator.BETWEEN and not payload[0] < value < payload[1]:
            return False
        if op is Operator.IN and value not in payload:
            return False
        if op is Operator.NOT_IN and value in payload:
            return False
    return True


def _random_condition(index: int, rng: np.random.Generator) -> Condition:
    op = list(Operator)[rng.integers(len(Operator))]
    a, b = (float(v) for v in rng.choice(6, size=2, replace=False))
    if op is Operator.SKIP:
        return Condition.skip(index)
    if op in (Operator.EQ, Operator.NEQ):
        return Condition(index, op, (a,))
    return Condition(index, op, (min(a, b), max(a, b)))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rows=st.integers(0, 200))
def test_userset_matches_row_by_row_oracle(seed, rows):
    rng = np.random.default_rng(seed)
    schema = [
        AttributeSchema.user_id(),
        AttributeSchema.categorical("a", 6),
        AttributeSchema.ordinal("b", range(6)),
        AttributeSchema.sensitive("sens"),
    ]
    values = np.column_stack([
        np.arange(rows), rng.integers(0, 6, rows), rng.integers(0, 6, rows), rng.integers(0, 2, rows),
    ])
    dataset = Dataset(tuple(schema), values.reshape(rows, 4))
    for _ in range(5):
        query = Query((Condition.skip(0), _random_condition(1, rng), _random_condition(2, rng), Condition.skip(3)))
        expected = {int(r[0]) for r in dataset.values if _naive_match(r, query)}
        assert evaluate_userset(dataset, query) == expected


# ---------------------------------------------------------------------------
# Canonical form
# ---------------------------------------------------------------------------

NAMES = ("user_id", "a", "b", "sens")


def test_canonical_form_ignores_construction_order():
    conds = [Condition.eq(1, 4), Condition.between(2, 10, 15), Condition.eq(3, 1)]
    assert canonical_form(Query.from_conditions(4, conds), NAMES) == canonical_form(
        Query.from_conditions(4, reversed(conds)), NAMES
    )


def test_canonical_form_separates_values():
    first = Query.from_conditions(4, [Condition.eq(1, 4)])
    second = Query.from_conditions(4, [Condition.eq(1, 5)])
    assert canonical_form(first, NAMES) != canonical_form(second, NAMES)


def test_canonical_form_is_injective_on_random_queries():
    rng = np.random.default_rng(0)
    queries = {
        Query((Condition.skip(0), _random_condition(1, rng), _random_condition(2, rng), _random_condition(3, rng)))
        for _ in range(20_000)
    }
    assert len({canonical_form(q, NAMES) for q in queries}) == len(queries)


# ---------------------------------------------------------------------------
# Syntax
# ---------------------------------------------------------------------------


def test_syntax_parsing():
    assert QuerySyntax.parse("lim") == QuerySyntax.limited()
    assert QuerySyntax.parse("ext") == QuerySyntax.full()
    assert QuerySyntax.parse("d1, d3").axes == {Axis.ARBITRARY_VALUES, Axis.IN_SETS}
    assert QuerySyntax.parse("D3,D1").label == "D1,D3"
    assert QuerySyntax.limited().label == "lim"
    with pytest.raises(ValueError, match="requires axis D1"):
        QuerySyntax.parse("D2")
    with pytest.raises(ValueError, match="Unknown syntax"):
        QuerySyntax.parse("D9")


def test_extended_operators_respect_ordinality():
    syntax = QuerySyntax.full()
    assert syntax.extended_operators(True) == (Operator.BETWEEN, Operator.IN, Operator.NOT_IN)
    assert syntax.extended_operators(False) == (Operator.IN, Operator.NOT_IN)
    assert QuerySyntax.parse("D3").extended_operators(True) == (Operator.IN,)


@pytest.mark.parametrize(
    "lo, hi, expected",
    [
        (10, 15, True),
        (12.5, 17.5, True),
        (0, 1, True),
        (0.04, 0.05, True),
        (-20, -10, True),
        (10, 13, False),
        (11, 12, False),
        (0.03, 0.04, False),
        (5, 5, False),
    ],
)
def test_range_grid(lo, hi, expected):
    assert on_range_grid(lo, hi) is expected


SCHEMA = (
    AttributeSchema.user_id(),
    AttributeSchema.categorical("job", 5),
    AttributeSchema.ordinal("age", range(100)),
    AttributeSchema.sensitive("sens"),
)


def _q(*conditions: Condition) -> Query:
    return Query.from_conditions(len(SCHEMA), conditions)


def test_supported_ranges():
    full = QuerySyntax.full()
    assert is_supported(_q(Condition.between(2, 10, 15)), full, SCHEMA)
    assert not is_supported(_q(Condition.between(2, 10, 13)), full, SCHEMA)
    assert not is_supported(_q(Condition.between(1, 0, 1)), full, SCHEMA)
    assert not is_supported(_q(Condition.between(2, 10, 15)), QuerySyntax.parse("D1,D3"), SCHEMA)


def test_supported_sets_need_their_axis():
    assert not is_supported(_q(Condition.in_(1, 0, 2)), QuerySyntax.limited(), SCHEMA)
    assert is_supported(_q(Condition.in_(1, 0, 2)), QuerySyntax.parse("D3"), SCHEMA)
    assert not is_supported(_q(Condition.not_in(1, 0, 2)), QuerySyntax.parse("D3"), SCHEMA)


def test_sensitive_and_id_conditions():
    lim = QuerySyntax.limited()
    assert is_supported(_q(Condition.eq(3, 1)), lim, SCHEMA)
    assert is_supported(_q(Condition.neq(3, 0)), lim, SCHEMA)
    assert not is_supported(_q(Condition.eq(3, 2)), lim, SCHEMA)
    assert not is_supported(_q(Condition.in_(3, 0, 1)), QuerySyntax.full(), SCHEMA)
    assert not is_supported(_q(Condition.eq(0, 1)), QuerySyntax.full(), SCHEMA)


def test_limited_values_must_be_the_targets():
    target = TargetRecord((1, 2), (3.0, 40.0), user_id=9)
    lim = QuerySyntax.limited()
    assert is_supported(_q(Condition.neq(1, 3), Condition.eq(2, 40)), lim, SCHEMA, target)
    assert not is_supported(_q(Condition.eq(1, 4)), lim, SCHEMA, target)
    # Without the target the system cannot tell.
    assert is_supported(_q(Condition.eq(1, 4)), lim, SCHEMA)
    assert is_supported(_q(Condition.eq(1, 4)), QuerySyntax.parse("D1"), SCHEMA, target)
    assert is_supported(_q(Condition.in_(1, 3, -1_000_000)), QuerySyntax.parse("D3"), SCHEMA, target)


def test_mismatched_width_is_unsupported():
    assert not is_supported(Query.empty(3), QuerySyntax.full(), SCHEMA)


# ---------------------------------------------------------------------------
# Search-space sizes
# ---------------------------------------------------------------------------


def test_count_multisets_small_cases():
    assert count_multisets(1, 5) == 1
    assert count_multisets(3, 2) == 6
    assert count_multisets(7, 0) == 1
    with pytest.raises(ValueError):
        count_multisets(0, 3)


def test_limited_search_space_size():
    size = count_multisets(limited_query_count(6), 100)
    assert abs(math.log10(size) - math.log10(1.33e131)) < 0.01


def test_extended_search_space_size():
    assert extended_query_count() == 48**5 * 5
    size = count_multisets(extended_query_count(), 100)
    assert abs(math.log10(size) - (752 + math.log10(3.53))) < 0.01


def test_query_dict_form_restores_the_query():
    query = _q(Condition.neq(1, 4), Condition.between(2, 40, 41), Condition.eq(3, 1))
    assert query_from_dict(query_to_dict(query)) == query
