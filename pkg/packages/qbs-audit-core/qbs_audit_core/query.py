"""Query representation, syntax rules and userset evaluation.

A :class:`Query` is a COUNT with exactly one :class:`Condition` slot per
schema attribute; ``SKIP`` slots filter nothing and all other slots are
AND-ed::

    q = Query.from_conditions(dataset.n_attributes, [
        Condition.neq(1, 4),
        Condition.between(2, 40, 41),
        Condition.eq(dataset.sensitive_index, 1),
    ])
    users = evaluate_userset(dataset, q)
    key = canonical_form(q, dataset.names)
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import TYPE_CHECKING, Any

import numpy as np

from qbs_audit_core.data import AttributeRole

if TYPE_CHECKING:
    from qbs_audit_core.data import AttributeSchema, Dataset, TargetRecord

FIELD_SEPARATOR = b"\x1f"
CONDITION_SEPARATOR = b"\x1e"


class Operator(str, Enum):
    SKIP = "skip"
    EQ = "eq"
    NEQ = "neq"
    BETWEEN = "between"
    IN = "in"
    NOT_IN = "not_in"

    @property
    def tag(self) -> bytes:
        return _OPERATOR_TAGS[self]

    @property
    def arity(self) -> int:
        return _OPERATOR_ARITY[self]


_OPERATOR_TAGS = {
    Operator.SKIP: b"s",
    Operator.EQ: b"e",
    Operator.NEQ: b"n",
    Operator.BETWEEN: b"b",
    Operator.IN: b"i",
    Operator.NOT_IN: b"o",
}

_OPERATOR_ARITY = {
    Operator.SKIP: 0,
    Operator.EQ: 1,
    Operator.NEQ: 1,
    Operator.BETWEEN: 2,
    Operator.IN: 2,
    Operator.NOT_IN: 2,
}

SIMPLE_OPERATORS = (Operator.SKIP, Operator.EQ, Operator.NEQ)


# ---------------------------------------------------------------------------
# Conditions and queries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    """``a_i <operator> payload``.

    BETWEEN is an open interval ``(lo, hi)``; IN/NOT_IN payloads are
    two distinct values, stored sorted so equal sets compare equal.
    """

    attribute_index: int
    operator: Operator = Operator.SKIP
    payload: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        payload = tuple(float(v) for v in self.payload)
        if len(payload) != self.operator.arity:
            raise ValueError(
                f"{self.operator.name} takes {self.operator.arity} value(s), got {len(payload)}."
            )
        if self.operator is Operator.BETWEEN and not payload[0] < payload[1]:
            raise ValueError(f"BETWEEN needs lo < hi, got {payload}.")
        if self.operator in (Operator.IN, Operator.NOT_IN):
            if payload[0] == payload[1]:
                raise ValueError(f"{self.operator.name} needs two distinct values, got {payload}.")
            payload = tuple(sorted(payload))
        object.__setattr__(self, "payload", payload)

    @classmethod
    def skip(cls, index: int) -> Condition:
        return cls(index)

    @classmethod
    def eq(cls, index: int, value: float) -> Condition:
        return cls(index, Operator.EQ, (value,))

    @classmethod
    def neq(cls, index: int, value: float) -> Condition:
        return cls(index, Operator.NEQ, (value,))

    @classmethod
    def between(cls, index: int, lo: float, hi: float) -> Condition:
        return cls(index, Operator.BETWEEN, (lo, hi))

    @classmethod
    def in_(cls, index: int, first: float, second: float) -> Condition:
        return cls(index, Operator.IN, (first, second))

    @classmethod
    def not_in(cls, index: int, first: float, second: float) -> Condition:
        return cls(index, Operator.NOT_IN, (first, second))

    @property
    def is_skip(self) -> bool:
        return self.operator is Operator.SKIP

    def mask(self, column: np.ndarray) -> np.ndarray:
        """Boolean mask of the values in *column* satisfying this condition."""
        op = self.operator
        if op is Operator.SKIP:
            return np.ones(len(column), dtype=bool)
        if op is Operator.EQ:
            return column == self.payload[0]
        if op is Operator.NEQ:
            return column != self.payload[0]
        if op is Operator.BETWEEN:
            return (column > self.payload[0]) & (column < self.payload[1])
        hits = np.isin(column, self.payload)
        return hits if op is Operator.IN else ~hits

    def matches(self, value: float) -> bool:
        """True iff a single *value* satisfies this condition."""
        return bool(self.mask(np.array([value], dtype=np.float64))[0])


@dataclass(frozen=True)
class Query:
    """COUNT query with one condition slot per attribute."""

    conditions: tuple[Condition, ...]

    def __post_init__(self) -> None:
        conditions = tuple(self.conditions)
        for position, cond in enumerate(conditions):
            if cond.attribute_index != position:
                raise ValueError(
                    f"Condition slot {position} refers to attribute {cond.attribute_index}."
                )
        object.__setattr__(self, "conditions", conditions)

    @classmethod
    def empty(cls, n_attributes: int) -> Query:
        return cls(tuple(Condition.skip(i) for i in range(n_attributes)))

    @classmethod
    def from_conditions(cls, n_attributes: int, conditions: Iterable[Condition]) -> Query:
        """Build a query from conditions given in any order; missing slots are SKIP."""
        slots = [Condition.skip(i) for i in range(n_attributes)]
        seen: set[int] = set()
        for cond in conditions:
            if not 0 <= cond.attribute_index < n_attributes:
                raise ValueError(f"Attribute index {cond.attribute_index} is outside the schema.")
            if cond.attribute_index in seen:
                raise ValueError(f"Attribute {cond.attribute_index} has more than one condition.")
            seen.add(cond.attribute_index)
            slots[cond.attribute_index] = cond
        return cls(tuple(slots))

    @property
    def n_attributes(self) -> int:
        return len(self.conditions)

    @property
    def active(self) -> tuple[Condition, ...]:
        return tuple(c for c in self.conditions if not c.is_skip)

    def with_condition(self, condition: Condition) -> Query:
        slots = list(self.conditions)
        slots[condition.attribute_index] = condition
        return Query(tuple(slots))

    def without(self, attribute_index: int) -> Query:
        return self.with_condition(Condition.skip(attribute_index))


@dataclass(frozen=True)
class QueryMultiset:
    """An ordered multiset of queries; positions matter for model weights."""

    queries: tuple[Query, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "queries", tuple(self.queries))

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[Query]:
        return iter(self.queries)

    def __getitem__(self, position: int) -> Query:
        return self.queries[position]

    @property
    def m(self) -> int:
        return len(self.queries)

    def subset(self, positions: Iterable[int]) -> QueryMultiset:
        return QueryMultiset(tuple(self.queries[p] for p in positions))


# ---------------------------------------------------------------------------
# Syntax
# ---------------------------------------------------------------------------


class Axis(str, Enum):
    """Syntax extension axes on top of the limited syntax."""

    ARBITRARY_VALUES = "D1"
    RANGES = "D2"
    IN_SETS = "D3"
    NOT_IN_SETS = "D4"


@dataclass(frozen=True)
class QuerySyntax:
    """Enabled extension axes; the empty set is the limited syntax."""

    axes: frozenset[Axis] = frozenset()

    def __post_init__(self) -> None:
        axes = frozenset(Axis(a) for a in self.axes)
        if Axis.RANGES in axes and Axis.ARBITRARY_VALUES not in axes:
            raise ValueError("Axis D2 (ranges) requires axis D1 (arbitrary values).")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def limited(cls) -> QuerySyntax:
        return cls()

    @classmethod
    def full(cls) -> QuerySyntax:
        return cls(frozenset(Axis))

    @classmethod
    def parse(cls, text: str) -> QuerySyntax:
        """Parse ``lim``, ``ext`` or a comma list of axes such as ``D1,D3``."""
        cleaned = text.strip().lower()
        if cleaned in ("lim", "limited", ""):
            return cls.limited()
        if cleaned in ("ext", "extended", "full"):
            return cls.full()
        try:
            axes = frozenset(Axis(part.strip().upper()) for part in cleaned.split(","))
        except ValueError:
            raise ValueError(f"Unknown syntax '{text}'. Use 'lim', 'ext' or axes like 'D1,D3'.") from None
        return cls(axes)

    def with_axis(self, axis: Axis) -> QuerySyntax:
        return QuerySyntax(self.axes | {axis})

    @property
    def label(self) -> str:
        return ",".join(sorted(a.value for a in self.axes)) or "lim"

    def extended_operators(self, ordinal: bool) -> tuple[Operator, ...]:
        """Operators of the *extended* type available for one attribute."""
        ops = []
        if Axis.RANGES in self.axes and ordinal:
            ops.append(Operator.BETWEEN)
        if Axis.IN_SETS in self.axes:
            ops.append(Operator.IN)
        if Axis.NOT_IN_SETS in self.axes:
            ops.append(Operator.NOT_IN)
        return tuple(ops)


# ---------------------------------------------------------------------------
# Evaluation and encoding
# ---------------------------------------------------------------------------


def userset_mask(dataset: Dataset, query: Query) -> np.ndarray:
    """Row mask of the records satisfying every condition of *query*."""
    mask = np.ones(dataset.size, dtype=bool)
    for cond in query.active:
        mask &= cond.mask(dataset.values[:, cond.attribute_index])
    return mask


def evaluate_userset(dataset: Dataset, query: Query) -> frozenset[int]:
    """Y(D, q): the user ids of the matching records."""
    return frozenset(int(uid) for uid in dataset.user_ids[userset_mask(dataset, query)])


def _format_value(value: float) -> bytes:
    return f"{value + 0.0:.6f}".encode("ascii")


@lru_cache(maxsize=65536)
def condition_bytes(condition: Condition, name: str) -> bytes:
    """Canonical bytes of one condition: name, operator tag and values."""
    fields = [name.encode("utf-8"), condition.operator.tag]
    fields.extend(_format_value(v) for v in condition.payload)
    return FIELD_SEPARATOR.join(fields)


def canonical_form(query: Query, names: Sequence[str]) -> bytes:
    """Deterministic byte encoding of the non-SKIP conditions in attribute order."""
    return CONDITION_SEPARATOR.join(
        condition_bytes(cond, names[cond.attribute_index]) for cond in query.active
    )


# ---------------------------------------------------------------------------
# Support rules
# ---------------------------------------------------------------------------

_GRID_TOLERANCE = 1e-6


def on_range_grid(lo: float, hi: float) -> bool:
    """True iff (lo, hi) has width {1,2,5}·10^k and offset 2jw or (2j+½)w."""
    width = hi - lo
    if width <= 0:
        return False
    exponent = math.floor(math.log10(width))
    mantissa = width / 10.0**exponent
    if not any(math.isclose(mantissa, c, rel_tol=_GRID_TOLERANCE) for c in (1.0, 2.0, 5.0, 10.0)):
        return False
    phase = (lo / width) % 2.0
    return any(abs(phase - p) < _GRID_TOLERANCE for p in (0.0, 0.5, 2.0))


def is_supported(
    query: Query,
    syntax: QuerySyntax,
    schema: Sequence[AttributeSchema],
    target: TargetRecord | None = None,
) -> bool:
    """True iff every condition is legal under *syntax*.

    Without axis D1, values are restricted to the target's own values;
    that part of the rule is only checked when *target* is given (the
    simulator never knows the target).
    """
    if query.n_attributes != len(schema):
        return False
    arbitrary = Axis.ARBITRARY_VALUES in syntax.axes
    for cond in query.active:
        attr = schema[cond.attribute_index]
        op = cond.operator
        if attr.role is AttributeRole.USER_ID:
            return False
        if attr.role is AttributeRole.SENSITIVE:
            if op not in (Operator.EQ, Operator.NEQ) or cond.payload[0] not in (0.0, 1.0):
                return False
            continue
        if op is Operator.BETWEEN:
            if Axis.RANGES not in syntax.axes or not attr.is_ordinal:
                return False
            if not on_range_grid(*cond.payload):
                return False
            continue
        if op is Operator.IN and Axis.IN_SETS not in syntax.axes:
            return False
        if op is Operator.NOT_IN and Axis.NOT_IN_SETS not in syntax.axes:
            return False
        if not arbitrary and target is not None:
            if not target.knows(cond.attribute_index):
                return False
            if target.value_of(cond.attribute_index) not in cond.payload:
                return False
    return True


# ---------------------------------------------------------------------------
# Search-space size
# ---------------------------------------------------------------------------


def count_multisets(num_queries: int, m: int) -> int:
    """Number of multisets of size *m* over *num_queries* queries."""
    if num_queries < 1 or m < 0:
        raise ValueError("count_multisets needs num_queries >= 1 and m >= 0.")
    return math.comb(num_queries + m - 1, m)


def limited_query_count(n_attributes: int) -> int:
    """Distinct limited-syntax queries over *n_attributes* conditionable attributes."""
    return 3**n_attributes


def extended_query_count(
    ordinal_attributes: int = 5,
    ranges: int = 15,
    sets: int = 15,
    sensitive_options: int = 5,
) -> int:
    """Distinct extended-syntax queries under the usual counting assumptions.

    Each ordinal attribute can be skipped, compared with = or != against
    one value, or used with *ranges* intervals and *sets* sets for each of
    IN and NOT IN; the sensitive attribute has *sensitive_options* forms.
    """
    return (3 + ranges + 2 * sets) ** ordinal_attributes * sensitive_options


# ---------------------------------------------------------------------------
# Structured (de)serialization
# ---------------------------------------------------------------------------


def query_to_dict(query: Query) -> dict[str, Any]:
    return {
        "n_attributes": query.n_attributes,
        "conditions": [
            {"attribute": c.attribute_index, "operator": c.operator.value, "values": list(c.payload)}
            for c in query.active
        ],
    }


def query_from_dict(data: Mapping[str, Any]) -> Query:
    conditions = [
        Condition(int(c["attribute"]), Operator(c["operator"]), tuple(c.get("values", ())))
        for c in data["conditions"]
    ]
    return Query.from_conditions(int(data["n_attributes"]), conditions)
