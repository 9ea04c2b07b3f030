"""Shared fixtures: small encoded datasets and noise-free stub systems.

Tests run under ``--import-mode=importlib``, so helpers are handed out
as fixtures rather than imported from this module.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import Optional

import numpy as np
import pytest

from qbs_audit_core.data import AttributeSchema, Dataset, TargetRecord, unique_users
from qbs_audit_core.query import Condition, Query, evaluate_userset


class ExactCounter:
    """Answers the true count: no suppression, no noise, no syntax rules."""

    def __init__(self, dataset: Dataset, salt: bytes = b"unused") -> None:
        self.dataset = dataset
        self.salt = salt
        self.computations = 0

    def answer(self, query: Query) -> float:
        self.computations += 1
        return float(len(evaluate_userset(self.dataset, query)))


class ZeroAnswerer:
    """A system that refuses everything."""

    def __init__(self, dataset: Dataset, salt: bytes = b"unused") -> None:
        self.dataset = dataset
        self.computations = 0

    def answer(self, query: Query) -> float:
        self.computations += 1
        return 0.0


def make_table(
    regular: Sequence[AttributeSchema],
    columns: Sequence[Sequence[float]],
    sensitive: Sequence[int],
) -> Dataset:
    """Dataset with ids 0..n-1, the given regular columns and a sensitive column."""
    n = len(sensitive)
    schema = [AttributeSchema.user_id(), *regular, AttributeSchema.sensitive("sens")]
    values = np.column_stack(
        [np.arange(n), *[np.asarray(c, dtype=float) for c in columns], np.asarray(sensitive, dtype=float)]
    )
    return Dataset.build(schema, values)


def toy_dataset(n: int = 60, seed: int = 7) -> Dataset:
    rng = np.random.default_rng(seed)
    return make_table(
        [
            AttributeSchema.categorical("color", 3, ("red", "green", "blue")),
            AttributeSchema.categorical("shape", 4),
            AttributeSchema.ordinal("age"),
            AttributeSchema.ordinal("hours"),
        ],
        [
            rng.integers(0, 3, n),
            rng.integers(0, 4, n),
            rng.integers(20, 61, n),
            rng.choice([20, 30, 40, 50], n),
        ],
        rng.integers(0, 2, n),
    )


def exact_match_query(dataset: Dataset, target: TargetRecord, sensitive: Optional[int] = 1) -> Query:
    """Every known attribute equals the target's value, optionally AND sens = *sensitive*."""
    conditions = [Condition.eq(i, target.value_of(i)) for i in target.known_attributes]
    if sensitive is not None:
        conditions.append(Condition.eq(dataset.sensitive_index, sensitive))
    return Query.from_conditions(dataset.n_attributes, conditions)


@pytest.fixture
def table() -> Callable[..., Dataset]:
    return make_table


@pytest.fixture
def toy() -> Dataset:
    return toy_dataset()


@pytest.fixture
def toy_factory() -> Callable[..., Dataset]:
    return toy_dataset


@pytest.fixture
def toy_target(toy: Dataset) -> TargetRecord:
    """First user that is unique on every regular attribute."""
    return TargetRecord.from_dataset(toy, int(unique_users(toy)[0]))


@pytest.fixture
def exact_match() -> Callable[..., Query]:
    return exact_match_query


@pytest.fixture
def exact_factory():
    return lambda dataset, salt: ExactCounter(dataset, salt)


@pytest.fixture
def zero_factory():
    return lambda dataset, salt: ZeroAnswerer(dataset, salt)
