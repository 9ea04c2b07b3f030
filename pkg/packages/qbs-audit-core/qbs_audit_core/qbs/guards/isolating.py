"""Isolating-attribute mitigation.

An attribute is isolating when at least 80% of its distinct values are
held by a single user; NEQ and IN conditions on it are refused.
"""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from qbs_audit_core.data import AttributeRole, Dataset
from qbs_audit_core.protocol import ISOLATING_RATIO
from qbs_audit_core.query import Operator

from .base import BaseGuard, GuardContext, Verdict

GUARDED_OPERATORS = frozenset({Operator.NEQ, Operator.IN})


def is_isolating(dataset: Dataset, attribute_index: int) -> bool:
    _, counts = np.unique(dataset.column(attribute_index), return_counts=True)
    if not len(counts):
        return False
    return bool(np.count_nonzero(counts == 1) / len(counts) >= ISOLATING_RATIO)


def isolating_attributes(dataset: Dataset) -> frozenset[int]:
    return frozenset(
        i for i, attr in enumerate(dataset.schema)
        if attr.role is not AttributeRole.USER_ID and is_isolating(dataset, i)
    )


class IsolatingGuard(BaseGuard):
    def __init__(self, isolating: Iterable[int]) -> None:
        super().__init__()
        self.isolating = frozenset(isolating)

    def check(self, context: GuardContext) -> None:
        for cond in context.query.active:
            if cond.operator in GUARDED_OPERATORS and cond.attribute_index in self.isolating:
                context.verdict = Verdict.forbid("isolating")
                return
        super().check(context)
