"""Shadow-table mitigation: NEQ/IN may only use common values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qbs_audit_core.data import Dataset
from qbs_audit_core.protocol import SHADOW_MAX_VALUES, SHADOW_MIN_USERS

from .base import BaseGuard, GuardContext, Verdict
from .isolating import GUARDED_OPERATORS


@dataclass(frozen=True)
class ShadowTable:
    """Permitted values per attribute index."""

    permitted: tuple[frozenset[float], ...]

    def permits(self, attribute_index: int, value: float) -> bool:
        return float(value) in self.permitted[attribute_index]


def build_shadow_table(dataset: Dataset) -> ShadowTable:
    """Keep values held by >= 10 users, most frequent first, at most 200 per attribute.

    Frequency ties keep the smaller encoded value.
    """
    permitted = []
    for index in range(dataset.n_attributes):
        values, counts = np.unique(dataset.column(index), return_counts=True)
        keep = counts >= SHADOW_MIN_USERS
        values, counts = values[keep], counts[keep]
        order = np.lexsort((values, -counts))[:SHADOW_MAX_VALUES]
        permitted.append(frozenset(float(v) for v in values[order]))
    return ShadowTable(tuple(permitted))


class ShadowTableGuard(BaseGuard):
    def __init__(self, table: ShadowTable) -> None:
        super().__init__()
        self.table = table

    def check(self, context: GuardContext) -> None:
        for cond in context.query.active:
            if cond.operator not in GUARDED_OPERATORS:
                continue
            if not all(self.table.permits(cond.attribute_index, v) for v in cond.payload):
                context.verdict = Verdict.forbid("shadow")
                return
        super().check(context)
