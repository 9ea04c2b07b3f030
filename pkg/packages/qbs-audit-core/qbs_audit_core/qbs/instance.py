"""Salted count-query simulator with suppression, layered noise and rounding.

Usage::

    qbs = QbsInstance(dataset, salt=b"secret")
    qbs.answer(query)          # int, cached per canonical form

Answers are pure functions of (salt, dataset, query), so the cache is a
write-once map: concurrent first writers compute the same value.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping, Optional

import numpy as np

from qbs_audit_core.data import Dataset
from qbs_audit_core.generation import round_half_away
from qbs_audit_core.protocol import SUPPRESSION_FLOOR
from qbs_audit_core.query import Condition, Query, QuerySyntax, canonical_form, condition_bytes, userset_mask

from . import noise
from .guards import (
    BaseGuard,
    IsolatingGuard,
    ShadowTable,
    ShadowTableGuard,
    SyntaxGuard,
    Verdict,
    build_shadow_table,
    isolating_attributes,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MitigationConfig:
    """The four post-release defenses, each independently switchable."""

    isolating_attributes: bool = False
    shadow_table: bool = False
    noise_when_no_conditions: bool = False
    stats_dynamic_seed: bool = False

    @classmethod
    def all(cls) -> MitigationConfig:
        return cls(True, True, True, True)

    @property
    def enabled(self) -> tuple[str, ...]:
        return tuple(f.name for f in fields(self) if getattr(self, f.name))

    def to_dict(self) -> dict[str, bool]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MitigationConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown mitigation(s): {sorted(unknown)}.")
        return cls(**{k: bool(v) for k, v in data.items()})


class QbsInstance:
    """One protected dataset behind a secret salt."""

    def __init__(
        self,
        dataset: Dataset,
        salt: bytes,
        syntax: Optional[QuerySyntax] = None,
        mitigations: Optional[MitigationConfig] = None,
        *,
        use_cache: bool = True,
    ) -> None:
        if not salt:
            raise ValueError("A QBS salt must be a nonempty byte string.")
        self.dataset = dataset
        self.salt = bytes(salt)
        self.syntax = syntax or QuerySyntax.full()
        self.mitigations = mitigations or MitigationConfig()
        self.use_cache = use_cache
        self.computations = 0

        self._names = dataset.names
        self._ids = dataset.user_ids
        self._cache: dict[bytes, int] = {}
        self._lock = threading.Lock()

        self.isolating: frozenset[int] = frozenset()
        self.shadow_table: Optional[ShadowTable] = None
        self._syntax_guard = SyntaxGuard(self.syntax, dataset.schema)
        self._mitigation_guard = self._build_mitigation_chain()
        if self._mitigation_guard is not None:
            self._syntax_guard.set_next(self._mitigation_guard)

    def _build_mitigation_chain(self) -> Optional[BaseGuard]:
        guards: list[BaseGuard] = []
        if self.mitigations.isolating_attributes:
            self.isolating = isolating_attributes(self.dataset)
            guards.append(IsolatingGuard(self.isolating))
        if self.mitigations.shadow_table:
            self.shadow_table = build_shadow_table(self.dataset)
            guards.append(ShadowTableGuard(self.shadow_table))
        if not guards:
            return None
        for guard, following in zip(guards, guards[1:]):
            guard.set_next(following)
        logger.debug("QBS mitigations enabled: %s", ", ".join(self.mitigations.enabled))
        return guards[0]

    # -- guards ---------------------------------------------------------------

    def check_mitigations(self, query: Query) -> Verdict:
        if self._mitigation_guard is None:
            return Verdict.allow()
        return self._mitigation_guard.run(query)

    def admit(self, query: Query) -> Verdict:
        """Syntax check first, then the enabled mitigations."""
        return self._syntax_guard.run(query)

    # -- noise ------------------------------------------------------------------

    def noisy_threshold(self, sorted_ids: np.ndarray) -> float:
        return noise.noisy_threshold(self.salt, sorted_ids)

    def userset_digest(self, sorted_ids: np.ndarray) -> bytes:
        return noise.userset_digest(sorted_ids, stats=self.mitigations.stats_dynamic_seed)

    def condition_noise(self, condition: Condition, sorted_ids: np.ndarray) -> tuple[float, float]:
        key = condition_bytes(condition, self._names[condition.attribute_index])
        return noise.condition_noise(self.salt, key, self.userset_digest(sorted_ids))

    # -- answering --------------------------------------------------------------

    def sorted_userset(self, query: Query) -> np.ndarray:
        return np.sort(self._ids[userset_mask(self.dataset, query)])

    def _unrounded_answer(self, query: Query) -> float:
        """Pre-rounding answer; exposed for noise calibration tests only."""
        if not self.admit(query).allowed:
            return 0.0
        ids = self.sorted_userset(query)
        count = len(ids)
        if count <= max(SUPPRESSION_FLOOR, self.noisy_threshold(ids)):
            return 0.0
        total = float(count)
        active = query.active
        for cond in active:
            static, dynamic = self.condition_noise(cond, ids)
            total += static + dynamic
        if not active and self.mitigations.noise_when_no_conditions:
            static, dynamic = noise.no_conditions_noise(self.salt, self.userset_digest(ids))
            total += static + dynamic
        return total

    def answer(self, query: Query) -> int:
        key = canonical_form(query, self._names) if self.use_cache else b""
        if self.use_cache:
            cached = self._cache.get(key)
            if cached is not None:
                return cached
        value = int(round_half_away(self._unrounded_answer(query)))
        with self._lock:
            self.computations += 1
        if not self.use_cache:
            return value
        return self._cache.setdefault(key, value)
