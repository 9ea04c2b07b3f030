"""Attack explainability, vulnerability scans and attack reports.

The classifiers look for *difference-like* queries in a multiset: pairs
``(q1, q2)`` where ``q2`` is ``q1`` minus one condition that excludes the
target, all other conditions select the target, and the sensitive
attribute is compared against 0 or 1.  The strict form only admits
equalities with the target's values and a single NEQ; the generalized
form admits any condition evaluated against the target record.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, TypeVar

import numpy as np

from qbs_audit_core.data import AttributeRole, AttributeSchema, Dataset, TargetRecord
from qbs_audit_core.game import (
    Fleet,
    GameKind,
    GameParams,
    QbsFactory,
    estimate_fitness,
    play_game,
    wilson_interval,
)
from qbs_audit_core.inference import TrainConfig
from qbs_audit_core.protocol import HISTOGRAM_BIN_WIDTH, parallel_map
from qbs_audit_core.query import Operator, Query, QueryMultiset, canonical_form

logger = logging.getLogger(__name__)

T = TypeVar("T")


# ---------------------------------------------------------------------------
# Difference-like queries
# ---------------------------------------------------------------------------

ConditionTest = Callable[[Query, int, TargetRecord], Optional[bool]]
"""Returns True (selects target), False (excludes it) or None (not allowed)."""


def _strict_test(query: Query, index: int, target: TargetRecord) -> Optional[bool]:
    cond = query.conditions[index]
    if not target.knows(index) or cond.operator not in (Operator.EQ, Operator.NEQ):
        return None
    if cond.payload[0] != target.value_of(index):
        return None
    return cond.operator is Operator.EQ


def _generalized_test(query: Query, index: int, target: TargetRecord) -> Optional[bool]:
    if not target.knows(index):
        return None
    return query.conditions[index].matches(target.value_of(index))


def _excluding_position(
    query: Query,
    target: TargetRecord,
    schema: Sequence[AttributeSchema],
    test: ConditionTest,
) -> Optional[int]:
    """Shape check; returns the single excluding attribute, -1 if none, None if malformed."""
    excluding: list[int] = []
    sensitive_ok = False
    for cond in query.active:
        role = schema[cond.attribute_index].role
        if role is AttributeRole.USER_ID:
            return None
        if role is AttributeRole.SENSITIVE:
            if cond.operator not in (Operator.EQ, Operator.NEQ) or cond.payload[0] not in (0.0, 1.0):
                return None
            sensitive_ok = True
            continue
        verdict = test(query, cond.attribute_index, target)
        if verdict is None:
            return None
        if not verdict:
            excluding.append(cond.attribute_index)
    if not sensitive_ok or len(excluding) > 1:
        return None
    return excluding[0] if excluding else -1


def _flag_pairs(
    multiset: QueryMultiset,
    target: TargetRecord,
    schema: Sequence[AttributeSchema],
    test: ConditionTest,
) -> list[int]:
    present = set(multiset)
    shapes = {q: _excluding_position(q, target, schema, test) for q in present}
    participants: set[Query] = set()
    for query, excluded in shapes.items():
        if excluded is None or excluded < 0:
            continue
        base = query.without(excluded)
        if shapes.get(base) == -1:
            participants.update((query, base))
    return [position for position, q in enumerate(multiset) if q in participants]


def classify_difference_like(
    multiset: QueryMultiset,
    target: TargetRecord,
    schema: Sequence[AttributeSchema],
) -> list[int]:
    """Positions of queries in a strict difference-like pair (with multiplicity)."""
    return _flag_pairs(multiset, target, schema, _strict_test)


def classify_generalized_difference_like(
    multiset: QueryMultiset,
    target: TargetRecord,
    schema: Sequence[AttributeSchema],
) -> list[int]:
    """Positions of queries in a generalized difference-like pair (with multiplicity)."""
    return _flag_pairs(multiset, target, schema, _generalized_test)


def count_flagged(multiset: QueryMultiset, positions: Sequence[int], names: Sequence[str]) -> tuple[int, int]:
    """(count with multiplicity, count of distinct queries)."""
    distinct = {canonical_form(multiset[p], names) for p in positions}
    return len(positions), len(distinct)


@dataclass(frozen=True)
class Attribution:
    subset_accuracy: float
    full_accuracy: float
    flagged: int
    flagged_unique: int

    @property
    def ratio(self) -> float:
        if self.full_accuracy == 0:
            return 0.0 if self.subset_accuracy == 0 else math.inf
        return self.subset_accuracy / self.full_accuracy

    def to_dict(self) -> dict[str, Any]:
        return {
            "subset_accuracy": self.subset_accuracy,
            "full_accuracy": self.full_accuracy,
            "ratio": self.ratio,
            "flagged": self.flagged,
            "flagged_unique": self.flagged_unique,
        }


def attribute_accuracy(
    multiset: QueryMultiset,
    flagged: Sequence[int],
    fleet: Fleet,
    distribution: Dataset,
    game_params: GameParams,
    *,
    kind: GameKind = GameKind.AIA,
    train_config: Optional[TrainConfig] = None,
    full_accuracy: Optional[float] = None,
    qbs_factory: Optional[QbsFactory] = None,
) -> Attribution:
    """Retrain on the flagged queries only and replay the game with the same seeds."""
    positions = sorted(set(flagged))
    if not positions:
        raise ValueError("attribute_accuracy needs at least one flagged query.")

    def accuracy(queries: QueryMultiset) -> float:
        model = estimate_fitness(queries, fleet, train_config).model
        return play_game(kind, queries, model, distribution, fleet.target, game_params,
                         qbs_factory=qbs_factory).accuracy

    subset = accuracy(multiset.subset(positions))
    full = accuracy(multiset) if full_accuracy is None else full_accuracy
    _, unique = count_flagged(multiset, positions, distribution.names)
    return Attribution(subset, full, len(flagged), unique)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class UserResult:
    """Outcome of one attack on one user and repetition."""

    user_id: int
    repetition: int
    method: str
    status: str
    accuracy: float
    ci_low: float
    ci_high: float
    fitness: float
    syntax: str
    stage_choices: list[str] = field(default_factory=list)
    abstentions: int = 0
    runtime_seconds: float = 0.0
    best_multiset: list[str] = field(default_factory=list)
    queries: list[dict[str, Any]] = field(default_factory=list)
    model: Optional[dict[str, Any]] = None
    known_attributes: list[str] = field(default_factory=list)
    explainability: dict[str, Any] = field(default_factory=dict)
    trace: list[float] = field(default_factory=list)
    game: dict[str, Any] = field(default_factory=dict)

    CSV_FIELDS = (
        "user_id", "repetition", "method", "status", "accuracy", "ci_low", "ci_high",
        "fitness", "syntax", "abstentions", "runtime_seconds",
    )

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> UserResult:
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass
class AttackReport:
    users: list[UserResult] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)
    histogram: list[tuple[float, int]] = field(default_factory=list)

    @property
    def accuracies(self) -> np.ndarray:
        return np.asarray([u.accuracy for u in self.users], dtype=np.float64)

    def aggregate(self) -> dict[str, float]:
        values = self.accuracies
        if not len(values):
            return {"mean": 0.0, "std": 0.0, "count": 0, "pooled_ci_low": 0.0, "pooled_ci_high": 1.0}
        pooled_wins = sum(round(u.accuracy * u.game.get("R", 0)) for u in self.users)
        pooled_trials = sum(u.game.get("R", 0) for u in self.users)
        low, high = wilson_interval(pooled_wins, pooled_trials)
        return {
            "mean": float(values.mean()),
            "std": float(values.std()),
            "count": len(values),
            "pooled_ci_low": low,
            "pooled_ci_high": high,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "aggregate": self.aggregate(),
            "users": [u.to_dict() for u in self.users],
            "histogram": [[start, count] for start, count in self.histogram],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> AttackReport:
        return cls(
            [UserResult.from_dict(u) for u in data.get("users", [])],
            dict(data.get("config", {})),
            [(float(s), int(c)) for s, c in data.get("histogram", [])],
        )

    # -- persistence ------------------------------------------------------------

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(UserResult.CSV_FIELDS)
            for user in self.users:
                writer.writerow([getattr(user, name) for name in UserResult.CSV_FIELDS])

    def write_histogram_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(("bin_start", "count"))
            writer.writerows(self.histogram)

    @classmethod
    def load_json(cls, path: str | Path) -> AttackReport:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_user_csv(path: str | Path) -> list[dict[str, Any]]:
    """Read a per-user CSV written by :meth:`AttackReport.write_csv`."""
    numeric = {"accuracy", "ci_low", "ci_high", "fitness", "runtime_seconds"}
    integral = {"user_id", "repetition", "abstentions"}
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        for key in numeric:
            row[key] = float(row[key])
        for key in integral:
            row[key] = int(row[key])
    return rows


def load_histogram_csv(path: str | Path) -> list[tuple[float, int]]:
    with open(path, newline="", encoding="utf-8") as handle:
        return [(float(r["bin_start"]), int(r["count"])) for r in csv.DictReader(handle)]


# ---------------------------------------------------------------------------
# Vulnerability scan
# ---------------------------------------------------------------------------


def histogram_bins(accuracies: Sequence[float], width: float = HISTOGRAM_BIN_WIDTH) -> list[tuple[float, int]]:
    """Fixed-width bins over [0, 1]; accuracy 1.0 falls in the last bin."""
    n_bins = int(round(1.0 / width))
    counts = [0] * n_bins
    for accuracy in accuracies:
        index = min(int(math.floor(accuracy / width + 1e-9)), n_bins - 1)
        counts[max(index, 0)] += 1
    return [(round(i * width, 6), counts[i]) for i in range(n_bins)]


@dataclass
class ScanResult:
    table: list[UserResult]
    histogram: list[tuple[float, int]]

    def report(self, config: Optional[Mapping[str, Any]] = None) -> AttackReport:
        return AttackReport(list(self.table), dict(config or {}), list(self.histogram))


def vulnerability_scan(
    targets: Sequence[T],
    attack: Callable[[T], UserResult],
    *,
    threads: int = 1,
) -> ScanResult:
    """Attack every target and tabulate accuracies (ascending) with histogram bins.

    *targets* can be anything *attack* accepts, typically target records
    or (repetition, dataset, target) cells.
    """
    results = parallel_map(attack, targets, threads)
    table = sorted(results, key=lambda r: (r.accuracy, r.user_id))
    histogram = histogram_bins([r.accuracy for r in table])
    if table:
        logger.info(
            "Scanned %d users: accuracy %.4f .. %.4f", len(table), table[0].accuracy, table[-1].accuracy
        )
    return ScanResult(table, histogram)
