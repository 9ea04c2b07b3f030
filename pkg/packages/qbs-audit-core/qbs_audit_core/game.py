"""Fitness estimation on shadow fleets, and the privacy games.

A :class:`Fleet` is ``f`` training and ``g`` validation QBS instances,
each protecting a shadow dataset built around the target with its own
salt.  A multiset's fitness is the worse of the train/validation
accuracies of a logistic model predicting each shadow's label from the
multiset's answers::

    fleet = build_fleet(aux, target, FitnessParams(f=300, g=100, z=499))
    result = estimate_fitness(multiset, fleet)
    game = play_aia_game(multiset, result.model, distribution, target,
                         GameParams(dataset_size=500, repetitions=200))

Every random stream is derived from a master seed, so rebuilding a
fleet or replaying a game with the same seed gives identical results.
"""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Mapping, Optional

import numpy as np
from scipy.stats import binomtest

from qbs_audit_core.data import (
    Dataset,
    ShadowDataset,
    TargetRecord,
    sample_membership_dataset,
    sample_shadow_dataset,
    split_half,
)
from qbs_audit_core.inference import LogisticModel, TrainConfig, predict, train_logistic
from qbs_audit_core.protocol import QueryAnswerer, parallel_map
from qbs_audit_core.qbs import MitigationConfig, QbsInstance
from qbs_audit_core.query import Query, QueryMultiset

logger = logging.getLogger(__name__)

QbsFactory = Callable[[Dataset, bytes], QueryAnswerer]
"""Builds the system protecting one dataset from (dataset, salt)."""

_SPLIT_STREAM = 0
_FLEET_STREAM = 1
_GAME_STREAM = 2


class GameKind(str, Enum):
    AIA = "aia"
    MIA = "mia"


def derive_salt(purpose: str, seed: int, index: int) -> bytes:
    """Distinct salt per (purpose, seed, index)."""
    return hashlib.sha256(f"{purpose}:{seed}:{index}".encode("utf-8")).digest()


def stream_rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, index])


def default_factory(mitigations: MitigationConfig, *, use_cache: bool = True) -> QbsFactory:
    def factory(dataset: Dataset, salt: bytes) -> QueryAnswerer:
        return QbsInstance(dataset, salt, mitigations=mitigations, use_cache=use_cache)

    return factory


_SAMPLERS: dict[GameKind, Callable[[Dataset, TargetRecord, int, np.random.Generator], ShadowDataset]] = {
    GameKind.AIA: sample_shadow_dataset,
    GameKind.MIA: sample_membership_dataset,
}


# ---------------------------------------------------------------------------
# Fleet
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitnessParams:
    f: int = 3000
    g: int = 1000
    z: int = 7999
    train_config: TrainConfig = field(default_factory=TrainConfig)
    master_seed: int = 0
    split_seed: Optional[int] = None
    mitigations: MitigationConfig = field(default_factory=MitigationConfig)
    kind: GameKind = GameKind.AIA

    def __post_init__(self) -> None:
        if self.f < 1 or self.g < 1:
            raise ValueError(f"A fleet needs f >= 1 and g >= 1, got f={self.f}, g={self.g}.")
        if self.z < 0:
            raise ValueError(f"z must be >= 0, got {self.z}.")


class Fleet:
    """Train and validation instances with a per-query answer-column cache.

    Instances are built without their own answer cache; the fleet keeps
    one column per query and :meth:`retain_columns` bounds it.
    """

    def __init__(
        self,
        target: TargetRecord,
        aux: Dataset,
        train: Sequence[QueryAnswerer],
        train_labels: Sequence[int],
        val: Sequence[QueryAnswerer],
        val_labels: Sequence[int],
        *,
        threads: int = 1,
    ) -> None:
        self.target = target
        self.aux = aux
        self.train = tuple(train)
        self.val = tuple(val)
        self.train_labels = np.asarray(train_labels, dtype=np.int64)
        self.val_labels = np.asarray(val_labels, dtype=np.int64)
        self.threads = threads
        self._columns: dict[Query, np.ndarray] = {}

    @property
    def f(self) -> int:
        return len(self.train)

    @property
    def g(self) -> int:
        return len(self.val)

    @property
    def instances(self) -> tuple[QueryAnswerer, ...]:
        return self.train + self.val

    @property
    def computations(self) -> int:
        """Fresh answers computed so far across every instance."""
        return sum(qbs.computations for qbs in self.instances)

    def answer_matrix(self, queries: Sequence[Query]) -> tuple[np.ndarray, np.ndarray]:
        """(f, m) train and (g, m) validation answer matrices."""
        missing = list(dict.fromkeys(q for q in queries if q not in self._columns))
        if missing:
            rows = parallel_map(
                lambda qbs: [qbs.answer(q) for q in missing],
                self.instances,
                self.threads,
            )
            block = np.asarray(rows, dtype=np.float64).reshape(len(self.instances), len(missing))
            for position, query in enumerate(missing):
                self._columns[query] = block[:, position]
        if not queries:
            return np.empty((self.f, 0)), np.empty((self.g, 0))
        matrix = np.column_stack([self._columns[q] for q in queries])
        return matrix[: self.f], matrix[self.f :]

    def retain_columns(self, queries: Sequence[Query]) -> None:
        keep = set(queries)
        for query in [q for q in self._columns if q not in keep]:
            del self._columns[query]


def build_fleet(
    aux: Dataset,
    target: TargetRecord,
    params: FitnessParams,
    *,
    threads: int = 1,
    qbs_factory: Optional[QbsFactory] = None,
) -> Fleet:
    """Split *aux* in halves and build f + g shadow instances around *target*."""
    factory = qbs_factory or default_factory(params.mitigations, use_cache=False)
    sampler = _SAMPLERS[params.kind]
    split_seed = params.master_seed if params.split_seed is None else params.split_seed
    train_half, val_half = split_half(aux, stream_rng(split_seed, _SPLIT_STREAM))

    def make(index: int) -> tuple[QueryAnswerer, int]:
        half = train_half if index < params.f else val_half
        shadow = sampler(half, target, params.z, stream_rng(params.master_seed, _FLEET_STREAM, index))
        return factory(shadow.dataset, derive_salt("fleet", params.master_seed, index)), shadow.target_label

    logger.info(
        "Building %s fleet for user %d: f=%d g=%d z=%d seed=%d",
        params.kind.value, target.user_id, params.f, params.g, params.z, params.master_seed,
    )
    built = parallel_map(make, range(params.f + params.g), threads)
    train, val = built[: params.f], built[params.f :]
    return Fleet(
        target,
        aux,
        [qbs for qbs, _ in train],
        [label for _, label in train],
        [qbs for qbs, _ in val],
        [label for _, label in val],
        threads=threads,
    )


@dataclass(frozen=True, eq=False)
class FitnessResult:
    fitness: float
    model: LogisticModel
    train_accuracy: float
    val_accuracy: float


def estimate_fitness(
    multiset: QueryMultiset,
    fleet: Fleet,
    train_config: Optional[TrainConfig] = None,
) -> FitnessResult:
    train_x, val_x = fleet.answer_matrix(multiset.queries)
    model = train_logistic(train_x, fleet.train_labels, train_config)
    train_acc = model.accuracy(train_x, fleet.train_labels)
    val_acc = model.accuracy(val_x, fleet.val_labels)
    return FitnessResult(min(train_acc, val_acc), model, train_acc, val_acc)


# ---------------------------------------------------------------------------
# Privacy games
# ---------------------------------------------------------------------------


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1:
        return (0.0, 1.0)
    interval = binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return float(interval.low), float(interval.high)


@dataclass(frozen=True)
class GameParams:
    dataset_size: int
    repetitions: int = 500
    master_seed: int = 0
    mitigations: MitigationConfig = field(default_factory=MitigationConfig)
    threads: int = 1

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError(f"A game needs at least one repetition, got {self.repetitions}.")
        if self.dataset_size < 1:
            raise ValueError(f"dataset_size must be >= 1, got {self.dataset_size}.")

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("threads")
        return data


@dataclass(frozen=True)
class GameResult:
    accuracy: float
    wins: tuple[bool, ...]
    repetitions: int
    seed: int
    params: Mapping[str, Any] = field(default_factory=dict)
    abstentions: int = 0

    @classmethod
    def from_wins(
        cls,
        wins: Sequence[bool],
        seed: int,
        params: Mapping[str, Any],
        abstentions: int = 0,
    ) -> GameResult:
        wins = tuple(bool(w) for w in wins)
        return cls(sum(wins) / len(wins), wins, len(wins), seed, dict(params), abstentions)

    @property
    def confidence_interval(self) -> tuple[float, float]:
        return wilson_interval(sum(self.wins), self.repetitions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "R": self.repetitions,
            "wins_bitmap": "".join("1" if w else "0" for w in self.wins),
            "seed": self.seed,
            "params": dict(self.params),
            "ci": list(self.confidence_interval),
            "abstentions": self.abstentions,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> GameResult:
        wins = tuple(c == "1" for c in data["wins_bitmap"])
        return cls(
            float(data["accuracy"]),
            wins,
            int(data["R"]),
            int(data["seed"]),
            dict(data.get("params", {})),
            int(data.get("abstentions", 0)),
        )


def game_round(
    kind: GameKind,
    distribution: Dataset,
    target: TargetRecord,
    params: GameParams,
    repetition: int,
    qbs_factory: QbsFactory,
) -> tuple[QueryAnswerer, int]:
    """Challenger's side of one repetition: the protected system and the secret bit."""
    rng = stream_rng(params.master_seed, _GAME_STREAM, repetition)
    shadow = _SAMPLERS[kind](distribution, target, params.dataset_size - 1, rng)
    salt = derive_salt("game", params.master_seed, repetition)
    return qbs_factory(shadow.dataset, salt), shadow.target_label


def _play(
    kind: GameKind,
    multiset: QueryMultiset,
    model: LogisticModel,
    distribution: Dataset,
    target: TargetRecord,
    params: GameParams,
    qbs_factory: Optional[QbsFactory],
) -> GameResult:
    factory = qbs_factory or default_factory(params.mitigations)

    def repetition(index: int) -> bool:
        qbs, secret = game_round(kind, distribution, target, params, index, factory)
        _, guess = predict(model, np.array([qbs.answer(q) for q in multiset], dtype=np.float64))
        return guess == secret

    wins = parallel_map(repetition, range(params.repetitions), params.threads)
    result = GameResult.from_wins(wins, params.master_seed, {**params.to_dict(), "kind": kind.value})
    logger.info(
        "%s game for user %d: accuracy %.4f over %d repetitions",
        kind.value.upper(), target.user_id, result.accuracy, result.repetitions,
    )
    return result


def play_aia_game(
    multiset: QueryMultiset,
    model: LogisticModel,
    distribution: Dataset,
    target: TargetRecord,
    params: GameParams,
    *,
    qbs_factory: Optional[QbsFactory] = None,
) -> GameResult:
    """Attribute-inference game: win iff the model guesses the target's re-drawn bit."""
    return _play(GameKind.AIA, multiset, model, distribution, target, params, qbs_factory)


def play_mia_game(
    multiset: QueryMultiset,
    model: LogisticModel,
    distribution: Dataset,
    target: TargetRecord,
    params: GameParams,
    *,
    qbs_factory: Optional[QbsFactory] = None,
) -> GameResult:
    """Membership game: win iff the model guesses whether the target's record was included."""
    return _play(GameKind.MIA, multiset, model, distribution, target, params, qbs_factory)


_GAME_TABLE = {
    GameKind.AIA: play_aia_game,
    GameKind.MIA: play_mia_game,
}


def play_game(
    kind: GameKind,
    multiset: QueryMultiset,
    model: LogisticModel,
    distribution: Dataset,
    target: TargetRecord,
    params: GameParams,
    *,
    qbs_factory: Optional[QbsFactory] = None,
) -> GameResult:
    return _GAME_TABLE[kind](multiset, model, distribution, target, params, qbs_factory=qbs_factory)
