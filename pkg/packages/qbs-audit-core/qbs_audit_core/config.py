"""Experiment configuration.

Values are layered: dataclass defaults (full-scale experiment values),
then the optional desk-scale profile, then a flat JSON config file, then
explicit overrides (the CLI flags)::

    config = load_config("sweep.json", desk_scale=True, overrides={"m": 10})
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Optional

from qbs_audit_core.errors import ConfigError
from qbs_audit_core.game import FitnessParams, GameKind, GameParams
from qbs_audit_core.inference import TrainConfig
from qbs_audit_core.protocol import DEFAULT_ITERATIONS, DEFAULT_L2, DEFAULT_LEARNING_RATE
from qbs_audit_core.qbs import MitigationConfig
from qbs_audit_core.query import QuerySyntax
from qbs_audit_core.search import EvolutionParams, SearchParams

METHODS = ("local", "multistage", "evolutionary", "differential")
ATTRIBUTE_RULES = ("random", "typed")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: Optional[str] = None
    schema: Optional[str] = None
    output: str = "results"
    method: str = "multistage"
    syntax: str = "lim"
    game: str = GameKind.AIA.value
    attribute_rule: str = "random"
    known_attributes: int = 5
    users: Optional[int] = 100
    repetitions: int = 5

    m: int = 100
    new_per_iter: int = 1
    iterations: int = 5000
    stage_iterations: Optional[tuple[int, ...]] = None
    f: int = 3000
    g: int = 1000
    shadow_size: int = 8000
    dataset_size: Optional[int] = None
    game_repetitions: int = 500
    population: int = 100
    elite: int = 10
    generations: int = 200
    p_mut: float = 0.1

    learning_rate: float = DEFAULT_LEARNING_RATE
    train_iterations: int = DEFAULT_ITERATIONS
    l2_lambda: float = DEFAULT_L2

    isolating_attributes: bool = False
    shadow_table: bool = False
    noise_when_no_conditions: bool = False
    stats_dynamic_seed: bool = False

    explain: bool = False
    master_seed: int = 0
    split_seed: Optional[int] = None
    threads: Optional[int] = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}'. Choose one of {', '.join(METHODS)}.")
        if self.attribute_rule not in ATTRIBUTE_RULES:
            raise ConfigError(f"Unknown attribute rule '{self.attribute_rule}'. Use 'random' or 'typed'.")
        try:
            GameKind(self.game)
            QuerySyntax.parse(self.syntax)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.users is not None and self.users < 1:
            raise ConfigError(f"users must be >= 1 or 'all', got {self.users}.")
        if self.shadow_size < 1:
            raise ConfigError(f"shadow_size must be >= 1, got {self.shadow_size}.")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}.")
        if self.stage_iterations is not None:
            object.__setattr__(self, "stage_iterations", tuple(int(i) for i in self.stage_iterations))
        # Parameter objects validate their own ranges.
        try:
            self.search_params(self.master_seed)
            self.fitness_params(self.master_seed)
            self.game_params(self.master_seed)
            self.evolution_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- derived parameter objects ------------------------------------------------

    @property
    def query_syntax(self) -> QuerySyntax:
        return QuerySyntax.parse(self.syntax)

    @property
    def game_kind(self) -> GameKind:
        return GameKind(self.game)

    @property
    def mitigations(self) -> MitigationConfig:
        return MitigationConfig(
            self.isolating_attributes,
            self.shadow_table,
            self.noise_when_no_conditions,
            self.stats_dynamic_seed,
        )

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.train_iterations, self.l2_lambda)

    def search_params(self, seed: int) -> SearchParams:
        return SearchParams(
            m=self.m,
            new_per_iter=self.new_per_iter,
            iterations=self.iterations,
            axes=self.query_syntax.axes,
            master_seed=seed,
            stage_iterations=self.stage_iterations,
            train_config=self.train_config,
        )

    def fitness_params(self, seed: int) -> FitnessParams:
        return FitnessParams(
            f=self.f,
            g=self.g,
            z=self.shadow_size - 1,
            train_config=self.train_config,
            master_seed=seed,
            split_seed=self.split_seed,
            mitigations=self.mitigations,
            kind=self.game_kind,
        )

    def game_params(self, seed: int, threads: int = 1) -> GameParams:
        return GameParams(
            dataset_size=self.dataset_size or self.shadow_size,
            repetitions=self.game_repetitions,
            master_seed=seed,
            mitigations=self.mitigations,
            threads=threads,
        )

    def evolution_params(self) -> EvolutionParams:
        return EvolutionParams(self.population, self.elite, self.generations, self.p_mut)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        if data["stage_iterations"] is not None:
            data["stage_iterations"] = list(data["stage_iterations"])
        data.pop("threads")
        return data


DESK_SCALE: dict[str, Any] = {
    "m": 20,
    "iterations": 300,
    "f": 300,
    "g": 100,
    "shadow_size": 500,
    "game_repetitions": 200,
    "users": 5,
    "repetitions": 2,
    "population": 20,
    "elite": 5,
    "generations": 20,
}
"""Overrides that make one experiment cell run in minutes on a laptop."""


def _coerce_users(value: Any) -> Optional[int]:
    if value is None or (isinstance(value, str) and value.strip().lower() == "all"):
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"users must be a positive integer or 'all', got {value!r}.") from None


def load_config(
    path: Optional[str | Path] = None,
    *,
    desk_scale: bool = False,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict[str, Any] = dict(DESK_SCALE) if desk_scale else {}

    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must hold a flat JSON object.")
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise ConfigError(f"Config file {path} has unknown keys: {', '.join(unknown)}.")
        values.update(loaded)

    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"Unknown config key '{key}'.")
        if value is not None:
            values[key] = value

    if "users" in values:
        values["users"] = _coerce_users(values["users"])
    return ExperimentConfig(**values)


def with_overrides(config: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    try:
        return replace(config, **changes)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
