"""End-to-end experiments: pick targets, search for an attack, play the game.

Attack methods are dispatched via ``_METHOD_TABLE`` (strategy pattern),
so adding a method means writing one ``_run_*`` function and registering
it.  Every random choice derives from ``config.master_seed``; reruns with
the same config reproduce the same report apart from runtimes.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from qbs_audit_core.analysis import (
    AttackReport,
    ScanResult,
    UserResult,
    attribute_accuracy,
    classify_difference_like,
    classify_generalized_difference_like,
    count_flagged,
    histogram_bins,
    vulnerability_scan,
)
from qbs_audit_core.config import ExperimentConfig
from qbs_audit_core.data import Dataset, TargetRecord, load_csv, load_schema_config, select_attributes, select_targets
from qbs_audit_core.errors import ConfigError
from qbs_audit_core.formatters import format_query
from qbs_audit_core.game import Fleet, GameKind, GameResult, build_fleet, play_game
from qbs_audit_core.inference import LogisticModel
from qbs_audit_core.protocol import resolve_threads
from qbs_audit_core.query import QueryMultiset, query_from_dict, query_to_dict
from qbs_audit_core.search import (
    SearchOutcome,
    evolutionary_search,
    multi_stage_search,
    play_differential_game,
    run_local,
)

logger = logging.getLogger(__name__)

_SELECTION_STREAM = 100


def run_seed(master_seed: int, user_id: int, repetition: int) -> int:
    """Seed of one (user, repetition) cell."""
    return int(np.random.SeedSequence([master_seed, user_id, repetition]).generate_state(1)[0])


@dataclass
class AttackContext:
    """Everything one attack on one target needs."""

    config: ExperimentConfig
    dataset: Dataset
    target: TargetRecord
    seed: int
    threads: int = 1

    def fleet(self) -> Fleet:
        return build_fleet(
            self.dataset, self.target, self.config.fitness_params(self.seed), threads=self.threads
        )


@dataclass
class AttackRun:
    game: GameResult
    status: str = "ok"
    fitness: float = 0.0
    syntax: str = "lim"
    multiset: QueryMultiset = field(default_factory=lambda: QueryMultiset(()))
    model: Optional[LogisticModel] = None
    stage_choices: list[str] = field(default_factory=list)
    trace: list[float] = field(default_factory=list)
    fleet: Optional[Fleet] = None


AttackMethod = Callable[[AttackContext], AttackRun]


# ---------------------------------------------------------------------------
# Attack methods
# ---------------------------------------------------------------------------


def _finish(ctx: AttackContext, outcome: SearchOutcome, fleet: Fleet) -> AttackRun:
    game = play_game(
        ctx.config.game_kind,
        outcome.best_multiset,
        outcome.model,
        ctx.dataset,
        ctx.target,
        ctx.config.game_params(ctx.seed, ctx.threads),
    )
    return AttackRun(
        game=game,
        fitness=outcome.best_fitness,
        syntax=outcome.syntax.label,
        multiset=outcome.best_multiset,
        model=outcome.model,
        stage_choices=[s.winner.label for s in outcome.stages],
        trace=list(outcome.traces[-1].values) if outcome.traces else [],
        fleet=fleet,
    )


def _run_local(ctx: AttackContext) -> AttackRun:
    fleet = ctx.fleet()
    return _finish(ctx, run_local(ctx.config.search_params(ctx.seed), fleet), fleet)


def _run_multistage(ctx: AttackContext) -> AttackRun:
    fleet = ctx.fleet()
    return _finish(ctx, multi_stage_search(ctx.config.search_params(ctx.seed), fleet), fleet)


def _run_evolutionary(ctx: AttackContext) -> AttackRun:
    fleet = ctx.fleet()
    outcome = evolutionary_search(ctx.config.search_params(ctx.seed), fleet, ctx.config.evolution_params())
    return _finish(ctx, outcome, fleet)


def _run_differential(ctx: AttackContext) -> AttackRun:
    if ctx.config.game_kind is not GameKind.AIA:
        raise ConfigError("The differential attack only plays the attribute-inference game.")
    game = play_differential_game(
        ctx.target, ctx.dataset, ctx.dataset, ctx.config.game_params(ctx.seed, ctx.threads)
    )
    status = "abstained" if game.abstentions == game.repetitions else "ok"
    return AttackRun(game=game, status=status)


_METHOD_TABLE: dict[str, AttackMethod] = {
    "local":        _run_local,
    "multistage":   _run_multistage,
    "evolutionary": _run_evolutionary,
    "differential": _run_differential,
}


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def load_dataset(config: ExperimentConfig) -> Dataset:
    if not config.dataset or not config.schema:
        raise ConfigError("Both a dataset CSV and a schema config are required.")
    return load_csv(config.dataset, load_schema_config(config.schema))


def select_cells(config: ExperimentConfig, dataset: Dataset) -> list[tuple[int, Dataset, TargetRecord]]:
    """(repetition, projected dataset, target) for every attacked cell.

    Each repetition draws its own known attributes and target users.
    """
    cells = []
    for repetition in range(config.repetitions):
        rng = np.random.default_rng([config.master_seed, _SELECTION_STREAM, repetition])
        names = select_attributes(dataset, config.attribute_rule, rng, config.known_attributes)
        projected = dataset.project(names)
        for target in select_targets(projected, config.users, rng):
            cells.append((repetition, projected, target))
    return cells


def _explain(ctx: AttackContext, run: AttackRun) -> dict[str, Any]:
    schema = ctx.dataset.schema
    names = ctx.dataset.names
    explanation: dict[str, Any] = {}
    for label, classify in (
        ("difference_like", classify_difference_like),
        ("generalized_difference_like", classify_generalized_difference_like),
    ):
        flagged = classify(run.multiset, ctx.target, schema)
        total, unique = count_flagged(run.multiset, flagged, names)
        entry: dict[str, Any] = {"positions": flagged, "flagged": total, "flagged_unique": unique}
        if flagged and run.fleet is not None:
            attribution = attribute_accuracy(
                run.multiset, flagged, run.fleet, ctx.dataset,
                ctx.config.game_params(ctx.seed, ctx.threads),
                kind=ctx.config.game_kind,
                train_config=ctx.config.train_config,
                full_accuracy=run.game.accuracy,
            )
            entry.update(attribution.to_dict())
        explanation[label] = entry
    return explanation


def run_user_attack(
    config: ExperimentConfig,
    dataset: Dataset,
    target: TargetRecord,
    repetition: int = 0,
    *,
    threads: int = 1,
) -> UserResult:
    """Run the configured method on one target of a projected dataset."""
    ctx = AttackContext(config, dataset, target, run_seed(config.master_seed, target.user_id, repetition), threads)
    started = time.perf_counter()
    logger.info("Attacking user %d (repetition %d) with %s", target.user_id, repetition, config.method)
    run = _METHOD_TABLE[config.method](ctx)
    explanation = _explain(ctx, run) if config.explain and len(run.multiset) else {}
    low, high = run.game.confidence_interval
    return UserResult(
        user_id=target.user_id,
        repetition=repetition,
        method=config.method,
        status=run.status,
        accuracy=run.game.accuracy,
        ci_low=low,
        ci_high=high,
        fitness=run.fitness,
        syntax=run.syntax,
        stage_choices=run.stage_choices,
        abstentions=run.game.abstentions,
        runtime_seconds=round(time.perf_counter() - started, 3),
        best_multiset=[format_query(q, dataset.schema) for q in run.multiset],
        queries=[query_to_dict(q) for q in run.multiset],
        model=run.model.to_dict() if run.model is not None else None,
        known_attributes=[dataset.schema[i].name for i in target.known_attributes],
        explainability=explanation,
        trace=run.trace,
        game=run.game.to_dict(),
    )


def run_attack(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> AttackReport:
    dataset = dataset if dataset is not None else load_dataset(config)
    threads = resolve_threads(config.threads)
    users = [
        run_user_attack(config, projected, target, repetition, threads=threads)
        for repetition, projected, target in select_cells(config, dataset)
    ]
    return AttackReport(users, config.to_dict(), histogram_bins([u.accuracy for u in users]))


def run_scan(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> AttackReport:
    """Per-user vulnerability scan; users are attacked in parallel."""
    dataset = dataset if dataset is not None else load_dataset(config)
    threads = resolve_threads(config.threads)

    def attack(cell: tuple[int, Dataset, TargetRecord]) -> UserResult:
        repetition, projected, target = cell
        return run_user_attack(config, projected, target, repetition)

    scan: ScanResult = vulnerability_scan(select_cells(config, dataset), attack, threads=threads)
    return scan.report(config.to_dict())


def replay_report(
    report: AttackReport,
    config: ExperimentConfig,
    dataset: Optional[Dataset] = None,
) -> AttackReport:
    """Replay saved attacks against systems built with ``config``'s mitigations and game."""
    dataset = dataset if dataset is not None else load_dataset(config)
    threads = resolve_threads(config.threads)
    replayed = []
    for user in report.users:
        if not user.queries or user.model is None:
            logger.warning("User %d has no learned attack to replay; skipped", user.user_id)
            continue
        projected = dataset.project(user.known_attributes)
        target = TargetRecord.from_dataset(projected, user.user_id)
        multiset = QueryMultiset(tuple(query_from_dict(q) for q in user.queries))
        model = LogisticModel.from_dict(user.model)
        seed = run_seed(config.master_seed, user.user_id, user.repetition)
        game = play_game(config.game_kind, multiset, model, projected, target, config.game_params(seed, threads))
        low, high = game.confidence_interval
        replayed.append(UserResult(
            user_id=user.user_id,
            repetition=user.repetition,
            method=user.method,
            status=user.status,
            accuracy=game.accuracy,
            ci_low=low,
            ci_high=high,
            fitness=user.fitness,
            syntax=user.syntax,
            stage_choices=user.stage_choices,
            best_multiset=user.best_multiset,
            queries=user.queries,
            model=user.model,
            known_attributes=user.known_attributes,
            game=game.to_dict(),
        ))
    return AttackReport(replayed, config.to_dict(), histogram_bins([u.accuracy for u in replayed]))


def write_report(report: AttackReport, output: str | Path) -> list[Path]:
    """Write report.json, users.csv and histogram.csv under *output*."""
    directory = Path(output)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / "report.json", directory / "users.csv", directory / "histogram.csv"]
    report.write_json(paths[0])
    report.write_csv(paths[1])
    report.write_histogram_csv(paths[2])
    logger.info("Wrote %s", ", ".join(str(p) for p in paths))
    return paths
