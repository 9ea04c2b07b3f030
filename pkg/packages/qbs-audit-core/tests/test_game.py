from __future__ import annotations

import numpy as np
import pytest
from scipy.stats import permutation_test
from scipy.stats.contingency import crosstab

from qbs_audit_core import game
from qbs_audit_core.data import AttributeSchema, TargetRecord, sample_shadow_dataset, split_half
from qbs_audit_core.game import (
    FitnessParams,
    GameKind,
    GameParams,
    GameResult,
    build_fleet,
    derive_salt,
    estimate_fitness,
    game_round,
    play_aia_game,
    play_game,
    play_mia_game,
    stream_rng,
    wilson_interval,
)
from qbs_audit_core.generation import random_multiset
from qbs_audit_core.inference import TrainConfig
from qbs_audit_core.query import QueryMultiset, QuerySyntax

FAST = TrainConfig(iterations=200)


@pytest.fixture
def small_params():
    return FitnessParams(f=20, g=10, z=20, train_config=FAST, master_seed=5)


def test_salts_are_distinct():
    salts = {derive_salt(purpose, seed, i) for purpose in ("fleet", "game") for seed in (0, 1) for i in range(250)}
    assert len(salts) == 1000


def test_params_validation():
    with pytest.raises(ValueError, match="f >= 1"):
        FitnessParams(f=0)
    with pytest.raises(ValueError, match="z must be"):
        FitnessParams(z=-1)
    with pytest.raises(ValueError, match="repetition"):
        GameParams(dataset_size=10, repetitions=0)
    with pytest.raises(ValueError, match="dataset_size"):
        GameParams(dataset_size=0)


def test_train_instances_only_use_the_train_half(toy, toy_target, small_params, exact_factory):
    fleet = build_fleet(toy, toy_target, small_params, qbs_factory=exact_factory)
    train_half, val_half = split_half(toy, stream_rng(small_params.master_seed, game._SPLIT_STREAM))
    allowed_train = set(train_half.user_ids.tolist()) | {toy_target.user_id}
    allowed_val = set(val_half.user_ids.tolist()) | {toy_target.user_id}
    for qbs in fleet.train:
        assert set(qbs.dataset.user_ids.tolist()) <= allowed_train
    for qbs in fleet.val:
        assert set(qbs.dataset.user_ids.tolist()) <= allowed_val
    assert all(qbs.dataset.size == small_params.z + 1 for qbs in fleet.instances)


def test_target_row_carries_the_label(toy, toy_target, small_params, exact_factory):
    fleet = build_fleet(toy, toy_target, small_params, qbs_factory=exact_factory)
    for qbs, label in zip(fleet.train, fleet.train_labels):
        row = qbs.dataset.row_of(toy_target.user_id)
        assert row[toy.sensitive_index] == label


def test_fleet_answers_are_reproducible(toy, toy_target, small_params):
    rng = np.random.default_rng(0)
    multiset = random_multiset(QuerySyntax.full(), toy_target, toy, 8, rng)
    first = build_fleet(toy, toy_target, small_params).answer_matrix(multiset.queries)
    second = build_fleet(toy, toy_target, small_params, threads=4).answer_matrix(multiset.queries)
    assert np.array_equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])
    assert first[0].shape == (20, 8)
    assert first[1].shape == (10, 8)


def test_fleet_column_cache(toy, toy_target, small_params):
    fleet = build_fleet(toy, toy_target, small_params)
    multiset = random_multiset(QuerySyntax.full(), toy_target, toy, 4, np.random.default_rng(1))
    distinct = len(set(multiset.queries))
    fleet.answer_matrix(multiset.queries)
    assert fleet.computations == distinct * 30
    fleet.answer_matrix(multiset.queries)
    assert fleet.computations == distinct * 30

    fleet.retain_columns(multiset.queries[:0])
    fleet.answer_matrix(multiset.queries[:1])
    assert fleet.computations == (distinct + 1) * 30


def test_exact_system_gives_perfect_fitness(toy, toy_target, small_params, exact_factory, exact_match):
    fleet = build_fleet(toy, toy_target, small_params, qbs_factory=exact_factory)
    multiset = QueryMultiset((exact_match(toy, toy_target),))
    result = estimate_fitness(multiset, fleet, FAST)
    assert result.fitness == 1.0
    assert result.fitness == min(result.train_accuracy, result.val_accuracy)

    outcome = play_aia_game(
        multiset, result.model, toy, toy_target, GameParams(dataset_size=30, repetitions=50), qbs_factory=exact_factory
    )
    assert outcome.accuracy == 1.0


def test_exact_membership_game(toy, toy_target, exact_factory, exact_match):
    params = FitnessParams(f=20, g=10, z=20, train_config=FAST, master_seed=2, kind=GameKind.MIA)
    fleet = build_fleet(toy, toy_target, params, qbs_factory=exact_factory)
    multiset = QueryMultiset((exact_match(toy, toy_target, sensitive=None),))
    result = estimate_fitness(multiset, fleet, FAST)
    assert result.fitness == 1.0

    outcome = play_mia_game(
        multiset, result.model, toy, toy_target, GameParams(dataset_size=30, repetitions=50), qbs_factory=exact_factory
    )
    assert outcome.accuracy == 1.0


def test_blind_system_is_a_coin_flip(toy, toy_target, small_params, zero_factory, exact_match):
    fleet = build_fleet(toy, toy_target, small_params, qbs_factory=zero_factory)
    multiset = QueryMultiset((exact_match(toy, toy_target),))
    result = estimate_fitness(multiset, fleet, FAST)
    assert result.fitness == min(result.train_accuracy, result.val_accuracy)
    assert np.allclose(result.model.weights, 0.0)

    outcome = play_game(
        GameKind.AIA, multiset, result.model, toy, toy_target,
        GameParams(dataset_size=30, repetitions=200), qbs_factory=zero_factory,
    )
    assert 0.35 <= outcome.accuracy <= 0.65


def test_games_are_reproducible(toy, toy_target, small_params, exact_match):
    fleet = build_fleet(toy, toy_target, small_params)
    multiset = QueryMultiset((exact_match(toy, toy_target),))
    model = estimate_fitness(multiset, fleet, FAST).model
    params = GameParams(dataset_size=30, repetitions=40, master_seed=9)
    first = play_aia_game(multiset, model, toy, toy_target, params)
    second = play_aia_game(multiset, model, toy, toy_target, GameParams(30, 40, 9, threads=4))
    assert first.wins == second.wins


def test_game_labels_are_balanced(toy, toy_target, exact_factory):
    params = GameParams(dataset_size=30, repetitions=400)
    labels = [game_round(GameKind.AIA, toy, toy_target, params, i, exact_factory)[1] for i in range(400)]
    assert 0.4 <= np.mean(labels) <= 0.6


def _mutual_information(x: np.ndarray, y: np.ndarray) -> float:
    joint = crosstab(x, y).count / len(x)
    outer = joint.sum(axis=1, keepdims=True) * joint.sum(axis=0, keepdims=True)
    nonzero = joint > 0
    return float(np.sum(joint[nonzero] * np.log(joint[nonzero] / outer[nonzero])))


def _independence_pvalue(x: np.ndarray, y: np.ndarray, seed: int) -> float:
    result = permutation_test(
        (x, y), _mutual_information, permutation_type="pairings",
        n_resamples=999, alternative="greater", random_state=seed,
    )
    return float(result.pvalue)


@pytest.fixture
def correlated(table):
    """Sensitive value fully determined by the first column."""
    rng = np.random.default_rng(8)
    n = 3000
    first = rng.integers(0, 3, n)
    dataset = table(
        [AttributeSchema.categorical("a", 3), AttributeSchema.categorical("b", 4)],
        [first, rng.integers(0, 4, n)],
        (first == 0).astype(int),
    )
    return dataset, TargetRecord.from_dataset(dataset, 0)


def test_source_correlation_is_detectable(correlated):
    dataset, _ = correlated
    assert _independence_pvalue(dataset.column(1), dataset.column(3), seed=1) < 0.01


@pytest.mark.parametrize("column", [1, 2])
def test_aia_shadow_sensitive_column_is_independent(correlated, column):
    dataset, target = correlated
    shadow = sample_shadow_dataset(dataset, target, 2000, np.random.default_rng(4)).dataset
    sensitive = shadow.column(shadow.sensitive_index)
    assert _independence_pvalue(shadow.column(column), sensitive, seed=2) > 0.01


def test_wilson_interval():
    assert wilson_interval(0, 0) == (0.0, 1.0)
    low, high = wilson_interval(50, 100)
    assert low < 0.5 < high
    assert 0.39 < low < 0.41


def test_game_result_dict_form():
    result = GameResult.from_wins([True, False, True, True], seed=3, params={"kind": "aia"}, abstentions=1)
    data = result.to_dict()
    assert data["wins_bitmap"] == "1011"
    assert data["accuracy"] == 0.75
    restored = GameResult.from_dict(data)
    assert restored == result
    assert restored.confidence_interval == result.confidence_interval
