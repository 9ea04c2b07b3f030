from __future__ import annotations

import json

import pytest

from qbs_audit_core.config import DESK_SCALE, ExperimentConfig, load_config, with_overrides
from qbs_audit_core.errors import ConfigError
from qbs_audit_core.game import GameKind
from qbs_audit_core.query import Axis


def test_defaults_are_the_full_scale_experiment():
    config = ExperimentConfig()
    assert (config.m, config.f, config.g, config.shadow_size) == (100, 3000, 1000, 8000)
    assert config.fitness_params(0).z == 7999
    assert config.game_params(0).dataset_size == 8000
    assert config.mitigations.enabled == ()


def test_desk_scale_profile():
    config = load_config(desk_scale=True)
    assert config.m == DESK_SCALE["m"]
    assert config.shadow_size == 500


def test_layering_file_then_overrides(tmp_path):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps({"m": 12, "syntax": "D1,D3", "users": "all"}), encoding="utf-8")
    config = load_config(path, desk_scale=True, overrides={"m": 7, "iterations": None})
    assert config.m == 7
    assert config.iterations == DESK_SCALE["iterations"]
    assert config.users is None
    assert config.search_params(1).axes == frozenset({Axis.ARBITRARY_VALUES, Axis.IN_SETS})


def test_config_file_errors(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad_json)

    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="flat JSON object"):
        load_config(listed)

    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"budget": 3}), encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown keys: budget"):
        load_config(unknown)

    with pytest.raises(ConfigError, match="Unknown config key"):
        load_config(overrides={"budget": 3})


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"method": "genetic"}, "Unknown method"),
        ({"attribute_rule": "any"}, "Unknown attribute rule"),
        ({"syntax": "D2"}, "requires axis D1"),
        ({"syntax": "D7"}, "Unknown syntax"),
        ({"game": "reconstruction"}, "reconstruction"),
        ({"users": 0}, "users must be"),
        ({"shadow_size": 0}, "shadow_size"),
        ({"repetitions": 0}, "repetitions"),
        ({"m": 3, "new_per_iter": 4}, "new_per_iter"),
        ({"population": 2, "elite": 3}, "population >= elite"),
        ({"learning_rate": 0.0}, "learning_rate"),
    ],
)
def test_invalid_values_are_config_errors(changes, message):
    with pytest.raises(ConfigError, match=message):
        ExperimentConfig(**changes)


def test_users_must_be_a_number_or_all():
    with pytest.raises(ConfigError, match="positive integer or 'all'"):
        load_config(overrides={"users": "many"})
    assert load_config(overrides={"users": "ALL"}).users is None
    assert load_config(overrides={"users": "3"}).users == 3


def test_derived_parameters():
    config = ExperimentConfig(
        game="mia", shadow_size=50, dataset_size=20, shadow_table=True, stage_iterations=[3, 4], split_seed=9
    )
    assert config.game_kind is GameKind.MIA
    assert config.fitness_params(5).kind is GameKind.MIA
    assert config.fitness_params(5).split_seed == 9
    assert config.game_params(5, threads=3).dataset_size == 20
    assert config.game_params(5, threads=3).threads == 3
    assert config.mitigations.enabled == ("shadow_table",)
    assert config.search_params(5).iterations_for(1) == 4


def test_dict_form_is_json_ready():
    data = ExperimentConfig(stage_iterations=(2, 3), threads=4).to_dict()
    assert data["stage_iterations"] == [2, 3]
    assert "threads" not in data
    assert ExperimentConfig(**data).to_dict() == data
    json.dumps(data)


def test_with_overrides():
    config = with_overrides(ExperimentConfig(), m=5)
    assert config.m == 5
    with pytest.raises(ConfigError):
        with_overrides(config, budget=1)
    with pytest.raises(ConfigError, match="Unknown method"):
        with_overrides(config, method="genetic")
