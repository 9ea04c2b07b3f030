from __future__ import annotations

import logging

import numpy as np
import pytest
from scipy.stats import chisquare
from scipy.stats.contingency import association, crosstab

from qbs_audit_core.data import (
    AttributeSchema,
    Dataset,
    TargetRecord,
    check_uniqueness,
    load_csv,
    sample_membership_dataset,
    sample_shadow_dataset,
    select_attributes,
    select_targets,
    split_half,
    synth_from_marginals,
    unique_users,
    write_csv,
)
from qbs_audit_core.errors import ConfigError, DatasetFormatError, InsufficientDataError

SCHEMA = {
    "sex": {"kind": "categorical"},
    "age": {"kind": "ordinal"},
    "income": {"kind": "categorical", "role": "sensitive"},
}


def _write(tmp_path, text: str):
    path = tmp_path / "data.csv"
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def test_load_csv_encodes_by_first_appearance(tmp_path):
    path = _write(tmp_path, "sex,age,income\nFemale,30,0\nMale,41,1\n?,30,1\n")
    dataset = load_csv(path, SCHEMA)

    assert dataset.names == ("user_id", "sex", "age", "income")
    assert dataset.size == 3
    assert dataset.column(0).tolist() == [0.0, 1.0, 2.0]
    assert dataset.column(1).tolist() == [0.0, 1.0, 2.0]
    assert dataset.schema[1].labels == ("Female", "Male", "Unknown")
    assert dataset.schema[2].domain == (30.0, 41.0)
    assert dataset.column(3).tolist() == [0.0, 1.0, 1.0]


def test_load_csv_header_only_gives_empty_dataset(tmp_path):
    dataset = load_csv(_write(tmp_path, "sex,age,income\n"), SCHEMA)
    assert dataset.size == 0
    assert dataset.n_attributes == 4


def test_text_sensitive_values_are_factorized(tmp_path):
    path = _write(tmp_path, "sex,age,income\nMale,30,<=50K\nFemale,31,>50K\nMale,32,<=50K\n")
    dataset = load_csv(path, SCHEMA)
    assert dataset.schema[dataset.sensitive_index].labels == ("<=50K", ">50K")
    assert dataset.column(dataset.sensitive_index).tolist() == [0.0, 1.0, 0.0]


def test_non_binary_sensitive_is_rejected(tmp_path):
    path = _write(tmp_path, "sex,age,income\nMale,30,a\nFemale,31,b\nMale,32,c\n")
    with pytest.raises(DatasetFormatError, match="only binary"):
        load_csv(path, SCHEMA)


def test_bad_ordinal_value_names_the_line(tmp_path):
    path = _write(tmp_path, "sex,age,income\nMale,30,0\nFemale,thirty,1\n")
    with pytest.raises(DatasetFormatError, match="Line 3"):
        load_csv(path, SCHEMA)


def test_missing_ordinal_value_is_an_error(tmp_path):
    path = _write(tmp_path, "sex,age,income\nMale,?,0\n")
    with pytest.raises(DatasetFormatError, match="missing value"):
        load_csv(path, SCHEMA)


def test_schema_config_needs_one_sensitive_column(tmp_path):
    path = _write(tmp_path, "sex,age\nMale,30\n")
    with pytest.raises(ConfigError, match="exactly one sensitive"):
        load_csv(path, {"sex": {"kind": "categorical"}, "age": {"kind": "ordinal"}})


def test_extra_columns_are_ignored_with_a_warning(tmp_path, caplog):
    path = _write(tmp_path, "sex,age,zip,income\nMale,30,123,0\nFemale,31,456,1\n")
    with caplog.at_level(logging.WARNING, logger="qbs_audit_core.data"):
        dataset = load_csv(path, SCHEMA)
    assert "zip" not in dataset.names
    assert "ignoring columns" in caplog.text


def test_write_csv_round_trips_through_load(tmp_path):
    source = _write(tmp_path, "sex,age,income\nFemale,30,0\nMale,41,1\nMale,29,1\n?,30,0\n")
    dataset = load_csv(source, SCHEMA)
    copy = tmp_path / "copy.csv"
    write_csv(dataset, copy)
    reloaded = load_csv(copy, SCHEMA)
    np.testing.assert_array_equal(reloaded.values, dataset.values)
    assert reloaded.schema[1].labels == dataset.schema[1].labels


def test_encode_decode_includes_unknown():
    attr = AttributeSchema.categorical("sex", 3, ("Female", "Male", "Unknown"))
    for label in attr.labels:
        assert attr.decode(attr.encode(label)) == label
    with pytest.raises(KeyError):
        attr.encode("Other")


# ---------------------------------------------------------------------------
# Dataset invariants
# ---------------------------------------------------------------------------


def test_duplicate_user_ids_are_rejected(table):
    with pytest.raises(ValueError, match="pairwise distinct"):
        Dataset(table([AttributeSchema.categorical("a", 2)], [[0, 1]], [0, 1]).schema,
                np.array([[0, 0, 0], [0, 1, 1]]))


def test_values_outside_the_domain_are_rejected(table):
    schema = table([AttributeSchema.categorical("a", 2)], [[0, 1]], [0, 1]).schema
    with pytest.raises(ValueError, match="outside its declared domain"):
        Dataset(schema, np.array([[0, 5, 0], [1, 1, 1]]))


def test_project_keeps_id_and_sensitive(toy):
    projected = toy.project(["age", "color"])
    assert projected.names == ("user_id", "color", "age", "sens")
    assert projected.size == toy.size


def test_project_rejects_unknown_names(toy):
    with pytest.raises(KeyError):
        toy.project(["nope"])


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def test_shadow_with_zero_others_is_the_target_alone(toy, toy_target):
    shadow = sample_shadow_dataset(toy, toy_target, 0, np.random.default_rng(1))
    assert shadow.dataset.size == 1
    row = shadow.dataset.values[0]
    assert int(row[0]) == toy_target.user_id
    assert int(row[toy.sensitive_index]) == shadow.target_label


def test_shadow_sampling_is_deterministic_and_puts_target_last(toy, toy_target):
    first = sample_shadow_dataset(toy, toy_target, 5, np.random.default_rng(3))
    second = sample_shadow_dataset(toy, toy_target, 5, np.random.default_rng(3))
    np.testing.assert_array_equal(first.dataset.values, second.dataset.values)
    assert first.dataset.size == 6
    assert int(first.dataset.values[-1, 0]) == toy_target.user_id
    assert toy_target.user_id not in first.dataset.values[:-1, 0]


def test_shadow_labels_are_balanced(toy, toy_target):
    rng = np.random.default_rng(11)
    labels = [sample_shadow_dataset(toy, toy_target, 0, rng).target_label for _ in range(4000)]
    assert 0.47 <= np.mean(labels) <= 0.53


def test_shadow_sampling_needs_enough_rows(toy, toy_target):
    with pytest.raises(InsufficientDataError):
        sample_shadow_dataset(toy, toy_target, toy.size, np.random.default_rng(0))


def test_shadow_sampling_requires_projection(toy, toy_target):
    partial = TargetRecord(toy_target.known_attributes[:2], toy_target.values[:2], toy_target.user_id)
    with pytest.raises(ValueError, match="project the dataset"):
        sample_shadow_dataset(toy, partial, 3, np.random.default_rng(0))


def test_membership_dataset_contains_target_iff_member(toy, toy_target):
    rng = np.random.default_rng(5)
    seen = set()
    for _ in range(40):
        shadow = sample_membership_dataset(toy, toy_target, 9, rng)
        present = toy_target.user_id in shadow.dataset.values[:, 0]
        assert present == bool(shadow.target_label)
        assert shadow.dataset.size == 10
        if present:
            row = shadow.dataset.row_of(toy_target.user_id)
            assert int(row[toy.sensitive_index]) == toy_target.sensitive_value
        seen.add(shadow.target_label)
    assert seen == {0, 1}


def test_check_uniqueness(table):
    attrs = [AttributeSchema.categorical("a", 3), AttributeSchema.categorical("b", 3)]
    dataset = table(attrs, [[0, 0, 1], [0, 1, 0]], [0, 1, 0])
    target = TargetRecord.from_dataset(dataset, 0)

    assert check_uniqueness(dataset.take([0]), target)
    # User 1 matches on "a" only, a strict subset of the known attributes.
    assert check_uniqueness(dataset, target)
    assert not check_uniqueness(dataset, target, [1])

    twin = table(attrs, [[0, 0], [1, 1]], [0, 1])
    assert not check_uniqueness(twin, TargetRecord.from_dataset(twin, 0))


def test_split_half_partitions_rows(toy):
    first, second = split_half(toy, np.random.default_rng(0))
    assert first.size + second.size == toy.size
    assert first.size - second.size in (0, 1)
    assert not set(first.user_ids.tolist()) & set(second.user_ids.tolist())


def test_synth_keeps_single_value_columns_and_row_count(table):
    dataset = table(
        [AttributeSchema.categorical("const", 1), AttributeSchema.categorical("b", 2)],
        [[0] * 20, [0, 1] * 10],
        [0, 1] * 10,
    )
    synthetic = synth_from_marginals(dataset, np.random.default_rng(0))
    assert synthetic.size == dataset.size
    assert set(synthetic.column(1).tolist()) == {0.0}


def test_synth_preserves_marginals(table):
    rng = np.random.default_rng(2)
    n = 10_000
    column = rng.choice(4, size=n, p=[0.1, 0.2, 0.3, 0.4])
    dataset = table([AttributeSchema.categorical("c", 4)], [column], rng.integers(0, 2, n))
    synthetic = synth_from_marginals(dataset, np.random.default_rng(9))

    observed = np.bincount(synthetic.column(1).astype(int), minlength=4)
    expected = np.bincount(column, minlength=4).astype(float)
    assert chisquare(observed, expected).pvalue > 0.01


def _cramers_v(x: np.ndarray, y: np.ndarray) -> float:
    return float(association(crosstab(x, y).count, method="cramer"))


def test_synth_breaks_correlations(table):
    rng = np.random.default_rng(5)
    n = 10_000
    base = rng.integers(0, 4, n)
    noisy = np.where(rng.random(n) < 0.9, base, rng.integers(0, 4, n))
    dataset = table(
        [AttributeSchema.categorical(name, 4) for name in ("a", "b", "c")],
        [base, base.copy(), noisy],
        base % 2,
    )
    pairs = [(1, 2), (1, 3), (2, 3)]
    assert min(_cramers_v(dataset.column(i), dataset.column(j)) for i, j in pairs) > 0.7

    synthetic = synth_from_marginals(dataset, np.random.default_rng(6))
    mean_v = np.mean([_cramers_v(synthetic.column(i), synthetic.column(j)) for i, j in pairs])
    assert mean_v < 0.05


# ---------------------------------------------------------------------------
# Attribute and target selection
# ---------------------------------------------------------------------------


def test_select_attributes_random(toy):
    names = select_attributes(toy, "random", np.random.default_rng(0), count=3)
    assert len(names) == 3
    assert set(names) <= {"color", "shape", "age", "hours"}


def test_select_attributes_typed(toy):
    names = select_attributes(toy, "typed", np.random.default_rng(0), count=4)
    assert set(names) == {"color", "shape", "age", "hours"}


def test_select_attributes_typed_needs_enough_of_each_kind(toy):
    with pytest.raises(InsufficientDataError):
        select_attributes(toy, "typed", np.random.default_rng(0), count=5)


def test_select_attributes_unknown_rule(toy):
    with pytest.raises(ConfigError):
        select_attributes(toy, "clever", np.random.default_rng(0))


def test_select_targets_returns_unique_users(toy):
    targets = select_targets(toy, 3, np.random.default_rng(0))
    assert len({t.user_id for t in targets}) == 3
    for target in targets:
        assert check_uniqueness(toy, target)
        assert target.sensitive_value in (0, 1)


def test_select_targets_all_and_too_many(toy):
    everyone = select_targets(toy, None, np.random.default_rng(0))
    assert len(everyone) == len(unique_users(toy))
    with pytest.raises(InsufficientDataError):
        select_targets(toy, len(everyone) + 1, np.random.default_rng(0))
