"""Tabular datasets, integer encoding and shadow-dataset sampling.

A :class:`Dataset` is an immutable, integer-encoded table.  Column 0 is
always the synthetic user id (assigned at load time from the row
index) and exactly one column holds the binary sensitive attribute::

    schema = load_schema_config("adult.schema.json")
    dataset = load_csv("adult.csv", schema)
    names = select_attributes(dataset, "random", rng)
    projected = dataset.project(names)
    target = select_targets(projected, 1, rng)[0]
    shadow = sample_shadow_dataset(projected, target, z=499, rng=rng)

Every sampling function takes an explicit ``numpy.random.Generator``;
callers running in parallel must hand each worker its own generator.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from qbs_audit_core.errors import ConfigError, DatasetFormatError, InsufficientDataError

logger = logging.getLogger(__name__)

USER_ID_NAME = "user_id"
UNKNOWN_LABEL = "Unknown"
MISSING_MARKERS = frozenset({"", "?", "NA"})


class AttributeKind(str, Enum):
    CATEGORICAL = "categorical"
    ORDINAL = "ordinal"


class AttributeRole(str, Enum):
    USER_ID = "user_id"
    REGULAR = "regular"
    SENSITIVE = "sensitive"


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AttributeSchema:
    """One column of a dataset.

    ``labels`` maps categorical codes back to the strings they were read
    from (code ``i`` is ``labels[i]``); ordinal attributes have no labels
    unless they are the sensitive attribute.
    """

    name: str
    kind: AttributeKind
    domain: tuple[float, ...] = ()
    role: AttributeRole = AttributeRole.REGULAR
    labels: tuple[str, ...] = ()

    @classmethod
    def user_id(cls) -> AttributeSchema:
        return cls(USER_ID_NAME, AttributeKind.ORDINAL, (), AttributeRole.USER_ID)

    @classmethod
    def categorical(cls, name: str, size: int, labels: Sequence[str] = ()) -> AttributeSchema:
        return cls(name, AttributeKind.CATEGORICAL, tuple(float(i) for i in range(size)),
                   AttributeRole.REGULAR, tuple(labels))

    @classmethod
    def ordinal(cls, name: str, domain: Iterable[float] = ()) -> AttributeSchema:
        return cls(name, AttributeKind.ORDINAL, tuple(sorted({float(v) for v in domain})))

    @classmethod
    def sensitive(cls, name: str, labels: Sequence[str] = ()) -> AttributeSchema:
        return cls(name, AttributeKind.CATEGORICAL, (0.0, 1.0), AttributeRole.SENSITIVE,
                   tuple(labels))

    @property
    def is_ordinal(self) -> bool:
        return self.kind is AttributeKind.ORDINAL

    def encode(self, label: str) -> int:
        """Return the integer code of a categorical *label*."""
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"Attribute '{self.name}' has no category '{label}'.") from None

    def decode(self, code: float) -> str:
        """Return the text form of an encoded value."""
        if self.labels:
            return self.labels[int(code)]
        return _format_number(code)


def _format_number(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable encoded table; ``values[:, 0]`` holds the user ids.

    User ids are stored as float64 like every other column, so they must
    stay below 2**53; ids assigned from row indices always do.
    """

    schema: tuple[AttributeSchema, ...]
    values: np.ndarray
    _distinct: dict[int, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            values = values.reshape(0, len(self.schema))
        if values.shape[1] != len(self.schema):
            raise ValueError(
                f"Dataset has {values.shape[1]} columns but the schema names {len(self.schema)}."
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "schema", tuple(self.schema))
        self._validate()

    def _validate(self) -> None:
        roles = [attr.role for attr in self.schema]
        if not self.schema or roles[0] is not AttributeRole.USER_ID:
            raise ValueError("Column 0 of a dataset must be the user id attribute.")
        if roles.count(AttributeRole.USER_ID) != 1:
            raise ValueError("A dataset needs exactly one user id attribute.")
        if roles.count(AttributeRole.SENSITIVE) != 1:
            raise ValueError("A dataset needs exactly one sensitive attribute.")
        sensitive = self.schema[roles.index(AttributeRole.SENSITIVE)]
        if sensitive.domain != (0.0, 1.0):
            raise ValueError(f"Sensitive attribute '{sensitive.name}' must have domain {{0, 1}}.")
        ids = self.values[:, 0]
        if len(np.unique(ids)) != len(ids):
            raise ValueError("User ids must be pairwise distinct.")
        for index, attr in enumerate(self.schema[1:], start=1):
            column = self.values[:, index]
            outside = ~np.isin(column, np.asarray(attr.domain, dtype=np.float64))
            if outside.any():
                bad = column[outside][0]
                raise ValueError(
                    f"Value {bad!r} of attribute '{attr.name}' is outside its declared domain."
                )

    @classmethod
    def build(cls, schema: Sequence[AttributeSchema], values: Any) -> Dataset:
        """Construct a dataset, filling empty ordinal domains from the data."""
        matrix = np.asarray(values, dtype=np.float64).reshape(-1, len(schema))
        filled = []
        for index, attr in enumerate(schema):
            if attr.role is not AttributeRole.USER_ID and attr.is_ordinal and not attr.domain:
                attr = replace(attr, domain=tuple(float(v) for v in np.unique(matrix[:, index])))
            filled.append(attr)
        return cls(tuple(filled), matrix)

    @classmethod
    def from_rows(cls, schema: Sequence[AttributeSchema], rows: Iterable[Sequence[float]]) -> Dataset:
        return cls.build(schema, [list(row) for row in rows])

    # -- shape and lookups ---------------------------------------------------

    @property
    def size(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def n_attributes(self) -> int:
        return len(self.schema)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(attr.name for attr in self.schema)

    @property
    def sensitive_index(self) -> int:
        return next(i for i, a in enumerate(self.schema) if a.role is AttributeRole.SENSITIVE)

    @property
    def regular_indices(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.schema) if a.role is AttributeRole.REGULAR)

    @property
    def user_ids(self) -> np.ndarray:
        return self.values[:, 0].astype(np.uint64)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"Dataset has no attribute named '{name}'.") from None

    def column(self, index: int) -> np.ndarray:
        return self.values[:, index]

    def distinct_values(self, index: int) -> np.ndarray:
        """Sorted distinct values present in column *index* (cached)."""
        cached = self._distinct.get(index)
        if cached is None:
            cached = np.unique(self.values[:, index])
            cached.setflags(write=False)
            self._distinct[index] = cached
        return cached

    def row_of(self, user_id: int) -> np.ndarray:
        hits = np.flatnonzero(self.values[:, 0] == float(user_id))
        if not len(hits):
            raise KeyError(f"User {user_id} is not in the dataset.")
        return self.values[hits[0]]

    # -- derived datasets ----------------------------------------------------

    def take(self, rows: np.ndarray | Sequence[int]) -> Dataset:
        return Dataset(self.schema, self.values[np.asarray(rows, dtype=np.intp)])

    def without_user(self, user_id: int) -> Dataset:
        return Dataset(self.schema, self.values[self.values[:, 0] != float(user_id)])

    def project(self, names: Iterable[str]) -> Dataset:
        """Keep the user id, the named attributes (schema order) and the sensitive one."""
        wanted = set(names)
        for name in wanted:
            self.index_of(name)
        keep = [
            i for i, attr in enumerate(self.schema)
            if attr.role is not AttributeRole.REGULAR or attr.name in wanted
        ]
        return Dataset(tuple(self.schema[i] for i in keep), self.values[:, keep])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=list(self.names))


# ---------------------------------------------------------------------------
# Target and shadow records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TargetRecord:
    """What the attacker knows about the target: ``r_u`` on ``known_attributes``.

    ``sensitive_value`` is the target's true bit; only membership games
    use it, attribute inference never reads it.
    """

    known_attributes: tuple[int, ...]
    values: tuple[float, ...]
    user_id: int
    sensitive_value: int | None = None

    def __post_init__(self) -> None:
        if len(self.known_attributes) != len(self.values):
            raise ValueError("TargetRecord needs one value per known attribute.")

    @classmethod
    def from_dataset(
        cls,
        dataset: Dataset,
        user_id: int,
        known_attributes: Sequence[int] | None = None,
    ) -> TargetRecord:
        known = tuple(dataset.regular_indices if known_attributes is None else known_attributes)
        row = dataset.row_of(user_id)
        target = cls(
            known,
            tuple(float(row[i]) for i in known),
            int(user_id),
            int(row[dataset.sensitive_index]),
        )
        target.validate(dataset.schema)
        return target

    def validate(self, schema: Sequence[AttributeSchema]) -> None:
        for index in self.known_attributes:
            if not 0 <= index < len(schema):
                raise ValueError(f"Known attribute index {index} is outside the schema.")
            if schema[index].role is not AttributeRole.REGULAR:
                raise ValueError(
                    f"Attribute '{schema[index].name}' cannot be a known attribute "
                    f"(role {schema[index].role.value})."
                )

    def value_of(self, attribute_index: int) -> float:
        try:
            return self.values[self.known_attributes.index(attribute_index)]
        except ValueError:
            raise KeyError(f"Attribute {attribute_index} is not known for the target.") from None

    def knows(self, attribute_index: int) -> bool:
        return attribute_index in self.known_attributes

    def row(self, schema: Sequence[AttributeSchema], sensitive: float) -> np.ndarray:
        """Full row for *schema*: user id, known values and *sensitive*."""
        row = np.empty(len(schema), dtype=np.float64)
        for index, attr in enumerate(schema):
            if attr.role is AttributeRole.USER_ID:
                row[index] = float(self.user_id)
            elif attr.role is AttributeRole.SENSITIVE:
                row[index] = float(sensitive)
            else:
                row[index] = self.value_of(index)
        return row


@dataclass(frozen=True)
class ShadowDataset:
    dataset: Dataset
    target_label: int


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------


def load_schema_config(path: str | Path) -> dict[str, dict[str, str]]:
    """Read a JSON schema config: column name -> {"kind": ..., "role": ...}."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Schema config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"Schema config {path} must be a JSON object.")
    return raw


def _parse_schema_config(schema_config: Mapping[str, Mapping[str, str]]) -> list[tuple[str, AttributeKind, AttributeRole]]:
    parsed = []
    for name, spec in schema_config.items():
        if name == USER_ID_NAME:
            raise ConfigError(f"Column name '{USER_ID_NAME}' is reserved for the synthetic user id.")
        try:
            kind = AttributeKind(spec.get("kind", "categorical"))
            role = AttributeRole(spec.get("role", "regular"))
        except ValueError as exc:
            raise ConfigError(f"Column '{name}': {exc}") from None
        if role is AttributeRole.USER_ID:
            raise ConfigError(f"Column '{name}': user ids are assigned at load, not read.")
        parsed.append((name, kind, role))
    sensitive = [p for p in parsed if p[2] is AttributeRole.SENSITIVE]
    if len(sensitive) != 1:
        raise ConfigError(f"Schema config needs exactly one sensitive column, found {len(sensitive)}.")
    # The sensitive attribute is always the last column.
    return [p for p in parsed if p[2] is AttributeRole.REGULAR] + sensitive


def _encode_categorical(name: str, raw: pd.Series) -> tuple[np.ndarray, tuple[str, ...]]:
    missing = raw.isin(MISSING_MARKERS)
    codes, uniques = pd.factorize(raw.where(~missing), use_na_sentinel=True)
    labels = [str(u) for u in uniques]
    if missing.any():
        if UNKNOWN_LABEL in labels:
            unknown = labels.index(UNKNOWN_LABEL)
        else:
            unknown = len(labels)
            labels.append(UNKNOWN_LABEL)
        codes = np.where(codes < 0, unknown, codes)
        logger.info("Attribute '%s': %d missing values mapped to code %d", name, int(missing.sum()), unknown)
    return codes.astype(np.float64), tuple(labels)


def _encode_ordinal(name: str, raw: pd.Series) -> np.ndarray:
    missing = raw.isin(MISSING_MARKERS)
    if missing.any():
        line = int(np.flatnonzero(missing.to_numpy())[0]) + 2
        raise DatasetFormatError(f"Line {line}: missing value for ordinal attribute '{name}'.")
    numbers = pd.to_numeric(raw, errors="coerce")
    bad = numbers.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DatasetFormatError(
            f"Line {row + 2}: value {raw.iloc[row]!r} of ordinal attribute '{name}' is not a number."
        )
    return numbers.to_numpy(dtype=np.float64)


def _encode_sensitive(name: str, raw: pd.Series) -> tuple[np.ndarray, tuple[str, ...]]:
    if raw.isin(MISSING_MARKERS).any():
        line = int(np.flatnonzero(raw.isin(MISSING_MARKERS).to_numpy())[0]) + 2
        raise DatasetFormatError(f"Line {line}: missing value for sensitive attribute '{name}'.")
    numbers = pd.to_numeric(raw, errors="coerce")
    if not numbers.isna().any() and set(numbers.unique()) <= {0.0, 1.0}:
        return numbers.to_numpy(dtype=np.float64), ()
    codes, labels = _encode_categorical(name, raw)
    if len(labels) > 2:
        raise DatasetFormatError(
            f"Sensitive attribute '{name}' has {len(labels)} values; only binary attributes are supported."
        )
    return codes, labels


def load_csv(path: str | Path, schema_config: Mapping[str, Mapping[str, str]]) -> Dataset:
    """Load and encode a CSV file.

    Categorical values get integer codes in order of first appearance;
    missing categorical values (empty, ``?`` or ``NA``) share one
    ``Unknown`` code.  User ids are the zero-based row indices.
    """
    columns = _parse_schema_config(schema_config)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DatasetFormatError(f"{path}: file is empty; a header row is required.") from None
    except pd.errors.ParserError as exc:
        raise DatasetFormatError(f"{path}: malformed row: {exc}") from None

    frame.columns = [str(c).strip() for c in frame.columns]
    absent = [name for name, _, _ in columns if name not in frame.columns]
    if absent:
        raise DatasetFormatError(f"{path}: header is missing configured columns {absent}.")
    ignored = [c for c in frame.columns if c not in schema_config]
    if ignored:
        logger.warning("%s: ignoring columns not in the schema config: %s", path, ignored)
    short = frame[[name for name, _, _ in columns]].isna().any(axis=1).to_numpy()
    if short.any():
        line = int(np.flatnonzero(short)[0]) + 2
        raise DatasetFormatError(f"{path}: line {line} has fewer fields than the header.")

    schema: list[AttributeSchema] = [AttributeSchema.user_id()]
    matrix = [np.arange(len(frame), dtype=np.float64)]
    for name, kind, role in columns:
        raw = frame[name].astype(str).str.strip()
        if role is AttributeRole.SENSITIVE:
            encoded, labels = _encode_sensitive(name, raw)
            schema.append(AttributeSchema(name, kind, (0.0, 1.0), role, labels))
        elif kind is AttributeKind.CATEGORICAL:
            encoded, labels = _encode_categorical(name, raw)
            schema.append(AttributeSchema.categorical(name, len(labels), labels))
        else:
            encoded = _encode_ordinal(name, raw)
            schema.append(AttributeSchema.ordinal(name, encoded))
        matrix.append(encoded)

    values = np.column_stack(matrix) if len(frame) else np.empty((0, len(schema)))
    dataset = Dataset(tuple(schema), values)
    logger.info("Loaded %s: %d rows, %d attributes", path, dataset.size, len(columns))
    return dataset


def write_csv(dataset: Dataset, path: str | Path, *, decode: bool = True) -> None:
    """Write *dataset* as CSV.

    With ``decode`` the original labels are written and the synthetic
    user id is dropped, so the file can be fed back to :func:`load_csv`
    with the same schema config.  Without it, encoded values (user id
    included) are written for debugging.
    """
    frame = pd.DataFrame(index=range(dataset.size))
    for index, attr in enumerate(dataset.schema):
        column = dataset.values[:, index]
        if decode and attr.role is AttributeRole.USER_ID:
            continue
        if decode and attr.labels:
            frame[attr.name] = [attr.labels[int(v)] for v in column]
        elif attr.kind is AttributeKind.CATEGORICAL or attr.role is AttributeRole.USER_ID:
            frame[attr.name] = column.astype(np.int64)
        else:
            frame[attr.name] = [_format_number(v) for v in column]
    frame.to_csv(path, index=False)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _require_projected(source: Dataset, target: TargetRecord) -> None:
    extra = [source.schema[i].name for i in source.regular_indices if not target.knows(i)]
    if extra:
        raise ValueError(
            f"Attributes {extra} are not known for the target; project the dataset on the "
            "target's known attributes before sampling shadows."
        )


def sample_shadow_dataset(
    source: Dataset,
    target: TargetRecord,
    z: int,
    rng: np.random.Generator,
) -> ShadowDataset:
    """Sample *z* distinct rows plus the target, with Bernoulli(0.5) sensitive values."""
    _require_projected(source, target)
    pool = source.values[source.values[:, 0] != float(target.user_id)]
    if z < 0 or z > len(pool):
        raise InsufficientDataError(
            f"Cannot sample {z} records without replacement from {len(pool)} available rows."
        )
    picked = pool[rng.choice(len(pool), size=z, replace=False)] if z else pool[:0]
    labels = rng.integers(0, 2, size=z + 1)
    rows = np.vstack([picked, target.row(source.schema, labels[-1])[None, :]])
    rows[:, source.sensitive_index] = labels
    return ShadowDataset(Dataset(source.schema, rows), int(labels[-1]))


def sample_membership_dataset(
    source: Dataset,
    target: TargetRecord,
    z: int,
    rng: np.random.Generator,
) -> ShadowDataset:
    """Sample a dataset of ``z + 1`` rows that contains the target iff the label is 1.

    Sensitive values keep their source values; the target's row carries
    its true sensitive bit.
    """
    if target.sensitive_value is None:
        raise ValueError("Membership sampling needs the target's true sensitive value.")
    _require_projected(source, target)
    pool = source.values[source.values[:, 0] != float(target.user_id)]
    if z < 0 or z + 1 > len(pool):
        raise InsufficientDataError(
            f"Membership sampling needs {z + 1} records but only {len(pool)} rows are available."
        )
    member = int(rng.integers(0, 2))
    picked = pool[rng.choice(len(pool), size=z + 1, replace=False)]
    if member:
        picked[-1] = target.row(source.schema, target.sensitive_value)
    return ShadowDataset(Dataset(source.schema, picked), member)


def check_uniqueness(
    dataset: Dataset,
    target: TargetRecord,
    attributes: Sequence[int] | None = None,
) -> bool:
    """True iff no other user matches the target on *attributes* (default: all known)."""
    attrs = list(target.known_attributes if attributes is None else attributes)
    others = dataset.values[dataset.values[:, 0] != float(target.user_id)]
    if not attrs:
        return len(others) == 0
    wanted = np.array([target.value_of(i) for i in attrs], dtype=np.float64)
    return not bool(np.all(others[:, attrs] == wanted, axis=1).any())


def split_half(dataset: Dataset, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Shuffle-split rows into two halves (the first gets the odd row)."""
    order = rng.permutation(dataset.size)
    cut = (dataset.size + 1) // 2
    return dataset.take(order[:cut]), dataset.take(order[cut:])


def synth_from_marginals(source: Dataset, rng: np.random.Generator) -> Dataset:
    """Draw every column independently from its empirical one-way marginal."""
    n = source.size
    values = np.empty_like(source.values)
    values[:, 0] = np.arange(n, dtype=np.float64)
    for index in range(1, source.n_attributes):
        values[:, index] = source.values[rng.integers(0, n, size=n), index] if n else []
    return Dataset(source.schema, values)


# ---------------------------------------------------------------------------
# Attribute and target selection
# ---------------------------------------------------------------------------


def select_attributes(
    dataset: Dataset,
    rule: str,
    rng: np.random.Generator,
    count: int = 5,
) -> tuple[str, ...]:
    """Choose the attacker's known attributes.

    ``"random"`` draws *count* non-sensitive attributes uniformly;
    ``"typed"`` draws two categorical and ``count - 2`` ordinal ones.
    """
    regular = list(dataset.regular_indices)
    if rule == "random":
        if len(regular) < count:
            raise InsufficientDataError(f"Dataset has {len(regular)} attributes; {count} requested.")
        chosen = rng.choice(regular, size=count, replace=False)
    elif rule == "typed":
        categorical = [i for i in regular if not dataset.schema[i].is_ordinal]
        ordinal = [i for i in regular if dataset.schema[i].is_ordinal]
        n_cat, n_ord = 2, count - 2
        if len(categorical) < n_cat or len(ordinal) < n_ord:
            raise InsufficientDataError(
                f"Typed selection needs {n_cat} categorical and {n_ord} ordinal attributes; "
                f"dataset has {len(categorical)} and {len(ordinal)}."
            )
        chosen = np.concatenate([
            rng.choice(categorical, size=n_cat, replace=False),
            rng.choice(ordinal, size=n_ord, replace=False),
        ])
    else:
        raise ConfigError(f"Unknown attribute rule '{rule}'. Use 'random' or 'typed'.")
    return tuple(dataset.schema[i].name for i in sorted(int(c) for c in chosen))


def unique_users(dataset: Dataset, attributes: Sequence[int] | None = None) -> np.ndarray:
    """User ids whose values on *attributes* (default: all regular) are unique."""
    attrs = list(dataset.regular_indices if attributes is None else attributes)
    frame = pd.DataFrame(dataset.values[:, attrs])
    unique = ~frame.duplicated(keep=False).to_numpy()
    return dataset.user_ids[unique]


def select_targets(
    dataset: Dataset,
    count: int | None,
    rng: np.random.Generator,
) -> list[TargetRecord]:
    """Sample *count* users unique on all regular attributes (``None`` = all of them)."""
    candidates = unique_users(dataset)
    if count is None:
        chosen = candidates
    else:
        if count > len(candidates):
            raise InsufficientDataError(
                f"Only {len(candidates)} users are unique on the known attributes; {count} requested."
            )
        chosen = rng.choice(candidates, size=count, replace=False)
    return [TargetRecord.from_dataset(dataset, int(uid)) for uid in chosen]
