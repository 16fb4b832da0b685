"""Tabular data model: typed columns, CSV I/O, one-hot encoding and the
positivity filter that has to run before any causal analysis."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

KINDS = ("numeric", "categorical", "binary")
ROLES = ("pre_treatment", "group", "post_treatment", "outcome", "id", "weight")

_TRUE_TOKENS = {"1", "1.0", "true", "True", "TRUE"}
_FALSE_TOKENS = {"0", "0.0", "false", "False", "FALSE"}


class SchemaError(ValueError):
    """Raised when a file or table does not match its declared schema."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "numeric"
    role: str = "pre_treatment"
    # For binary columns stored as labels, e.g. ("White", "Black") -> 0, 1.
    levels: tuple[str, str] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.levels is not None and (self.kind != "binary" or len(self.levels) != 2):
            raise SchemaError(f"column {self.name!r}: levels only apply to binary columns")


def validate_schema(schema: Sequence[ColumnSpec]) -> None:
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise SchemaError(f"duplicate column names in schema: {names}")
    groups = [c for c in schema if c.role == "group"]
    if len(groups) != 1:
        raise SchemaError(f"schema needs exactly one group column, found {len(groups)}")
    if groups[0].kind != "binary":
        raise SchemaError(f"group column {groups[0].name!r} must be binary")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DataTable:
    """Column-oriented table.

    Numeric and binary columns are float arrays with NaN marking a missing
    cell; categorical columns are object arrays of strings with ``None`` for
    missing. Arrays are read-only.
    """

    columns: tuple[ColumnSpec, ...]
    data: Mapping[str, np.ndarray]

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        validate_schema(cols)
        frozen = {}
        n = None
        for spec in cols:
            if spec.name not in self.data:
                raise SchemaError(f"no data for column {spec.name!r}")
            arr = np.asarray(self.data[spec.name])
            if arr.ndim != 1:
                raise SchemaError(f"column {spec.name!r} is not one-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise SchemaError(f"column {spec.name!r} has {arr.shape[0]} rows, expected {n}")
            if spec.kind == "categorical":
                arr = arr.astype(object)
            else:
                arr = arr.astype(float)
                if spec.kind == "binary":
                    bad = ~np.isnan(arr) & (arr != 0) & (arr != 1)
                    if bad.any():
                        raise SchemaError(f"binary column {spec.name!r} has values outside {{0,1}}")
            frozen[spec.name] = _freeze(arr)
        object.__setattr__(self, "data", frozen)

    @property
    def n(self) -> int:
        if not self.columns:
            return 0
        return int(self.data[self.columns[0].name].shape[0])

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.data[name]
        except KeyError:
            raise KeyError(f"unknown column {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.data

    def spec(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(f"unknown column {name!r}")

    def by_role(self, role: str) -> list[str]:
        return [c.name for c in self.columns if c.role == role]

    @property
    def group_col(self) -> str:
        return self.by_role("group")[0]

    def missing_mask(self, name: str) -> np.ndarray:
        arr = self[name]
        if self.spec(name).kind == "categorical":
            return np.array([v is None for v in arr], dtype=bool)
        return np.isnan(arr)

    def take(self, rows) -> "DataTable":
        rows = np.asarray(rows)
        return DataTable(self.columns, {k: v[rows] for k, v in self.data.items()})

    def levels(self, name: str) -> list[str]:
        """Sorted distinct non-missing levels of a categorical column."""
        return sorted({v for v in self[name] if v is not None})

    def equals(self, other: "DataTable") -> bool:
        if self.columns != other.columns:
            return False
        for spec in self.columns:
            a, b = self[spec.name], other[spec.name]
            if spec.kind == "categorical":
                if list(a) != list(b):
                    return False
            elif not np.array_equal(a, b, equal_nan=True):
                return False
        return True


@dataclass(frozen=True)
class EncodedMatrix:
    design: np.ndarray
    feature_names: tuple[str, ...]
    source_mapping: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        if design.ndim != 2:
            raise ValueError("design must be two-dimensional")
        names = tuple(self.feature_names)
        if len(names) != design.shape[1]:
            raise ValueError(f"{len(names)} feature names for {design.shape[1]} columns")
        object.__setattr__(self, "design", _freeze(design))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "source_mapping", dict(self.source_mapping))

    @property
    def shape(self):
        return self.design.shape


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------

def _parse_cell(token: str, spec: ColumnSpec):
    if token == "":
        return None
    if spec.kind == "categorical":
        return token
    if spec.kind == "binary":
        if spec.levels is not None:
            if token == spec.levels[0]:
                return 0.0
            if token == spec.levels[1]:
                return 1.0
            return token  # reported as an extra level by the caller
        if token in _TRUE_TOKENS:
            return 1.0
        if token in _FALSE_TOKENS:
            return 0.0
        return token
    try:
        value = float(token)
    except ValueError:
        return None
    return value


def load_csv(path, schema: Sequence[ColumnSpec]) -> DataTable:
    """Read a CSV file into a :class:`DataTable`.

    The header has to contain exactly the schema's column names, in any order.
    Empty and unparseable numeric cells become missing. A binary column with
    more than two observed levels is a :class:`SchemaError`.
    """
    schema = tuple(schema)
    validate_schema(schema)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row is mandatory") from None
        expected = {c.name for c in schema}
        if len(header) != len(set(header)) or set(header) != expected:
            missing = sorted(expected - set(header))
            extra = sorted(set(header) - expected)
            raise SchemaError(f"{path}: header mismatch (missing {missing}, unexpected {extra})")
        position = {name: i for i, name in enumerate(header)}
        cells: dict[str, list] = {c.name: [] for c in schema}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for spec in schema:
                cells[spec.name].append(_parse_cell(row[position[spec.name]], spec))

    data = {}
    for spec in schema:
        values = cells[spec.name]
        if spec.kind == "binary":
            extra = sorted({v for v in values if isinstance(v, str)})
            if extra:
                raise SchemaError(
                    f"{path}: binary column {spec.name!r} has more than two levels "
                    f"(unexpected {extra[:5]})"
                )
        if spec.kind == "categorical":
            data[spec.name] = np.array(values, dtype=object)
        else:
            data[spec.name] = np.array([np.nan if v is None else v for v in values], dtype=float)
    return DataTable(schema, data)


def _format_cell(value, spec: ColumnSpec) -> str:
    if spec.kind == "categorical":
        return "" if value is None else str(value)
    if math.isnan(value):
        return ""
    if spec.kind == "binary":
        if spec.levels is not None:
            return spec.levels[int(value)]
        return str(int(value))
    if spec.role == "id" and float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_csv(table: DataTable, path) -> None:
    """Write ``table`` so that :func:`load_csv` with the same schema restores it."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.names)
        cols = [(table[c.name], c) for c in table.columns]
        for i in range(table.n):
            writer.writerow([_format_cell(arr[i], spec) for arr, spec in cols])


# ----------------------------------------------------------------------------
# Encoding
# ----------------------------------------------------------------------------

def one_hot_encode(table: DataTable, columns: Sequence[str]) -> EncodedMatrix:
    """Indicator features for categorical columns, levels in lexicographic order."""
    blocks = []
    names: list[str] = []
    mapping: dict[str, tuple[int, int]] = {}
    for col in columns:
        spec = table.spec(col)
        if spec.kind != "categorical":
            raise ValueError(f"column {col!r} is {spec.kind}, not categorical")
        if table.missing_mask(col).any():
            raise ValueError(f"column {col!r} has missing values")
        levels = table.levels(col)
        index = {lvl: j for j, lvl in enumerate(levels)}
        block = np.zeros((table.n, len(levels)))
        codes = np.fromiter((index[v] for v in table[col]), dtype=int, count=table.n)
        block[np.arange(table.n), codes] = 1.0
        mapping[col] = (len(names), len(names) + len(levels))
        names.extend(f"{col}={lvl}" for lvl in levels)
        blocks.append(block)
    design = np.hstack(blocks) if blocks else np.zeros((table.n, 0))
    return EncodedMatrix(design, tuple(names), mapping)


def encode_features(table: DataTable, columns: Sequence[str]) -> EncodedMatrix:
    """Design matrix for mixed columns: numeric and binary pass through,
    categorical columns are one-hot encoded."""
    blocks = []
    names: list[str] = []
    mapping: dict[str, tuple[int, int]] = {}
    for col in columns:
        spec = table.spec(col)
        if spec.kind == "categorical":
            enc = one_hot_encode(table, [col])
            blocks.append(enc.design)
            mapping[col] = (len(names), len(names) + enc.shape[1])
            names.extend(enc.feature_names)
        else:
            blocks.append(np.asarray(table[col], dtype=float)[:, None])
            mapping[col] = (len(names), len(names) + 1)
            names.append(col)
    design = np.hstack(blocks) if blocks else np.zeros((table.n, 0))
    return EncodedMatrix(design, tuple(names), mapping)


# ----------------------------------------------------------------------------
# Positivity
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditEntry:
    levels: dict
    group_counts: tuple[int, int]
    removed: int

    def to_dict(self) -> dict:
        return {"levels": dict(self.levels), "group_counts": list(self.group_counts),
                "removed": self.removed}


def positivity_filter(table: DataTable, group_col: str, categorical_cols: Sequence[str]):
    """Drop rows whose joint categorical cell does not contain both groups.

    Returns ``(filtered_table, removed_count, audit)`` where ``audit`` lists
    every offending cell with its per-group counts. Numeric columns are not
    binned.
    """
    if table.spec(group_col).kind != "binary":
        raise ValueError(f"group column {group_col!r} is not binary")
    group = table[group_col]
    if np.isnan(group).any():
        raise ValueError(f"group column {group_col!r} has missing values")
    for col in categorical_cols:
        if table.spec(col).kind == "categorical" and table.missing_mask(col).any():
            raise ValueError(f"categorical column {col!r} has missing values")

    if not categorical_cols:
        keys = [()] * table.n
    else:
        keys = list(zip(*(table[c] for c in categorical_cols)))
    counts: dict[tuple, list[int]] = {}
    for key, g in zip(keys, group):
        counts.setdefault(key, [0, 0])[int(g)] += 1
    bad = {k for k, (n0, n1) in counts.items() if n0 == 0 or n1 == 0}
    keep = np.array([k not in bad for k in keys], dtype=bool)

    def _level(v):
        return v.item() if isinstance(v, np.generic) else v

    audit = [
        AuditEntry(
            levels={c: _level(v) for c, v in zip(categorical_cols, key)},
            group_counts=(counts[key][0], counts[key][1]),
            removed=counts[key][0] + counts[key][1],
        )
        for key in sorted(bad, key=lambda k: tuple(str(v) for v in k))
    ]
    removed = int((~keep).sum())
    return table.take(np.flatnonzero(keep)), removed, audit


def audit_to_json(audit: Iterable[AuditEntry]) -> str:
    return json.dumps([a.to_dict() for a in audit], indent=2, sort_keys=True)

