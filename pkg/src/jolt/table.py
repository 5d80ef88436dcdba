"""Typed tabular data model, CSV ingestion, and seeded MCAR masking.

A :class:`Table` holds an ordered block of feature columns followed by an
ordered block of target columns, plus a designated train/test split over
its rows.  Tables are immutable; every operation returns a new table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .decimals import DecimalParseError, parse_scaled, render_scaled


class SchemaError(ValueError):
    """Data does not conform to its declared schema."""


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TEXT = "text"


@dataclass(frozen=True)
class ColumnSpec:
    """One column: a text heading plus its value type.

    ``precision`` is the fixed count of digits after the decimal point for
    numeric columns; ``classes`` is the ordered finite class set for
    categorical columns.
    """

    name: str
    kind: ColumnKind
    precision: int | None = None
    classes: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ColumnKind(self.kind))
        if self.classes is not None:
            object.__setattr__(self, "classes", tuple(self.classes))
        if not self.name:
            raise SchemaError("column name must be nonempty")
        if self.kind is ColumnKind.NUMERIC:
            if self.precision is None or self.precision < 0:
                raise SchemaError(f"column {self.name!r}: numeric columns need precision >= 0")
            if self.classes is not None:
                raise SchemaError(f"column {self.name!r}: numeric columns take no classes")
        elif self.kind is ColumnKind.CATEGORICAL:
            if not self.classes:
                raise SchemaError(f"column {self.name!r}: categorical columns need classes")
            if len(set(self.classes)) != len(self.classes):
                raise SchemaError(f"column {self.name!r}: classes must be unique")
            if any(not c for c in self.classes):
                raise SchemaError(f"column {self.name!r}: classes must be nonempty strings")
            if self.precision is not None:
                raise SchemaError(f"column {self.name!r}: categorical columns take no precision")
        else:
            if self.precision is not None or self.classes is not None:
                raise SchemaError(f"column {self.name!r}: text columns take no precision or classes")


class _MissingType:
    """Singleton marker for an absent cell value."""

    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MISSING"


MISSING = _MissingType()


@dataclass(frozen=True)
class Number:
    scaled: int


@dataclass(frozen=True)
class Category:
    label: str


@dataclass(frozen=True)
class Text:
    content: str


Cell = Number | Category | Text | _MissingType


def is_missing(cell: Cell) -> bool:
    return cell is MISSING


def render_cell(spec: ColumnSpec, cell: Cell) -> str:
    """Render an observed cell exactly as it appears in prompts."""
    if cell is MISSING:
        raise ValueError(f"cannot render a missing cell in column {spec.name!r}")
    if isinstance(cell, Number):
        return render_scaled(cell.scaled, spec.precision or 0)
    if isinstance(cell, Category):
        return cell.label
    return cell.content


def _check_cell(spec: ColumnSpec, cell: Cell, where: str) -> None:
    if cell is MISSING:
        return
    if spec.kind is ColumnKind.NUMERIC:
        if not isinstance(cell, Number):
            raise SchemaError(f"{where}: expected a number in column {spec.name!r}")
    elif spec.kind is ColumnKind.CATEGORICAL:
        if not isinstance(cell, Category):
            raise SchemaError(f"{where}: expected a category in column {spec.name!r}")
        if cell.label not in (spec.classes or ()):
            raise SchemaError(f"{where}: unknown category {cell.label!r} in column {spec.name!r}")
    else:
        if not isinstance(cell, Text):
            raise SchemaError(f"{where}: expected text in column {spec.name!r}")


@dataclass(frozen=True)
class Table:
    """Immutable table: feature columns, target columns, rows, split.

    ``train_indices`` / ``test_indices`` partition the rows.  When both are
    empty at construction, every row is a training row.
    """

    feature_columns: tuple[ColumnSpec, ...]
    target_columns: tuple[ColumnSpec, ...]
    rows: tuple[tuple[Cell, ...], ...]
    train_indices: tuple[int, ...] = ()
    test_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        object.__setattr__(self, "target_columns", tuple(self.target_columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        if not self.train_indices and not self.test_indices:
            object.__setattr__(self, "train_indices", tuple(range(len(self.rows))))
        object.__setattr__(self, "train_indices", tuple(self.train_indices))
        object.__setattr__(self, "test_indices", tuple(self.test_indices))

        names = [c.name for c in self.feature_columns + self.target_columns]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaError(f"duplicate column names: {sorted(dupes)}")
        width = len(names)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise SchemaError(f"row {i}: expected {width} cells, got {len(row)}")
            for spec, cell in zip(self.feature_columns + self.target_columns, row):
                _check_cell(spec, cell, f"row {i}")
        split = sorted(self.train_indices) + sorted(self.test_indices)
        if sorted(split) != list(range(len(self.rows))):
            raise SchemaError("train/test indices must partition the rows")

    @property
    def n_features(self) -> int:
        return len(self.feature_columns)

    @property
    def n_targets(self) -> int:
        return len(self.target_columns)

    @property
    def columns(self) -> tuple[ColumnSpec, ...]:
        return self.feature_columns + self.target_columns

    def feature_cells(self, row: int) -> tuple[Cell, ...]:
        return self.rows[row][: self.n_features]

    def target_cells(self, row: int) -> tuple[Cell, ...]:
        return self.rows[row][self.n_features :]

    def has_missing_features(self) -> bool:
        return any(is_missing(c) for row in self.rows for c in row[: self.n_features])

    def with_split(self, train: Iterable[int], test: Iterable[int]) -> "Table":
        return replace(self, train_indices=tuple(train), test_indices=tuple(test))


def _parse_cell(spec: ColumnSpec, raw: str, where: str) -> Cell:
    if raw == "":
        return MISSING
    if spec.kind is ColumnKind.NUMERIC:
        try:
            return Number(parse_scaled(raw, spec.precision or 0))
        except DecimalParseError as exc:
            raise SchemaError(f"{where}: {exc}") from exc
    if spec.kind is ColumnKind.CATEGORICAL:
        if raw not in (spec.classes or ()):
            raise SchemaError(f"{where}: unknown category {raw!r} (classes: {list(spec.classes or ())})")
        return Category(raw)
    return Text(raw)


def load_csv(
    path: str | Path,
    features: Sequence[ColumnSpec],
    targets: Sequence[ColumnSpec],
    n_test: int = 0,
) -> Table:
    """Load a UTF-8 CSV against a schema; empty fields become missing cells.

    The header must contain exactly the schema's column names (any order).
    The last ``n_test`` data rows form the test split.
    """
    specs = list(features) + list(targets)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if sorted(header) != sorted(s.name for s in specs):
            raise SchemaError(
                f"{path}: header {header} does not match schema columns {[s.name for s in specs]}"
            )
        positions = [header.index(s.name) for s in specs]
        rows: list[tuple[Cell, ...]] = []
        for i, record in enumerate(r for r in reader if r):
            if len(record) != len(header):
                raise SchemaError(f"{path}: data row {i} has {len(record)} fields, expected {len(header)}")
            cells = tuple(
                _parse_cell(spec, record[pos], f"data row {i}, column {spec.name!r}")
                for spec, pos in zip(specs, positions)
            )
            rows.append(cells)
    if n_test < 0 or n_test > len(rows):
        raise SchemaError(f"n_test={n_test} out of range for {len(rows)} rows")
    cut = len(rows) - n_test
    return Table(
        feature_columns=tuple(features),
        target_columns=tuple(targets),
        rows=tuple(rows),
        train_indices=tuple(range(cut)),
        test_indices=tuple(range(cut, len(rows))),
    )


def write_csv(table: Table, path: str | Path) -> None:
    """Write a table back to CSV; missing cells become empty fields."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in table.columns])
        for row in table.rows:
            writer.writerow(
                ["" if is_missing(cell) else render_cell(spec, cell) for spec, cell in zip(table.columns, row)]
            )


def mask_mcar(table: Table, fraction: float, seed: int, scope: str = "features-only") -> Table:
    """Set a seeded uniform sample of feature cells to missing.

    Exactly ``floor(fraction * n_rows * n_features)`` coordinates are drawn
    without replacement (decimal arithmetic, so e.g. 0.4 of 20 is exactly 8).
    Targets are never masked.  The mask depends only on the table dimensions,
    the fraction, and the seed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if scope != "features-only":
        raise ValueError(f"unsupported masking scope {scope!r}")
    total = len(table.rows) * table.n_features
    count = int(Fraction(str(fraction)) * total)
    if count == 0:
        return table
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=count, replace=False)
    coords = {(int(i) // table.n_features, int(i) % table.n_features) for i in flat}
    rows = tuple(
        tuple(
            MISSING if j < table.n_features and (i, j) in coords else cell
            for j, cell in enumerate(row)
        )
        for i, row in enumerate(table.rows)
    )
    return replace(table, rows=rows)


def _seeded_subset(pool: Sequence[int], n: int, seed: int) -> tuple[int, ...]:
    # First-n of a seeded permutation, re-sorted: nested across n, stable order.
    perm = np.random.default_rng(seed).permutation(len(pool))
    return tuple(sorted(pool[int(i)] for i in perm[:n]))


def select_shots(table: Table, n_shots: int, seed: int) -> Table:
    """Keep a seeded subsample of ``n_shots`` training rows; test rows untouched."""
    if n_shots < 0 or n_shots > len(table.train_indices):
        raise ValueError(f"n_shots={n_shots} exceeds training pool of {len(table.train_indices)}")
    keep_train = _seeded_subset(table.train_indices, n_shots, seed)
    return _keep_rows(table, keep_train, table.test_indices)


def select_test(table: Table, n_test: int, seed: int) -> Table:
    """Keep a seeded subsample of ``n_test`` test rows; training rows untouched."""
    if n_test < 0 or n_test > len(table.test_indices):
        raise ValueError(f"n_test={n_test} exceeds test pool of {len(table.test_indices)}")
    keep_test = _seeded_subset(table.test_indices, n_test, seed)
    return _keep_rows(table, table.train_indices, keep_test)


def _keep_rows(table: Table, train: Sequence[int], test: Sequence[int]) -> Table:
    order = sorted(list(train) + list(test))
    remap = {old: new for new, old in enumerate(order)}
    return Table(
        feature_columns=table.feature_columns,
        target_columns=table.target_columns,
        rows=tuple(table.rows[i] for i in order),
        train_indices=tuple(remap[i] for i in train),
        test_indices=tuple(remap[i] for i in test),
    )
