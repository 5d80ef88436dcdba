"""Deterministic serialization of tables into prompts.

A prompt is the side-information prefix, the training rows, and the test
row's feature fields, joined with three literal separator strings: ``d``
between a header and its value, ``s`` between fields, and ``t`` between
examples.  Missing cells are simply omitted: they produce no fragment and
no dangling separator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .table import ColumnSpec, Table, is_missing, render_cell


class PromptError(ValueError):
    """A prompt cannot be built from the given inputs."""


@dataclass(frozen=True)
class PromptTemplate:
    prefix: str = ""
    d: str = ": "
    s: str = "; "
    t: str = "\n"

    def __post_init__(self) -> None:
        seps = (self.d, self.s, self.t)
        if any(not sep for sep in seps):
            raise PromptError("separators d, s, t must be nonempty")
        if len(set(seps)) != 3:
            raise PromptError("separators d, s, t must be pairwise distinct")


@dataclass(frozen=True)
class Prompt:
    """Serialized prompt text; ``boundary`` is the offset where the
    test-row fragment begins (diagnostics only)."""

    text: str
    boundary: int


def _fields(template: PromptTemplate, specs: Sequence[ColumnSpec], cells) -> list[str]:
    return [
        spec.name + template.d + render_cell(spec, cell)
        for spec, cell in zip(specs, cells)
        if not is_missing(cell)
    ]


def serialize(table: Table, template: PromptTemplate, test_row: int) -> Prompt:
    """Serialize training rows plus the test row's features into one string.

    Training rows emit features then targets; the test row emits only its
    observed features, with one trailing field separator, ready for a
    target-header continuation.
    """
    if test_row not in table.test_indices:
        raise PromptError(f"row {test_row} is not a test row")
    parts: list[str] = []
    if template.prefix:
        parts.append(template.prefix)
        parts.append(template.t)
    for i in table.train_indices:
        fields = _fields(template, table.columns, table.rows[i])
        if fields:
            parts.append(template.s.join(fields))
            parts.append(template.t)
    boundary = sum(len(p) for p in parts)
    test_fields = _fields(template, table.feature_columns, table.feature_cells(test_row))
    if test_fields:
        parts.append(template.s.join(test_fields))
        parts.append(template.s)
    elif not template.prefix:
        raise PromptError(
            f"row {test_row}: all feature cells missing and the template has no prefix "
            "(empty conditioning)"
        )
    return Prompt(text="".join(parts), boundary=boundary)


def continuation_for_target(
    prompt: Prompt,
    targets_so_far: Sequence[tuple[str, str]],
    next_header: str,
    template: PromptTemplate,
    target_order: Sequence[str],
) -> str:
    """The exact conditioning string for scoring the next target.

    Appends each already-fixed (header, rendered value) pair and then the
    next target's header and header/value separator.  Headers must follow
    the declared target order.
    """
    if next_header not in target_order:
        raise PromptError(f"{next_header!r} is not a target column")
    k = len(targets_so_far)
    expected = list(target_order[:k])
    got = [h for h, _ in targets_so_far]
    if got != expected or (k < len(target_order) and target_order[k] != next_header):
        raise PromptError(
            f"target order violation: have {got}, next {next_header!r}, declared {list(target_order)}"
        )
    pieces = [prompt.text]
    for header, value in targets_so_far:
        pieces.append(header + template.d + value + template.s)
    pieces.append(next_header + template.d)
    return "".join(pieces)


def permute_for_imputation(table: Table, row: int) -> tuple[Table, tuple[ColumnSpec, ...]]:
    """Reorder columns so the row's observed features come first and its
    missing features become the targets; other rows keep their own missing
    cells (omitted as usual at serialization).

    The returned view contains feature columns only; original target
    columns are dropped.  The designated row becomes the sole test row.
    """
    cells = table.feature_cells(row)
    observed = [j for j, c in enumerate(cells) if not is_missing(c)]
    missing = [j for j, c in enumerate(cells) if is_missing(c)]
    if not missing:
        raise PromptError(f"row {row} has no missing feature cells, nothing to impute")
    view = Table(
        feature_columns=tuple(table.feature_columns[j] for j in observed),
        target_columns=tuple(table.feature_columns[j] for j in missing),
        rows=tuple(tuple(r[j] for j in observed + missing) for r in (t[: table.n_features] for t in table.rows)),
        train_indices=tuple(i for i in range(len(table.rows)) if i != row),
        test_indices=(row,),
    )
    return view, view.target_columns
