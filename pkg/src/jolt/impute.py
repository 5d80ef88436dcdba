"""Row-wise LLM imputation and the column mean/mode baseline.

LLM imputation builds one prompt per incomplete row: the row's observed
feature columns come first, its missing columns become the targets, and
all other rows (with their own missing cells omitted) serve as in-context
examples.  Missing values are predicted jointly in the permuted order,
each imputed value conditioning the next.  Rows are imputed from the
original table only; imputed rows never feed later rows' contexts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Sequence

from .decimals import render_scaled, round_half_away
from .inference import (
    CategoricalSummary,
    InferenceError,
    SamplingConfig,
    _derived_seed,
    categorical_logprobs,
    continuation_for_target,
    rejection_sample,
)
from .prompts import PromptTemplate, permute_for_imputation, serialize
from .table import (
    Category,
    Cell,
    ColumnKind,
    ColumnSpec,
    Number,
    Table,
    is_missing,
    render_cell,
)


class ImputationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CellProvenance:
    method: str
    point: str
    interval: tuple[float, float] | None = None
    distribution: Mapping[str, float] | None = None


@dataclass(frozen=True)
class ImputedTable:
    """Completed table plus per-imputed-cell provenance keyed by
    (row index, feature column index) in original coordinates."""

    table: Table
    provenance: Mapping[tuple[int, int], CellProvenance]


def _parse_cell_value(spec: ColumnSpec, value: str) -> Cell:
    if spec.kind is ColumnKind.CATEGORICAL:
        return Category(value)
    from .decimals import parse_scaled

    return Number(parse_scaled(value, spec.precision or 0))


def _impute_row(
    backend,
    table: Table,
    row: int,
    template: PromptTemplate,
    cfg: SamplingConfig,
) -> dict[int, CellProvenance]:
    """Predict the missing feature cells of one row, in permuted order."""
    view, missing_cols = permute_for_imputation(table, row)
    for spec in missing_cols:
        if spec.kind is ColumnKind.TEXT:
            raise ImputationError(
                f"row {row}, column {spec.name!r}: text cells have no predictive distribution"
            )
    prompt = serialize(view, template, row)
    order = [s.name for s in missing_cols]
    col_index = {spec.name: j for j, spec in enumerate(table.feature_columns)}
    pairs: list[tuple[str, str]] = []
    out: dict[int, CellProvenance] = {}
    for k, spec in enumerate(missing_cols):
        conditioning = continuation_for_target(prompt, pairs, spec.name, template, order)
        if spec.kind is ColumnKind.CATEGORICAL:
            dist = categorical_logprobs(backend, conditioning, spec.classes)
            point = dist.argmax_class()
            prov = CellProvenance(method="llm-logits", point=point, distribution=dist.probs())
        else:
            # Sample this single value: generation stops at either separator.
            seeded = replace(cfg, seed=_derived_seed(cfg.seed, row, k))
            summary = _sample_single(backend, conditioning, spec, template, seeded)
            point = summary.rendered_median()
            prov = CellProvenance(method="llm-sampling", point=point, interval=summary.interval)
        pairs.append((spec.name, point))
        out[col_index[spec.name]] = prov
    return out


def _sample_single(backend, conditioning: str, spec: ColumnSpec, template: PromptTemplate, cfg):
    """Rejection-sample one value; the conditioning already ends with the header."""
    from .decimals import DecimalParseError, parse_scaled
    from .inference import AcceptanceError, NumericSummary

    import numpy as np

    values: list[int] = []
    attempts = 0
    for replica in range(cfg.n_samples):
        accepted = False
        for attempt in range(cfg.max_attempts_per_sample):
            attempts += 1
            text = backend.generate_text(
                conditioning,
                top_p=cfg.top_p,
                temperature=cfg.temperature,
                max_new_tokens=cfg.max_new_tokens,
                stop=(template.s, template.t),
                seed=_derived_seed(cfg.seed, replica, attempt),
            )
            try:
                values.append(parse_scaled(text, spec.precision or 0))
                accepted = True
                break
            except DecimalParseError:
                continue
        if not accepted:
            rate = len(values) / attempts
            raise AcceptanceError(
                f"column {spec.name!r}: no valid sample in {cfg.max_attempts_per_sample} attempts",
                acceptance_rate=rate,
            )
    scale = 10 ** (spec.precision or 0)
    floats = [v / scale for v in values]
    lo_q = 100 * (1 - cfg.interval_level) / 2
    lo, hi = np.percentile(floats, [lo_q, 100 - lo_q])
    return NumericSummary(
        median=float(np.percentile(floats, 50)),
        interval=(float(lo), float(hi)),
        level=cfg.interval_level,
        values_scaled=tuple(values),
        precision=spec.precision or 0,
    )


def impute_llm(
    backend,
    table: Table,
    template: PromptTemplate,
    cfg: SamplingConfig = SamplingConfig(),
) -> ImputedTable:
    """Impute every missing feature cell row by row with the backend."""
    incomplete = [
        i for i in range(len(table.rows)) if any(is_missing(c) for c in table.feature_cells(i))
    ]
    if not incomplete:
        raise ImputationError("table has no missing feature cells, nothing to impute")
    provenance: dict[tuple[int, int], CellProvenance] = {}
    rows = [list(r) for r in table.rows]
    for i in incomplete:
        try:
            imputed = _impute_row(backend, table, i, template, cfg)
        except (InferenceError, ImputationError):
            raise
        except Exception as exc:
            raise ImputationError(f"row {i}: {exc}") from exc
        for j, prov in imputed.items():
            rows[i][j] = _parse_cell_value(table.feature_columns[j], prov.point)
            provenance[(i, j)] = prov
    return ImputedTable(table=replace(table, rows=tuple(tuple(r) for r in rows)), provenance=provenance)


def impute_baseline(table: Table) -> ImputedTable:
    """Column-wise mean (numeric) / mode (categorical) imputation from the
    observed training-row values.  Means are rendered at the column
    precision, halves rounded away from zero; mode ties break to the first
    class in declared order."""
    coords = [
        (i, j)
        for i in range(len(table.rows))
        for j in range(table.n_features)
        if is_missing(table.rows[i][j])
    ]
    if not coords:
        raise ImputationError("table has no missing feature cells, nothing to impute")
    fills: dict[int, Cell] = {}
    provenance: dict[tuple[int, int], CellProvenance] = {}
    for j in sorted({j for _, j in coords}):
        spec = table.feature_columns[j]
        observed = [
            table.rows[i][j] for i in table.train_indices if not is_missing(table.rows[i][j])
        ]
        if not observed:
            raise ImputationError(f"column {spec.name!r} has no observed training values")
        if spec.kind is ColumnKind.NUMERIC:
            mean = Fraction(sum(c.scaled for c in observed), len(observed))
            fills[j] = Number(round_half_away(mean))
            method = "mean"
        elif spec.kind is ColumnKind.CATEGORICAL:
            counts = {c: 0 for c in spec.classes}
            for cell in observed:
                counts[cell.label] += 1
            best = max(counts.values())
            fills[j] = Category(next(c for c in spec.classes if counts[c] == best))
            method = "mode"
        else:
            raise ImputationError(f"column {spec.name!r}: text columns have no mean or mode")
        point = render_cell(spec, fills[j])
        for i, jj in coords:
            if jj == j:
                provenance[(i, j)] = CellProvenance(method=method, point=point)
    rows = [list(r) for r in table.rows]
    for i, j in coords:
        rows[i][j] = fills[j]
    return ImputedTable(table=replace(table, rows=tuple(tuple(r) for r in rows)), provenance=provenance)


def imputation_mae(
    imputed: ImputedTable,
    truth: Table,
    columns: Sequence[str] | None = None,
) -> float:
    """Mean absolute error over imputed numeric cells against a fully
    observed truth table at the same coordinates."""
    table = imputed.table
    if len(truth.rows) != len(table.rows) or truth.feature_columns != table.feature_columns:
        raise ImputationError("truth table does not match the imputed table")
    wanted = set(columns) if columns is not None else None
    total = 0.0
    count = 0
    for (i, j), _ in imputed.provenance.items():
        spec = table.feature_columns[j]
        if spec.kind is not ColumnKind.NUMERIC:
            continue
        if wanted is not None and spec.name not in wanted:
            continue
        truth_cell = truth.rows[i][j]
        if is_missing(truth_cell):
            raise ImputationError(f"truth missing at imputed coordinate ({i}, {spec.name!r})")
        scale = 10 ** (spec.precision or 0)
        total += abs(table.rows[i][j].scaled - truth_cell.scaled) / scale
        count += 1
    if count == 0:
        raise ImputationError("no imputed numeric cells; MAE undefined")
    return total / count
