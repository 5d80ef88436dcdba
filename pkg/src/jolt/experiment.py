"""Experiment runner: sweep shots, seeds, MCAR fractions, and
missing-data modes; aggregate metrics across seeds.

Each grid cell is fully determined by its (shot, seed, fraction, mode)
key: shot selection, test selection, the missing mask, and sampling seeds
are all derived from the cell's seed, so reruns are bit-identical and
row-level parallelism cannot change results.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .impute import impute_baseline
from .inference import RowPrediction, SamplingConfig, predict_row
from .metrics import MetricSet, compute_metrics
from .prompts import PromptTemplate
from .table import Table, mask_mcar, select_shots, select_test

MODES = ("omit", "impute-baseline")


def _sub_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    table: Table
    template: PromptTemplate
    shots: tuple[int, ...]
    seeds: tuple[int, ...]
    fractions: tuple[float, ...]
    modes: tuple[str, ...] = ("omit",)
    n_test: int = 1
    point_mode: str = "auto"
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "shots", tuple(self.shots))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        object.__setattr__(self, "fractions", tuple(self.fractions))
        object.__setattr__(self, "modes", tuple(self.modes))
        if not (self.shots and self.seeds and self.fractions and self.modes):
            raise ValueError("shots, seeds, fractions, and modes must be nonempty")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown missing-data modes {bad}; expected subset of {MODES}")
        if self.n_test < 1 or self.n_test > len(self.table.test_indices):
            raise ValueError(f"n_test={self.n_test} out of range for {len(self.table.test_indices)} test rows")


@dataclass(frozen=True)
class CellResult:
    shot: int
    seed: int
    fraction: float
    mode: str
    metrics: MetricSet | None
    error: str | None = None
    n_rows: int = 0


@dataclass(frozen=True)
class AggregateRow:
    shot: int
    fraction: float
    mode: str
    metric: str
    mean: float
    std: float
    n_seeds: int


@dataclass(frozen=True)
class ExperimentReport:
    cells: tuple[CellResult, ...]
    aggregates: tuple[AggregateRow, ...]

    @property
    def failed_cells(self) -> tuple[CellResult, ...]:
        return tuple(c for c in self.cells if c.error is not None)

    def to_json(self) -> str:
        payload = {
            "cells": [
                {
                    "shot": c.shot,
                    "seed": c.seed,
                    "fraction": c.fraction,
                    "mode": c.mode,
                    "n_rows": c.n_rows,
                    "error": c.error,
                    "metrics": None
                    if c.metrics is None
                    else {**c.metrics.flat(), "nll_excluded": c.metrics.nll_excluded},
                }
                for c in self.cells
            ],
            "aggregates": [
                {
                    "shot": a.shot,
                    "fraction": a.fraction,
                    "mode": a.mode,
                    "metric": a.metric,
                    "mean": a.mean,
                    "std": a.std,
                    "n_seeds": a.n_seeds,
                }
                for a in self.aggregates
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=False)

    def to_long_csv(self) -> str:
        """Plot-ready long format: one row per (grid cell, metric)."""
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["shot", "seed", "fraction", "mode", "metric", "value"])
        for c in self.cells:
            if c.metrics is None:
                continue
            for metric, value in c.metrics.flat().items():
                writer.writerow([c.shot, c.seed, c.fraction, c.mode, metric, repr(value)])
        return buf.getvalue()


def _run_cell(cfg: ExperimentConfig, backend, shot: int, seed: int, fraction: float, mode: str) -> CellResult:
    work = select_shots(cfg.table, shot, _sub_seed(seed, 0))
    work = select_test(work, cfg.n_test, _sub_seed(seed, 1))
    work = mask_mcar(work, fraction, _sub_seed(seed, 2))
    if mode == "impute-baseline" and work.has_missing_features():
        work = impute_baseline(work).table

    def one(row: int) -> RowPrediction:
        return predict_row(
            backend,
            work,
            row,
            cfg.template,
            point_mode=cfg.point_mode,
            sampling=replace(cfg.sampling, seed=_sub_seed(seed, 3, row)),
        )

    rows = list(work.test_indices)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            predictions = list(pool.map(one, rows))
    else:
        predictions = [one(r) for r in rows]
    truths = [
        {spec.name: cell for spec, cell in zip(work.target_columns, work.target_cells(r))}
        for r in rows
    ]
    metrics = compute_metrics(work.target_columns, predictions, truths)
    return CellResult(shot=shot, seed=seed, fraction=fraction, mode=mode, metrics=metrics, n_rows=len(rows))


def _aggregate(cells: Sequence[CellResult]) -> tuple[AggregateRow, ...]:
    groups: dict[tuple[int, float, str], list[CellResult]] = {}
    for c in cells:
        if c.metrics is not None:
            groups.setdefault((c.shot, c.fraction, c.mode), []).append(c)
    out: list[AggregateRow] = []
    for (shot, fraction, mode), group in groups.items():
        metric_names = list(group[0].metrics.flat().keys())
        for metric in metric_names:
            values = [g.metrics.flat()[metric] for g in group]
            mean = float(np.mean(values))
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            out.append(
                AggregateRow(
                    shot=shot, fraction=fraction, mode=mode, metric=metric,
                    mean=mean, std=std, n_seeds=len(values),
                )
            )
    return tuple(out)


def run_experiment(cfg: ExperimentConfig, backend) -> ExperimentReport:
    """Run the full grid; a failing cell is recorded, not fatal."""
    cells: list[CellResult] = []
    for seed in cfg.seeds:
        for shot in cfg.shots:
            for fraction in cfg.fractions:
                for mode in cfg.modes:
                    try:
                        cells.append(_run_cell(cfg, backend, shot, seed, fraction, mode))
                    except Exception as exc:
                        cells.append(
                            CellResult(
                                shot=shot, seed=seed, fraction=fraction, mode=mode,
                                metrics=None, error=f"{type(exc).__name__}: {exc}",
                            )
                        )
    return ExperimentReport(cells=tuple(cells), aggregates=_aggregate(cells))
