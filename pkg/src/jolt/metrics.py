"""Evaluation metrics: MAE, accuracy, ROC AUC, and mean joint NLL."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .decimals import parse_scaled
from .inference import RowPrediction
from .table import Cell, ColumnKind, ColumnSpec, is_missing

NEG_INF = float("-inf")


class MetricError(ValueError):
    pass


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: the fraction of (positive, negative) pairs where
    the positive scores higher, ties counted 0.5."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if len(scores) != len(labels):
        raise MetricError("scores and labels must align")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both a positive and a negative label")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=float)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def macro_ovr_auc(
    distributions: Sequence[Mapping[str, float]],
    truths: Sequence[str],
    classes: Sequence[str],
) -> float:
    """Macro-averaged one-vs-rest AUC; each class scored by its predicted
    probability.  Classes absent from the truth (or covering it entirely)
    are skipped."""
    values = []
    for c in classes:
        labels = [int(t == c) for t in truths]
        if 0 < sum(labels) < len(labels):
            values.append(auc([d.get(c, 0.0) for d in distributions], labels))
    if not values:
        raise MetricError("no class has both positive and negative labels")
    return float(np.mean(values))


@dataclass(frozen=True)
class MetricSet:
    """Per-target MAE / accuracy / AUC plus the mean joint NLL.

    Rows whose joint log-probability is -inf are excluded from the NLL
    mean and counted in ``nll_excluded`` instead of poisoning the average.
    """

    mae: Mapping[str, float]
    acc: Mapping[str, float]
    auc: Mapping[str, float]
    nll: float
    nll_excluded: int = 0

    def flat(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for name, v in self.mae.items():
            out[f"mae:{name}"] = v
        for name, v in self.acc.items():
            out[f"acc:{name}"] = v
        for name, v in self.auc.items():
            out[f"auc:{name}"] = v
        out["nll"] = self.nll
        return out


def compute_metrics(
    target_specs: Sequence[ColumnSpec],
    predictions: Sequence[RowPrediction],
    truths: Sequence[Mapping[str, Cell]],
) -> MetricSet:
    """Aggregate row predictions against ground truth."""
    if len(predictions) != len(truths):
        raise MetricError(f"{len(predictions)} predictions vs {len(truths)} truth rows")
    if not predictions:
        raise MetricError("no rows to score")
    mae: dict[str, float] = {}
    acc: dict[str, float] = {}
    auc_by_target: dict[str, float] = {}
    for spec in target_specs:
        truth_cells = [t[spec.name] for t in truths]
        if any(is_missing(c) for c in truth_cells):
            raise MetricError(f"target {spec.name!r}: truth has missing values")
        points = [p.points[spec.name] for p in predictions]
        if spec.kind is ColumnKind.NUMERIC:
            scale = 10 ** (spec.precision or 0)
            errs = [
                abs(parse_scaled(pt, spec.precision or 0) - c.scaled) / scale
                for pt, c in zip(points, truth_cells)
            ]
            mae[spec.name] = float(sum(errs) / len(errs))
        elif spec.kind is ColumnKind.CATEGORICAL:
            labels = [c.label for c in truth_cells]
            acc[spec.name] = sum(p == t for p, t in zip(points, labels)) / len(labels)
            dists = [p.distributions[spec.name] for p in predictions]
            auc_by_target[spec.name] = macro_ovr_auc(dists, labels, spec.classes)
    joints = [p.joint_logprob for p in predictions]
    if any(j is None for j in joints):
        raise MetricError("a row is missing its joint log-probability")
    finite = [j for j in joints if j != NEG_INF]
    excluded = len(joints) - len(finite)
    nll = -(sum(finite) / len(finite)) if finite else math.nan
    return MetricSet(mae=mae, acc=acc, auc=auc_by_target, nll=nll, nll_excluded=excluded)
