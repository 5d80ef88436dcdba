"""Probabilistic core: categorical and numerical target distributions,
joint log-probability via the product rule, and rejection sampling.

Scoring conventions
-------------------
* A categorical target's un-normalized log mass is the summed per-token
  log-probability of its rendered class string given the conditioning
  text; the distribution over the class set is normalized by
  log-sum-exp, so multiplying all raw masses by a constant changes
  nothing.
* A numerical target is scored with every position's distribution
  restricted to the allowed characters (digits, minus, decimal point,
  and the field/example separators) and renormalized.  The resulting bin
  mass is converted to a density by the exact bin width: a value with
  ``n`` digits after the decimal point occupies a bin of width
  ``10**-n``, so ``log_pdf = log_pmf + n*ln(10)``.
* Joint scoring is autoregressive with teacher forcing: each factor
  conditions on the ground-truth values of earlier targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .decimals import DecimalParseError, parse_scaled, render_scaled, round_half_away
from .prompts import Prompt, PromptTemplate, continuation_for_target, serialize
from .table import Category, Cell, ColumnKind, ColumnSpec, Number, Table, is_missing, render_cell
from .tokenizer import DIGITS

NEG_INF = float("-inf")
LN10 = math.log(10.0)


class InferenceError(RuntimeError):
    """Scoring or prediction failed."""


class AcceptanceError(InferenceError):
    """Rejection sampling exhausted its attempt budget for a sample slot."""

    def __init__(self, message: str, acceptance_rate: float):
        super().__init__(message)
        self.acceptance_rate = acceptance_rate


def numeric_allowed_strings(template: PromptTemplate) -> tuple[str, ...]:
    """Allowed strings for numerical-target scoring: digits, sign, point,
    and the template's example and field separators."""
    return DIGITS + ("-", ".", template.t, template.s)


@dataclass(frozen=True)
class CategoricalDist:
    """Normalized log-probabilities over an ordered class set."""

    classes: tuple[str, ...]
    logprob: tuple[float, ...]

    def prob(self, label: str) -> float:
        return math.exp(self.logprob[self.classes.index(label)])

    def probs(self) -> dict[str, float]:
        return {c: math.exp(lp) for c, lp in zip(self.classes, self.logprob)}

    def argmax_class(self) -> str:
        # Ties break to the first class in declared order.
        best = max(self.logprob)
        return self.classes[self.logprob.index(best)]


@dataclass(frozen=True)
class NumericalLogPdf:
    """Log bin-mass of a rendered number plus its density conversion."""

    value: str
    precision: int
    log_pmf: float

    @property
    def log_pdf(self) -> float:
        return self.log_pmf + self.precision * LN10


@dataclass(frozen=True)
class JointResult:
    per_target_logprob: tuple[float, ...]
    joint_logprob: float


@dataclass(frozen=True)
class NumericSummary:
    median: float
    interval: tuple[float, float]
    level: float
    values_scaled: tuple[int, ...]
    precision: int

    def rendered_median(self) -> str:
        """Empirical median rounded to the column precision (halves away from zero)."""
        ordered = sorted(self.values_scaled)
        n = len(ordered)
        if n % 2:
            mid = Fraction(ordered[n // 2])
        else:
            mid = Fraction(ordered[n // 2 - 1] + ordered[n // 2], 2)
        return render_scaled(round_half_away(mid), self.precision)


@dataclass(frozen=True)
class CategoricalSummary:
    frequencies: Mapping[str, float]
    mode: str


@dataclass(frozen=True)
class SampleSummary:
    raw: tuple[str, ...]
    per_target: Mapping[str, NumericSummary | CategoricalSummary]
    acceptance_rate: float


@dataclass(frozen=True)
class SamplingConfig:
    n_samples: int = 100
    top_p: float = 0.9
    temperature: float = 1.0
    max_new_tokens: int = 64
    max_attempts_per_sample: int = 20
    seed: int = 0
    interval_level: float = 0.95

    def __post_init__(self) -> None:
        if self.n_samples < 1 or self.max_attempts_per_sample < 1:
            raise ValueError("n_samples and max_attempts_per_sample must be >= 1")
        if not 0.0 < self.interval_level < 1.0:
            raise ValueError("interval_level must be in (0, 1)")


def _derived_seed(base: int, *key: int) -> int:
    return int(np.random.SeedSequence([base, *key]).generate_state(1)[0])


def categorical_logprobs(backend, conditioning: str, classes: Sequence[str]) -> CategoricalDist:
    """Normalized class distribution from summed per-token log-probabilities."""
    classes = tuple(classes)
    if not classes:
        raise InferenceError("class set must be nonempty")
    if any(not c for c in classes):
        raise InferenceError("classes must be nonempty strings")
    if len(classes) == 1:
        return CategoricalDist(classes=classes, logprob=(0.0,))
    raw = np.array([sum(backend.score_text(conditioning, c)) for c in classes])
    finite = raw[np.isfinite(raw)]
    if finite.size == 0:
        raise InferenceError("every class has zero probability under the backend")
    shift = finite.max()
    log_z = shift + math.log(np.exp(raw - shift).sum())
    return CategoricalDist(classes=classes, logprob=tuple(float(x - log_z) for x in raw))


def numerical_logpdf(
    backend, conditioning: str, value: str, precision: int, template: PromptTemplate
) -> NumericalLogPdf:
    """Masked-renormalized log bin-mass of ``value`` plus density conversion."""
    try:
        canonical = render_scaled(parse_scaled(value, precision), precision)
    except DecimalParseError as exc:
        raise InferenceError(f"value {value!r} is not renderable at precision {precision}: {exc}") from exc
    logprobs = backend.score_text(conditioning, canonical, allowed=numeric_allowed_strings(template))
    return NumericalLogPdf(value=canonical, precision=precision, log_pmf=sum(logprobs))


def joint_logprob(
    backend,
    prompt: Prompt,
    targets: Sequence[tuple[ColumnSpec, Cell]],
    template: PromptTemplate,
) -> JointResult:
    """Product-rule joint log-probability of the ground-truth target tuple.

    Numeric factors contribute log-densities, categorical factors
    log-probabilities; conditioning always uses the ground-truth values of
    earlier targets (teacher forcing).
    """
    if not targets:
        raise InferenceError("at least one target required")
    order = [spec.name for spec, _ in targets]
    pairs: list[tuple[str, str]] = []
    per: list[float] = []
    for spec, cell in targets:
        if is_missing(cell):
            raise InferenceError(f"target {spec.name!r} has no observed value to score")
        conditioning = continuation_for_target(prompt, pairs, spec.name, template, order)
        rendered = render_cell(spec, cell)
        if spec.kind is ColumnKind.CATEGORICAL:
            dist = categorical_logprobs(backend, conditioning, spec.classes)
            lp = dist.logprob[spec.classes.index(rendered)]
        elif spec.kind is ColumnKind.NUMERIC:
            lp = numerical_logpdf(backend, conditioning, rendered, spec.precision, template).log_pdf
        else:
            raise InferenceError(f"target {spec.name!r}: text targets have no predictive distribution")
        per.append(lp)
        pairs.append((spec.name, rendered))
    return JointResult(per_target_logprob=tuple(per), joint_logprob=sum(per))


def _parse_sample(
    text: str, target_specs: Sequence[ColumnSpec], template: PromptTemplate
) -> list[Category | Number] | None:
    """Parse a generated continuation as ``v1 <s> H2<d> v2 ...``; None if invalid."""
    parsed: list[Category | Number] = []
    remaining = text
    for i, spec in enumerate(target_specs):
        if i < len(target_specs) - 1:
            cut = remaining.find(template.s)
            if cut < 0:
                return None
            value, remaining = remaining[:cut], remaining[cut + len(template.s) :]
            expect = target_specs[i + 1].name + template.d
            if not remaining.startswith(expect):
                return None
            remaining = remaining[len(expect) :]
        else:
            value = remaining
        if not value:
            return None
        if spec.kind is ColumnKind.CATEGORICAL:
            if value not in (spec.classes or ()):
                return None
            parsed.append(Category(value))
        else:
            try:
                parsed.append(Number(parse_scaled(value, spec.precision or 0)))
            except DecimalParseError:
                return None
    return parsed


def _summarize(
    raw: list[str],
    values: list[list[Category | Number]],
    target_specs: Sequence[ColumnSpec],
    acceptance_rate: float,
    level: float,
) -> SampleSummary:
    per_target: dict[str, NumericSummary | CategoricalSummary] = {}
    for j, spec in enumerate(target_specs):
        column = [v[j] for v in values]
        if spec.kind is ColumnKind.CATEGORICAL:
            counts = {c: 0 for c in spec.classes}
            for v in column:
                counts[v.label] += 1
            total = len(column)
            best = max(counts.values())
            mode = next(c for c in spec.classes if counts[c] == best)
            per_target[spec.name] = CategoricalSummary(
                frequencies={c: n / total for c, n in counts.items()}, mode=mode
            )
        else:
            scale = 10 ** (spec.precision or 0)
            floats = [v.scaled / scale for v in column]
            lo_q = 100 * (1 - level) / 2
            lo, hi = np.percentile(floats, [lo_q, 100 - lo_q])
            per_target[spec.name] = NumericSummary(
                median=float(np.percentile(floats, 50)),
                interval=(float(lo), float(hi)),
                level=level,
                values_scaled=tuple(v.scaled for v in column),
                precision=spec.precision or 0,
            )
    return SampleSummary(raw=tuple(raw), per_target=per_target, acceptance_rate=acceptance_rate)


def rejection_sample(
    backend,
    prompt: Prompt,
    target_specs: Sequence[ColumnSpec],
    template: PromptTemplate,
    cfg: SamplingConfig,
) -> SampleSummary:
    """Sample target tuples from the backend, rejecting malformed ones.

    Generates from the prompt followed by the first target header,
    stopping at the example separator; a sample is accepted iff every
    target parses (a known class, or a number at the column precision).
    """
    target_specs = tuple(target_specs)
    if not target_specs:
        raise InferenceError("at least one target required")
    for spec in target_specs:
        if spec.kind is ColumnKind.TEXT:
            raise InferenceError(f"target {spec.name!r}: text targets cannot be sampled")
    context = prompt.text + target_specs[0].name + template.d
    raw: list[str] = []
    values: list[list[Category | Number]] = []
    attempts = 0
    for replica in range(cfg.n_samples):
        accepted = False
        for attempt in range(cfg.max_attempts_per_sample):
            attempts += 1
            text = backend.generate_text(
                context,
                top_p=cfg.top_p,
                temperature=cfg.temperature,
                max_new_tokens=cfg.max_new_tokens,
                stop=(template.t,),
                seed=_derived_seed(cfg.seed, replica, attempt),
            )
            parsed = _parse_sample(text, target_specs, template)
            if parsed is not None:
                raw.append(text)
                values.append(parsed)
                accepted = True
                break
        if not accepted:
            rate = len(raw) / attempts
            raise AcceptanceError(
                f"no valid sample in {cfg.max_attempts_per_sample} attempts "
                f"(acceptance rate so far {rate:.3f})",
                acceptance_rate=rate,
            )
    return _summarize(raw, values, target_specs, len(raw) / attempts, cfg.interval_level)


def predict_point(
    backend,
    prompt: Prompt,
    target_specs: Sequence[ColumnSpec],
    template: PromptTemplate,
    mode: str,
    cfg: SamplingConfig,
) -> list[str]:
    """Point predictions for every target, in declared order.

    ``logits`` mode chains greedy argmax class choices (categorical targets
    only); ``sampling`` mode takes rejection-sampling point estimates
    (median for numeric, modal class for categorical).
    """
    target_specs = tuple(target_specs)
    if mode == "logits":
        if any(s.kind is not ColumnKind.CATEGORICAL for s in target_specs):
            raise InferenceError("logits mode requires categorical targets only; use sampling for numeric targets")
        order = [s.name for s in target_specs]
        pairs: list[tuple[str, str]] = []
        points: list[str] = []
        for spec in target_specs:
            conditioning = continuation_for_target(prompt, pairs, spec.name, template, order)
            label = categorical_logprobs(backend, conditioning, spec.classes).argmax_class()
            points.append(label)
            pairs.append((spec.name, label))
        return points
    if mode == "sampling":
        summary = rejection_sample(backend, prompt, target_specs, template, cfg)
        return [
            s.mode if isinstance(s, CategoricalSummary) else s.rendered_median()
            for s in (summary.per_target[spec.name] for spec in target_specs)
        ]
    raise InferenceError(f"unknown prediction mode {mode!r}")


@dataclass
class RowPrediction:
    """Per-row prediction record: points, class distributions, intervals,
    and (when ground truth is available) the joint log-probability."""

    row: int
    points: dict[str, str]
    distributions: dict[str, dict[str, float]]
    intervals: dict[str, tuple[float, float]]
    per_target_logprob: dict[str, float] | None
    joint_logprob: float | None
    acceptance_rate: float | None

    def to_record(self) -> dict:
        targets = {}
        for name, point in self.points.items():
            entry: dict = {"point": point}
            if name in self.distributions:
                entry["distribution"] = self.distributions[name]
            if name in self.intervals:
                entry["interval"] = list(self.intervals[name])
            if self.per_target_logprob is not None:
                entry["logprob"] = self.per_target_logprob[name]
            targets[name] = entry
        return {
            "row": self.row,
            "targets": targets,
            "joint_logprob": self.joint_logprob,
            "acceptance_rate": self.acceptance_rate,
        }


def resolve_point_mode(mode: str, target_specs: Sequence[ColumnSpec]) -> str:
    if mode != "auto":
        return mode
    if all(s.kind is ColumnKind.CATEGORICAL for s in target_specs):
        return "logits"
    return "sampling"


def predict_row(
    backend,
    table: Table,
    row: int,
    template: PromptTemplate,
    *,
    point_mode: str = "auto",
    sampling: SamplingConfig = SamplingConfig(),
    score_truth: bool = True,
) -> RowPrediction:
    """Predict one test row: point estimates, class distributions for
    categorical targets, intervals for sampled numeric targets, and the
    teacher-forced joint log-probability when all targets are observed."""
    specs = table.target_columns
    prompt = serialize(table, template, row)
    mode = resolve_point_mode(point_mode, specs)
    points: dict[str, str] = {}
    dists: dict[str, dict[str, float]] = {}
    intervals: dict[str, tuple[float, float]] = {}
    acceptance: float | None = None
    if mode == "logits":
        order = [s.name for s in specs]
        pairs: list[tuple[str, str]] = []
        for spec in specs:
            conditioning = continuation_for_target(prompt, pairs, spec.name, template, order)
            dist = categorical_logprobs(backend, conditioning, spec.classes)
            label = dist.argmax_class()
            points[spec.name] = label
            dists[spec.name] = dist.probs()
            pairs.append((spec.name, label))
    else:
        summary = rejection_sample(backend, prompt, specs, template, sampling)
        acceptance = summary.acceptance_rate
        for spec in specs:
            s = summary.per_target[spec.name]
            if isinstance(s, CategoricalSummary):
                points[spec.name] = s.mode
                dists[spec.name] = dict(s.frequencies)
            else:
                points[spec.name] = s.rendered_median()
                intervals[spec.name] = s.interval

    per_lp: dict[str, float] | None = None
    joint: float | None = None
    truth = table.target_cells(row)
    if score_truth and all(not is_missing(c) for c in truth):
        result = joint_logprob(backend, prompt, list(zip(specs, truth)), template)
        per_lp = dict(zip((s.name for s in specs), result.per_target_logprob))
        joint = result.joint_logprob
    return RowPrediction(
        row=row,
        points=points,
        distributions=dists,
        intervals=intervals,
        per_target_logprob=per_lp,
        joint_logprob=joint,
        acceptance_rate=acceptance,
    )
