"""CLI configuration: one YAML document describing the dataset schema,
prompt template, backend, sampling, and experiment grid.

Unknown keys are rejected.  Separator fields may use escape sequences
("\\n", "\\t"), decoded at load.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .backend import HttpBackend, MockLm
from .experiment import ExperimentConfig
from .inference import SamplingConfig
from .prompts import PromptTemplate
from .table import ColumnKind, ColumnSpec, SchemaError, Table, load_csv
from .tokenizer import CharTokenizer, char_vocab


class ConfigError(ValueError):
    pass


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\"}


def decode_escapes(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text) and text[i + 1] in _ESCAPES:
            out.append(_ESCAPES[text[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _check_keys(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _require(section: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in section:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return section[key]


@dataclass(frozen=True)
class CliConfig:
    path: Path
    raw: Mapping[str, Any]

    def dataset_path(self) -> Path:
        dataset = _require(self.raw, "dataset", "config")
        p = Path(_require(dataset, "path", "dataset"))
        return p if p.is_absolute() else self.path.parent / p


def load_config(path: str | Path) -> CliConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    _check_keys(raw, {"dataset", "template", "backend", "sampling", "experiment"}, str(path))
    return CliConfig(path=path, raw=raw)


def build_columns(cfg: CliConfig) -> tuple[list[ColumnSpec], list[ColumnSpec]]:
    dataset = _require(cfg.raw, "dataset", "config")
    _check_keys(dataset, {"path", "n_test", "columns"}, "dataset")
    columns = _require(dataset, "columns", "dataset")
    features: list[ColumnSpec] = []
    targets: list[ColumnSpec] = []
    seen: set[str] = set()
    for entry in columns:
        _check_keys(entry, {"name", "kind", "precision", "classes", "role"}, "dataset.columns")
        name = _require(entry, "name", "column")
        if name in seen:
            raise ConfigError(f"duplicate column name {name!r}")
        seen.add(name)
        role = entry.get("role", "feature")
        if role not in ("feature", "target"):
            raise ConfigError(f"column {name!r}: role must be feature or target, got {role!r}")
        try:
            spec = ColumnSpec(
                name=name,
                kind=ColumnKind(_require(entry, "kind", f"column {name!r}")),
                precision=entry.get("precision"),
                classes=tuple(str(c) for c in entry["classes"]) if "classes" in entry else None,
            )
        except (ValueError, SchemaError) as exc:
            raise ConfigError(f"column {name!r}: {exc}") from exc
        (features if role == "feature" else targets).append(spec)
    if not features:
        raise ConfigError("dataset needs at least one feature column")
    return features, targets


def build_table(cfg: CliConfig, path_override: str | None = None) -> Table:
    features, targets = build_columns(cfg)
    dataset = cfg.raw["dataset"]
    path = Path(path_override) if path_override else cfg.dataset_path()
    return load_csv(path, features, targets, n_test=int(dataset.get("n_test", 0)))


def build_template(cfg: CliConfig) -> PromptTemplate:
    section = cfg.raw.get("template", {})
    _check_keys(section, {"prefix", "d", "s", "t"}, "template")
    return PromptTemplate(
        prefix=section.get("prefix", ""),
        d=decode_escapes(section.get("d", ": ")),
        s=decode_escapes(section.get("s", "; ")),
        t=decode_escapes(section.get("t", "\\n")),
    )


def load_mock_spec(path: str | Path) -> MockLm:
    """Mock-model description: extra word tokens, suffix order, fallback
    token subset, and explicit conditional vectors (sparse)."""
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: mock spec must be a mapping")
    _check_keys(raw, {"words", "order", "fallback", "conditionals"}, str(path))
    tokenizer = CharTokenizer(char_vocab(raw.get("words", ())))
    conditionals: dict[tuple[str, ...], dict[str, float]] = {}
    for entry in raw.get("conditionals", ()):
        _check_keys(entry, {"key", "probs"}, f"{path}: conditionals")
        key = tuple(str(t) for t in _require(entry, "key", "conditional"))
        conditionals[key] = {str(t): float(p) for t, p in _require(entry, "probs", "conditional").items()}
    try:
        return MockLm(
            tokenizer,
            conditionals,
            fallback=tuple(str(t) for t in _require(raw, "fallback", str(path))),
            order=int(raw.get("order", 3)),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_backend(cfg: CliConfig):
    section = _require(cfg.raw, "backend", "config")
    _check_keys(section, {"kind", "url", "mock_spec", "max_in_flight"}, "backend")
    kind = _require(section, "kind", "backend")
    if kind == "mock":
        spec_path = Path(_require(section, "mock_spec", "backend"))
        if not spec_path.is_absolute():
            spec_path = cfg.path.parent / spec_path
        return load_mock_spec(spec_path)
    if kind == "http":
        url = os.environ.get("JOLT_BACKEND_URL") or _require(section, "url", "backend")
        return HttpBackend(url, max_in_flight=int(section.get("max_in_flight", 4)))
    raise ConfigError(f"backend kind must be mock or http, got {kind!r}")


def build_sampling(cfg: CliConfig) -> SamplingConfig:
    section = cfg.raw.get("sampling", {})
    allowed = {
        "n_samples", "top_p", "temperature", "max_new_tokens",
        "max_attempts_per_sample", "seed", "interval_level",
    }
    _check_keys(section, allowed, "sampling")
    try:
        return SamplingConfig(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sampling: {exc}") from exc


def build_experiment(cfg: CliConfig, table: Table, jobs: int = 1) -> ExperimentConfig:
    section = _require(cfg.raw, "experiment", "config")
    allowed = {"shots", "seeds", "fractions", "modes", "n_test", "point_mode"}
    _check_keys(section, allowed, "experiment")
    try:
        return ExperimentConfig(
            table=table,
            template=build_template(cfg),
            shots=tuple(int(s) for s in _require(section, "shots", "experiment")),
            seeds=tuple(int(s) for s in _require(section, "seeds", "experiment")),
            fractions=tuple(float(f) for f in _require(section, "fractions", "experiment")),
            modes=tuple(section.get("modes", ("omit",))),
            n_test=int(section.get("n_test", len(table.test_indices))),
            point_mode=str(section.get("point_mode", "auto")),
            sampling=build_sampling(cfg),
            jobs=jobs,
        )
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc
