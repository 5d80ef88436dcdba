"""Command-line entry point.

Subcommands: serialize, predict, impute, evaluate, mock-spec.
Exit codes: 0 success, 1 validation error, 2 backend error, 3 partial
experiment failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .backend import BackendError
from .config import (
    ConfigError,
    build_backend,
    build_experiment,
    build_sampling,
    build_table,
    build_template,
    load_config,
    load_mock_spec,
)
from .experiment import run_experiment
from .impute import ImputationError, impute_baseline, impute_llm
from .inference import InferenceError, predict_row, resolve_point_mode
from .prompts import PromptError, serialize
from .table import ColumnKind, SchemaError, write_csv

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BACKEND = 2
EXIT_PARTIAL = 3


def _atomic_write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cmd_serialize(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    table = build_table(cfg)
    prompt = serialize(table, build_template(cfg), args.row)
    sys.stdout.write(prompt.text)
    sys.stdout.flush()
    return EXIT_OK


def _cmd_predict(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    table = build_table(cfg)
    template = build_template(cfg)
    mode = resolve_point_mode(args.mode, table.target_columns)
    if mode == "logits" and any(s.kind is not ColumnKind.CATEGORICAL for s in table.target_columns):
        raise ConfigError("logits mode requires categorical targets only; use sampling for numeric targets")
    backend = build_backend(cfg)
    sampling = build_sampling(cfg)
    records = []
    for row in table.test_indices:
        prediction = predict_row(backend, table, row, template, point_mode=mode, sampling=sampling)
        records.append(json.dumps(prediction.to_record(), sort_keys=False))
    _atomic_write(Path(args.out), "\n".join(records) + "\n")
    return EXIT_OK


def _cmd_impute(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    table = build_table(cfg, path_override=getattr(args, "in"))
    if args.method == "llm":
        result = impute_llm(build_backend(cfg), table, build_template(cfg), build_sampling(cfg))
    else:
        result = impute_baseline(table)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(result.table, out)
    provenance = {
        f"{i},{result.table.feature_columns[j].name}": {
            "method": p.method,
            "point": p.point,
            "interval": list(p.interval) if p.interval else None,
            "distribution": dict(p.distribution) if p.distribution else None,
        }
        for (i, j), p in sorted(result.provenance.items())
    }
    _atomic_write(out.with_suffix(out.suffix + ".provenance.json"), json.dumps(provenance, indent=2) + "\n")
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    table = build_table(cfg)
    experiment = build_experiment(cfg, table, jobs=args.jobs)
    report = run_experiment(experiment, build_backend(cfg))
    out = Path(args.out)
    _atomic_write(out / "report.json", report.to_json() + "\n")
    _atomic_write(out / "report_long.csv", report.to_long_csv())
    if report.failed_cells:
        for cell in report.failed_cells:
            print(
                f"cell (shot={cell.shot}, seed={cell.seed}, fraction={cell.fraction}, "
                f"mode={cell.mode}) failed: {cell.error}",
                file=sys.stderr,
            )
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_mock_spec(args: argparse.Namespace) -> int:
    mock = load_mock_spec(args.path)
    info = mock.info()
    print(f"ok: vocab_size={info.vocab_size} single_digit={info.single_digit}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jolt")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serialize", help="print the prompt for one test row")
    p.add_argument("--config", required=True)
    p.add_argument("--row", type=int, required=True)
    p.set_defaults(func=_cmd_serialize)

    p = sub.add_parser("predict", help="predict every test row")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("auto", "logits", "sampling"), default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("impute", help="fill missing cells")
    p.add_argument("--config", required=True)
    p.add_argument("--method", choices=("llm", "mean-mode"), default="llm")
    p.add_argument("--in", dest="in", default=None, help="input CSV (overrides config dataset path)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_impute)

    p = sub.add_parser("evaluate", help="run the experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("mock-spec", help="mock-model spec tools")
    mock_sub = p.add_subparsers(dest="mock_command", required=True)
    v = mock_sub.add_parser("validate", help="validate a mock spec file")
    v.add_argument("path")
    v.set_defaults(func=_cmd_mock_spec)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, PromptError, ImputationError, InferenceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
