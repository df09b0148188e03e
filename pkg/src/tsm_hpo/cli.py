"""Command-line entry point: ``tsm-hpo run | compare | space``.

Experiment configs are JSON documents::

    {
      "space": [{"name": "batch_size", "lower": 8, "upper": 512, "step": 8,
                 "threshold": 256, "bit_width": 7}, ...],
      "ga": {"population_size": 20, "max_generations": 10, "seed": 42, ...},
      "evaluator": {"synthetic": {"kind": "deceptive_multimodal", "seed": 0}},
      "output_dir": "runs",
      "repeats": 30
    }

Only ``evaluator`` is required. An external evaluator is given as
``{"external": {"command": ["python", "train.py"]}}``.

Exit status: 0 on success, 1 for usage or config errors, 2 for runtime or
evaluator errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shlex
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, ParseError, TsmHpoError, ValidationError
from .evaluation import (
    BENCHMARK_KINDS,
    Evaluator,
    ExternalEvaluator,
    default_workers,
    make_benchmark_objective,
)
from .evolve import GaConfig, RunRecord, run_hesga
from .space import HyperparameterDef, SearchSpace, reference_space
from .stats import compare_runs

logger = logging.getLogger("tsm_hpo")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
CSV_COLUMNS = ("generation", "best_full_fitness", "mean_full_fitness", "fast_evals", "full_evals")
_SPACE_KEYS = {"name", "lower", "upper", "step", "threshold", "bit_width"}


@dataclass
class ExperimentConfig:
    evaluator: dict
    space: SearchSpace = field(default_factory=reference_space)
    ga: GaConfig = field(default_factory=GaConfig)
    output_dir: str = "runs"
    repeats: int = 30

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_list(),
            "ga": self.ga.to_dict(),
            "evaluator": self.evaluator,
            "output_dir": self.output_dir,
            "repeats": self.repeats,
        }


def _parse_space(items) -> SearchSpace:
    if not isinstance(items, list) or not items:
        raise ValidationError("space", "must be a non-empty list of dimensions")
    dims = []
    for k, item in enumerate(items):
        where = f"space[{k}]"
        if not isinstance(item, dict):
            raise ValidationError(where, "must be an object")
        unknown = set(item) - _SPACE_KEYS
        if unknown:
            raise ValidationError(where, f"unknown keys {sorted(unknown)}")
        missing = {"name", "lower", "upper", "step"} - set(item)
        if missing:
            raise ValidationError(where, f"missing keys {sorted(missing)}")
        try:
            dims.append(HyperparameterDef(**item))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{where} ({item.get('name')})", str(exc)) from exc
    try:
        return SearchSpace(dims)
    except ValueError as exc:
        raise ValidationError("space", str(exc)) from exc


def _parse_evaluator(spec) -> dict:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValidationError("evaluator", "must name exactly one of 'synthetic' or 'external'")
    (kind, params), = spec.items()
    if not isinstance(params, dict):
        raise ValidationError(f"evaluator.{kind}", "must be an object")
    if kind == "synthetic":
        unknown = set(params) - {"kind", "seed", "noise_sd", "curve_exponent"}
        if unknown:
            raise ValidationError("evaluator.synthetic", f"unknown keys {sorted(unknown)}")
        if params.get("kind") not in BENCHMARK_KINDS:
            raise ValidationError("evaluator.synthetic.kind", f"must be one of {list(BENCHMARK_KINDS)}")
        out = {"kind": params["kind"], "seed": int(params.get("seed", 0))}
        if params.get("noise_sd") is not None:
            if params["noise_sd"] < 0:
                raise ValidationError("evaluator.synthetic.noise_sd", "must be >= 0")
            out["noise_sd"] = float(params["noise_sd"])
        if "curve_exponent" in params:
            if params["curve_exponent"] <= 0:
                raise ValidationError("evaluator.synthetic.curve_exponent", "must be > 0")
            out["curve_exponent"] = float(params["curve_exponent"])
        return {"synthetic": out}
    if kind == "external":
        command = params.get("command")
        if isinstance(command, str):
            command = shlex.split(command)
        if not command or not all(isinstance(c, str) for c in command):
            raise ValidationError("evaluator.external.command", "must be a non-empty command line")
        return {"external": {"command": list(command)}}
    raise ValidationError("evaluator", f"unknown evaluator type {kind!r}")


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object")
    unknown = set(data) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise ValidationError("config", f"unknown keys {sorted(unknown)}")
    if "evaluator" not in data:
        raise ValidationError("evaluator", "is required")
    evaluator = _parse_evaluator(data["evaluator"])
    space = _parse_space(data["space"]) if "space" in data else reference_space()
    ga_data = data.get("ga", {})
    if not isinstance(ga_data, dict):
        raise ValidationError("ga", "must be an object")
    try:
        ga = GaConfig.from_dict(ga_data)
    except (TypeError, ValueError) as exc:
        raise ValidationError("ga", str(exc)) from exc
    repeats = data.get("repeats", 30)
    if not isinstance(repeats, int) or repeats < 2:
        raise ValidationError("repeats", "must be an integer >= 2")
    output_dir = data.get("output_dir", "runs")
    if not isinstance(output_dir, str):
        raise ValidationError("output_dir", "must be a path string")
    return ExperimentConfig(evaluator, space, ga, output_dir, repeats)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(config: ExperimentConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)


def build_evaluator(spec: dict, space: SearchSpace, workers: int | None = None) -> Evaluator:
    workers = default_workers() if workers is None else workers
    if "synthetic" in spec:
        params = dict(spec["synthetic"])
        backend = make_benchmark_objective(space, **params)
    else:
        backend = ExternalEvaluator(spec["external"]["command"], max_processes=workers)
    return Evaluator(backend, workers=workers)


# --------------------------------------------------------------------------
# Commands


def write_history_csv(record: RunRecord, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for h in record.history:
            writer.writerow([repr(h[c]) if isinstance(h[c], float) else h[c] for c in CSV_COLUMNS])


def cmd_run(
    config: ExperimentConfig,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    mutation: str | None = None,
    workers: int | None = None,
) -> Path:
    """Run one optimisation and write ``run-<seed>.json`` and ``history-<seed>.csv``."""
    ga = config.ga
    if seed is not None:
        ga = replace(ga, seed=seed)
    if mutation is not None:
        ga = replace(ga, mutation_mode=mutation)
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with build_evaluator(config.evaluator, config.space, workers) as evaluator:
        record = run_hesga(config.space, ga, evaluator, evaluator_info=config.evaluator)
    run_path = out / f"run-{ga.seed}.json"
    run_path.write_text(record.to_json() + "\n")
    write_history_csv(record, out / f"history-{ga.seed}.csv")
    return run_path


def load_run(path: str | Path) -> RunRecord:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot load run record {path}: {exc}") from exc
    try:
        return RunRecord.from_dict(data)
    except (TypeError, ValueError, KeyError) as exc:
        raise ValidationError(str(path), str(exc)) from exc


def cmd_compare(
    run_a: str | Path,
    run_b: str | Path,
    alpha: float = 0.1,
    repeats: int = 30,
    out: str | Path | None = None,
    workers: int | None = None,
):
    """t-test the best settings of two runs; ``run_a`` is the baseline.

    Writes ``compare-<a>-vs-<b>.json`` and ``.txt`` next to ``run_a`` (or
    into ``out``) and returns the comparison.
    """
    a, b = load_run(run_a), load_run(run_b)
    spec = a.config.get("evaluator")
    if not spec:
        raise ValidationError(str(run_a), "run record does not name its evaluator")
    labels = (Path(run_a).stem, Path(run_b).stem)
    if labels[0] == labels[1]:
        labels = (f"{labels[0]} (A)", f"{labels[1]} (B)")
    with build_evaluator(spec, a.space, workers) as evaluator:
        comparison = compare_runs(a, b, repeats, evaluator, alpha, labels=labels)
    out_dir = Path(out) if out is not None else Path(run_a).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"compare-{Path(run_a).stem}-vs-{Path(run_b).stem}"
    (out_dir / f"{stem}.json").write_text(json.dumps(comparison.report(), indent=2, sort_keys=True) + "\n")
    (out_dir / f"{stem}.txt").write_text(comparison.table() + "\n")
    return comparison


def space_summary(space: SearchSpace) -> str:
    rows = [("name", "lower", "upper", "step", "grid", "bits", "threshold")]
    for d in space.dims:
        rows.append(
            (d.name, str(d.lower), str(d.upper), str(d.step), str(d.grid_count), str(d.bit_width), str(d.threshold))
        )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.append(f"total grid size: {space.grid_size}")
    lines.append(f"total bits: {space.total_bits}")
    lines.append(f"subspaces (n_s = 2^{space.n_h}): {space.n_s}")
    return "\n".join(lines)


def cmd_space(config: ExperimentConfig) -> str:
    return space_summary(config.space)


# --------------------------------------------------------------------------
# argparse plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsm-hpo", description="Genetic hyperparameter search with tree-structured mutation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--workers", type=int, default=None, help="evaluator pool size (default: $TSM_HPO_WORKERS or CPU count)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one optimisation")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--mutation", choices=["tsm", "single_point"], default=None)

    cmp_ = sub.add_parser("compare", help="t-test the best settings of two runs")
    cmp_.add_argument("--a", required=True, help="baseline run record")
    cmp_.add_argument("--b", required=True, help="challenger run record")
    cmp_.add_argument("--alpha", type=float, default=0.1)
    cmp_.add_argument("--repeats", type=int, default=30)
    cmp_.add_argument("--out", default=None)

    space = sub.add_parser("space", help="summarise the search space of a config")
    space.add_argument("--config", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.workers is not None and args.workers < 1:
        print("tsm-hpo: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            config = load_config(args.config)
            path = cmd_run(config, args.seed, args.out, args.mutation, args.workers)
            print(path)
        elif args.command == "compare":
            if not 0 < args.alpha < 1 or args.repeats < 2:
                raise ValidationError("compare", "alpha must be in (0, 1) and repeats >= 2")
            comparison = cmd_compare(args.a, args.b, args.alpha, args.repeats, args.out, args.workers)
            print(comparison.table())
        else:
            print(cmd_space(load_config(args.config)))
    except ConfigError as exc:
        print(f"tsm-hpo: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TsmHpoError, OSError, ValueError) as exc:
        print(f"tsm-hpo: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
