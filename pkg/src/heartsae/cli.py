"""Command-line front end: ``heartsae <command> [options]``.

Exit codes
    0  success
    1  unexpected internal error
    2  invalid usage, configuration or input data
    3  I/O error (missing input, unwritable output)
    4  numerical failure during training
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy

from . import __version__, reporting
from .data import DataValidationError, encode, load_raw_dataset, preprocess, data_quality_report
from .evaluation import (BASELINE_METHODS, LATENT_SWEEP, METHODS, CVError, CVResult, EmptyGroupError, grid_search,
                         group_compare, kfold_split)
from .models import ConfigError
from .nn import NumericalError

log = logging.getLogger("heartsae")

EXIT_OK, EXIT_INTERNAL, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
OUT_ENV = "HEARTSAE_OUT"
FORMATS = ("csv", "json", "svg")
MANIFEST_FORMAT = "heartsae-manifest"
DEFAULT_LATENT = {"mlp": 100, "cnn": 200}


class CLIError(Exception):
    def __init__(self, message: str, code: int, kind: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def default_grids() -> dict:
    text = resources.files("heartsae").joinpath("resources/default_grids.json").read_text(encoding="utf-8")
    return {k: v for k, v in json.loads(text).items() if not k.startswith("_")}


@dataclass
class ExperimentConfig:
    data: str = "data/heart.csv"
    out: str = "results"
    seed: int = 0
    folds: int = 10
    stratified: bool = False
    methods: list[str] = field(default_factory=lambda: list(BASELINE_METHODS))
    grids: dict = field(default_factory=dict)
    classifier: str = "cnn"
    latent: int | None = None
    latent_sizes: list[int] = field(default_factory=lambda: list(LATENT_SWEEP))
    formats: list[str] = field(default_factory=lambda: list(FORMATS))
    jobs: int = 1
    results: list[str] = field(default_factory=list)

    def validate(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise CLIError(f"unknown method(s): {', '.join(unknown)}", EXIT_VALIDATION, "config")
        if self.folds < 2:
            raise CLIError("--folds must be at least 2", EXIT_VALIDATION, "config")
        if self.classifier not in ("mlp", "cnn"):
            raise CLIError("--classifier must be mlp or cnn", EXIT_VALIDATION, "config")
        bad = [f for f in self.formats if f not in FORMATS]
        if bad or not self.formats:
            raise CLIError(f"--format must be drawn from {', '.join(FORMATS)}", EXIT_VALIDATION, "config")
        if self.jobs < 1:
            raise CLIError("--jobs must be >= 1", EXIT_VALIDATION, "config")
        if any(int(s) < 1 for s in self.latent_sizes):
            raise CLIError("latent sizes must be positive", EXIT_VALIDATION, "config")
        for name, grid in self.grids.items():
            if not isinstance(grid, dict) or any(not isinstance(v, list) or not v for v in grid.values()):
                raise CLIError(f"grid for {name!r} must map names to non-empty lists", EXIT_VALIDATION, "config")

    def grid_for(self, method: str) -> dict:
        if method in self.grids:
            return self.grids[method]
        return default_grids().get(method, {})


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _read_json(path: str, what: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise CLIError(f"{what} not found: {path}", EXIT_IO, "io") from exc
    except OSError as exc:
        raise CLIError(f"cannot read {what} {path}: {exc}", EXIT_IO, "io") from exc
    except json.JSONDecodeError as exc:
        raise CLIError(f"{what} {path} is not valid JSON: {exc}", EXIT_VALIDATION, "config") from exc


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Defaults, then the config file (or a manifest's config), then the env var, then flags."""
    values: dict = {}
    if args.config:
        doc = _read_json(args.config, "config file")
        if isinstance(doc, dict) and doc.get("format") == MANIFEST_FORMAT:
            doc = doc["config"]
        if not isinstance(doc, dict):
            raise CLIError("config file must hold a JSON object", EXIT_VALIDATION, "config")
        extra = set(doc) - _CONFIG_FIELDS
        if extra:
            raise CLIError(f"unknown config keys: {', '.join(sorted(extra))}", EXIT_VALIDATION, "config")
        values.update(doc)
    if os.environ.get(OUT_ENV):
        values["out"] = os.environ[OUT_ENV]
    for key in ("data", "out", "seed", "folds", "classifier", "latent", "jobs"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if getattr(args, "stratified", False):
        values["stratified"] = True
    if getattr(args, "format", None):
        values["formats"] = list(dict.fromkeys(args.format))
    if getattr(args, "methods", None):
        values["methods"] = args.methods.split(",")
    if getattr(args, "latent_sizes", None):
        values["latent_sizes"] = [int(s) for s in args.latent_sizes.split(",")]
    if getattr(args, "grid", None):
        grids = _read_json(args.grid, "grid file")
        if not isinstance(grids, dict):
            raise CLIError("grid file must hold a JSON object keyed by method", EXIT_VALIDATION, "config")
        values["grids"] = {**values.get("grids", {}), **grids}
    if getattr(args, "results", None):
        values["results"] = [str(p) for p in args.results]
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as exc:
        raise CLIError(f"bad configuration: {exc}", EXIT_VALIDATION, "config") from exc
    cfg.validate()
    return cfg


# -- output bundle -----------------------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Bundle:
    """Files collected in memory and written together at the end."""

    def __init__(self, formats: Sequence[str]):
        self.formats = set(formats)
        self.files: dict[str, bytes] = {}

    def add(self, name: str, text: str, fmt: str | None = None):
        if fmt is None or fmt in self.formats:
            self.files[name] = text.encode("utf-8")

    def write(self, out: Path, manifest: dict) -> list[Path]:
        manifest = dict(manifest, outputs={k: _sha256(v) for k, v in sorted(self.files.items())})
        files = dict(self.files)
        files["manifest.json"] = reporting.canonical_json(manifest).encode("utf-8")
        try:
            out.mkdir(parents=True, exist_ok=True)
            stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out))
        except OSError as exc:
            raise CLIError(f"cannot create output directory {out}: {exc}", EXIT_IO, "io") from exc
        try:
            for name, data in files.items():
                (stage / name).write_bytes(data)
            written = []
            for name in sorted(files):
                os.replace(stage / name, out / name)
                written.append(out / name)
            return written
        except OSError as exc:
            raise CLIError(f"failed writing outputs to {out}: {exc}", EXIT_IO, "io") from exc
        finally:
            shutil.rmtree(stage, ignore_errors=True)


def _file_digest(path: str) -> str:
    try:
        return _sha256(Path(path).read_bytes())
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO, "io") from exc


def build_manifest(command: str, cfg: ExperimentConfig, inputs: Sequence[str], extra: dict | None = None) -> dict:
    return {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "command": command,
        "config": dataclasses.asdict(cfg),
        "inputs": {p: _file_digest(p) for p in inputs},
        "software": {"heartsae": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        **(extra or {}),
    }


# -- shared steps ------------------------------------------------------------

def _load(cfg: ExperimentConfig):
    path = Path(cfg.data)
    if not path.is_file():
        raise CLIError(f"dataset not found: {path}", EXIT_IO, "io")
    return load_raw_dataset(path)


def _plan(cfg: ExperimentConfig, matrix):
    return kfold_split(matrix.n_rows, cfg.folds, cfg.seed, labels=matrix.labels if cfg.stratified else None)


def _progress(res: CVResult):
    log.info("%s %s: %.3f%% (sd %.3f)", res.method, json.dumps(res.hyperparameters, sort_keys=True),
             100 * res.mean, 100 * res.std)


def _search(method: str, grid: dict, matrix, plan, cfg) -> list[CVResult]:
    log.info("grid search: %s over %d point(s)", method, max(1, int(np.prod([len(v) for v in grid.values()]))))
    _, results = grid_search(method, grid, matrix, plan, n_jobs=cfg.jobs, progress=_progress)
    return results


def _summary(command: str, cfg: ExperimentConfig, results: Sequence[CVResult], extra: dict | None = None) -> str:
    best = reporting.best_by_label(results)
    doc = {
        "command": command, "seed": cfg.seed, "folds": cfg.folds,
        "best": [reporting.summary_row(r) for r in best],
        "results": [r.to_dict() for r in results],
        **(extra or {}),
    }
    return reporting.canonical_json(doc)


# -- commands ----------------------------------------------------------------

def cmd_preprocess(cfg: ExperimentConfig) -> tuple[Bundle, dict]:
    raw = _load(cfg)
    matrix = preprocess(raw)
    bundle = Bundle(cfg.formats)
    with tempfile.TemporaryDirectory() as tmp:
        matrix.to_csv(Path(tmp) / "features.csv")
        bundle.add("features.csv", (Path(tmp) / "features.csv").read_text(encoding="utf-8"), "csv")
    bundle.add("scaler.json", reporting.canonical_json(matrix.scaler.to_dict()), "json")
    bundle.add("quality.json", reporting.canonical_json(data_quality_report(raw)), "json")
    return bundle, {}


def cmd_run_baselines(cfg: ExperimentConfig) -> tuple[Bundle, dict]:
    matrix = encode(_load(cfg))
    plan = _plan(cfg, matrix)
    results: list[CVResult] = []
    grids = {}
    for method in cfg.methods:
        grids[method] = cfg.grid_for(method)
        results.extend(_search(method, grids[method], matrix, plan, cfg))
    best = reporting.best_by_label(results)
    order = {m: i for i, m in enumerate(cfg.methods)}
    best.sort(key=lambda r: order.get(r.method, len(order)))
    rows = reporting.bar_rows(best)
    bundle = Bundle(cfg.formats)
    bundle.add("results.csv", reporting.results_to_csv(results), "csv")
    bundle.add("baselines.csv", reporting.rows_to_csv(("method", "mean_accuracy", "sd"), rows), "csv")
    bundle.add("summary.json", _summary("run-baselines", cfg, results, {"fold_sizes": plan.fold_sizes()}), "json")
    bundle.add("baselines.svg", reporting.svg_bar_chart(rows, "Classical methods, 10-fold CV"), "svg")
    return bundle, {"grids": grids}


def _multitask_grid(cfg: ExperimentConfig, latent: int) -> tuple[str, dict]:
    method = f"sae_{cfg.classifier}"
    grid = dict(cfg.grid_for(method))
    grid["latent_dim"] = [latent]
    return method, grid


def cmd_run_multitask(cfg: ExperimentConfig) -> tuple[Bundle, dict]:
    matrix = encode(_load(cfg))
    plan = _plan(cfg, matrix)
    latent = cfg.latent or DEFAULT_LATENT[cfg.classifier]
    method, grid = _multitask_grid(cfg, latent)
    results = _search(method, grid, matrix, plan, cfg)
    bundle = Bundle(cfg.formats)
    bundle.add("results.csv", reporting.results_to_csv(results), "csv")
    bundle.add("summary.json", _summary("run-multitask", cfg, results), "json")
    return bundle, {"grids": {method: grid}}


def cmd_sweep_latent(cfg: ExperimentConfig) -> tuple[Bundle, dict]:
    matrix = encode(_load(cfg))
    plan = _plan(cfg, matrix)
    results: list[CVResult] = []
    grids = {}
    for latent in cfg.latent_sizes:
        method, grid = _multitask_grid(cfg, int(latent))
        grids[f"{method}@{latent}"] = grid
        results.extend(_search(method, grid, matrix, plan, cfg))
    method = f"sae_{cfg.classifier}"
    curve = reporting.latent_curve(results, method)
    peak = max(curve, key=lambda c: (c[1], -c[0]))
    bundle = Bundle(cfg.formats)
    bundle.add("results.csv", reporting.results_to_csv(results), "csv")
    bundle.add(f"latent_{cfg.classifier}.csv", reporting.rows_to_csv(("latent_dim", "mean_accuracy", "sd"), curve), "csv")
    bundle.add("summary.json", _summary("sweep-latent", cfg, results, {"peak_latent": peak[0]}), "json")
    title = f"SAE + {cfg.classifier.upper()} accuracy by latent size"
    bundle.add(f"latent_{cfg.classifier}.svg",
               reporting.svg_line_chart({method: [(x, y) for x, y, _ in curve]}, title, "Latent size"), "svg")
    return bundle, {"grids": grids}


def load_results(paths: Sequence[str]) -> list[CVResult]:
    results = []
    for p in paths:
        path = Path(p)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as exc:
            raise CLIError(f"results file not found: {p}", EXIT_IO, "io") from exc
        except OSError as exc:
            raise CLIError(f"cannot read {p}: {exc}", EXIT_IO, "io") from exc
        try:
            if path.suffix == ".json":
                doc = json.loads(text)
                if not isinstance(doc, dict) or "results" not in doc:
                    raise reporting.ResultsFormatError(f"{p}: summary JSON lacks a 'results' list")
                results.extend(CVResult.from_dict(d) for d in doc["results"])
            else:
                results.extend(reporting.results_from_csv(text, p))
        except (reporting.ResultsFormatError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CLIError(f"malformed results in {p}: {exc}", EXIT_VALIDATION, "results") from exc
    return results


def cmd_stats(cfg: ExperimentConfig) -> tuple[Bundle, dict]:
    if not cfg.results:
        raise CLIError("stats needs at least one results file", EXIT_VALIDATION, "usage")
    best = reporting.best_by_label(load_results(cfg.results))
    try:
        comparison = group_compare(best)
    except EmptyGroupError as exc:
        raise CLIError(str(exc), EXIT_VALIDATION, "empty_group") from exc
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_VALIDATION, "results") from exc
    rows = [(reporting.result_label(r), r.group, 100.0 * r.mean, 100.0 * r.std) for r in best]
    bundle = Bundle(cfg.formats)
    bundle.add("groups.csv", reporting.rows_to_csv(("label", "group", "mean_accuracy", "sd"), rows), "csv")
    bundle.add("stats.json", reporting.canonical_json(comparison.to_dict()), "json")
    return bundle, {}


def cmd_report(cfg: ExperimentConfig) -> tuple[Bundle, dict]:
    results = load_results(cfg.results)
    rows, warnings = reporting.comparison_table(results)
    for w in warnings:
        log.warning(w)
    bundle = Bundle(cfg.formats)
    bundle.add("comparison.csv", reporting.rows_to_csv(
        ("source", "method", "accuracy", "sd"),
        [(r["source"], r["method"], r["accuracy"], "" if r["sd"] is None else r["sd"]) for r in rows]), "csv")
    bundle.add("comparison.md", reporting.comparison_markdown(rows))
    bundle.add("comparison.json", reporting.canonical_json({"rows": rows, "warnings": warnings}), "json")
    bars = [(r["method"], float(r["accuracy"]), r["sd"] or 0.0) for r in rows]
    bundle.add("comparison.svg", reporting.svg_bar_chart(bars, "Published and measured accuracies"), "svg")
    return bundle, {"warnings": warnings}


COMMANDS: dict[str, Callable[[ExperimentConfig], tuple[Bundle, dict]]] = {
    "preprocess": cmd_preprocess,
    "run-baselines": cmd_run_baselines,
    "run-multitask": cmd_run_multitask,
    "sweep-latent": cmd_sweep_latent,
    "stats": cmd_stats,
    "report": cmd_report,
}


def execute(command: str, cfg: ExperimentConfig) -> list[Path]:
    bundle, extra = COMMANDS[command](cfg)
    inputs = [cfg.data] if command not in ("stats", "report") else list(cfg.results)
    manifest = build_manifest(command, cfg, inputs, extra)
    return bundle.write(Path(cfg.out), manifest)


def rerun(manifest_path: str, out: str | None = None) -> list[Path]:
    doc = _read_json(manifest_path, "manifest")
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise CLIError(f"{manifest_path} is not a run manifest", EXIT_VALIDATION, "config")
    if doc["command"] not in COMMANDS:
        raise CLIError(f"manifest names unknown command {doc['command']!r}", EXIT_VALIDATION, "config")
    try:
        cfg = ExperimentConfig(**doc["config"])
    except TypeError as exc:
        raise CLIError(f"bad manifest configuration: {exc}", EXIT_VALIDATION, "config") from exc
    if out is not None:
        cfg.out = out
    elif os.environ.get(OUT_ENV):
        cfg.out = os.environ[OUT_ENV]
    cfg.validate()
    for path, digest in doc.get("inputs", {}).items():
        if _file_digest(path) != digest:
            log.warning("input %s differs from the one recorded in the manifest", path)
    return execute(doc["command"], cfg)


# -- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (a run manifest also works)")
    common.add_argument("--out", help=f"output directory (env {OUT_ENV} overrides the config file)")
    common.add_argument("--format", action="append", choices=FORMATS,
                        help="output formats to emit; repeatable (default: all)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="path to the heart failure CSV")

    cv = argparse.ArgumentParser(add_help=False)
    cv.add_argument("--seed", type=int)
    cv.add_argument("--folds", type=int, help="number of CV folds (default 10)")
    cv.add_argument("--stratified", action="store_true", help="stratified folds instead of plain shuffled folds")
    cv.add_argument("--grid", help="JSON file mapping method names to hyperparameter grids")
    cv.add_argument("--jobs", type=int, help="worker processes for fold-level parallelism")

    parser = argparse.ArgumentParser(prog="heartsae", description="Heart failure prediction experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common, data], help="write the 24-column feature matrix")
    p = sub.add_parser("run-baselines", parents=[common, data, cv], help="grid-searched CV of classical methods")
    p.add_argument("--methods", help="comma-separated subset of methods")
    for name, help_ in (("run-multitask", "CV of one multitask SAE model"),
                        ("sweep-latent", "CV of the multitask model across latent sizes")):
        p = sub.add_parser(name, parents=[common, data, cv], help=help_)
        p.add_argument("--classifier", choices=("mlp", "cnn"))
        if name == "run-multitask":
            p.add_argument("--latent", type=int, help="latent size (default 100 for mlp, 200 for cnn)")
        else:
            p.add_argument("--latent-sizes", help="comma-separated latent sizes")
    for name, help_ in (("stats", "group comparison of prior results"), ("report", "comparison table")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("results", nargs="*", help="results.csv or summary.json files")
    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(exc: CLIError) -> int:
    print(json.dumps({"error": exc.kind, "message": str(exc), "exit_code": exc.code}), file=sys.stderr)
    return exc.code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            written = rerun(args.manifest, args.out)
        else:
            written = execute(args.command, resolve_config(args))
    except CLIError as exc:
        return _fail(exc)
    except (DataValidationError, ConfigError) as exc:
        return _fail(CLIError(str(exc), EXIT_VALIDATION, "validation"))
    except CVError as exc:
        if isinstance(exc.__cause__, NumericalError):
            return _fail(CLIError(str(exc), EXIT_NUMERIC, "numeric"))
        if isinstance(exc.__cause__, (ConfigError, ValueError)):
            return _fail(CLIError(str(exc), EXIT_VALIDATION, "validation"))
        return _fail(CLIError(str(exc), EXIT_INTERNAL, "internal"))
    except NumericalError as exc:
        return _fail(CLIError(str(exc), EXIT_NUMERIC, "numeric"))
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
