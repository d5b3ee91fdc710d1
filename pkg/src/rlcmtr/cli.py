"""Command-line experiment runner.

Subcommands::

    rlcmtr run CONFIG.json [overrides]
    rlcmtr compare RESULTS.csv [--alpha 0.1]
    rlcmtr correlations DATASET --targets Q
    rlcmtr fit DATASET --targets Q --output-dir BUNDLE   (train and save one model)
    rlcmtr inspect BUNDLE

Config file (JSON)::

    {
      "datasets": [
        {"name": "edm", "path": "edm.arff", "targets": 2},
        {"name": "rf1", "path": "rf1-train.arff", "test_path": "rf1-test.arff", "targets": 8}
      ],
      "protocol": {"folds": 10, "seed": 1},
      "methods": [
        {"name": "ST", "type": "st"},
        {"name": "RLC-k2", "type": "rlc", "r": 500, "k": 2, "seed": 1}
      ],
      "gbm": {"iterations": 100, "learning_rate": 0.1, "max_leaves": 4, "min_leaf": 1},
      "sweep": {"r": [16, 50, 100, 250, 500], "k": [2, 3], "seed": 1},
      "output_dir": "results",
      "jobs": 1,
      "degenerate": "error",
      "impute": true
    }

A dataset with ``test_path`` is evaluated by holdout, otherwise by k-fold
cross-validation.  ``targets`` is a count (the last attributes) or a list of
names.  Method-level ``gbm`` entries override the top-level defaults.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import Dataset, SplitPlan, concat_holdout, load_dataset, make_kfold
from .evaluation import (EvalReport, boxplot_rows_csv, correlation_matrix_csv,
                         correlation_summary, evaluate_plan, evaluate_prefixes,
                         pairwise_target_correlations)
from .gbtree import GbmConfig
from .rlc import RlcMethod, RlcParams, StMethod, read_manifest, save_bundle, train_rlc, train_st
from .stats import ResultTable, compare, format_report, report_json

logger = logging.getLogger("rlcmtr")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    name: str
    path: Path
    targets: int | list[str]
    test_path: Path | None = None


@dataclass
class MethodSpec:
    name: str
    type: str
    gbm: GbmConfig
    r: int | None = None
    k: int | None = None
    seed: int = 0

    def build(self) -> StMethod | RlcMethod:
        if self.type == "st":
            return StMethod(self.gbm, name=self.name, seed=self.seed)
        return RlcMethod(RlcParams(self.r, self.k, self.seed, self.gbm), name=self.name)


@dataclass
class ExperimentConfig:
    datasets: list[DatasetSpec]
    methods: list[MethodSpec]
    folds: int = 10
    cv_seed: int = 0
    sweep_r: list[int] = field(default_factory=list)
    sweep_k: list[int] = field(default_factory=list)
    sweep_seed: int = 0
    gbm: GbmConfig = field(default_factory=GbmConfig)
    output_dir: Path = Path("results")
    jobs: int = 1
    degenerate: str = "error"
    impute: bool = True


def _gbm_from(d: dict, base: GbmConfig) -> GbmConfig:
    known = {"iterations", "learning_rate", "max_leaves", "min_leaf", "seed"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown gbm keys: {sorted(unknown)}")
    return base.replace(**d)


def load_config(path: str | Path, overrides: argparse.Namespace | None = None) -> ExperimentConfig:
    path = Path(path)
    raw = json.loads(path.read_text())
    base_dir = path.parent
    ov = vars(overrides) if overrides is not None else {}

    gbm = _gbm_from(raw.get("gbm", {}), GbmConfig())
    if ov.get("iterations") is not None:
        gbm = gbm.replace(iterations=ov["iterations"])
    if ov.get("learning_rate") is not None:
        gbm = gbm.replace(learning_rate=ov["learning_rate"])

    datasets = []
    for d in raw.get("datasets", []):
        if "path" not in d or "targets" not in d:
            raise ConfigError(f"dataset entry needs 'path' and 'targets': {d}")
        p = base_dir / d["path"]
        if not p.exists():
            raise ConfigError(f"dataset file not found: {p}")
        tp = base_dir / d["test_path"] if d.get("test_path") else None
        if tp is not None and not tp.exists():
            raise ConfigError(f"test file not found: {tp}")
        datasets.append(DatasetSpec(d.get("name", p.stem), p, d["targets"], tp))
    if not datasets:
        raise ConfigError("config lists no datasets")

    seed_override = ov.get("seed")
    methods = []
    for m in raw.get("methods", []):
        mtype = m.get("type", "").lower()
        if mtype not in ("st", "rlc"):
            raise ConfigError(f"method type must be 'st' or 'rlc': {m}")
        mg = _gbm_from(m.get("gbm", {}), gbm)
        if ov.get("iterations") is not None:
            mg = mg.replace(iterations=ov["iterations"])
        if ov.get("learning_rate") is not None:
            mg = mg.replace(learning_rate=ov["learning_rate"])
        seed = seed_override if seed_override is not None else m.get("seed", raw.get("seed", 0))
        if mtype == "rlc":
            r = ov.get("r") if ov.get("r") is not None else m.get("r")
            k = ov.get("k") if ov.get("k") is not None else m.get("k")
            if r is None or k is None:
                raise ConfigError(f"rlc method needs 'r' and 'k': {m}")
            methods.append(MethodSpec(m.get("name", f"RLC-k{k}"), "rlc", mg, int(r), int(k), int(seed)))
        else:
            methods.append(MethodSpec(m.get("name", "ST"), "st", mg, seed=int(seed)))

    sweep = raw.get("sweep", {})
    if sweep and (not sweep.get("r") or not sweep.get("k")):
        raise ConfigError("sweep needs non-empty 'r' and 'k' lists")
    if not methods and not sweep:
        raise ConfigError("config has neither methods nor a sweep")
    protocol = raw.get("protocol", {})
    cfg = ExperimentConfig(
        datasets=datasets,
        methods=methods,
        folds=int(ov.get("folds") or protocol.get("folds", 10)),
        cv_seed=int(seed_override if seed_override is not None else protocol.get("seed", raw.get("seed", 0))),
        sweep_r=[int(v) for v in sweep.get("r", [])],
        sweep_k=[int(v) for v in sweep.get("k", [])],
        sweep_seed=int(seed_override if seed_override is not None else sweep.get("seed", raw.get("seed", 0))),
        gbm=gbm,
        output_dir=Path(ov.get("output_dir") or base_dir / raw.get("output_dir", "results")),
        jobs=int(ov.get("jobs") or raw.get("jobs", 1)),
        degenerate=raw.get("degenerate", "error"),
        impute=bool(raw.get("impute", True)),
    )
    if cfg.degenerate not in ("error", "skip"):
        raise ConfigError("degenerate must be 'error' or 'skip'")
    return cfg


def _load(spec: DatasetSpec, impute: bool) -> tuple[Dataset, SplitPlan | None]:
    data = load_dataset(spec.path, spec.targets, impute=impute, name=spec.name)
    if spec.test_path is None:
        return data, None
    test = load_dataset(spec.test_path, spec.targets, impute=impute, name=spec.name)
    return concat_holdout(data, test)


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------

def _method_cell(spec: DatasetSpec, method: MethodSpec, cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    try:
        data, plan = _load(spec, cfg.impute)
        if plan is None:
            plan = make_kfold(data.m, cfg.folds, cfg.cv_seed)
        report = evaluate_plan(method.build(), data, plan, cfg.degenerate)
        return {"kind": "method", "dataset": spec.name, "method": method.name,
                "report": report.to_dict(), "timings": report.timings,
                "seconds": time.perf_counter() - t0}
    except Exception as exc:  # a failed cell must not abort its siblings
        logger.exception("cell %s/%s failed", spec.name, method.name)
        return {"kind": "method", "dataset": spec.name, "method": method.name,
                "error": f"{type(exc).__name__}: {exc}", "seconds": time.perf_counter() - t0}


def _sweep_cell(spec: DatasetSpec, k: int, cfg: ExperimentConfig) -> dict:
    t0 = time.perf_counter()
    try:
        data, plan = _load(spec, cfg.impute)
        if plan is None:
            plan = make_kfold(data.m, cfg.folds, cfg.cv_seed)
        sizes = [r for r in cfg.sweep_r if r >= data.q]
        if not sizes:
            raise ConfigError(f"no sweep r value is >= q={data.q}")
        method = RlcMethod(RlcParams(max(sizes), k, cfg.sweep_seed, cfg.gbm), name=f"RLC-k{k}")
        reports = evaluate_prefixes(method, data, plan, sizes, cfg.degenerate)
        return {"kind": "sweep", "dataset": spec.name, "k": k,
                "points": [{"r": r, "arrmse": rep.arrmse} for r, rep in sorted(reports.items())],
                "seconds": time.perf_counter() - t0}
    except Exception as exc:
        logger.exception("sweep cell %s/k=%d failed", spec.name, k)
        return {"kind": "sweep", "dataset": spec.name, "k": k,
                "error": f"{type(exc).__name__}: {exc}", "seconds": time.perf_counter() - t0}


def _dataset_q(spec: DatasetSpec) -> int:
    if isinstance(spec.targets, int):
        return spec.targets
    return len(spec.targets)


def emit_curve_data(points: list[dict]) -> str:
    """CSV rows ``dataset,k,r,arrmse``, sorted by r within each series.

    With several datasets, an ``average`` series per k and an overall
    ``average``/``all`` series are appended.  Averages are only emitted at r
    values that every contributing series contains.
    """
    series: dict[tuple[str, int], dict[int, float]] = {}
    for p in points:
        series.setdefault((p["dataset"], int(p["k"])), {})[int(p["r"])] = float(p["arrmse"])
    rows = []
    for (ds, k) in sorted(series):
        for r in sorted(series[(ds, k)]):
            rows.append((ds, str(k), r, series[(ds, k)][r]))
    datasets = sorted({ds for ds, _ in series})
    if len(datasets) > 1:
        groups = {str(k): [s for (ds, kk), s in series.items() if kk == k]
                  for k in sorted({k for _, k in series})}
        groups["all"] = list(series.values())
        for label, members in groups.items():
            if label != "all" and len(members) < 2:
                continue
            common = set.intersection(*(set(s) for s in members))
            for r in sorted(common):
                rows.append(("average", label, r, float(np.mean([s[r] for s in members]))))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "k", "r", "arrmse"])
    for ds, k, r, v in rows:
        w.writerow([ds, k, r, repr(v)])
    return buf.getvalue()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: ExperimentConfig) -> int:
    """Evaluate every dataset x method cell and every sweep cell; write results.

    Returns 0 when all cells succeed, 1 otherwise.
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    tasks = []
    for spec in cfg.datasets:
        for method in cfg.methods:
            tasks.append((_method_cell, (spec, method, cfg)))
        q = _dataset_q(spec)
        for k in cfg.sweep_k:
            if 2 <= k <= q:
                tasks.append((_sweep_cell, (spec, k, cfg)))
    started = time.perf_counter()
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [pool.submit(fn, *args) for fn, args in tasks]
            results = [f.result() for f in futures]
    else:
        results = [fn(*args) for fn, args in tasks]

    written = []
    failed = [r for r in results if "error" in r]
    method_cells = [r for r in results if r["kind"] == "method"]
    if cfg.methods:
        scores = np.full((len(cfg.methods), len(cfg.datasets)), np.nan)
        mi = {m.name: i for i, m in enumerate(cfg.methods)}
        di = {d.name: j for j, d in enumerate(cfg.datasets)}
        for r in method_cells:
            if "report" in r:
                scores[mi[r["method"]], di[r["dataset"]]] = r["report"]["arrmse"]
                path = out / "reports" / f"{r['dataset']}__{r['method']}.json"
                path.write_text(json.dumps(r["report"], indent=2) + "\n")
                written.append(path)
        table = ResultTable(tuple(mi), tuple(di), scores)
        path = out / "results.csv"
        path.write_text(table.to_csv())
        written.append(path)
    sweep_points = [dict(dataset=r["dataset"], k=r["k"], **p)
                    for r in results if r["kind"] == "sweep" and "points" in r
                    for p in r["points"]]
    if sweep_points:
        path = out / "curves.csv"
        path.write_text(emit_curve_data(sweep_points))
        written.append(path)
        for ds in sorted({p["dataset"] for p in sweep_points}):
            for k in sorted({p["k"] for p in sweep_points if p["dataset"] == ds}):
                sub = [p for p in sweep_points if p["dataset"] == ds and p["k"] == k]
                path = out / f"curve__{ds}__k{k}.csv"
                path.write_text(emit_curve_data(sub))
                written.append(path)

    manifest = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seeds": {"cv": cfg.cv_seed, "sweep": cfg.sweep_seed,
                  "methods": {m.name: m.seed for m in cfg.methods}},
        "folds": cfg.folds,
        "cells": [{k: v for k, v in r.items() if k not in ("report", "points")} for r in results],
        "total_seconds": time.perf_counter() - started,
        "failed_cells": len(failed),
        "files": {str(p.relative_to(out)): _sha256(p) for p in written},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for r in failed:
        logger.error("failed cell %s: %s", {k: r[k] for k in ("dataset", "method", "k") if k in r},
                     r["error"])
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def _targets_arg(value: str) -> int | list[str]:
    try:
        return int(value)
    except ValueError:
        return [v.strip() for v in value.split(",") if v.strip()]


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        logger.error("invalid config: %s", exc)
        return 2
    return run_experiment(cfg)


def cmd_compare(args) -> int:
    table = ResultTable.read(args.results)
    if len(table.methods) < 2:
        logger.error("result table has a single method; nothing to compare")
        return 2
    try:
        report = compare(table, args.alpha, args.reference)
    except ValueError as exc:
        logger.error("%s", exc)
        return 2
    text = format_report(report)
    out = Path(args.output_dir) if args.output_dir else Path(args.results).parent
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.json").write_text(report_json(report) + "\n")
    (out / "comparison.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_correlations(args) -> int:
    out = Path(args.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    box = []
    for path in args.datasets:
        data = load_dataset(path, _targets_arg(args.targets))
        R = pairwise_target_correlations(data.Y)
        s = correlation_summary(R)
        (out / f"{data.name}__correlations.csv").write_text(
            correlation_matrix_csv(R, data.target_names))
        (out / f"{data.name}__summary.json").write_text(json.dumps(
            {"dataset": data.name, "median_abs": s.median_abs, "stdev_abs": s.stdev_abs}, indent=2) + "\n")
        box.append((data.name, R))
        std = "-" if s.stdev_abs is None else f"{s.stdev_abs:.4f}"
        print(f"{data.name}: median |r| = {s.median_abs:.4f}, stdev |r| = {std}")
    (out / "boxplot.csv").write_text(boxplot_rows_csv(box))
    return 0


def cmd_fit(args) -> int:
    data = load_dataset(args.dataset, _targets_arg(args.targets))
    gbm = GbmConfig(iterations=args.iterations if args.iterations is not None else 100,
                    learning_rate=args.learning_rate if args.learning_rate is not None else 0.1)
    if args.method == "st":
        model = train_st(data, gbm, jobs=args.jobs or 1, seed=args.seed or 0)
    else:
        params = RlcParams(args.r or max(data.q, 100), args.k or 2, args.seed or 0, gbm)
        model = train_rlc(data, params, jobs=args.jobs or 1)
    path = save_bundle(model, args.output_dir or "model", data.target_names, data.input_names)
    print(f"saved {args.method} model to {path}")
    return 0


def cmd_inspect(args) -> int:
    manifest = read_manifest(args.bundle)
    print(json.dumps({k: v for k, v in manifest.items() if k != "model_seeds"}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlcmtr", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--folds", type=int)
        p.add_argument("--r", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--output-dir")
        p.add_argument("--jobs", type=int)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="statistical comparison of a result table")
    p.add_argument("results")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--reference", help="method tested against all others with Wilcoxon")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("correlations", help="pairwise target correlations")
    p.add_argument("datasets", nargs="+")
    p.add_argument("--targets", required=True, help="target count or comma-separated names")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_correlations)

    p = sub.add_parser("fit", help="train one model on a dataset and save it as a bundle")
    p.add_argument("dataset")
    p.add_argument("--targets", required=True)
    p.add_argument("--method", choices=["rlc", "st"], default="rlc")
    overrides(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("inspect", help="print a saved model's parameters")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
