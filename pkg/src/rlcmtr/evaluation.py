"""aRRMSE scoring, holdout / cross-validation protocols and target-correlation analysis."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, SplitPlan, concat_holdout, make_kfold

logger = logging.getLogger(__name__)

POLICIES = ("error", "skip")


class DegenerateTargetError(ValueError):
    """A test fold where every actual value equals the training mean."""

    def __init__(self, target: int | None, message: str | None = None):
        self.target = target
        super().__init__(message or f"target {target}: test values all equal the training mean")


def rrmse(pred, actual, train_mean: float, target: int | None = None) -> float:
    """RMSE of ``pred`` relative to the RMSE of always predicting ``train_mean``."""
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape or pred.size < 1:
        raise ValueError("pred and actual must be non-empty and of equal shape")
    denom = float(np.sum((train_mean - actual) ** 2))
    if denom == 0.0:
        raise DegenerateTargetError(target)
    return float(np.sqrt(np.sum((pred - actual) ** 2) / denom))


def per_target_rrmse(preds, actuals, train_means, policy: str = "error") -> np.ndarray:
    """RRMSE for each column; degenerate columns become NaN under ``policy='skip'``."""
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    actuals = np.atleast_2d(np.asarray(actuals, dtype=np.float64))
    train_means = np.asarray(train_means, dtype=np.float64)
    if preds.shape != actuals.shape or train_means.shape != (preds.shape[1],):
        raise ValueError(f"shape mismatch: preds {preds.shape}, actuals {actuals.shape}, "
                         f"train_means {train_means.shape}")
    out = np.empty(preds.shape[1])
    for j in range(preds.shape[1]):
        try:
            out[j] = rrmse(preds[:, j], actuals[:, j], train_means[j], target=j)
        except DegenerateTargetError:
            if policy == "error":
                raise
            warnings.warn(f"target {j} is degenerate in this test set; excluded from aRRMSE",
                          RuntimeWarning, stacklevel=2)
            out[j] = np.nan
    return out


def arrmse(preds, actuals, train_means, policy: str = "error") -> float:
    """Unweighted mean of the per-target RRMSE values."""
    scores = per_target_rrmse(preds, actuals, train_means, policy)
    if np.all(np.isnan(scores)):
        raise DegenerateTargetError(None, "every target is degenerate in this test set")
    return float(np.nanmean(scores))


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    """Scores from one holdout run or one cross-validation run."""

    per_target_rrmse: np.ndarray
    arrmse: float
    protocol: dict
    fold_arrmse: list[float]
    fold_rrmse: np.ndarray
    fold_train_means: np.ndarray
    target_names: tuple[str, ...] = ()
    method: str = ""
    dataset: str = ""
    timings: dict = field(default_factory=dict)

    @property
    def train_means(self) -> np.ndarray:
        """Training means of the (first) fold; the full matrix is ``fold_train_means``."""
        return self.fold_train_means[0]

    def to_dict(self, with_timings: bool = False) -> dict:
        d = {
            "dataset": self.dataset,
            "method": self.method,
            "protocol": self.protocol,
            "arrmse": self.arrmse,
            "target_names": list(self.target_names),
            "per_target_rrmse": _floats(self.per_target_rrmse),
            "fold_arrmse": _floats(self.fold_arrmse),
            "fold_rrmse": [_floats(row) for row in self.fold_rrmse],
            "fold_train_means": [_floats(row) for row in self.fold_train_means],
        }
        if with_timings:
            d["timings"] = self.timings
        return d

    def to_json(self, with_timings: bool = False) -> str:
        return json.dumps(self.to_dict(with_timings), indent=2)

    def to_csv(self) -> str:
        """One row per target and one summary row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dataset", "method", "target", "rrmse"])
        names = self.target_names or tuple(f"y{j}" for j in range(len(self.per_target_rrmse)))
        for name, v in zip(names, self.per_target_rrmse):
            w.writerow([self.dataset, self.method, name, _fmt(v)])
        w.writerow([self.dataset, self.method, "aRRMSE", _fmt(self.arrmse)])
        return buf.getvalue()


def _floats(values) -> list:
    return [None if v is None or not np.isfinite(v) else float(v) for v in values]


def _fmt(v) -> str:
    return "" if v is None or not np.isfinite(v) else repr(float(v))


def _run_fold(method, data: Dataset, train_idx, test_idx, policy, n_models=None):
    train, test = data.subset(train_idx), data.subset(test_idx)
    t0 = time.perf_counter()
    model = method.train(train)
    t1 = time.perf_counter()
    means = train.Y.mean(axis=0)
    if n_models is None:
        results = [(None, per_target_rrmse(model.predict(test.X), test.Y, means, policy))]
    else:
        Z = model.encoded_predictions(test.X, max(n_models))
        results = [(n, per_target_rrmse(model.decode(Z, n), test.Y, means, policy))
                   for n in n_models]
    t2 = time.perf_counter()
    return results, means, {"train_seconds": t1 - t0, "predict_seconds": t2 - t1}


def _assemble(fold_results, plan: SplitPlan, data: Dataset, method_name: str) -> EvalReport:
    fold_rrmse = np.array([r for r, _, _ in fold_results])
    means = np.array([m for _, m, _ in fold_results])
    fold_scores = []
    for row in fold_rrmse:
        if np.all(np.isnan(row)):
            raise DegenerateTargetError(None, "every target is degenerate in a fold")
        fold_scores.append(float(np.nanmean(row)))
    if plan.kind == "holdout":
        protocol = {"type": "holdout", "train": int(np.sum(plan.fold_assignments == 0)),
                    "test": int(np.sum(plan.fold_assignments == 1))}
    else:
        protocol = {"type": "cv", "folds": plan.folds, "seed": plan.seed}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        per_target = np.nanmean(fold_rrmse, axis=0)
    timings = {
        "train_seconds": sum(t["train_seconds"] for _, _, t in fold_results),
        "predict_seconds": sum(t["predict_seconds"] for _, _, t in fold_results),
    }
    return EvalReport(per_target, float(np.mean(fold_scores)), protocol, fold_scores,
                      fold_rrmse, means, data.target_names, method_name, data.name, timings)


def evaluate_plan(method, data: Dataset, plan: SplitPlan, policy: str = "error",
                  jobs: int = 1) -> EvalReport:
    """Run ``method`` over every split of ``plan``.

    ``method`` is any object with ``train(Dataset)`` returning a model with
    ``predict(X) -> (n, q)``.  Each fold is scored against its own training
    means; the reported aRRMSE is the mean of the per-fold aRRMSE values.
    """
    if plan.m != data.m:
        raise ValueError(f"plan covers {plan.m} rows, dataset has {data.m}")
    splits = list(plan.splits())
    if jobs > 1 and len(splits) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(jobs, len(splits))) as pool:
            futures = [pool.submit(_run_fold, method, data, tr, te, policy) for tr, te in splits]
            raw = [f.result() for f in futures]
    else:
        raw = [_run_fold(method, data, tr, te, policy) for tr, te in splits]
    folds = [(res[0][1], means, t) for res, means, t in raw]
    return _assemble(folds, plan, data, getattr(method, "name", type(method).__name__))


def evaluate_holdout(method, train: Dataset, test: Dataset, policy: str = "error") -> EvalReport:
    data, plan = concat_holdout(train, test)
    return evaluate_plan(method, data, plan, policy)


def evaluate_cv(method, data: Dataset, folds: int = 10, seed: int = 0,
                policy: str = "error", jobs: int = 1) -> EvalReport:
    return evaluate_plan(method, data, make_kfold(data.m, folds, seed), policy, jobs)


def evaluate_prefixes(method, data: Dataset, plan: SplitPlan, n_models: Sequence[int],
                      policy: str = "error") -> dict[int, EvalReport]:
    """Score an ensemble at several sizes from a single training run per fold.

    ``method.train`` must return a model exposing ``encoded_predictions`` and
    ``decode`` (e.g. :class:`~rlcmtr.rlc.RlcModel`).  The score at size ``n``
    equals that of an independently trained ``n``-model ensemble.
    """
    sizes = sorted(set(int(n) for n in n_models))
    raw = [_run_fold(method, data, tr, te, policy, sizes) for tr, te in plan.splits()]
    name = getattr(method, "name", type(method).__name__)
    out = {}
    for i, n in enumerate(sizes):
        folds = [(res[i][1], means, t) for res, means, t in raw]
        out[n] = _assemble(folds, plan, data, name)
    return out


# ---------------------------------------------------------------------------
# Target correlations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationSummary:
    pairwise: np.ndarray
    median_abs: float
    stdev_abs: float | None

    @property
    def upper_abs(self) -> np.ndarray:
        return np.abs(upper_triangle(self.pairwise))

    def to_dict(self) -> dict:
        return {"median_abs": self.median_abs, "stdev_abs": self.stdev_abs,
                "pairwise": self.pairwise.tolist()}


def upper_triangle(matrix) -> np.ndarray:
    matrix = np.asarray(matrix)
    return matrix[np.triu_indices(matrix.shape[0], k=1)]


def pairwise_target_correlations(Y) -> np.ndarray:
    """Pearson correlation matrix of the target columns.

    A constant column has no defined correlation; it is reported as 0 against
    every other column.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise ValueError("need at least two targets")
    if Y.shape[0] < 2:
        raise ValueError("need at least two rows")
    centred = Y - Y.mean(axis=0)
    norms = np.sqrt(np.sum(centred ** 2, axis=0))
    constant = norms == 0
    if constant.any():
        warnings.warn(f"constant target columns {np.flatnonzero(constant).tolist()}: "
                      "correlation set to 0", RuntimeWarning, stacklevel=2)
    unit = centred / np.where(constant, 1.0, norms)
    R = np.clip(unit.T @ unit, -1.0, 1.0)
    R[constant, :] = 0.0
    R[:, constant] = 0.0
    np.fill_diagonal(R, 1.0)
    return R


def correlation_summary(matrix) -> CorrelationSummary:
    """Median and sample standard deviation of |r| over distinct target pairs.

    With only one pair the standard deviation is undefined and reported as None.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    values = np.abs(upper_triangle(matrix))
    stdev = float(np.std(values, ddof=1)) if values.size > 1 else None
    return CorrelationSummary(matrix, float(np.median(values)), stdev)


def correlation_matrix_csv(matrix, names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(names))
    for name, row in zip(names, np.asarray(matrix)):
        w.writerow([name] + [repr(float(v)) for v in row])
    return buf.getvalue()


def boxplot_rows_csv(items: Iterable[tuple[str, np.ndarray]]) -> str:
    """One row per dataset: name followed by all its pairwise correlations."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for name, matrix in items:
        w.writerow([name] + [repr(float(v)) for v in upper_triangle(matrix)])
    return buf.getvalue()
