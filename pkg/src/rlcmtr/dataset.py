"""Multi-target dataset ingestion, target normalization and resampling plans.

Two file formats are supported: a numeric-only subset of ARFF and plain CSV
with a header row.  In both, ``?`` marks a missing cell.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Base class for ingestion problems."""


class ArffParseError(DatasetError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedAttributeError(DatasetError):
    pass


class TargetConfigError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Inputs ``X`` (m x p) and targets ``Y`` (m x q) with attribute names.

    Missing cells are stored as NaN until :func:`impute_mean` is applied.
    """

    X: np.ndarray
    Y: np.ndarray
    input_names: tuple[str, ...]
    target_names: tuple[str, ...]
    name: str = "dataset"

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        Y = np.array(self.Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2:
            raise DatasetError("X and Y must be two-dimensional")
        if X.shape[0] != Y.shape[0]:
            raise DatasetError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if X.shape[0] < 1 or X.shape[1] < 1 or Y.shape[1] < 1:
            raise DatasetError(f"empty dataset: X {X.shape}, Y {Y.shape}")
        if len(self.input_names) != X.shape[1] or len(self.target_names) != Y.shape[1]:
            raise DatasetError("attribute name count does not match matrix width")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "target_names", tuple(self.target_names))

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.X).any() or np.isnan(self.Y).any())

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.Y[rows], self.input_names,
                       self.target_names, self.name)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _split_targets(names: list[str], columns: np.ndarray,
                   targets: int | Sequence[str] | None, name: str) -> Dataset:
    n_attr = len(names)
    if targets is None:
        raise TargetConfigError("a target count or list of target names is required")
    if isinstance(targets, (int, np.integer)):
        q = int(targets)
        if q < 1 or q >= n_attr:
            raise TargetConfigError(
                f"target count {q} must be in [1, {n_attr - 1}] for {n_attr} attributes")
        target_idx = list(range(n_attr - q, n_attr))
    else:
        wanted = list(targets)
        missing = [t for t in wanted if t not in names]
        if missing:
            raise TargetConfigError(f"unknown target attributes: {missing}")
        if len(set(wanted)) != len(wanted):
            raise TargetConfigError("duplicate target names")
        if not wanted or len(wanted) >= n_attr:
            raise TargetConfigError(
                f"{len(wanted)} targets leaves no input attributes among {n_attr}")
        target_idx = [names.index(t) for t in wanted]
    input_idx = [i for i in range(n_attr) if i not in target_idx]
    return Dataset(columns[:, input_idx], columns[:, target_idx],
                   tuple(names[i] for i in input_idx),
                   tuple(names[i] for i in target_idx), name)


def _parse_cell(token: str, line: int) -> float:
    token = token.strip()
    if token == "?":
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise ArffParseError(f"non-numeric value {token!r}", line) from None


def _unquote(name: str) -> str:
    if len(name) >= 2 and name[0] == name[-1] and name[0] in "'\"":
        return name[1:-1]
    return name


def _parse_attribute(rest: str, line: int) -> tuple[str, str]:
    rest = rest.strip()
    if rest[:1] in "'\"":
        end = rest.find(rest[0], 1)
        if end < 0:
            raise ArffParseError("unterminated quoted attribute name", line)
        name, kind = rest[1:end], rest[end + 1:].strip()
    else:
        parts = rest.split(None, 1)
        if len(parts) != 2:
            raise ArffParseError(f"malformed @attribute declaration {rest!r}", line)
        name, kind = parts
    if not kind:
        raise ArffParseError(f"attribute {name!r} has no type", line)
    return name, kind


def parse_arff(text: str | io.TextIOBase, targets: int | Sequence[str] | None = None,
               name: str | None = None) -> Dataset:
    """Parse the numeric ARFF subset.

    Parameters
    ----------
    text : str or text stream
        ARFF content.
    targets : int or sequence of str
        Either the number of trailing attributes that are targets, or the
        explicit target attribute names.
    name : str, optional
        Dataset name; defaults to the ``@relation`` value.

    Returns
    -------
    Dataset
        Missing cells (``?``) are NaN; call :func:`impute_mean` to fill them.
    """
    if not isinstance(text, str):
        text = text.read()
    relation = None
    names: list[str] = []
    rows: list[list[float]] = []
    in_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if not in_data:
            if not line.startswith("@"):
                raise ArffParseError(f"unexpected content before @data: {line!r}", lineno)
            keyword, _, rest = line.partition(" ")
            keyword = keyword.lower()
            if keyword == "@relation":
                relation = _unquote(rest.strip())
            elif keyword == "@attribute":
                attr, kind = _parse_attribute(rest, lineno)
                if kind.lower() not in ("numeric", "real", "integer"):
                    raise UnsupportedAttributeError(
                        f"line {lineno}: attribute {attr!r} has unsupported type {kind!r}")
                names.append(attr)
            elif keyword == "@data":
                if not names:
                    raise ArffParseError("@data before any @attribute", lineno)
                in_data = True
            else:
                raise ArffParseError(f"unknown header keyword {keyword!r}", lineno)
            continue
        if line.startswith("{"):
            raise ArffParseError("sparse ARFF rows are not supported", lineno)
        fields = line.split(",")
        if len(fields) != len(names):
            raise ArffParseError(
                f"data row has {len(fields)} fields, expected {len(names)}", lineno)
        rows.append([_parse_cell(f, lineno) for f in fields])
    if not in_data:
        raise ArffParseError("missing @data section")
    if not rows:
        raise ArffParseError("no data rows")
    return _split_targets(names, np.array(rows, dtype=np.float64), targets,
                          name or relation or "dataset")


def parse_csv(text: str | io.TextIOBase, targets: int | Sequence[str] | None = None,
              name: str = "dataset") -> Dataset:
    """Parse a CSV file whose first row holds attribute names."""
    if isinstance(text, str):
        text = io.StringIO(text)
    reader = csv.reader(text)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ArffParseError("empty CSV input", 1) from None
    rows = []
    for lineno, fields in enumerate(reader, start=2):
        if not fields or all(not f.strip() for f in fields):
            continue
        if len(fields) != len(header):
            raise ArffParseError(
                f"data row has {len(fields)} fields, expected {len(header)}", lineno)
        rows.append([_parse_cell(f, lineno) for f in fields])
    if not rows:
        raise ArffParseError("no data rows")
    return _split_targets(header, np.array(rows, dtype=np.float64), targets, name)


def impute_mean(data: Dataset) -> Dataset:
    """Replace every NaN cell with the mean of the non-missing cells in its column."""
    if not data.has_missing:
        return data

    def fill(M, names):
        M = M.copy()
        missing = np.isnan(M)
        for j in np.flatnonzero(missing.any(axis=0)):
            col = M[:, j]
            if missing[:, j].all():
                raise DatasetError(f"attribute {names[j]!r} has no observed values")
            col[missing[:, j]] = col[~missing[:, j]].mean()
        return M

    return Dataset(fill(data.X, data.input_names), fill(data.Y, data.target_names),
                   data.input_names, data.target_names, data.name)


def load_dataset(path: str | Path, targets: int | Sequence[str] | None,
                 impute: bool = True, name: str | None = None) -> Dataset:
    """Read an ``.arff`` or ``.csv`` file, imputing missing cells by default."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        data = parse_csv(text, targets, name or path.stem)
    else:
        data = parse_arff(text, targets, name or path.stem)
    if impute:
        data = impute_mean(data)
    elif data.has_missing:
        logger.warning("%s contains missing cells and imputation is disabled", path)
    return data


# ---------------------------------------------------------------------------
# Target normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Normalizer:
    """Per-target min/max scaling to [0, 1] fitted on training targets."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.array(self.mins, dtype=np.float64)
        maxs = np.array(self.maxs, dtype=np.float64)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise ValueError("mins and maxs must be 1-d arrays of equal length")
        if np.any(mins > maxs):
            raise ValueError("normalizer has min > max")
        mins.setflags(write=False)
        maxs.setflags(write=False)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @property
    def q(self) -> int:
        return self.mins.shape[0]

    def _check(self, Y):
        Y = np.asarray(Y, dtype=np.float64)
        if Y.shape[-1] != self.q:
            raise ValueError(f"expected {self.q} target columns, got {Y.shape[-1]}")
        return Y

    def apply(self, Y) -> np.ndarray:
        Y = self._check(Y)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        # constant targets map to 0; no clipping for out-of-range test values
        return np.where(span > 0, (Y - self.mins) / safe, 0.0)

    def invert(self, U) -> np.ndarray:
        U = self._check(U)
        return self.mins + U * (self.maxs - self.mins)

    def to_dict(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mins"], dtype=np.float64), np.array(d["maxs"], dtype=np.float64))


def fit_normalizer(Y_train) -> Normalizer:
    Y_train = np.asarray(Y_train, dtype=np.float64)
    if Y_train.ndim != 2 or Y_train.shape[0] < 1:
        raise ValueError("need a non-empty m x q target matrix")
    return Normalizer(Y_train.min(axis=0), Y_train.max(axis=0))


def apply_normalizer(norm: Normalizer, Y) -> np.ndarray:
    return norm.apply(Y)


def invert_normalizer(norm: Normalizer, Y_hat) -> np.ndarray:
    return norm.invert(Y_hat)


# ---------------------------------------------------------------------------
# Resampling plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    """A holdout split or a k-fold assignment over ``m`` rows.

    For holdout plans ``fold_assignments`` marks test rows with 1 and
    training rows with 0, and ``folds`` is 1.
    """

    kind: str
    fold_assignments: np.ndarray
    folds: int
    seed: int | None = None
    m: int = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.fold_assignments, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "fold_assignments", a)
        object.__setattr__(self, "m", a.shape[0])

    def splits(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield ``(train_indices, test_indices)`` pairs in fold order."""
        if self.kind == "holdout":
            yield np.flatnonzero(self.fold_assignments == 0), np.flatnonzero(self.fold_assignments == 1)
            return
        for f in range(self.folds):
            yield np.flatnonzero(self.fold_assignments != f), np.flatnonzero(self.fold_assignments == f)

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "folds": self.folds, "seed": self.seed,
                           "fold_assignments": self.fold_assignments.tolist()})


def make_kfold(m: int, folds: int, seed: int) -> SplitPlan:
    """Shuffle rows with ``seed`` and deal them round-robin into ``folds`` folds."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if folds > m:
        raise ValueError(f"cannot make {folds} folds from {m} rows")
    perm = np.random.default_rng(seed).permutation(m)
    assign = np.empty(m, dtype=np.int64)
    assign[perm] = np.arange(m) % folds
    return SplitPlan("cv", assign, folds, seed)


def make_holdout(train_indices, test_indices, m: int | None = None) -> SplitPlan:
    train_indices = np.asarray(train_indices, dtype=np.int64)
    test_indices = np.asarray(test_indices, dtype=np.int64)
    if m is None:
        m = len(train_indices) + len(test_indices)
    assign = np.full(m, -1, dtype=np.int64)
    assign[train_indices] = 0
    if np.any(assign[test_indices] == 0):
        raise ValueError("train and test indices overlap")
    assign[test_indices] = 1
    if np.any(assign < 0):
        raise ValueError("train and test indices do not cover all rows")
    return SplitPlan("holdout", assign, 1)


def random_holdout(m: int, test_fraction: float, seed: int) -> SplitPlan:
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = min(m - 1, max(1, int(round(m * test_fraction))))
    perm = np.random.default_rng(seed).permutation(m)
    return make_holdout(perm[n_test:], perm[:n_test], m)


def concat_holdout(train: Dataset, test: Dataset) -> tuple[Dataset, SplitPlan]:
    """Stack a predefined train/test pair into one dataset with a holdout plan."""
    if train.input_names != test.input_names or train.target_names != test.target_names:
        raise DatasetError("train and test files declare different attributes")
    data = Dataset(np.vstack([train.X, test.X]), np.vstack([train.Y, test.Y]),
                   train.input_names, train.target_names, train.name)
    plan = make_holdout(np.arange(train.m), np.arange(train.m, train.m + test.m))
    return data, plan
