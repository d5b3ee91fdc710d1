"""RLC training/prediction and the single-target (ST) baseline."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .coding import CoefficientMatrix, Decoder, build_coefficient_matrix, encode
from .dataset import Dataset, Normalizer, fit_normalizer
from .gbtree import GbmConfig, GbmModel, _presort, fit_gbm

BUNDLE_FORMAT = "rlcmtr-bundle/1"


class Regressor(Protocol):
    def predict(self, X) -> np.ndarray: ...


# A learner maps (X, y, seed) to a fitted single-output regressor.
Learner = Callable[[np.ndarray, np.ndarray, int], Regressor]


def model_seed(seed: int, index: int) -> int:
    """Seed for the model trained on column ``index``; a pure function of both."""
    ss = np.random.SeedSequence(seed, spawn_key=(index, 1))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class RlcParams:
    r: int
    k: int
    seed: int = 0
    gbm: GbmConfig = field(default_factory=GbmConfig)

    def to_dict(self) -> dict:
        return {"r": self.r, "k": self.k, "seed": self.seed, "gbm": asdict(self.gbm)}

    @classmethod
    def from_dict(cls, d: dict) -> "RlcParams":
        return cls(d["r"], d["k"], d.get("seed", 0), GbmConfig(**d.get("gbm", {})))


@dataclass(frozen=True, eq=False)
class RlcModel:
    normalizer: Normalizer
    coefficients: CoefficientMatrix
    models: tuple
    params: RlcParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        if len(self.models) != self.coefficients.r:
            raise ValueError(f"{len(self.models)} models for {self.coefficients.r} combinations")

    @property
    def r(self) -> int:
        return self.coefficients.r

    @property
    def q(self) -> int:
        return self.coefficients.q

    def encoded_predictions(self, X, n_models: int | None = None) -> np.ndarray:
        """Raw per-combination predictions, shape (n, r)."""
        n = self.r if n_models is None else n_models
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.column_stack([self.models[i].predict(X) for i in range(n)])

    def decode(self, Z, n_models: int | None = None) -> np.ndarray:
        n = Z.shape[-1] if n_models is None else n_models
        C = self.coefficients if n == self.r else self.coefficients.head(n)
        return self.normalizer.invert(Decoder(C).solve(Z[..., :n]))

    def predict(self, X, n_models: int | None = None) -> np.ndarray:
        """Predict all q targets, optionally using only the first ``n_models`` combinations.

        Because each column of C and each model depend only on the master
        seed and the column index, the first ``n`` models of an r-model
        ensemble are exactly the models an n-model ensemble would train.
        """
        return self.decode(self.encoded_predictions(X, n_models), n_models)


@dataclass(frozen=True, eq=False)
class StModel:
    models: tuple
    normalizer: Normalizer | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))

    @property
    def q(self) -> int:
        return len(self.models)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.column_stack([m.predict(X) for m in self.models])


def gbm_learner(config: GbmConfig) -> Learner:
    def learn(X, y, seed):
        return fit_gbm(X, y, config.replace(seed=seed))
    return learn


def _fit_columns(X, Z, columns, seeds, config):
    # shared presort for every column fitted in this worker
    order = _presort(X)
    return [fit_gbm(X, Z[:, j], config.replace(seed=s), sorted_index=order)
            for j, s in zip(columns, seeds)]


def _fit_many(X, Z, seeds, config: GbmConfig, learner: Learner | None, jobs: int):
    n = Z.shape[1]
    if learner is not None:
        return [learner(X, Z[:, j], seeds[j]) for j in range(n)]
    jobs = _resolve_jobs(jobs)
    if jobs == 1 or n < 2:
        return _fit_columns(X, Z, range(n), seeds, config)
    chunks = [list(c) for c in np.array_split(np.arange(n), min(jobs, n)) if len(c)]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(_fit_columns, X, Z[:, c], range(len(c)),
                               [seeds[j] for j in c], config) for c in chunks]
        models = []
        for fut in futures:
            models.extend(fut.result())
    return models


def _resolve_jobs(jobs: int) -> int:
    if jobs is None or jobs == 0:
        return 1
    if jobs < 0:
        return max(1, (os.cpu_count() or 1) + 1 + jobs)
    return jobs


def train_rlc(train: Dataset, params: RlcParams, learner: Learner | None = None,
              jobs: int = 1) -> RlcModel:
    """Fit the RLC ensemble.

    Targets are scaled to [0, 1] with training statistics, mixed through a
    random k-sparse coefficient matrix, and one single-output model is fitted
    per resulting combination.  ``learner`` replaces the default gradient
    boosting model; ``jobs`` > 1 fits the combinations in worker processes
    without changing the result.
    """
    q = train.q
    if params.r < q:
        raise ValueError(f"r={params.r} is smaller than the number of targets q={q}")
    normalizer = fit_normalizer(train.Y)
    C = build_coefficient_matrix(q, params.r, params.k, params.seed)
    Z = encode(normalizer.apply(train.Y), C)
    seeds = [model_seed(params.seed, j) for j in range(params.r)]
    models = _fit_many(train.X, Z, seeds, params.gbm, learner, jobs)
    return RlcModel(normalizer, C, models, params)


def predict_rlc(model: RlcModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return model.predict(x.reshape(1, -1))[0]


def train_st(train: Dataset, gbm: GbmConfig = GbmConfig(), learner: Learner | None = None,
             jobs: int = 1, seed: int = 0) -> StModel:
    """One independent model per original target, trained on raw target values."""
    seeds = [model_seed(seed, j) for j in range(train.q)]
    return StModel(_fit_many(train.X, train.Y, seeds, gbm, learner, jobs))


def predict_st(model: StModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return model.predict(x.reshape(1, -1))[0]


# ---------------------------------------------------------------------------
# Trainable method descriptions used by the evaluation protocols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RlcMethod:
    params: RlcParams
    name: str = "RLC"
    jobs: int = 1

    def train(self, data: Dataset) -> RlcModel:
        return train_rlc(data, self.params, jobs=self.jobs)

    def describe(self) -> dict:
        return {"name": self.name, "type": "rlc", **self.params.to_dict()}


@dataclass(frozen=True)
class StMethod:
    gbm: GbmConfig = field(default_factory=GbmConfig)
    name: str = "ST"
    jobs: int = 1
    seed: int = 0

    def train(self, data: Dataset) -> StModel:
        return train_st(data, self.gbm, jobs=self.jobs, seed=self.seed)

    def describe(self) -> dict:
        return {"name": self.name, "type": "st", "seed": self.seed, "gbm": asdict(self.gbm)}


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

def save_bundle(model: RlcModel | StModel, path: str | Path,
                target_names: Sequence[str] | None = None,
                input_names: Sequence[str] | None = None) -> Path:
    """Write a model to a directory: manifest, normalizer, coefficients, trees."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = ["models.jsonl"]
    manifest = {"format": BUNDLE_FORMAT, "q": model.q,
                "target_names": list(target_names) if target_names else None,
                "input_names": list(input_names) if input_names else None}
    if isinstance(model, RlcModel):
        manifest.update(kind="rlc", r=model.r, k=model.coefficients.k,
                        seed=model.coefficients.seed,
                        params=model.params.to_dict() if model.params else None,
                        model_seeds=[model_seed(model.coefficients.seed or 0, j)
                                     for j in range(model.r)])
        model.coefficients.save(path / "coefficients.csv")
        files.append("coefficients.csv")
    else:
        manifest.update(kind="st")
    if model.normalizer is not None:
        (path / "normalizer.json").write_text(json.dumps(model.normalizer.to_dict()))
        files.append("normalizer.json")
    with open(path / "models.jsonl", "w") as fh:
        for m in model.models:
            fh.write(m.dumps() + "\n")
    manifest["files"] = sorted(files)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_manifest(path: str | Path) -> dict:
    manifest = json.loads((Path(path) / "manifest.json").read_text())
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{path}: unsupported bundle format {manifest.get('format')!r}")
    return manifest


def load_bundle(path: str | Path) -> RlcModel | StModel:
    path = Path(path)
    manifest = read_manifest(path)
    with open(path / "models.jsonl") as fh:
        models = [GbmModel.loads(line) for line in fh if line.strip()]
    normalizer = None
    if (path / "normalizer.json").exists():
        normalizer = Normalizer.from_dict(json.loads((path / "normalizer.json").read_text()))
    if manifest["kind"] == "st":
        return StModel(models, normalizer)
    C = CoefficientMatrix.load(path / "coefficients.csv", manifest["k"], manifest["seed"])
    params = RlcParams.from_dict(manifest["params"]) if manifest.get("params") else None
    return RlcModel(normalizer, C, models, params)
