"""Synthetic multi-target data with a shared signal."""

from __future__ import annotations

import numpy as np

from .dataset import Dataset


def shared_signal_dataset(m: int = 300, p: int = 8, q: int = 4, informative: int = 2,
                          noise: float = 0.55, seed: int = 0) -> Dataset:
    """Targets = one standardized linear signal of the inputs + independent noise.

    Only the first ``informative`` inputs carry weight.  With unit signal
    variance the expected pairwise target correlation is ``1 / (1 + noise**2)``
    (about 0.77 for the default noise).
    """
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, p))
    w = np.zeros(p)
    w[:informative] = rng.normal(size=informative)
    s = X @ w
    s = (s - s.mean()) / s.std()
    Y = s[:, None] + noise * rng.normal(size=(m, q))
    return Dataset(X, Y, tuple(f"x{i}" for i in range(p)), tuple(f"y{j}" for j in range(q)),
                   name=f"synthetic-{seed}")
