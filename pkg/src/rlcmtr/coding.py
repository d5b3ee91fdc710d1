"""Random k-sparse target combinations: construction, encoding, decoding."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

# Decoding refuses systems whose smallest singular value is below this
# fraction of the largest one.
RANK_TOLERANCE = 1e-10


class CodingError(ValueError):
    pass


class RankDeficiencyError(CodingError):
    pass


def column_rng(seed: int, column: int) -> np.random.Generator:
    """Generator for one column of the coefficient matrix.

    Each column gets its own stream keyed by ``(seed, column)``, so the first
    ``r`` columns do not depend on how many columns are built in total.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(column,)))


@dataclass(frozen=True, eq=False)
class CoefficientMatrix:
    """q x r matrix; column j holds the weights of the j-th target combination."""

    C: np.ndarray
    k: int
    seed: int | None = None

    def __post_init__(self):
        C = np.array(self.C, dtype=np.float64)
        if C.ndim != 2:
            raise CodingError("coefficient matrix must be two-dimensional")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        return self.C.shape[1]

    def participation(self) -> np.ndarray:
        """Number of combinations each target takes part in."""
        return np.count_nonzero(self.C, axis=1)

    def head(self, r: int) -> "CoefficientMatrix":
        """The matrix formed by the first ``r`` columns."""
        if not 1 <= r <= self.r:
            raise CodingError(f"cannot take {r} of {self.r} columns")
        return CoefficientMatrix(self.C[:, :r], self.k, self.seed)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in self.C:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, k: int | None = None, seed: int | None = None) -> "CoefficientMatrix":
        rows = [[float(v) for v in row] for row in csv.reader(io.StringIO(text)) if row]
        C = np.array(rows, dtype=np.float64)
        if k is None:
            k = int(np.count_nonzero(C[:, 0]))
        return cls(C, k, seed)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path: str | Path, k: int | None = None, seed: int | None = None) -> "CoefficientMatrix":
        return cls.from_csv(Path(path).read_text(), k, seed)

    def __eq__(self, other):
        if not isinstance(other, CoefficientMatrix):
            return NotImplemented
        return self.k == other.k and np.array_equal(self.C, other.C)


def build_coefficient_matrix(q: int, r: int, k: int, seed: int) -> CoefficientMatrix:
    """Build the q x r coefficient matrix with exactly ``k`` non-zeros per column.

    Columns are filled in order.  Each column picks the ``k`` targets that
    have so far taken part in the fewest combinations, breaking ties
    uniformly at random, and gives each one a uniform weight in (0, 1].
    """
    if k < 2 or k > q:
        raise CodingError(f"k must satisfy 2 <= k <= q, got k={k}, q={q}")
    if r < q:
        raise CodingError(f"r must be at least q, got r={r}, q={q}")
    C = np.zeros((q, r))
    counts = np.zeros(q, dtype=np.int64)
    for j in range(r):
        rng = column_rng(seed, j)
        tiebreak = rng.random(q)
        chosen = np.lexsort((tiebreak, counts))[:k]
        # 1 - U[0, 1) lies in (0, 1], so chosen weights are never zero
        C[chosen, j] = 1.0 - rng.random(k)
        counts[chosen] += 1
    return CoefficientMatrix(C, k, seed)


def encode(Y_norm, C: CoefficientMatrix) -> np.ndarray:
    """New targets ``Z = Y_norm @ C``."""
    Y_norm = np.asarray(Y_norm, dtype=np.float64)
    if Y_norm.shape[-1] != C.q:
        raise CodingError(f"targets have {Y_norm.shape[-1]} columns but C has {C.q} rows")
    return Y_norm @ C.C


class Decoder:
    """Least-squares solver for ``C.T @ y = z`` using a QR factorization of ``C.T``."""

    def __init__(self, C: CoefficientMatrix):
        A = C.C.T
        if A.shape[0] < A.shape[1]:
            raise RankDeficiencyError(
                f"coefficient matrix has {A.shape[0]} columns, fewer than q={A.shape[1]}")
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[0] == 0 or sv[-1] < RANK_TOLERANCE * sv[0]:
            raise RankDeficiencyError(
                "coefficient matrix C is numerically rank deficient "
                f"(singular values {sv[-1]:.3g} .. {sv[0]:.3g})")
        Q, R = np.linalg.qr(A)
        self.Q = Q
        self.R = R
        self.q = A.shape[1]

    def solve(self, Z) -> np.ndarray:
        """Decode one vector of length r or a batch of shape (n, r)."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.shape[-1] != self.Q.shape[0]:
            raise CodingError(f"expected {self.Q.shape[0]} encoded values, got {Z.shape[-1]}")
        rhs = self.Q.T @ np.atleast_2d(Z).T
        Y = solve_triangular(self.R, rhs, lower=False).T
        return Y[0] if Z.ndim == 1 else Y


def decode(C: CoefficientMatrix, z) -> np.ndarray:
    """Least-squares estimate of the normalized targets from encoded predictions."""
    return Decoder(C).solve(z)
