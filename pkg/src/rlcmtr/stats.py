"""Comparing several methods over several datasets.

Wins/losses counts, the Friedman test with the Iman-Davenport correction,
the Nemenyi critical difference and the exact Wilcoxon signed-rank test.
Lower scores are better throughout.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

# Critical values q_alpha of the two-tailed Nemenyi test (studentized range
# statistic divided by sqrt(2)) for k = 2..10 compared methods, as tabulated
# by Demsar (2006), "Statistical comparisons of classifiers over multiple
# data sets", JMLR 7, Table 5.
NEMENYI_Q = {
    0.05: {2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850,
           7: 2.949, 8: 3.031, 9: 3.102, 10: 3.164},
    0.10: {2: 1.645, 3: 2.052, 4: 2.291, 5: 2.459, 6: 2.589,
           7: 2.693, 8: 2.780, 9: 2.855, 10: 2.920},
}

EXACT_WILCOXON_MAX_N = 20


class IncompleteTableError(ValueError):
    def __init__(self, missing: list[tuple[str, str]]):
        self.missing = missing
        cells = ", ".join(f"{m}/{d}" for m, d in missing)
        super().__init__(f"result table has {len(missing)} missing cells: {cells}")


@dataclass(frozen=True)
class ResultTable:
    """Scores with one row per method and one column per dataset."""

    methods: tuple[str, ...]
    datasets: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.shape != (len(self.methods), len(self.datasets)):
            raise ValueError(f"scores shape {s.shape} does not match "
                             f"{len(self.methods)} methods x {len(self.datasets)} datasets")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "datasets", tuple(self.datasets))

    def missing_cells(self) -> list[tuple[str, str]]:
        bad = ~np.isfinite(self.scores)
        return [(self.methods[i], self.datasets[j]) for i, j in zip(*np.nonzero(bad))]

    def require_complete(self) -> "ResultTable":
        missing = self.missing_cells()
        if missing:
            raise IncompleteTableError(missing)
        return self

    def row(self, method: str) -> np.ndarray:
        return self.scores[self.methods.index(method)]

    def select(self, methods: Sequence[str]) -> "ResultTable":
        return ResultTable(tuple(methods), self.datasets,
                           np.array([self.row(m) for m in methods]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method"] + list(self.datasets))
        for name, row in zip(self.methods, self.scores):
            w.writerow([name] + ["" if not np.isfinite(v) else repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if len(rows) < 2:
            raise ValueError("result table needs a header row and at least one method row")
        datasets = [d.strip() for d in rows[0][1:]]
        methods, scores = [], []
        for r in rows[1:]:
            if len(r) != len(datasets) + 1:
                raise ValueError(f"row {r[0]!r} has {len(r) - 1} cells, expected {len(datasets)}")
            methods.append(r[0].strip())
            scores.append([float(v) if v.strip() not in ("", "?", "nan", "NaN") else np.nan
                           for v in r[1:]])
        return cls(tuple(methods), tuple(datasets), np.array(scores))

    @classmethod
    def read(cls, path: str | Path) -> "ResultTable":
        return cls.from_csv(Path(path).read_text())


# ---------------------------------------------------------------------------

def wins_losses(table: ResultTable) -> np.ndarray:
    """``out[a, b] = (wins, losses)`` of method ``a`` against ``b``; ties count for neither."""
    if len(table.methods) < 2:
        raise ValueError("need at least two methods")
    s = table.scores
    better = (s[:, None, :] < s[None, :, :]).sum(axis=2)
    return np.stack([better, better.T], axis=-1)


def rank_scores(table: ResultTable) -> np.ndarray:
    """Per-dataset ranks (1 = lowest score), ties sharing the average rank.

    Shape is (datasets, methods).
    """
    return np.array([sps.rankdata(col) for col in table.scores.T])


@dataclass(frozen=True)
class FriedmanResult:
    mean_ranks: np.ndarray
    chi_square: float
    chi_square_p: float
    iman_davenport_f: float
    p_value: float
    degenerate: bool
    df: tuple[int, int]

    def to_dict(self) -> dict:
        return {"mean_ranks": self.mean_ranks.tolist(), "chi_square": self.chi_square,
                "chi_square_p": self.chi_square_p,
                "iman_davenport_f": None if math.isinf(self.iman_davenport_f) else self.iman_davenport_f,
                "p_value": self.p_value, "degenerate": self.degenerate, "df": list(self.df)}


def friedman_from_ranks(mean_ranks, n_datasets: int) -> FriedmanResult:
    """Friedman chi-square and Iman-Davenport F from mean ranks.

    ``p_value`` comes from the F distribution with (k-1, (k-1)(N-1)) degrees
    of freedom; ``chi_square_p`` from the chi-square with k-1.  When the
    chi-square reaches its maximum N(k-1) the F statistic is infinite and the
    result is flagged ``degenerate`` with p = 0.
    """
    R = np.asarray(mean_ranks, dtype=np.float64)
    k, N = R.shape[0], int(n_datasets)
    if k < 2 or N < 2:
        raise ValueError("need at least two methods and two datasets")
    chi2 = 12.0 * N / (k * (k + 1)) * (np.sum(R ** 2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(float(chi2), 0.0)
    df = (k - 1, (k - 1) * (N - 1))
    chi2_p = float(sps.chi2.sf(chi2, k - 1))
    denom = N * (k - 1) - chi2
    if denom <= 1e-12 * N * (k - 1):
        return FriedmanResult(R, chi2, chi2_p, math.inf, 0.0, True, df)
    F = (N - 1) * chi2 / denom
    return FriedmanResult(R, chi2, chi2_p, float(F), float(sps.f.sf(F, *df)), False, df)


def friedman(table: ResultTable) -> FriedmanResult:
    table.require_complete()
    ranks = rank_scores(table)
    return friedman_from_ranks(ranks.mean(axis=0), ranks.shape[0])


def nemenyi_cd(num_methods: int, num_datasets: int, alpha: float = 0.05) -> float:
    """Critical difference of mean ranks for the Nemenyi post-hoc test."""
    table = None
    for a, t in NEMENYI_Q.items():
        if math.isclose(alpha, a):
            table = t
    if table is None:
        raise ValueError(f"alpha must be one of {sorted(NEMENYI_Q)}, got {alpha}")
    if num_methods not in table:
        raise ValueError(f"Nemenyi constants are tabulated for 2..10 methods, got {num_methods}")
    if num_datasets < 1:
        raise ValueError("need at least one dataset")
    k = num_methods
    return table[k] * math.sqrt(k * (k + 1) / (6.0 * num_datasets))


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    t_plus: float
    t_minus: float
    n: int
    p_two_sided: float
    exact: bool

    @property
    def statistic(self) -> float:
        return min(self.t_plus, self.t_minus)

    def to_dict(self) -> dict:
        return {"T_plus": self.t_plus, "T_minus": self.t_minus, "n": self.n,
                "p_two_sided": self.p_two_sided, "exact": self.exact}


def _exact_two_sided(ranks: np.ndarray, t: float) -> float:
    """P(min(T+, T-) <= t) under random signs, counted over all 2^n patterns.

    Average ranks are multiples of 1/2, so doubling makes every rank an
    integer and the distribution of T+ is counted by a subset-sum table.
    """
    doubled = np.rint(ranks * 2).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    sums = np.arange(total + 1)
    t2 = int(round(2 * t))
    hit = (sums <= t2) | (total - sums <= t2)
    return float(counts[hit].sum()) / float(2 ** len(doubled))


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Wilcoxon signed-rank test on paired scores ``a`` and ``b``.

    Differences are ``a - b``; zero differences are dropped and tied
    magnitudes share the average rank.  The two-sided p-value is exact for
    up to 20 non-zero differences and uses the tie-corrected normal
    approximation with continuity correction beyond that.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-d arrays of equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise ValueError("all differences are zero; the test has no information")
    ranks = sps.rankdata(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    t_minus = float(ranks[d < 0].sum())
    t = min(t_plus, t_minus)
    if n <= EXACT_WILCOXON_MAX_N:
        p = _exact_two_sided(ranks, t)
        return WilcoxonResult(t_plus, t_minus, n, min(1.0, p), True)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    z = (abs(t - mean) - 0.5) / math.sqrt(var)
    p = 2.0 * sps.norm.sf(max(z, 0.0))
    return WilcoxonResult(t_plus, t_minus, n, float(min(1.0, p)), False)


# ---------------------------------------------------------------------------

def compare(table: ResultTable, alpha: float = 0.1, reference: str | None = None) -> dict:
    """All comparisons in one report: wins/losses, Friedman, Nemenyi, Wilcoxon.

    Wilcoxon tests pit ``reference`` (default: the method with the best mean
    rank) against every other method.
    """
    if len(table.methods) < 2:
        raise ValueError("need at least two methods to compare")
    table.require_complete()
    wl = wins_losses(table)
    fr = friedman(table)
    k, N = len(table.methods), len(table.datasets)
    cd = nemenyi_cd(k, N, alpha) if k in NEMENYI_Q[0.05] else None
    if reference is None:
        reference = table.methods[int(np.argmin(fr.mean_ranks))]
    wilcoxon = {}
    for other in table.methods:
        if other == reference:
            continue
        try:
            wilcoxon[other] = wilcoxon_signed_rank(table.row(reference), table.row(other)).to_dict()
        except ValueError as exc:
            wilcoxon[other] = {"error": str(exc)}
    return {
        "methods": list(table.methods),
        "datasets": list(table.datasets),
        "alpha": alpha,
        "wins_losses": {a: {b: [int(wl[i, j, 0]), int(wl[i, j, 1])]
                            for j, b in enumerate(table.methods) if j != i}
                        for i, a in enumerate(table.methods)},
        "friedman": fr.to_dict(),
        "nemenyi_cd": cd,
        "wilcoxon_reference": reference,
        "wilcoxon": wilcoxon,
    }


def format_report(report: dict) -> str:
    lines = []
    methods = report["methods"]
    lines.append(f"{len(methods)} methods over {len(report['datasets'])} datasets "
                 f"(alpha = {report['alpha']})")
    lines.append("")
    lines.append("wins:losses (row vs column)")
    width = max(len(m) for m in methods) + 2
    lines.append(" " * width + "".join(m.rjust(width) for m in methods))
    for a in methods:
        cells = ["-" if a == b else "{}:{}".format(*report["wins_losses"][a][b]) for b in methods]
        lines.append(a.ljust(width) + "".join(c.rjust(width) for c in cells))
    fr = report["friedman"]
    lines.append("")
    lines.append("mean ranks: " + ", ".join(f"{m} {r:.4g}" for m, r in zip(methods, fr["mean_ranks"])))
    f_stat = "inf" if fr["iman_davenport_f"] is None else f"{fr['iman_davenport_f']:.4f}"
    lines.append(f"Friedman chi2 = {fr['chi_square']:.4f} (p = {fr['chi_square_p']:.4f}), "
                 f"Iman-Davenport F = {f_stat} (p = {fr['p_value']:.4f})")
    if report["nemenyi_cd"] is not None:
        lines.append(f"Nemenyi critical difference = {report['nemenyi_cd']:.4f}")
    lines.append("")
    ref = report["wilcoxon_reference"]
    for other, w in report["wilcoxon"].items():
        if "error" in w:
            lines.append(f"Wilcoxon {ref} vs {other}: {w['error']}")
        else:
            lines.append(f"Wilcoxon {ref} vs {other}: T+ = {w['T_plus']:g}, T- = {w['T_minus']:g}, "
                         f"p = {w['p_two_sided']:.4f}{'' if w['exact'] else ' (normal approx.)'}")
    return "\n".join(lines) + "\n"


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2)
