"""Least-squares gradient boosting over small best-first regression trees."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = "rlcmtr-gbm/1"

# Splits whose SSE reduction is below this fraction of the node's sum of
# squares are treated as noise (keeps constant targets at a single leaf).
_MIN_RELATIVE_GAIN = 1e-14


@dataclass(frozen=True)
class GbmConfig:
    iterations: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 4
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")

    def replace(self, **changes) -> "GbmConfig":
        d = self.__dict__.copy()
        d.update(changes)
        return GbmConfig(**d)


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Binary tree in flat-array form.

    Node 0 is the root.  For a leaf, ``feature`` is -1 and ``left``/``right``
    point back at the node itself, which lets batch routing run a fixed number
    of steps.  Routing sends ``x`` left iff ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("threshold", np.float64),
                            ("left", np.int64), ("right", np.int64), ("value", np.float64)):
            a = np.array(getattr(self, name), dtype=dtype)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Index of the leaf reached by each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.depth):
            f = self.feature[node]
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(go_left, self.left[node], self.right[node])
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_records(self) -> list[dict]:
        return [
            {"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
             "left": int(self.left[i]), "right": int(self.right[i]),
             "value": float(self.value[i])}
            for i in range(self.n_nodes)
        ]

    @classmethod
    def from_records(cls, records: list[dict]) -> "RegressionTree":
        return cls(*(np.array([r[k] for r in records])
                     for k in ("feature", "threshold", "left", "right", "value")))

    def __eq__(self, other):
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("feature", "threshold", "left", "right", "value"))


def leaf_tree(value: float) -> RegressionTree:
    return RegressionTree([-1], [0.0], [0], [0], [value])


# ---------------------------------------------------------------------------
# Tree growth
# ---------------------------------------------------------------------------

def _best_split(Xt, y, orders, min_leaf):
    """Best (gain, feature, threshold) for the rows listed in ``orders``.

    ``orders`` is p x n: the node's rows sorted by each feature.  Returns None
    when no admissible split exists.
    """
    p, n = orders.shape
    if n < 2 * min_leaf:
        return None
    xs = np.take_along_axis(Xt, orders, axis=1)
    ys = y[orders]
    centred = ys - ys[0].mean()
    left_sum = np.cumsum(centred, axis=1)[:, :-1]
    total = left_sum[:, -1:] + centred[:, -1:]
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    right_sum = total - left_sum
    gain = left_sum ** 2 / n_left + right_sum ** 2 / n_right - total ** 2 / n
    valid = xs[:, :-1] < xs[:, 1:]
    if min_leaf > 1:
        valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    # row-major argmax: lowest feature index, then lowest threshold
    flat = int(np.argmax(gain))
    f, i = divmod(flat, n - 1)
    best = gain[f, i]
    if not np.isfinite(best) or best <= _MIN_RELATIVE_GAIN * float(np.dot(ys[0], ys[0])):
        return None
    lo, hi = xs[f, i], xs[f, i + 1]
    threshold = 0.5 * (lo + hi)
    if not lo <= threshold < hi:
        threshold = lo
    return float(best), f, float(threshold)


def _grow_tree(X, Xt, y, orders, max_leaves, min_leaf):
    """Grow a best-first tree; returns the tree and its fitted training values."""
    m = X.shape[0]
    feature, threshold, left, right, value = [-1], [0.0], [0], [0], [0.0]
    # each open leaf: node id, sorted orders, best split (or None)
    leaves = [[0, orders, None]]
    if max_leaves > 1:
        leaves[0][2] = _best_split(Xt, y, orders, min_leaf)
    n_leaves = 1
    while n_leaves < max_leaves:
        best_pos, best_gain = -1, -np.inf
        for pos, (_, _, split) in enumerate(leaves):
            if split is not None and split[0] > best_gain:
                best_pos, best_gain = pos, split[0]
        if best_pos < 0:
            break
        node, node_orders, (_, f, thr) = leaves.pop(best_pos)
        rows = node_orders[0]
        go_left = np.zeros(m, dtype=bool)
        go_left[rows[X[rows, f] <= thr]] = True
        in_left = go_left[node_orders]
        p = node_orders.shape[0]
        left_orders = node_orders[in_left].reshape(p, -1)
        right_orders = node_orders[~in_left].reshape(p, -1)
        n_leaves += 1
        children = []
        for child_orders in (left_orders, right_orders):
            cid = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(cid)
            right.append(cid)
            value.append(0.0)
            split = (_best_split(Xt, y, child_orders, min_leaf)
                     if n_leaves < max_leaves else None)
            children.append([cid, child_orders, split])
        feature[node], threshold[node] = f, thr
        left[node], right[node] = children[0][0], children[1][0]
        # keep creation order so equal gains resolve to the earlier node
        leaves.extend(children)
        leaves.sort(key=lambda leaf: leaf[0])
    fitted = np.empty(m, dtype=np.float64)
    for node, node_orders, _ in leaves:
        rows = node_orders[0]
        v = float(y[rows].mean())
        value[node] = v
        fitted[rows] = v
    return RegressionTree(feature, threshold, left, right, value), fitted


def _presort(X):
    return np.argsort(X, axis=0, kind="stable").T.copy()


def fit_regression_tree(X, target, max_leaves: int = 4, min_leaf: int = 1) -> RegressionTree:
    """Fit a least-squares regression tree with at most ``max_leaves`` leaves.

    The leaf whose best split gives the largest SSE reduction is expanded
    first.  Thresholds are midpoints between consecutive distinct values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(target, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ValueError("X and target must have the same, non-zero number of rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("target contains non-finite values")
    tree, _ = _grow_tree(X, np.ascontiguousarray(X.T), y, _presort(X), max_leaves, min_leaf)
    return tree


def predict_tree(tree: RegressionTree, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(tree.predict(x.reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Boosting
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GbmModel:
    """Intercept plus shrunken sum of regression trees."""

    intercept: float
    trees: tuple[RegressionTree, ...]
    learning_rate: float
    iterations: int
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "intercept", float(self.intercept))

    def _pack(self):
        if self._packed is None:
            width = max(t.n_nodes for t in self.trees)
            T = len(self.trees)
            feat = np.full((T, width), -1, dtype=np.int64)
            thr = np.zeros((T, width))
            lft = np.tile(np.arange(width), (T, 1))
            rgt = lft.copy()
            val = np.zeros((T, width))
            for i, t in enumerate(self.trees):
                n = t.n_nodes
                feat[i, :n], thr[i, :n] = t.feature, t.threshold
                lft[i, :n], rgt[i, :n], val[i, :n] = t.left, t.right, t.value
            depth = max(t.depth for t in self.trees)
            object.__setattr__(self, "_packed", (feat, thr, lft, rgt, val, depth))
        return self._packed

    def tree_outputs(self, X) -> np.ndarray:
        """Matrix of raw tree outputs, shape (n_trees, n_rows)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.trees:
            return np.zeros((0, X.shape[0]))
        feat, thr, lft, rgt, val, depth = self._pack()
        T = feat.shape[0]
        tix = np.arange(T)[:, None]
        node = np.zeros((T, X.shape[0]), dtype=np.int64)
        cols = np.arange(X.shape[0])[None, :]
        for _ in range(depth):
            f = feat[tix, node]
            go_left = X[cols, np.maximum(f, 0)] <= thr[tix, node]
            node = np.where(go_left, lft[tix, node], rgt[tix, node])
        return val[tix, node]

    def predict(self, X) -> np.ndarray:
        out = self.tree_outputs(X)
        return self.intercept + self.learning_rate * out.sum(axis=0)

    def staged_predict(self, X):
        """Predictions after 0, 1, ..., len(trees) trees."""
        out = self.tree_outputs(X)
        base = np.full(out.shape[1], self.intercept)
        yield base
        acc = np.zeros(out.shape[1])
        for row in out:
            acc += row
            yield self.intercept + self.learning_rate * acc

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_VERSION,
            "intercept": self.intercept,
            "learning_rate": self.learning_rate,
            "iterations": self.iterations,
            "trees": [t.to_records() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbmModel":
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        return cls(d["intercept"], tuple(RegressionTree.from_records(r) for r in d["trees"]),
                   d["learning_rate"], d["iterations"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "GbmModel":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, GbmModel):
            return NotImplemented
        return (self.intercept == other.intercept and self.learning_rate == other.learning_rate
                and self.iterations == other.iterations and self.trees == other.trees)


def fit_gbm(X, y, config: GbmConfig = GbmConfig(), sorted_index=None) -> GbmModel:
    """Squared-loss gradient boosting.

    Starts from the training mean and, at every iteration, fits a tree to the
    current residuals and adds it scaled by the learning rate.  Passing a
    precomputed ``sorted_index`` (``argsort(X, axis=0).T``) lets several fits
    over the same inputs share the sort.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise ValueError("X and y must have the same, non-zero number of rows")
    Xt = np.ascontiguousarray(X.T)
    orders = _presort(X) if sorted_index is None else sorted_index
    intercept = float(y.mean())
    F = np.full(y.shape[0], intercept)
    trees = []
    for _ in range(config.iterations):
        residual = y - F
        tree, fitted = _grow_tree(X, Xt, residual, orders, config.max_leaves, config.min_leaf)
        trees.append(tree)
        F += config.learning_rate * fitted
    return GbmModel(intercept, tuple(trees), config.learning_rate, config.iterations)


def predict_gbm(model: GbmModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(model.predict(x.reshape(1, -1))[0])
