"""CART trees: Gini classification trees and squared-error regression trees.

Splits send ``x < threshold`` left and ``x >= threshold`` right.  Candidate
thresholds are midpoints between consecutive distinct values.  Ties between
equally good splits go to the lower feature index, then the lower threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCORE_TOL = 1e-12


@dataclass
class TreeNode:
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    # leaves of a classification tree: (P(y=0), P(y=1)); regression leaves use ``value``
    class_distribution: tuple[float, float] | None = None
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        return 1 if self.is_leaf else self.left.n_leaves() + self.right.n_leaves()

    def to_dict(self) -> dict:
        if self.is_leaf:
            d = {}
            if self.class_distribution is not None:
                d["class_distribution"] = list(self.class_distribution)
            if self.value is not None:
                d["value"] = self.value
            return d
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "feature" not in d:
            dist = d.get("class_distribution")
            return cls(class_distribution=tuple(dist) if dist is not None else None, value=d.get("value"))
        return cls(d["feature"], d["threshold"], cls.from_dict(d["left"]), cls.from_dict(d["right"]))


def gini(weights_by_class) -> float:
    w = np.asarray(weights_by_class, dtype=float)
    total = w.sum()
    if total <= 0:
        return 0.0
    p = w / total
    return float(1.0 - np.sum(p * p))


def _scan_feature(values, stat_cols, min_leaf, score_fn):
    """Best split of one feature.

    ``stat_cols`` holds per-row sufficient statistics; ``score_fn`` turns
    cumulative left/right sums into a child-impurity score (lower is better).
    Returns (score, threshold) or None.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    n = len(v)
    cum = np.cumsum(stat_cols[order], axis=0)
    total = cum[-1]
    # split after position i (left = first i+1 rows)
    pos = np.nonzero(v[:-1] < v[1:])[0]
    pos = pos[(pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)]
    if len(pos) == 0:
        return None
    left = cum[pos]
    right = total - left
    scores = score_fn(left, right)
    best = int(np.nonzero(scores <= scores.min() + SCORE_TOL)[0][0])
    i = pos[best]
    return float(scores[best]), float((v[i] + v[i + 1]) / 2.0)


def _gini_score(left, right):
    # columns: weight of class 0, weight of class 1
    wl = left.sum(axis=1)
    wr = right.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        gl = 1.0 - np.sum((left / wl[:, None]) ** 2, axis=1)
        gr = 1.0 - np.sum((right / wr[:, None]) ** 2, axis=1)
    gl = np.where(wl > 0, gl, 0.0)
    gr = np.where(wr > 0, gr, 0.0)
    return (wl * gl + wr * gr) / (wl + wr)


def _sse_score(left, right):
    # columns: count, sum, sum of squares
    nl, sl, ql = left[:, 0], left[:, 1], left[:, 2]
    nr, sr, qr = right[:, 0], right[:, 1], right[:, 2]
    return (ql - sl * sl / nl) + (qr - sr * sr / nr)


def best_split(x, stat_cols, min_leaf, score_fn, features):
    """(score, feature, threshold) of the best split, or None.

    Scores within ``SCORE_TOL`` of the minimum count as ties; the first
    (feature, threshold) in ascending order wins.
    """
    found = []
    for f in features:
        res = _scan_feature(x[:, f], stat_cols, min_leaf, score_fn)
        if res is not None:
            found.append((res[0], int(f), res[1]))
    if not found:
        return None
    lowest = min(score for score, _, _ in found)
    return next(item for item in found if item[0] <= lowest + SCORE_TOL)


class _TreeBuilder:
    def __init__(self, max_depth, min_leaf, m_features=None, rng=None, task="classify"):
        self.max_depth = max_depth
        self.min_leaf = max(1, int(min_leaf))
        self.m_features = m_features
        self.rng = rng
        self.task = task

    def _features(self, n_features):
        if self.m_features is None or self.m_features >= n_features:
            return range(n_features)
        return np.sort(self.rng.choice(n_features, size=self.m_features, replace=False))

    def _leaf(self, y, w):
        if self.task == "classify":
            total = w.sum()
            p1 = float(np.sum(w * y) / total) if total > 0 else 0.0
            return TreeNode(class_distribution=(1.0 - p1, p1))
        return TreeNode(value=float(np.mean(y)))

    def build(self, x, y, w, depth=0):
        if self.task == "classify":
            w1 = np.sum(w * y)
            pure = w1 <= 0 or w1 >= w.sum()
        else:
            pure = np.ptp(y) == 0
        if pure or (self.max_depth is not None and depth >= self.max_depth) or len(y) < 2 * self.min_leaf:
            return self._leaf(y, w)
        if self.task == "classify":
            stats, score_fn = np.column_stack([w * (1 - y), w * y]), _gini_score
        else:
            stats, score_fn = np.column_stack([np.ones_like(y), y, y * y]), _sse_score
        split = best_split(x, stats, self.min_leaf, score_fn, self._features(x.shape[1]))
        if split is None:
            return self._leaf(y, w)
        _, f, thr = split
        mask = x[:, f] < thr
        return TreeNode(
            feature=f, threshold=thr,
            left=self.build(x[mask], y[mask], w[mask], depth + 1),
            right=self.build(x[~mask], y[~mask], w[~mask], depth + 1),
        )


def _as_xy(train, y=None):
    if y is None:
        return np.asarray(train.values, dtype=float), np.asarray(train.labels, dtype=float)
    return np.asarray(train, dtype=float), np.asarray(y, dtype=float)


def fit_decision_tree(train, y=None, max_depth: int | None = None, min_leaf: int = 1,
                      sample_weight=None, m_features: int | None = None, rng=None) -> TreeNode:
    """Greedy Gini tree.  ``train`` is a FeatureMatrix, or an array with ``y`` given."""
    x, y = _as_xy(train, y)
    if len(y) == 0:
        raise ValueError("cannot fit a tree on an empty training set")
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    return _TreeBuilder(max_depth, min_leaf, m_features, rng).build(x, y, w)


def fit_regression_tree(x, target, max_depth: int | None = None, min_leaf: int = 1) -> TreeNode:
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if len(target) == 0:
        raise ValueError("cannot fit a tree on an empty training set")
    return _TreeBuilder(max_depth, min_leaf, task="regress").build(x, target, np.ones(len(target)))


def _route(node: TreeNode, x, idx, out, leaf_value):
    if node.is_leaf:
        out[idx] = leaf_value(node)
        return
    mask = x[idx, node.feature] < node.threshold
    if mask.any():
        _route(node.left, x, idx[mask], out, leaf_value)
    if (~mask).any():
        _route(node.right, x, idx[~mask], out, leaf_value)


def tree_proba(node: TreeNode, x) -> np.ndarray:
    """P(y=1) per row."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(len(x))
    _route(node, x, np.arange(len(x)), out, lambda n: n.class_distribution[1])
    return out


def tree_predict(node: TreeNode, x) -> np.ndarray:
    return (tree_proba(node, x) >= 0.5).astype(np.int64)


def tree_value(node: TreeNode, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(len(x))
    _route(node, x, np.arange(len(x)), out, lambda n: n.value)
    return out


@dataclass
class DecisionTree:
    """fit/predict wrapper used by the CV harness."""

    max_depth: int | None = None
    min_leaf: int = 1
    root: TreeNode | None = None

    def fit(self, x, y):
        self.root = fit_decision_tree(x, y, self.max_depth, self.min_leaf)
        return self

    def predict(self, x):
        return tree_predict(self.root, x)

    def to_dict(self) -> dict:
        return {"max_depth": self.max_depth, "min_leaf": self.min_leaf, "root": self.root.to_dict()}
