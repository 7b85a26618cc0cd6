"""k-nearest neighbours and Gaussian naive Bayes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .trees import _as_xy

VARIANCE_FLOOR = 1e-9


def euclidean(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def nearest_neighbors(x_train, query, k: int) -> np.ndarray:
    """Row indices of the k nearest training rows; distance ties go to the lower index."""
    d2 = np.sum((np.asarray(x_train, dtype=float) - np.asarray(query, dtype=float)) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[:k]


def _vote(labels, neighbor_rows) -> int:
    # majority class; a tied vote goes to the class holding the lowest row index
    counts = np.bincount(labels.astype(np.int64), minlength=2)
    top = np.flatnonzero(counts == counts.max())
    if len(top) == 1:
        return int(top[0])
    tied = np.isin(labels, top)
    return int(labels[np.argmin(np.where(tied, neighbor_rows, np.iinfo(np.int64).max))])


def knn_classify(train, query, k: int, y=None) -> int:
    x, y = _as_xy(train, y)
    if len(y) == 0:
        raise ValueError("kNN needs a non-empty training set")
    if not 1 <= k <= len(y):
        raise ValueError(f"k must lie in [1, {len(y)}], got {k}")
    rows = nearest_neighbors(x, query, k)
    return _vote(y[rows], rows)


@dataclass
class KNN:
    k: int = 5
    x: np.ndarray | None = None
    y: np.ndarray | None = None

    def fit(self, x, y):
        self.x, self.y = _as_xy(x, y)
        if not 1 <= self.k <= len(self.y):
            raise ValueError(f"k must lie in [1, {len(self.y)}], got {self.k}")
        return self

    def predict(self, queries) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        # direct differences rather than the |a|^2 - 2ab + |b|^2 expansion, which blurs exact ties
        d2 = np.sum((q[:, None, :] - self.x[None, :, :]) ** 2, axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
        return np.array([_vote(self.y[rows], rows) for rows in order], dtype=np.int64)


@dataclass
class GNBModel:
    classes: np.ndarray
    priors: np.ndarray
    means: np.ndarray      # (n_classes, n_features)
    variances: np.ndarray  # (n_classes, n_features)

    def joint_log_likelihood(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ll = -0.5 * (np.log(2.0 * np.pi * self.variances)[None, :, :]
                     + (x[:, None, :] - self.means[None, :, :]) ** 2 / self.variances[None, :, :])
        return np.log(self.priors)[None, :] + ll.sum(axis=2)

    def log_posterior(self, x) -> np.ndarray:
        jll = self.joint_log_likelihood(x)
        return jll - logsumexp(jll, axis=1, keepdims=True)

    def predict(self, x) -> np.ndarray:
        return self.classes[np.argmax(self.joint_log_likelihood(x), axis=1)].astype(np.int64)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("classes", "priors", "means", "variances")}

    @classmethod
    def from_dict(cls, d: dict) -> "GNBModel":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("classes", "priors", "means", "variances")))


def fit_gnb(train, y=None, classes=(0, 1), var_floor: float = VARIANCE_FLOOR) -> GNBModel:
    x, y = _as_xy(train, y)
    priors, means, variances = [], [], []
    for c in classes:
        rows = x[y == c]
        if len(rows) == 0:
            raise ValueError(f"class {c} has no training rows")
        priors.append(len(rows) / len(y))
        means.append(rows.mean(axis=0))
        variances.append(np.maximum(rows.var(axis=0), var_floor))
    return GNBModel(np.asarray(classes), np.asarray(priors), np.asarray(means), np.asarray(variances))


def gnb_predict(model: GNBModel, query) -> int:
    return int(model.predict(query)[0])
