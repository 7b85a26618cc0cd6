"""Tree ensembles: random forest, AdaBoost (SAMME, two classes) and gradient boosting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .trees import TreeNode, _as_xy, fit_decision_tree, fit_regression_tree, tree_predict, tree_value

ALPHA_CAP = 0.5 * np.log(1e10)


@dataclass
class ForestModel:
    trees: list[TreeNode]
    m_features: int
    bootstrap_seed: int

    def votes(self, x) -> np.ndarray:
        """Fraction of trees voting for class 1, per row."""
        return np.mean([tree_predict(t, x) for t in self.trees], axis=0)

    def predict(self, x) -> np.ndarray:
        # a split vote goes to class 1
        return (self.votes(x) >= 0.5).astype(np.int64)

    def to_dict(self) -> dict:
        return {"m_features": self.m_features, "bootstrap_seed": self.bootstrap_seed,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls([TreeNode.from_dict(t) for t in d["trees"]], d["m_features"], d["bootstrap_seed"])


def fit_random_forest(train, y=None, n_trees: int = 100, m_features: int | None = None, seed: int = 0,
                      max_depth: int | None = None, min_leaf: int = 1, bootstrap: bool = True) -> ForestModel:
    x, y = _as_xy(train, y)
    n, p = x.shape
    if m_features is None:
        m_features = max(1, int(round(np.sqrt(p))))
    if not 1 <= m_features <= p:
        raise ValueError(f"m_features must lie in [1, {p}], got {m_features}")
    if n_trees < 1:
        raise ValueError("a forest needs at least one tree")
    # one independent stream per tree, so trees could be fitted in any order
    streams = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(fit_decision_tree(x[rows], y[rows], max_depth, min_leaf, m_features=m_features, rng=rng))
    return ForestModel(trees, m_features, seed)


@dataclass
class BoostEnsemble:
    kind: str  # "adaboost" or "gradient_boost"
    learners: list[tuple[TreeNode, float]] = field(default_factory=list)
    init_score: float = 0.0
    learning_rate: float = 1.0
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        score = np.full(len(x), self.init_score)
        for tree, weight in self.learners:
            if self.kind == "adaboost":
                score += weight * (2.0 * tree_predict(tree, x) - 1.0)
            else:
                score += weight * tree_value(tree, x)
        return score

    def predict_proba(self, x) -> np.ndarray:
        return expit(self.decision_function(x))

    def predict(self, x) -> np.ndarray:
        return (self.decision_function(x) >= 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "init_score": self.init_score, "learning_rate": self.learning_rate,
                "learners": [{"weight": w, "tree": t.to_dict()} for t, w in self.learners]}

    @classmethod
    def from_dict(cls, d: dict) -> "BoostEnsemble":
        learners = [(TreeNode.from_dict(e["tree"]), e["weight"]) for e in d["learners"]]
        return cls(d["kind"], learners, d["init_score"], d["learning_rate"])


def adaboost_alpha(error: float) -> float:
    """Learner weight 0.5 * ln((1 - e) / e), capped at 0.5 * ln(1e10)."""
    if error <= 0:
        return ALPHA_CAP
    return min(0.5 * np.log((1.0 - error) / error), ALPHA_CAP)


def fit_adaboost(train, y=None, n_rounds: int = 50, base_depth: int = 1, seed: int = 0,
                 record_weights: list | None = None) -> BoostEnsemble:
    """Binary SAMME boosting over depth-limited Gini trees.

    A round with zero weighted error adds its learner at the capped weight and
    ends boosting.  A round with error >= 0.5 is retried once on a
    weight-proportional resample; if that also fails, boosting ends.
    """
    x, y = _as_xy(train, y)
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    n = len(y)
    w = np.full(n, 1.0 / n)
    rng = np.random.default_rng(seed)
    model = BoostEnsemble("adaboost")
    for _ in range(n_rounds):
        tree = fit_decision_tree(x, y, base_depth, sample_weight=w)
        miss = tree_predict(tree, x) != y
        err = float(w[miss].sum())
        if err >= 0.5:
            rows = rng.choice(n, size=n, p=w)
            tree = fit_decision_tree(x[rows], y[rows], base_depth)
            miss = tree_predict(tree, x) != y
            err = float(w[miss].sum())
            if err >= 0.5:
                break
        alpha = adaboost_alpha(err)
        model.learners.append((tree, alpha))
        if err <= 0:
            break
        # correct rows shrink by exp(-alpha), misses grow by exp(alpha)
        w = w * np.exp(-alpha * (1.0 - 2.0 * miss))
        w /= w.sum()
        if record_weights is not None:
            record_weights.append(w.copy())
    if not model.learners:
        # nothing better than chance: fall back to the weighted majority class
        model.init_score = 1.0 if np.sum(w * y) >= 0.5 else -1.0
    return model


def logistic_loss(y, score) -> float:
    # mean of log(1 + exp(-s * f)) with s in {-1, 1}
    s = 2.0 * np.asarray(y, dtype=float) - 1.0
    return float(np.mean(np.logaddexp(0.0, -s * score)))


def fit_gradient_boost(train, y=None, n_rounds: int = 100, learning_rate: float = 0.1,
                       base_depth: int = 3, min_leaf: int = 1) -> BoostEnsemble:
    """Stagewise regression trees on the negative gradient (y - p) of the logistic loss."""
    x, y = _as_xy(train, y)
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    base_rate = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    init = float(np.log(base_rate / (1.0 - base_rate)))
    model = BoostEnsemble("gradient_boost", init_score=init, learning_rate=learning_rate)
    score = np.full(len(y), init)
    model.train_loss.append(logistic_loss(y, score))
    for _ in range(n_rounds):
        residual = y - expit(score)
        tree = fit_regression_tree(x, residual, base_depth, min_leaf)
        model.learners.append((tree, learning_rate))
        score = score + learning_rate * tree_value(tree, x)
        model.train_loss.append(logistic_loss(y, score))
    return model
