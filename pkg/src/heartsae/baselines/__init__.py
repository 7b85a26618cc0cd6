"""Classical classifiers used as the comparison group."""

from dataclasses import dataclass

import numpy as np

from .ensembles import (BoostEnsemble, ForestModel, adaboost_alpha, fit_adaboost, fit_gradient_boost,
                        fit_random_forest, logistic_loss)
from .serialize import from_document, load_model, save_model, to_document
from .neighbors import KNN, GNBModel, euclidean, fit_gnb, gnb_predict, knn_classify, nearest_neighbors
from .trees import DecisionTree, TreeNode, fit_decision_tree, fit_regression_tree, gini, tree_predict, tree_proba

__all__ = [
    "BoostEnsemble", "ForestModel", "GNBModel", "KNN", "DecisionTree", "TreeNode",
    "adaboost_alpha", "euclidean", "fit_adaboost", "fit_decision_tree", "fit_gnb", "fit_gradient_boost",
    "fit_random_forest", "fit_regression_tree", "gini", "gnb_predict", "knn_classify", "logistic_loss",
    "nearest_neighbors", "tree_predict", "tree_proba",
    "from_document", "load_model", "save_model", "to_document",
    "RandomForest", "AdaBoost", "GradientBoost", "GaussianNB", "ConstantClassifier",
]


@dataclass
class RandomForest:
    n_trees: int = 100
    m_features: int | None = None
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0
    model: ForestModel | None = None

    def fit(self, x, y):
        self.model = fit_random_forest(x, y, self.n_trees, self.m_features, self.seed, self.max_depth, self.min_leaf)
        return self

    def predict(self, x):
        return self.model.predict(x)


@dataclass
class AdaBoost:
    n_rounds: int = 50
    base_depth: int = 1
    seed: int = 0
    model: BoostEnsemble | None = None

    def fit(self, x, y):
        self.model = fit_adaboost(x, y, self.n_rounds, self.base_depth, self.seed)
        return self

    def predict(self, x):
        return self.model.predict(x)


@dataclass
class GradientBoost:
    n_rounds: int = 100
    learning_rate: float = 0.1
    base_depth: int = 3
    min_leaf: int = 1
    model: BoostEnsemble | None = None

    def fit(self, x, y):
        self.model = fit_gradient_boost(x, y, self.n_rounds, self.learning_rate, self.base_depth, self.min_leaf)
        return self

    def predict(self, x):
        return self.model.predict(x)


@dataclass
class GaussianNB:
    var_floor: float = 1e-9
    model: GNBModel | None = None

    def fit(self, x, y):
        self.model = fit_gnb(x, y, var_floor=self.var_floor)
        return self

    def predict(self, x):
        return self.model.predict(x)


@dataclass
class ConstantClassifier:
    """Always predicts one label (the training majority unless ``label`` is set)."""

    label: int | None = None
    fitted: int = 1

    def fit(self, x, y):
        y = np.asarray(y)
        self.fitted = self.label if self.label is not None else int(2 * y.sum() >= len(y))
        return self

    def predict(self, x):
        return np.full(len(x), self.fitted, dtype=np.int64)
