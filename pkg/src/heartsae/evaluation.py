"""Cross-validation protocol, grid search and the group-level significance tests."""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special, stats

from . import baselines
from .data import FeatureMatrix, MinMaxScaler
from .models import MultitaskConfig, NetworkClassifier, multitask_config, vanilla_mlp_config

log = logging.getLogger(__name__)

GROUP_CLASSICAL = "I"
GROUP_PROPOSED = "II"
SIGNIFICANCE = 0.05
LATENT_SWEEP = (50, 100, 150, 200, 250, 300)


class CVError(RuntimeError):
    def __init__(self, message: str, fold: int | None = None, hyperparameters: dict | None = None):
        self.fold = fold
        self.hyperparameters = hyperparameters
        super().__init__(message)


class EmptyGroupError(ValueError):
    pass


# -- folds -------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int
    stratified: bool = False

    @property
    def n_rows(self) -> int:
        return len(self.assignments)

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train rows, test rows) for one fold."""
        test = self.assignments == fold
        return np.flatnonzero(~test), np.flatnonzero(test)

    def fold_seed(self, fold: int) -> int:
        return int(np.random.SeedSequence([self.seed, fold]).generate_state(1)[0])


def kfold_split(n_rows: int, k: int = 10, seed: int = 0, labels=None) -> FoldPlan:
    """Seeded shuffle, then contiguous blocks; the first ``n_rows % k`` folds get one extra row.

    With ``labels`` the split is stratified: rows are shuffled within each
    class and dealt to folds round-robin.
    """
    if not 2 <= k <= n_rows:
        raise ValueError(f"k must lie in [2, n_rows={n_rows}], got {k}")
    rng = np.random.default_rng(seed)
    assignments = np.empty(n_rows, dtype=np.int64)
    if labels is None:
        order = rng.permutation(n_rows)
        sizes = np.full(k, n_rows // k)
        sizes[: n_rows % k] += 1
        assignments[order] = np.repeat(np.arange(k), sizes)
        return FoldPlan(k, assignments, seed)
    labels = np.asarray(labels)
    if len(labels) != n_rows:
        raise ValueError("labels length does not match n_rows")
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    assignments[order] = np.arange(n_rows) % k
    return FoldPlan(k, assignments, seed, stratified=True)


# -- methods -----------------------------------------------------------------

def _network_config(kind: str | None, hp: Mapping, seed: int) -> MultitaskConfig:
    common = {key: hp[key] for key in ("epochs", "batch_size", "lr") if key in hp}
    if kind is None:
        return vanilla_mlp_config(tuple(hp.get("hidden", (64, 32))), seed=seed, **common)
    if kind == "mlp" and "hidden" in hp:
        common["mlp_hidden"] = tuple(hp["hidden"])
    if kind == "cnn":
        common.update({k: hp[k] for k in ("cnn_filters", "head_hidden") if k in hp})
    cfg = multitask_config(kind, int(hp.get("latent_dim", 100)), float(hp.get("l1_lambda", 1e-4)),
                           loss_mix_alpha=float(hp.get("alpha", 0.5)), seed=seed, **common)
    return cfg


def _decision_tree(hp, seed):
    return baselines.DecisionTree(hp.get("max_depth"), hp.get("min_leaf", 1))


def _random_forest(hp, seed):
    return baselines.RandomForest(hp.get("n_trees", 100), hp.get("m_features"), hp.get("max_depth"),
                                  hp.get("min_leaf", 1), seed)


def _knn(hp, seed):
    return baselines.KNN(hp.get("k", 5))


def _adaboost(hp, seed):
    return baselines.AdaBoost(hp.get("n_rounds", 50), hp.get("base_depth", 1), seed)


def _gradient_boost(hp, seed):
    return baselines.GradientBoost(hp.get("n_rounds", 100), hp.get("learning_rate", 0.1),
                                   hp.get("base_depth", 3), hp.get("min_leaf", 1))


def _gnb(hp, seed):
    return baselines.GaussianNB(hp.get("var_floor", 1e-9))


def _mlp(hp, seed):
    return NetworkClassifier(_network_config(None, hp, seed))


def _sae_mlp(hp, seed):
    return NetworkClassifier(_network_config("mlp", hp, seed))


def _sae_cnn(hp, seed):
    return NetworkClassifier(_network_config("cnn", hp, seed))


def _constant(hp, seed):
    return baselines.ConstantClassifier(hp.get("label"))


@dataclass(frozen=True)
class Method:
    name: str
    group: str | None
    build: Callable[[Mapping, int], object]


# builders are module-level functions so work items pickle into worker processes
METHODS: dict[str, Method] = {m.name: m for m in (
    Method("decision_tree", GROUP_CLASSICAL, _decision_tree),
    Method("random_forest", GROUP_CLASSICAL, _random_forest),
    Method("knn", GROUP_CLASSICAL, _knn),
    Method("adaboost", GROUP_CLASSICAL, _adaboost),
    Method("gradient_boost", GROUP_CLASSICAL, _gradient_boost),
    Method("gnb", GROUP_CLASSICAL, _gnb),
    Method("mlp", GROUP_CLASSICAL, _mlp),
    Method("sae_mlp", GROUP_PROPOSED, _sae_mlp),
    Method("sae_cnn", GROUP_PROPOSED, _sae_cnn),
    Method("constant", None, _constant),
)}

BASELINE_METHODS = ("decision_tree", "random_forest", "knn", "adaboost", "gradient_boost", "gnb", "mlp")


def get_method(method: str | Method) -> Method:
    if isinstance(method, Method):
        return method
    try:
        return METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; known: {sorted(METHODS)}") from None


# -- metrics -----------------------------------------------------------------

def accuracy(predictions, labels) -> float:
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("accuracy of an empty prediction set")
    return float(np.mean(p == y))


def precision_recall(predictions, labels) -> tuple[float, float]:
    p = np.asarray(predictions) == 1
    y = np.asarray(labels) == 1
    tp = float(np.sum(p & y))
    precision = tp / p.sum() if p.sum() else 0.0
    recall = tp / y.sum() if y.sum() else 0.0
    return precision, recall


# -- cross-validation --------------------------------------------------------

@dataclass
class CVResult:
    method: str
    hyperparameters: dict
    fold_accuracies: list[float]
    fold_precision: list[float] = field(default_factory=list)
    fold_recall: list[float] = field(default_factory=list)
    group: str | None = None
    fit_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        # plain floats so that repr() and JSON output never leak numpy scalar types
        self.fold_accuracies = [float(v) for v in self.fold_accuracies]
        self.fold_precision = [float(v) for v in self.fold_precision]
        self.fold_recall = [float(v) for v in self.fold_recall]
        self.fit_rows = [int(v) for v in self.fit_rows]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std(self) -> float:
        """Sample standard deviation over folds."""
        if len(self.fold_accuracies) < 2:
            return 0.0
        return float(np.std(self.fold_accuracies, ddof=1))

    def to_dict(self) -> dict:
        return {
            "method": self.method, "group": self.group, "hyperparameters": self.hyperparameters,
            "fold_accuracies": self.fold_accuracies, "fold_precision": self.fold_precision,
            "fold_recall": self.fold_recall, "mean": self.mean, "std": self.std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CVResult":
        return cls(d["method"], d["hyperparameters"], list(d["fold_accuracies"]),
                   list(d.get("fold_precision", [])), list(d.get("fold_recall", [])), d.get("group"))


def _run_fold(method: Method, hp: dict, values, labels, plan: FoldPlan, fold: int, scaler_factory):
    train_idx, test_idx = plan.split(fold)
    scaler = scaler_factory().fit(values[train_idx])
    x_train = scaler.transform(values[train_idx])
    x_test = scaler.transform(values[test_idx])
    est = method.build(hp, plan.fold_seed(fold))
    est.fit(x_train, labels[train_idx])
    pred = est.predict(x_test)
    acc = accuracy(pred, labels[test_idx])
    prec, rec = precision_recall(pred, labels[test_idx])
    return acc, prec, rec, scaler.fitted_rows


def run_cv(method: str | Method, hyperparameters: Mapping, matrix: FeatureMatrix, plan: FoldPlan,
           scaler_factory=MinMaxScaler, n_jobs: int = 1) -> CVResult:
    """Train on k-1 folds, score accuracy on the held-out fold, for every fold.

    ``matrix`` carries unscaled numeric columns; a scaler is fitted on each
    training split and applied to both sides of that split only.
    """
    method = get_method(method)
    hp = dict(hyperparameters)
    if plan.n_rows != matrix.n_rows:
        raise ValueError(f"fold plan covers {plan.n_rows} rows, matrix has {matrix.n_rows}")
    values, labels = matrix.values, matrix.labels
    args = [(method, hp, values, labels, plan, fold, scaler_factory) for fold in range(plan.k)]
    outcomes = []
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            futures = [pool.submit(_run_fold, *a) for a in args]
            for fold, fut in enumerate(futures):
                try:
                    outcomes.append(fut.result())
                except Exception as exc:
                    raise CVError(f"{method.name} failed on fold {fold}: {exc}", fold, hp) from exc
    else:
        for fold, a in enumerate(args):
            try:
                outcomes.append(_run_fold(*a))
            except Exception as exc:
                raise CVError(f"{method.name} failed on fold {fold}: {exc}", fold, hp) from exc
    acc, prec, rec, fit_rows = (list(col) for col in zip(*outcomes))
    return CVResult(method.name, hp, acc, prec, rec, method.group, fit_rows)


# -- grid search -------------------------------------------------------------

def grid_points(grid: Mapping[str, Sequence]) -> list[dict]:
    if not grid:
        return [{}]
    names = list(grid)
    values = [list(grid[n]) for n in names]
    if any(len(v) == 0 for v in values):
        raise ValueError("every grid dimension needs at least one value")
    return [dict(zip(names, combo)) for combo in itertools.product(*values)]


def select_best(results: Sequence[CVResult]) -> CVResult:
    """Highest mean; ties go to the lower SD, then to the earlier result."""
    if not results:
        raise ValueError("no results to choose from")
    return min(enumerate(results), key=lambda ir: (-ir[1].mean, ir[1].std, ir[0]))[1]


def grid_search(method: str | Method, grid: Mapping[str, Sequence], matrix: FeatureMatrix, plan: FoldPlan,
                n_jobs: int = 1, progress: Callable[[CVResult], None] | None = None):
    """Exhaustive search; returns (best result, all results in enumeration order)."""
    results = []
    for hp in grid_points(grid):
        try:
            res = run_cv(method, hp, matrix, plan, n_jobs=n_jobs)
        except CVError as exc:
            exc.hyperparameters = hp
            raise
        results.append(res)
        if progress:
            progress(res)
    return select_best(results), results


# -- statistics --------------------------------------------------------------

@dataclass(frozen=True)
class StatTestResult:
    test: str
    statistic: float
    p_value: float
    df: float | None = None
    note: str = ""

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE

    def to_dict(self) -> dict:
        return {"test": self.test, "statistic": self.statistic, "p_value": self.p_value, "df": self.df,
                "significant": self.significant, "note": self.note}


def ecdf(sample, points) -> np.ndarray:
    s = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(s, points, side="right") / len(s)


def ks_statistic(a, b) -> float:
    """sup |F_a - F_b| by a merge sweep over the pooled sorted values."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    i = j = 0
    d = 0.0
    na, nb = len(a), len(b)
    while i < na and j < nb:
        v = min(a[i], b[j])
        while i < na and a[i] == v:
            i += 1
        while j < nb and b[j] == v:
            j += 1
        d = max(d, abs(i / na - j / nb))
    return d


def ks_two_sample(a, b) -> StatTestResult:
    if len(a) < 1 or len(b) < 1:
        raise ValueError("KS test needs two non-empty samples")
    d = ks_statistic(a, b)
    en = len(a) * len(b) / (len(a) + len(b))
    p = float(np.clip(special.kolmogorov(math.sqrt(en) * d), 0.0, 1.0))
    return StatTestResult("ks_two_sample", d, p)


def ks_normality(a) -> StatTestResult:
    """One-sample KS distance to a normal with the sample's own mean and SD."""
    a = np.sort(np.asarray(a, dtype=float))
    n = len(a)
    if n < 2:
        raise ValueError("normality check needs at least two values")
    sd = a.std(ddof=1)
    if sd == 0:
        return StatTestResult("ks_normality", 1.0, 0.0, note="constant sample")
    cdf = stats.norm.cdf(a, a.mean(), sd)
    d = float(max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n)))
    p = float(np.clip(special.kolmogorov(math.sqrt(n) * d), 0.0, 1.0))
    return StatTestResult("ks_normality", d, p, note="parameters estimated from the sample")


def t_test_independent(a, b, equal_variance: bool = True) -> StatTestResult:
    """Two-sided independent-samples t-test (pooled by default, Welch otherwise)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("t-test needs at least two values per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    name = "t_test_pooled" if equal_variance else "t_test_welch"
    if equal_variance:
        df = float(na + nb - 2)
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        df = float((qa + qb) ** 2 / (qa * qa / (na - 1) + qb * qb / (nb - 1))) if se > 0 else float(na + nb - 2)
    if se == 0:
        if diff == 0:
            return StatTestResult(name, 0.0, 1.0, df, note="zero variance, equal means")
        return StatTestResult(name, math.copysign(math.inf, diff), 0.0, df, note="zero variance, unequal means")
    t = diff / se
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return StatTestResult(name, float(t), p, df)


@dataclass(frozen=True)
class GroupSummary:
    name: str
    n: int
    mean: float
    sd: float
    members: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"group": self.name, "n": self.n, "mean": self.mean, "sd": self.sd, "members": list(self.members)}


@dataclass(frozen=True)
class GroupComparison:
    classical: GroupSummary
    proposed: GroupSummary
    ks: StatTestResult
    ks_normality: dict[str, StatTestResult]
    t_test: StatTestResult
    welch: StatTestResult

    def to_dict(self) -> dict:
        return {
            "group_I": self.classical.to_dict(), "group_II": self.proposed.to_dict(),
            "ks_two_sample": self.ks.to_dict(), "t_test": self.t_test.to_dict(), "welch": self.welch.to_dict(),
            "ks_normality": {k: v.to_dict() for k, v in self.ks_normality.items()},
        }


def result_label(res: CVResult) -> str:
    latent = res.hyperparameters.get("latent_dim")
    return f"{res.method}@{latent}" if latent is not None else res.method


def group_compare(results: Sequence[CVResult]) -> GroupComparison:
    """Compare the best-mean accuracies (in percent) of group I against group II.

    Group II is tested first in every statistic, so a positive t means the
    proposed networks score higher.
    """
    groups = {GROUP_CLASSICAL: [], GROUP_PROPOSED: []}
    for res in results:
        if res.group not in groups:
            raise ValueError(f"result {res.method!r} is not tagged with group I or II")
        groups[res.group].append(res)
    for name, members in groups.items():
        if not members:
            raise EmptyGroupError(f"group {name} has no results")

    def summarize(name):
        acc = np.array([100.0 * r.mean for r in groups[name]])
        sd = float(acc.std(ddof=1)) if len(acc) > 1 else 0.0
        return acc, GroupSummary(name, len(acc), float(acc.mean()), sd, tuple(result_label(r) for r in groups[name]))

    a1, s1 = summarize(GROUP_CLASSICAL)
    a2, s2 = summarize(GROUP_PROPOSED)
    if min(len(a1), len(a2)) < 2:
        raise ValueError("each group needs at least two results for the t-test")
    return GroupComparison(
        classical=s1, proposed=s2,
        ks=ks_two_sample(a2, a1),
        ks_normality={GROUP_CLASSICAL: ks_normality(a1), GROUP_PROPOSED: ks_normality(a2)},
        t_test=t_test_independent(a2, a1, equal_variance=True),
        welch=t_test_independent(a2, a1, equal_variance=False),
    )
