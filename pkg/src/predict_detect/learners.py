"""Base learners: linear SVM, ANOVA ranking, feature splitting and subspace ensembles."""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._sgd import hinge_sgd, visiting_order
from .dataio import LEGITIMATE, MALICIOUS, Dataset

BLANK_VALUE = 0.0
# Score for a feature with zero within-class spread but distinct class means.
F_SENTINEL = 1e12


def _check_binary(y):
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"both classes are required for training, got {classes.tolist()}")


def _fit_linear(X, y, masks, penalty, C, epochs, rng):
    n = X.shape[0]
    order = visiting_order(n, masks.shape[0], epochs, rng)
    lam = 1.0 / (C * n)
    W = np.zeros(masks.shape, dtype=float)
    b = np.zeros(masks.shape[0], dtype=float)
    y_pm = np.where(np.asarray(y) == MALICIOUS, 1.0, -1.0)
    hinge_sgd(np.ascontiguousarray(X, dtype=float), y_pm, masks, order, lam,
              penalty == "l1", W, b)
    return W, b


class LinearSVM(ClassifierMixin, BaseEstimator):
    """Hinge-loss linear classifier fit by deterministic stochastic subgradient descent.

    Parameters
    ----------
    penalty : {"l1", "l2"}
        L1 uses truncated-gradient shrinkage, L2 uses weight decay.
    C : float
        Regularisation constant; the per-sample strength is ``1 / (C * n)``.
    epochs : int
        Number of shuffled passes over the data.
    random_state : int
        Seed for the per-epoch shuffles.

    A decision value of exactly zero predicts Legitimate (0).
    """

    def __init__(self, penalty="l1", C=1.0, epochs=20, random_state=0):
        self.penalty = penalty
        self.C = C
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        _check_binary(y)
        if self.penalty not in ("l1", "l2"):
            raise ValueError(f"penalty must be 'l1' or 'l2', got {self.penalty!r}")
        rng = np.random.default_rng(self.random_state)
        masks = np.ones((1, X.shape[1]), dtype=np.bool_)
        W, b = _fit_linear(X, y, masks, self.penalty, self.C, self.epochs, rng)
        self.coef_ = W[0]
        self.intercept_ = float(b[0])
        self.classes_ = np.array([LEGITIMATE, MALICIOUS])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int64)


def train_linear(data: Dataset, penalty="l1", reg_constant=1.0, epochs=20, rng_seed=0):
    return LinearSVM(penalty, reg_constant, epochs, rng_seed).fit(data.X, data.y)


# -- feature ranking and splitting -------------------------------------------------

@dataclass(frozen=True)
class FeatureRanking:
    scores: np.ndarray
    order: np.ndarray


def anova_f(X, y):
    """One-way ANOVA F statistic of each column between the two classes."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    groups = [X[y == c] for c in (LEGITIMATE, MALICIOUS)]
    if any(len(g) < 2 for g in groups):
        raise ValueError("ANOVA ranking needs at least two samples of each class")
    n = X.shape[0]
    grand = X.mean(axis=0)
    ss_between = sum(len(g) * (g.mean(axis=0) - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean(axis=0)) ** 2).sum(axis=0) for g in groups)
    ms_between = ss_between / (len(groups) - 1)
    ms_within = ss_within / (n - len(groups))
    # absorb floating residue so identical columns give exactly 0
    tiny = 1e-12 * np.maximum(1.0, np.abs(grand)) ** 2
    ms_between = np.where(ms_between <= tiny, 0.0, ms_between)
    ms_within = np.where(ms_within <= tiny, 0.0, ms_within)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ms_between / ms_within
    f = np.where(ms_within == 0, np.where(ms_between > 0, F_SENTINEL, 0.0), f)
    return f


def rank_features(data: Dataset) -> FeatureRanking:
    """Rank features by descending F value; ties keep ascending index order."""
    scores = anova_f(data.X, data.y)
    order = np.lexsort((np.arange(scores.size), -scores))
    return FeatureRanking(scores, order)


@dataclass(frozen=True)
class FeatureSplit:
    subsets: tuple

    def __post_init__(self):
        object.__setattr__(self, "subsets",
                           tuple(tuple(sorted(int(j) for j in s)) for s in self.subsets))

    @property
    def n_features(self):
        return sum(len(s) for s in self.subsets)

    def mask(self, i, n_features=None):
        m = np.zeros(n_features or self.n_features, dtype=bool)
        m[list(self.subsets[i])] = True
        return m

    def to_text(self):
        return "\n".join(" ".join(str(j) for j in s) for s in self.subsets) + "\n"

    @classmethod
    def from_text(cls, text):
        return cls(tuple(tuple(int(t) for t in line.split()) for line in text.splitlines()))


def split_round_robin(order, n_splits=2, hidden_fraction=None) -> FeatureSplit:
    """Deal ranked features out to ``n_splits`` subsets.

    With ``hidden_fraction`` below ``1 / n_splits`` (two splits only), rank
    ``i`` joins the detection subset (index 1) iff
    ``floor((i + 1) * h) > floor(i * h)``, which spreads the hidden features
    across the importance spectrum.
    """
    if isinstance(order, FeatureRanking):
        order = order.order
    order = [int(j) for j in order]
    k = len(order)
    if n_splits < 2:
        raise ValueError("n_splits must be >= 2")
    if k < n_splits:
        raise ValueError(f"cannot split {k} features into {n_splits} subsets")
    subsets = [[] for _ in range(n_splits)]
    equal = hidden_fraction is None or np.isclose(hidden_fraction, 1.0 / n_splits)
    if equal:
        for i, feat in enumerate(order):
            subsets[i % n_splits].append(feat)
    else:
        h = float(hidden_fraction)
        if n_splits != 2 or not 0 < h < 0.5:
            raise ValueError("unequal splitting needs n_splits=2 and 0 < hidden_fraction < 0.5")
        for i, feat in enumerate(order):
            hidden = np.floor((i + 1) * h) > np.floor(i * h)
            subsets[1 if hidden else 0].append(feat)
        if not subsets[1]:
            subsets[1].append(subsets[0].pop())
    return FeatureSplit(tuple(subsets))


def blank_out(X, keep, default_value=BLANK_VALUE):
    """Copy of ``X`` with every column outside ``keep`` set to ``default_value``."""
    X = np.array(X, dtype=float, copy=True)
    drop = np.ones(X.shape[1], dtype=bool)
    drop[list(keep)] = False
    X[:, drop] = default_value
    return X


# -- random subspace ensemble -------------------------------------------------------

class SubspaceEnsemble(ClassifierMixin, BaseEstimator):
    """Majority vote of linear SVMs, each trained on a random feature subset.

    Every member sees full-width inputs: features outside its subset are
    blanked before training, so their weights stay exactly zero.
    ``feature_pool`` restricts the subsets to a given set of columns (used
    by the split models, whose pool is their own side of the split).

    A sample is in the margin when ``|frac_malicious - frac_legit|`` is
    strictly below ``margin_threshold``. Vote ties predict Legitimate.
    """

    def __init__(self, n_members=50, feature_fraction=0.5, penalty="l1", C=1.0,
                 epochs=20, margin_threshold=0.5, feature_pool=None, random_state=0):
        self.n_members = n_members
        self.feature_fraction = feature_fraction
        self.penalty = penalty
        self.C = C
        self.epochs = epochs
        self.margin_threshold = margin_threshold
        self.feature_pool = feature_pool
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        _check_binary(y)
        k = X.shape[1]
        pool = np.arange(k) if self.feature_pool is None else np.asarray(
            sorted(self.feature_pool), dtype=int)
        if pool.size == 0:
            raise ValueError("empty feature pool")
        size = max(1, int(np.floor(self.feature_fraction * pool.size)))
        rng = np.random.default_rng(self.random_state)
        masks = np.zeros((self.n_members, k), dtype=np.bool_)
        for m in range(self.n_members):
            masks[m, rng.choice(pool, size=size, replace=False)] = True
        X_blank = X.copy()
        if self.feature_pool is not None:
            X_blank = blank_out(X_blank, pool)
        # per-member blanking is implicit: masked weights are never updated, which
        # equals zero-filling those columns, so members share one data copy
        W, b = _fit_linear(X_blank, y, masks, self.penalty, self.C, self.epochs, rng)
        self.masks_ = masks
        self.coef_ = W
        self.intercept_ = b
        self.classes_ = np.array([LEGITIMATE, MALICIOUS])
        self.n_features_in_ = k
        return self

    @property
    def subsets_(self):
        return [np.flatnonzero(m) for m in self.masks_]

    def malicious_fraction(self, X):
        check_is_fitted(self, "coef_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return ((X @ self.coef_.T + self.intercept_) > 0).mean(axis=1)

    def predict(self, X):
        return (self.malicious_fraction(X) > 0.5).astype(np.int64)

    def confidence(self, X):
        f = self.malicious_fraction(X)
        return np.maximum(f, 1.0 - f)

    def in_margin(self, X, margin_threshold=None):
        thr = self.margin_threshold if margin_threshold is None else margin_threshold
        f = self.malicious_fraction(X)
        return np.abs(f - (1.0 - f)) < thr

    def predict_one(self, x):
        """``(label, confidence, in_margin)`` for a single sample."""
        f = float(self.malicious_fraction(x)[0])
        label = MALICIOUS if f > 0.5 else LEGITIMATE
        return label, max(f, 1.0 - f), abs(2.0 * f - 1.0) < self.margin_threshold

    def to_text(self):
        lines = []
        for mask, w, b in zip(self.masks_, self.coef_, self.intercept_):
            idx = ",".join(str(j) for j in np.flatnonzero(mask))
            lines.append(" ".join([idx, f"{b:.12g}"] + [f"{v:.12g}" for v in w]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, margin_threshold=0.5):
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        k = len(rows[0]) - 2
        ens = cls(n_members=len(rows), margin_threshold=margin_threshold)
        ens.masks_ = np.zeros((len(rows), k), dtype=bool)
        for m, r in enumerate(rows):
            if r[0]:
                ens.masks_[m, [int(j) for j in r[0].split(",")]] = True
        ens.intercept_ = np.array([float(r[1]) for r in rows])
        ens.coef_ = np.array([[float(v) for v in r[2:]] for r in rows])
        ens.classes_ = np.array([LEGITIMATE, MALICIOUS])
        ens.n_features_in_ = k
        return ens


def train_subspace_ensemble(data: Dataset, n_members=50, feature_fraction=0.5, penalty="l1",
                            reg_constant=1.0, margin_threshold=0.5, rng_seed=0, epochs=20,
                            feature_pool=None) -> SubspaceEnsemble:
    if data.dim * feature_fraction < 1 and feature_pool is None:
        raise ValueError("feature_fraction leaves members with no features")
    ens = SubspaceEnsemble(n_members, feature_fraction, penalty, reg_constant, epochs,
                           margin_threshold, feature_pool, rng_seed)
    return ens.fit(data.X, data.y)


# -- split models --------------------------------------------------------------------

class SplitModels(ClassifierMixin, BaseEstimator):
    """Feature-split model generation: rank, deal round robin, train one model per subset.

    ``models_[0]`` is the forward-facing prediction model, ``models_[1]``
    the hidden detection model. Passing ``split`` skips ranking and reuses
    the given partition.
    """

    def __init__(self, base_estimator=None, n_splits=2, hidden_fraction=None, split=None,
                 random_state=0):
        self.base_estimator = base_estimator
        self.n_splits = n_splits
        self.hidden_fraction = hidden_fraction
        self.split = split
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        _check_binary(y)
        if self.split is None:
            ranking = rank_features(Dataset(X, y))
            self.split_ = split_round_robin(ranking, self.n_splits, self.hidden_fraction)
        else:
            self.split_ = self.split
        base = self.base_estimator if self.base_estimator is not None else SubspaceEnsemble()
        seeds = np.random.SeedSequence(self.random_state).generate_state(len(self.split_.subsets))
        self.models_ = []
        for i, subset in enumerate(self.split_.subsets):
            model = clone(base)
            params = {"random_state": int(seeds[i])}
            if "feature_pool" in model.get_params():
                params["feature_pool"] = tuple(subset)
            model.set_params(**params)
            model.fit(blank_out(X, subset), y)
            self.models_.append(model)
        self.classes_ = np.array([LEGITIMATE, MALICIOUS])
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def prediction_model(self):
        return self.models_[0]

    @property
    def detection_model(self):
        return self.models_[1]

    def predict(self, X):
        return self.prediction_model.predict(X)

    def disagreement(self, X):
        return self.models_[0].predict(X) != self.models_[1].predict(X)


# -- K-way split analysis ------------------------------------------------------------

def _cv_accuracy(X, y, keep, folds, penalty, C, epochs, seed):
    correct = 0
    for test in folds:
        train = np.setdiff1d(np.arange(len(y)), test)
        if np.unique(y[train]).size < 2:
            correct += np.sum(y[test] == np.bincount(y[train]).argmax())
            continue
        model = LinearSVM(penalty, C, epochs, seed).fit(blank_out(X[train], keep), y[train])
        correct += np.sum(model.predict(blank_out(X[test], keep)) == y[test])
    return correct / len(y)


def max_splits_within_tolerance(data: Dataset, max_k=10, tolerance=0.05, n_folds=10,
                                penalty="l1", reg_constant=1.0, epochs=20, rng_seed=0):
    """Largest K whose worst split stays within ``tolerance`` of the monolithic model.

    Returns ``(K, accuracies)`` where ``accuracies[K]`` lists the 10-fold CV
    accuracy of each of the K round-robin split models (K=1 is the
    monolithic model).
    """
    if max_k < 2:
        raise ValueError("max_k must be >= 2")
    X, y = data.X, data.y
    perm = np.random.default_rng(rng_seed).permutation(len(y))
    folds = np.array_split(perm, min(n_folds, len(y)))
    ranking = rank_features(data)
    accuracies = {1: [_cv_accuracy(X, y, range(data.dim), folds, penalty, reg_constant,
                                   epochs, rng_seed)]}
    best = 1
    for k in range(2, min(max_k, data.dim) + 1):
        split = split_round_robin(ranking, k)
        accuracies[k] = [_cv_accuracy(X, y, s, folds, penalty, reg_constant, epochs, rng_seed)
                         for s in split.subsets]
        if min(accuracies[k]) >= accuracies[1][0] - tolerance - 1e-12:
            best = k
    return best, accuracies


def save_ensemble(path, ens: SubspaceEnsemble):
    Path(path).write_text(ens.to_text())
