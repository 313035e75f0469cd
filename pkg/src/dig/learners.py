"""Built-in binary classifiers written directly on numpy.

Every learner predicts labels in {-1, +1}, is deterministic given its seed
and serializes to a plain JSON-compatible dict (no pickles).
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

MODEL_FORMAT_VERSION = 1


class Classifier:
    """Model-agnostic classifier contract: ``predict`` maps a point matrix to
    labels in {-1, +1}. Nothing else about the model is assumed."""

    name: str = "classifier"
    kind: str = "custom"
    n_features: Optional[int] = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} cannot be serialized")

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class FunctionClassifier(Classifier):
    """Wraps any callable returning labels; used to plug external models."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "function",
                 n_features: Optional[int] = None):
        self.fn = fn
        self.name = name
        self.n_features = n_features

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            return np.empty(0, dtype=np.int8)
        return np.where(np.asarray(self.fn(X)) > 0, 1, -1).astype(np.int8)


class ThresholdClassifier(Classifier):
    """Axis-aligned step: +1 when ``x[feature] > threshold`` (or ``>=`` when
    ``inclusive``), else -1."""

    kind = "threshold"

    def __init__(self, threshold: float, feature: int = 0, inclusive: bool = False,
                 name: Optional[str] = None, n_features: Optional[int] = None):
        self.threshold = float(threshold)
        self.feature = int(feature)
        self.inclusive = bool(inclusive)
        self.name = name or f"threshold[x{feature}{'>=' if inclusive else '>'}{threshold:g}]"
        self.n_features = n_features

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        col = X[:, self.feature]
        above = col >= self.threshold if self.inclusive else col > self.threshold
        return np.where(above, 1, -1).astype(np.int8)

    def params(self):
        return {"threshold": self.threshold, "feature": self.feature, "inclusive": self.inclusive}

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "n_features": self.n_features,
                "params": self.params()}


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or len(X) != len(y) or len(X) == 0:
        raise ValueError("X must be a nonempty 2-d matrix matching y")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (-1, 1))):
        raise ValueError("labels must be in {-1, +1}")
    if len(classes) < 2:
        raise ValueError("degenerate training data: a single class")
    return X, y


class _Fitted(Classifier):
    def _check_predict(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def to_dict(self):
        return {"kind": self.kind, "name": self.name, "n_features": self.n_features,
                "params": self.params(), "state": self._state()}


# --------------------------------------------------------------------------
# CART


def _best_split(X, yp, features, min_leaf):
    """Best Gini split over ``features``. ``yp`` is a 0/1 array (1 for +1).
    Returns (feature, threshold, impurity decrease) or None."""
    n = len(yp)
    total_pos = yp.sum()
    parent = 1.0 - (total_pos / n) ** 2 - (1 - total_pos / n) ** 2
    best = None
    best_imp = parent - 1e-12
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(yp[order])[:-1]
        nl = np.arange(1, n)
        nr = n - nl
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        pl = cum / nl
        pr = (total_pos - cum) / nr
        imp = (nl * 2 * pl * (1 - pl) + nr * 2 * pr * (1 - pr)) / n
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        if imp[i] < best_imp:
            best_imp = imp[i]
            best = (int(f), 0.5 * (xs[i] + xs[i + 1]), parent - imp[i])
    return best


class DecisionTree(_Fitted):
    """CART tree with Gini impurity. Nodes are stored in flat arrays:
    ``feature`` is -1 at leaves, where ``value`` holds the label."""

    kind = "decision_tree"

    def __init__(self, max_depth: int = 6, min_samples_leaf: int = 1,
                 max_features: Optional[int | str] = None, seed: int = 0,
                 name: Optional[str] = None):
        if int(max_depth) < 1:
            raise ValueError("max_depth must be >= 1")
        if int(min_samples_leaf) < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        self.max_depth = int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.max_features = max_features
        self.seed = int(seed)
        self.name = name or f"decision_tree(depth={self.max_depth})"

    def _n_candidates(self, n):
        mf = self.max_features
        if mf is None:
            return n
        if mf == "sqrt":
            return max(1, int(np.sqrt(n)))
        mf = int(mf)
        if mf < 1:
            raise ValueError("max_features must be >= 1")
        return min(n, mf)

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        rng = np.random.default_rng(self.seed)
        n_cand = self._n_candidates(self.n_features)
        feature, threshold, left, right, value = [], [], [], [], []

        def leaf(yp):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            # ties go to +1
            value.append(1 if 2 * yp.sum() >= len(yp) else -1)
            return len(feature) - 1

        yp_all = (y == 1).astype(float)
        stack = [(np.arange(len(y)), 0, None, None)]
        while stack:
            idx, depth, parent, side = stack.pop()
            yp = yp_all[idx]
            split_ = None
            if depth < self.max_depth and 0 < yp.sum() < len(yp) and len(idx) >= 2 * self.min_samples_leaf:
                if n_cand < self.n_features:
                    feats = np.sort(rng.choice(self.n_features, n_cand, replace=False))
                else:
                    feats = np.arange(self.n_features)
                split_ = _best_split(X[idx], yp, feats, self.min_samples_leaf)
            if split_ is None:
                node = leaf(yp)
            else:
                f, t, _ = split_
                feature.append(f)
                threshold.append(t)
                left.append(-1)
                right.append(-1)
                value.append(0)
                node = len(feature) - 1
                mask = X[idx, f] <= t
                # right pushed first so the left subtree is numbered first
                stack.append((idx[~mask], depth + 1, node, "r"))
                stack.append((idx[mask], depth + 1, node, "l"))
            if parent is not None:
                (left if side == "l" else right)[parent] = node
        self.feature_ = np.asarray(feature, dtype=np.int64)
        self.threshold_ = np.asarray(threshold, dtype=float)
        self.left_ = np.asarray(left, dtype=np.int64)
        self.right_ = np.asarray(right, dtype=np.int64)
        self.value_ = np.asarray(value, dtype=np.int8)
        return self

    def predict(self, X):
        X = self._check_predict(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature_[node] >= 0)
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature_[nd]] <= self.threshold_[nd]
            node[active] = np.where(go_left, self.left_[nd], self.right_[nd])
            active = active[self.feature_[node[active]] >= 0]
        return self.value_[node].astype(np.int8)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature_), dtype=int)
        for i in range(len(self.feature_)):
            if self.feature_[i] >= 0:
                depth[self.left_[i]] = depth[self.right_[i]] = depth[i] + 1
        return int(depth.max())

    def params(self):
        return {"max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf,
                "max_features": self.max_features, "seed": self.seed}

    def _state(self):
        return {"feature": self.feature_.tolist(), "threshold": self.threshold_.tolist(),
                "left": self.left_.tolist(), "right": self.right_.tolist(),
                "value": self.value_.tolist()}

    def _load(self, state):
        self.feature_ = np.asarray(state["feature"], dtype=np.int64)
        self.threshold_ = np.asarray(state["threshold"], dtype=float)
        self.left_ = np.asarray(state["left"], dtype=np.int64)
        self.right_ = np.asarray(state["right"], dtype=np.int64)
        self.value_ = np.asarray(state["value"], dtype=np.int8)


# --------------------------------------------------------------------------
# Logistic regression


def polynomial_features(X: np.ndarray, degree: int) -> np.ndarray:
    """All monomials of total degree 1..degree (no bias column)."""
    n = X.shape[1]
    cols = []
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            cols.append(np.prod(X[:, combo], axis=1))
    return np.column_stack(cols) if cols else np.empty((len(X), 0))


class LogisticRegression(_Fitted):
    """L2-regularized logistic regression fitted by full-batch gradient
    descent for a fixed number of iterations, optionally on polynomial
    features."""

    kind = "logistic_regression"

    def __init__(self, l2: float = 1e-3, learning_rate: float = 0.5, n_iter: int = 3000,
                 degree: int = 1, name: Optional[str] = None):
        if l2 < 0:
            raise ValueError("l2 must be nonnegative")
        if learning_rate <= 0 or int(n_iter) < 1 or int(degree) < 1:
            raise ValueError("learning_rate > 0, n_iter >= 1 and degree >= 1 required")
        self.l2 = float(l2)
        self.learning_rate = float(learning_rate)
        self.n_iter = int(n_iter)
        self.degree = int(degree)
        self.name = name or f"logistic_regression(degree={self.degree})"

    def _design(self, X):
        return polynomial_features(X, self.degree) if self.degree > 1 else X

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        Z = self._design(X)
        # standardize the design so one step size fits every degree
        self.mu_ = Z.mean(axis=0)
        self.sd_ = Z.std(axis=0)
        self.sd_[self.sd_ == 0] = 1.0
        Z = (Z - self.mu_) / self.sd_
        w = np.zeros(Z.shape[1])
        b = 0.0
        m = len(y)
        for _ in range(self.n_iter):
            margin = y * (Z @ w + b)
            g = -y / (1.0 + np.exp(np.clip(margin, -500, 500)))
            w -= self.learning_rate * (Z.T @ g / m + self.l2 * w)
            b -= self.learning_rate * g.mean()
        self.coef_ = w
        self.intercept_ = b
        return self

    def decision_function(self, X):
        X = self._check_predict(X)
        return ((self._design(X) - self.mu_) / self.sd_) @ self.coef_ + self.intercept_

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1).astype(np.int8)

    def params(self):
        return {"l2": self.l2, "learning_rate": self.learning_rate, "n_iter": self.n_iter,
                "degree": self.degree}

    def _state(self):
        return {"coef": self.coef_.tolist(), "intercept": float(self.intercept_),
                "mu": self.mu_.tolist(), "sd": self.sd_.tolist()}

    def _load(self, state):
        self.coef_ = np.asarray(state["coef"], dtype=float)
        self.intercept_ = float(state["intercept"])
        self.mu_ = np.asarray(state["mu"], dtype=float)
        self.sd_ = np.asarray(state["sd"], dtype=float)


# --------------------------------------------------------------------------
# k-NN


def knn_vote(tree: cKDTree, labels: np.ndarray, X: np.ndarray, k: int,
             chunk: int = 200_000) -> np.ndarray:
    """Majority vote of the k nearest references (Euclidean). ``labels`` are
    0/1 or -1/+1; ties resolve to the positive label."""
    out = np.empty(len(X), dtype=np.int8)
    pos = labels.max() if len(labels) else 1
    neg = labels.min() if len(labels) else 0
    for start in range(0, len(X), chunk):
        part = X[start:start + chunk]
        _, idx = tree.query(part, k=k)
        idx = np.asarray(idx).reshape(len(part), k)
        votes = (labels[idx] == pos).sum(axis=1)
        out[start:start + chunk] = np.where(2 * votes >= k, pos, neg)
    return out


class KNearestNeighbors(_Fitted):
    """Euclidean k-NN with majority vote; an even split votes +1."""

    kind = "knn"

    def __init__(self, k: int = 15, name: Optional[str] = None):
        if int(k) < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)
        self.name = name or f"knn(k={self.k})"

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        if self.k > len(X):
            raise ValueError(f"k={self.k} exceeds the {len(X)} training points")
        self.n_features = X.shape[1]
        self.X_ = X.copy()
        self.y_ = y.astype(np.int8)
        self._tree = cKDTree(self.X_)
        return self

    def predict(self, X):
        X = self._check_predict(X)
        if len(X) == 0:
            return np.empty(0, dtype=np.int8)
        return knn_vote(self._tree, self.y_, X, self.k)

    def params(self):
        return {"k": self.k}

    def _state(self):
        return {"X": self.X_.tolist(), "y": self.y_.tolist()}

    def _load(self, state):
        self.X_ = np.asarray(state["X"], dtype=float)
        self.y_ = np.asarray(state["y"], dtype=np.int8)
        self._tree = cKDTree(self.X_)


# --------------------------------------------------------------------------
# Gaussian naive Bayes


class GaussianNaiveBayes(_Fitted):
    kind = "naive_bayes"

    def __init__(self, var_smoothing: float = 1e-9, name: Optional[str] = None):
        if var_smoothing < 0:
            raise ValueError("var_smoothing must be nonnegative")
        self.var_smoothing = float(var_smoothing)
        self.name = name or "naive_bayes"

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        eps = self.var_smoothing * max(X.var(axis=0).max(), 1e-300)
        self.classes_ = np.array([-1, 1], dtype=np.int8)
        self.theta_ = np.array([X[y == c].mean(axis=0) for c in (-1, 1)])
        self.var_ = np.array([X[y == c].var(axis=0) for c in (-1, 1)]) + eps
        self.log_prior_ = np.log(np.array([(y == c).mean() for c in (-1, 1)]))
        return self

    def _joint_log_likelihood(self, X):
        out = []
        for c in range(2):
            ll = -0.5 * np.sum(np.log(2 * np.pi * self.var_[c]))
            ll = ll - 0.5 * np.sum((X - self.theta_[c]) ** 2 / self.var_[c], axis=1)
            out.append(self.log_prior_[c] + ll)
        return np.column_stack(out)

    def predict(self, X):
        X = self._check_predict(X)
        jll = self._joint_log_likelihood(X)
        return np.where(jll[:, 1] >= jll[:, 0], 1, -1).astype(np.int8)

    def params(self):
        return {"var_smoothing": self.var_smoothing}

    def _state(self):
        return {"theta": self.theta_.tolist(), "var": self.var_.tolist(),
                "log_prior": self.log_prior_.tolist()}

    def _load(self, state):
        self.classes_ = np.array([-1, 1], dtype=np.int8)
        self.theta_ = np.asarray(state["theta"], dtype=float)
        self.var_ = np.asarray(state["var"], dtype=float)
        self.log_prior_ = np.asarray(state["log_prior"], dtype=float)


# --------------------------------------------------------------------------
# Random forest


class RandomForest(_Fitted):
    """Bootstrap-aggregated CART trees with per-split feature subsampling and
    majority vote (ties vote +1)."""

    kind = "random_forest"

    def __init__(self, n_estimators: int = 25, max_depth: int = 8, min_samples_leaf: int = 1,
                 max_features: Optional[int | str] = "sqrt", seed: int = 0,
                 name: Optional[str] = None):
        if int(n_estimators) < 1:
            raise ValueError("n_estimators must be >= 1")
        self.n_estimators = int(n_estimators)
        self.max_depth = int(max_depth)
        self.min_samples_leaf = int(min_samples_leaf)
        self.max_features = max_features
        self.seed = int(seed)
        self.name = name or f"random_forest(n={self.n_estimators}, depth={self.max_depth})"
        DecisionTree(self.max_depth, self.min_samples_leaf, max_features)  # validates

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        self.n_features = X.shape[1]
        rng = np.random.default_rng(self.seed)
        seeds = rng.integers(0, 2**31 - 1, size=self.n_estimators)
        self.trees_ = []
        for s in seeds:
            tree_rng = np.random.default_rng(s)
            for _ in range(100):
                boot = tree_rng.integers(0, len(X), size=len(X))
                if len(np.unique(y[boot])) == 2:
                    break
            t = DecisionTree(self.max_depth, self.min_samples_leaf, self.max_features,
                             seed=int(tree_rng.integers(2**31 - 1)))
            self.trees_.append(t.fit(X[boot], y[boot]))
        return self

    def predict(self, X):
        X = self._check_predict(X)
        votes = np.zeros(len(X), dtype=np.int64)
        for t in self.trees_:
            votes += t.predict(X)
        return np.where(votes >= 0, 1, -1).astype(np.int8)

    def params(self):
        return {"n_estimators": self.n_estimators, "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf, "max_features": self.max_features,
                "seed": self.seed}

    def _state(self):
        return {"trees": [t._state() for t in self.trees_]}

    def _load(self, state):
        self.trees_ = []
        for ts in state["trees"]:
            t = DecisionTree(self.max_depth, self.min_samples_leaf, self.max_features)
            t.n_features = self.n_features
            t._load(ts)
            self.trees_.append(t)


LEARNERS = {
    "decision_tree": DecisionTree,
    "logistic_regression": LogisticRegression,
    "knn": KNearestNeighbors,
    "naive_bayes": GaussianNaiveBayes,
    "random_forest": RandomForest,
}
_SEEDED = {"decision_tree", "random_forest"}


def make_learner(kind: str, hyper: Optional[dict] = None, seed: int = 0) -> _Fitted:
    if kind not in LEARNERS:
        raise ValueError(f"unknown learner kind {kind!r}; choose from {sorted(LEARNERS)}")
    hyper = dict(hyper or {})
    if kind in _SEEDED:
        hyper.setdefault("seed", seed)
    try:
        return LEARNERS[kind](**hyper)
    except TypeError as exc:
        raise ValueError(f"invalid hyperparameters for {kind}: {exc}") from None


def classifier_from_dict(doc: dict) -> Classifier:
    kind = doc["kind"]
    if kind == "threshold":
        p = doc["params"]
        return ThresholdClassifier(p["threshold"], p["feature"], p["inclusive"],
                                   name=doc["name"], n_features=doc.get("n_features"))
    model = make_learner(kind, doc["params"])
    model.name = doc["name"]
    model.n_features = doc["n_features"]
    model._load(doc["state"])
    return model
