"""Pools of epsilon-comparable classifiers and the pool-discrepancy indicator."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, Split
from .learners import Classifier, ThresholdClassifier, classifier_from_dict, make_learner
from .metrics import f1_score


class PoolError(ValueError):
    pass


@dataclass(frozen=True)
class Pool:
    """Ordered classifiers whose validation F1 scores lie within ``epsilon``
    of each other. Members are sorted by descending score, ties by name."""

    members: tuple
    val_scores: tuple = ()
    epsilon: float = 0.0
    best_score: float = float("nan")

    def __post_init__(self):
        if not self.members:
            raise PoolError("a pool needs at least one member")
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "val_scores", tuple(float(v) for v in self.val_scores))

    def __len__(self):
        return len(self.members)

    @property
    def n_features(self) -> Optional[int]:
        for c in self.members:
            if getattr(c, "n_features", None) is not None:
                return c.n_features
        return None

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.members]

    def predict_all(self, points) -> np.ndarray:
        return predict_all(self, points)

    def indicator(self, points) -> np.ndarray:
        return discrepancy_indicator(self, points)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "best_score": self.best_score,
            "members": [
                dict(c.to_dict(), val_score=(self.val_scores[i] if self.val_scores else None))
                for i, c in enumerate(self.members)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Pool":
        members = [classifier_from_dict(m) for m in doc["members"]]
        scores = [m["val_score"] for m in doc["members"] if m.get("val_score") is not None]
        if len(scores) != len(members):
            scores = []
        if doc.get("oracle"):
            return OraclePool(*doc["oracle"]["thresholds"], n_features=members[0].n_features)
        return cls(tuple(members), tuple(scores), doc["epsilon"], doc["best_score"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Pool":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class OraclePool(Pool):
    """Two step functions on feature 0 disagreeing exactly on the open slab
    ``lower < x_0 < upper``."""

    def __init__(self, lower: float = 0.4, upper: float = 0.6, n_features: Optional[int] = None):
        if not lower < upper:
            raise PoolError("oracle thresholds need lower < upper")
        members = (
            ThresholdClassifier(lower, 0, inclusive=False, name="oracle_lower", n_features=n_features),
            ThresholdClassifier(upper, 0, inclusive=True, name="oracle_upper", n_features=n_features),
        )
        super().__init__(members, (), 0.0, float("nan"))
        object.__setattr__(self, "thresholds", (float(lower), float(upper)))

    def region(self, points) -> np.ndarray:
        """Closed-form membership of the discrepancy slab."""
        x0 = np.atleast_2d(np.asarray(points, dtype=float))[:, 0]
        a, b = self.thresholds
        return (x0 > a) & (x0 < b)

    def to_dict(self):
        doc = super().to_dict()
        doc["oracle"] = {"thresholds": list(self.thresholds)}
        return doc


def train_builtin(kind: str, d: Dataset, s: Split, hyper: Optional[dict] = None,
                  seed: int = 0) -> Classifier:
    """Fit one of the built-in learners on the training rows of ``d``."""
    if len(s.train) == 0:
        raise PoolError("empty training split")
    model = make_learner(kind, hyper, seed)
    return model.fit(d.features[s.train], d.targets[s.train])


def build_pool(candidates: Sequence[Classifier], d: Dataset, s: Split,
               epsilon: float = 0.05) -> Pool:
    """Keep every candidate whose validation F1 is at least the best minus
    ``epsilon`` (inclusive)."""
    if not candidates:
        raise PoolError("empty candidate list")
    if len(s.validation) == 0:
        raise PoolError("empty validation split")
    if epsilon < 0:
        raise PoolError("epsilon must be nonnegative")
    Xv = d.features[s.validation]
    yv = d.targets[s.validation]
    scores = [f1_score(yv == 1, c.predict(Xv) == 1, zero_division=0.0) for c in candidates]
    best = max(scores)
    kept = [(sc, candidates[i].name, i) for i, sc in enumerate(scores)
            if sc >= best - epsilon - 1e-12]
    kept.sort(key=lambda t: (-t[0], t[1], t[2]))
    return Pool(tuple(candidates[i] for _, _, i in kept), tuple(sc for sc, _, _ in kept),
                float(epsilon), float(best))


def _as_points(p: Pool, points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size else X.reshape(0, p.n_features or 0)
    if X.ndim != 2:
        raise PoolError("points must be a 2-d matrix")
    n = p.n_features
    if n is not None and X.shape[1] != n:
        raise PoolError(f"dimension mismatch: pool expects {n} features, got {X.shape[1]}")
    return X


def predict_all(p: Pool, points) -> np.ndarray:
    """Label matrix with one row per point and one column per member."""
    X = _as_points(p, points)
    if len(X) == 0:
        return np.empty((0, len(p)), dtype=np.int8)
    return np.column_stack([np.asarray(c.predict(X), dtype=np.int8) for c in p.members])


def indicator_from_labels(labels: np.ndarray) -> np.ndarray:
    """1 where a row of member labels is not unanimous."""
    labels = np.asarray(labels)
    if labels.shape[1] <= 1:
        return np.zeros(len(labels), dtype=np.int8)
    return (labels != labels[:, :1]).any(axis=1).astype(np.int8)


def discrepancy_indicator(p: Pool, points) -> np.ndarray:
    return indicator_from_labels(predict_all(p, points))


def pool_disagreement_rate(p: Pool, points) -> float:
    X = _as_points(p, points)
    if len(X) == 0:
        raise PoolError("disagreement rate of an empty point set is undefined")
    return float(discrepancy_indicator(p, X).mean())


DEFAULT_ROSTER = {
    "decision_tree": {"max_depth": 6, "min_samples_leaf": 3},
    "logistic_regression": {"degree": 5, "l2": 1e-4, "n_iter": 5000, "learning_rate": 1.0},
    "knn": {"k": 15},
    "naive_bayes": {},
    "random_forest": {"n_estimators": 25, "max_depth": 8, "min_samples_leaf": 2},
}


def train_roster(d: Dataset, s: Split, roster: Optional[dict] = None, seed: int = 0) -> list:
    """Train every learner of ``roster`` (kind -> hyperparameters)."""
    roster = DEFAULT_ROSTER if roster is None else roster
    return [train_builtin(kind, d, s, hyper, seed) for kind, hyper in roster.items()]
