import itertools
import json

import numpy as np
import pytest

from dig.data import fit_scaler, make_half_moons, split
from dig.learners import (DecisionTree, FunctionClassifier, GaussianNaiveBayes, KNearestNeighbors,
                          LogisticRegression, RandomForest, ThresholdClassifier,
                          classifier_from_dict, make_learner)
from dig.metrics import confusion_counts, f1_score

KINDS = ["decision_tree", "logistic_regression", "knn", "naive_bayes", "random_forest"]


@pytest.fixture(scope="module")
def moons():
    d = make_half_moons(300, 0.25, 0)
    s = split(d, seed=0)
    d = fit_scaler(d, s)
    return d.features[s.train], d.targets[s.train], d.features[s.test], d.targets[s.test]


def _brute_f1(t, p):
    tp = sum(1 for a, b in zip(t, p) if a and b)
    fp = sum(1 for a, b in zip(t, p) if not a and b)
    fn = sum(1 for a, b in zip(t, p) if a and not b)
    return 2 * tp / (2 * tp + fp + fn)


def test_f1_against_enumeration():
    for bits in itertools.product([0, 1], repeat=6):
        t = np.array(bits[:3] + (1,))
        p = np.array(bits[3:] + (0,))
        assert f1_score(t, p) == pytest.approx(_brute_f1(t, p))


def test_f1_edge_cases():
    y = np.array([1, 0, 1, 0])
    assert f1_score(y, y) == 1.0
    assert f1_score(y, np.zeros(4)) == 0.0
    with pytest.raises(ValueError):
        f1_score(np.zeros(3), np.zeros(3))
    assert f1_score(np.zeros(3), np.zeros(3), zero_division=1.0) == 1.0
    assert confusion_counts([1, 0, 1], [1, 1, 0]) == (1, 1, 1, 0)


def test_logistic_separable_two_points():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    y = np.array([-1, 1])
    m = LogisticRegression(degree=1).fit(X, y)
    assert f1_score(y == 1, m.predict(X) == 1) == 1.0


def test_one_nn_reproduces_training_labels(moons):
    X, y, _, _ = moons
    Xu, idx = np.unique(X, axis=0, return_index=True)
    m = KNearestNeighbors(k=1).fit(Xu, y[idx])
    assert np.array_equal(m.predict(Xu), y[idx])


def test_forest_determinism(moons):
    X, y, Xt, _ = moons
    a = RandomForest(seed=3).fit(X, y).predict(Xt)
    b = RandomForest(seed=3).fit(X, y).predict(Xt)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kind", KINDS)
def test_learners_beat_chance_and_round_trip(kind, moons):
    X, y, Xt, yt = moons
    m = make_learner(kind, {}, seed=1).fit(X, y)
    pred = m.predict(Xt)
    assert set(np.unique(pred)) <= {-1, 1}
    assert np.mean(pred == yt) > 0.75
    doc = json.loads(json.dumps(m.to_dict()))
    clone = classifier_from_dict(doc)
    assert np.array_equal(clone.predict(Xt), pred)


def test_tree_depth_limit(moons):
    X, y, _, _ = moons
    assert DecisionTree(max_depth=2).fit(X, y).depth <= 2


def test_tree_fits_axis_split_exactly():
    X = np.linspace(0, 1, 40).reshape(-1, 1)
    y = np.where(X[:, 0] > 0.3, 1, -1)
    t = DecisionTree(max_depth=1).fit(X, y)
    assert np.array_equal(t.predict(X), y)


def test_naive_bayes_matches_closed_form():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 1, (200, 1)), rng.normal(3, 1, (200, 1))])
    y = np.repeat([-1, 1], 200)
    m = GaussianNaiveBayes().fit(X, y)
    mu0, mu1 = X[:200, 0].mean(), X[200:, 0].mean()
    v0, v1 = X[:200, 0].var(), X[200:, 0].var()
    q = np.linspace(-2, 5, 50)
    ll0 = -0.5 * np.log(2 * np.pi * v0) - (q - mu0) ** 2 / (2 * v0)
    ll1 = -0.5 * np.log(2 * np.pi * v1) - (q - mu1) ** 2 / (2 * v1)
    assert np.array_equal(m.predict(q.reshape(-1, 1)), np.where(ll1 >= ll0, 1, -1))


def test_training_errors():
    with pytest.raises(ValueError, match="single class"):
        DecisionTree().fit(np.zeros((3, 1)), np.ones(3))
    with pytest.raises(ValueError, match="unknown learner"):
        make_learner("svm")
    with pytest.raises(ValueError, match="invalid hyperparameters"):
        make_learner("knn", {"depth": 3})
    m = KNearestNeighbors(3).fit(np.eye(4), [1, -1, 1, -1])
    with pytest.raises(ValueError, match="features"):
        m.predict(np.zeros((1, 2)))


def test_threshold_and_function_classifiers():
    X = np.array([[0.4], [0.5], [0.6]])
    assert ThresholdClassifier(0.5).predict(X).tolist() == [-1, -1, 1]
    assert ThresholdClassifier(0.5, inclusive=True).predict(X).tolist() == [-1, 1, 1]
    f = FunctionClassifier(lambda Z: Z[:, 0] - 0.45)
    assert f.predict(X).tolist() == [-1, 1, 1]
    assert f.predict(np.empty((0, 1))).shape == (0,)
