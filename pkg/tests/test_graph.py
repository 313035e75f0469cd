import json

import numpy as np
import pytest

from dig.data import Dataset, Split
from dig.graph import (MIDPOINT, DiscrepancyGraph, GraphError, _knn_eligible_pairs, build_graph,
                       edge_eligible, eligible_mask, node_growth_bound, refine, unanimous_labels)
from dig.learners import FunctionClassifier, ThresholdClassifier
from dig.pool import OraclePool, Pool, predict_all

from conftest import segment_dataset


def mod3_pool():
    """Three members voting one-hot on round(8 x_0) mod 3. Every dyadic
    sub-edge of [0, 1] down to 1/8 has endpoints whose index difference
    (8, 4, 2 or 1) is not a multiple of 3, so label vectors always differ and
    every node is in discrepancy."""
    def member(r):
        return FunctionClassifier(lambda X: np.where(np.rint(8 * X[:, 0]) % 3 == r, 1, -1),
                                  name=f"mod3_{r}", n_features=1)
    return Pool(tuple(member(r) for r in range(3)))


def split_everything_pool():
    return Pool((FunctionClassifier(lambda X: np.ones(len(X)), "plus", 1),
                 FunctionClassifier(lambda X: -np.ones(len(X)), "minus", 1)))


def test_connection_condition_examples():
    assert not eligible_mask([[1, 1]], [[1, 1]])[0]
    assert eligible_mask([[1, 1]], [[-1, -1]])[0]
    assert eligible_mask([[1, -1]], [[1, 1]])[0]
    p = OraclePool(n_features=1)
    assert edge_eligible(p, [1, -1], [-1, -1])
    with pytest.raises(GraphError):
        edge_eligible(p, [1], [1, 1])


def test_unanimous_labels():
    lab = np.array([[1, 1], [-1, -1], [1, -1]])
    assert unanimous_labels(lab).tolist() == [1, -1, 0]


def test_single_label_training_set_has_no_edges():
    d, s = segment_dataset([0.0], [0.1])
    p = OraclePool(n_features=1)
    g = build_graph(p, d, s, 5)
    assert g.n_nodes == 2 and g.n_edges == 0


def test_two_opposite_points_one_edge():
    d, s = segment_dataset([0.0], [1.0])
    g = build_graph(OraclePool(n_features=1), d, s, 1)
    assert g.edges.tolist() == [[0, 1]]


def _brute_pairs(X, labels, k):
    """Rank all other nodes by (distance, id), keep eligible non-duplicates,
    take the first k, and merge directions."""
    u = unanimous_labels(labels)
    out = set()
    for i in range(len(X)):
        cand = []
        for j in range(len(X)):
            if j == i or np.array_equal(X[i], X[j]):
                continue
            if u[i] == 0 or u[j] == 0 or u[i] != u[j]:
                cand.append((float(np.sum((X[i] - X[j]) ** 2)), j))
        cand.sort()
        for _, j in cand[:k]:
            out.add((min(i, j), max(i, j)))
    return sorted(out)


@pytest.mark.parametrize("seed,k", [(0, 1), (1, 3), (2, 7), (3, 40)])
def test_knn_pairs_match_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    X = np.round(rng.uniform(size=(40, 2)), 1)  # coarse grid forces ties and duplicates
    p = OraclePool(0.3, 0.7, n_features=2)
    labels = predict_all(p, X)
    got = [tuple(r) for r in _knn_eligible_pairs(X, labels, k, chunk_elems=200).tolist()]
    assert got == _brute_pairs(X, labels, k)


def test_duplicates_never_connected():
    X = np.array([[0.5], [0.5], [0.9]])
    p = OraclePool(n_features=1)
    pairs = _knn_eligible_pairs(X, predict_all(p, X), 5)
    assert [0, 1] not in pairs.tolist()


def test_midpoint_split():
    d, s = segment_dataset([0.0, 0.0], [1.0, 1.0])
    p = OraclePool(n_features=2)
    g = refine(build_graph(p, d, s, 1), p, 1)
    assert np.allclose(g.points[2], [0.5, 0.5])
    assert g.edges.tolist() == [[0, 2], [2, 1]]


def test_zero_epochs_is_identity(oracle_setup):
    _, _, p, g0 = oracle_setup
    g = refine(g0, p, 0)
    assert np.array_equal(g.edges, g0.edges) and g.n_nodes == g0.n_nodes


def _bisect_oracle(a, b, fa, fb, pool_fn, eligible, depth):
    """Independent recursive bisection: set of abscissae produced in
    ``depth`` epochs on [a, b]."""
    if depth == 0 or not eligible(fa, fb):
        return set()
    m = 0.5 * (a + b)
    fm = pool_fn(m)
    return {m} | _bisect_oracle(a, m, fa, fm, pool_fn, eligible, depth - 1) \
        | _bisect_oracle(m, b, fm, fb, pool_fn, eligible, depth - 1)


def test_oracle_chain_after_three_epochs():
    p = OraclePool(0.4, 0.6, n_features=1)
    d, s = segment_dataset([0.0], [1.0])
    g = refine(build_graph(p, d, s, 1), p, 3)
    chain = g.chains()[0]
    xs = g.points[chain, 0]
    assert set(np.round(xs * 8, 12)) <= set(range(9))
    assert np.array_equal(g.flags[chain] == 1, (xs > 0.4) & (xs < 0.6))

    def labels(x):
        return tuple(predict_all(p, [[x]])[0])

    def elig(la, lb):
        return eligible_mask([la], [lb])[0] and la != lb

    expected = {0.0, 1.0} | _bisect_oracle(0.0, 1.0, labels(0.0), labels(1.0), labels, elig, 3)
    assert sorted(xs.tolist()) == sorted(expected)
    assert xs.tolist() == [0, 0.25, 0.375, 0.5, 0.625, 0.75, 1]


@pytest.mark.parametrize("rule,pool", [("connection", split_everything_pool), ("label_change", mod3_pool)])
def test_fully_eligible_edge_hits_growth_bound(rule, pool):
    p = pool()
    d, s = segment_dataset([0.0], [1.0])
    g = build_graph(p, d, s, 1)
    for _ in range(3):
        g = refine(g, p, 1, rule)
        assert node_growth_bound(g)
    assert g.n_edges == 8 and g.n_midpoints == 7
    assert g.n_edges == g.n_initial_edges * 2 ** 3
    assert np.allclose(np.sort(g.points[:, 0]), np.arange(9) / 8)


def test_growth_bound_trivial_at_zero_epochs(oracle_setup):
    *_, g0 = oracle_setup
    assert node_growth_bound(g0) and g0.n_midpoints == 0


def test_ineligible_after_first_epoch_is_below_bound():
    # members agree everywhere except at exactly x=0.5
    p = Pool((ThresholdClassifier(0.5, inclusive=True), ThresholdClassifier(0.5, inclusive=False)))
    d, s = segment_dataset([0.0], [1.0])
    g = refine(build_graph(p, d, s, 1), p, 3)
    assert node_growth_bound(g)
    assert g.n_edges < 8


def test_growth_bound_holds_on_fixtures(moons_setup, oracle_setup):
    d, s, p, g0, _ = moons_setup
    g = g0
    for _ in range(5):
        g = refine(g, p, 1)
        assert node_growth_bound(g)
    _, _, po, go = oracle_setup
    for _ in range(5):
        go = refine(go, po, 1)
        assert node_growth_bound(go)


def test_built_graph_edges_are_eligible(moons_setup):
    d, s, p, g0, g = moons_setup
    assert g0.n_nodes == len(s.train)
    assert np.all(eligible_mask(g0.labels[g0.edges[:, 0]], g0.labels[g0.edges[:, 1]]))
    assert np.all(g0.edges[:, 0] < g0.edges[:, 1])
    assert np.array_equal(g.points[: g0.n_nodes], g0.points)


def test_chains_are_ordered_and_collinear(moons_setup):
    *_, g = moons_setup
    for e, chain in enumerate(g.chains()):
        a, b = g.original_edges[e]
        assert chain[0] == a and chain[-1] == b
        ts = g.t[chain[1:-1]]
        assert np.all(np.diff(ts) > 0)
        expect = g.points[a] + ts[:, None] * (g.points[b] - g.points[a])
        assert np.allclose(g.points[chain[1:-1]], expect)
    # every edge joins consecutive chain nodes
    assert g.n_edges == sum(len(c) - 1 for c in g.chains())


def test_midpoint_flags_match_pool(moons_setup):
    _, _, p, _, g = moons_setup
    mids = np.flatnonzero(g.origin == MIDPOINT)
    assert np.array_equal(predict_all(p, g.points[mids]), g.labels[mids])


def test_graph_json_round_trip(tmp_path, moons_setup):
    *_, g = moons_setup
    g.save(tmp_path / "g.json")
    h = DiscrepancyGraph.load(tmp_path / "g.json")
    for f in ("points", "labels", "flags", "edges", "t", "source", "original_edges"):
        assert np.array_equal(getattr(h, f), getattr(g, f))
    doc = json.loads((tmp_path / "g.json").read_text())
    assert doc["chains"] == [c.tolist() for c in g.chains()]


def test_refinement_is_deterministic(moons_setup):
    _, _, p, g0, g = moons_setup
    again = refine(g0, p, 6)
    assert json.dumps(again.to_dict()) == json.dumps(g.to_dict())


def test_bad_arguments(oracle_setup):
    d, s, p, g0 = oracle_setup
    with pytest.raises(GraphError):
        build_graph(p, d, s, 0)
    with pytest.raises(GraphError):
        refine(g0, p, -1)
    with pytest.raises(GraphError):
        refine(g0, p, 1, "nope")
