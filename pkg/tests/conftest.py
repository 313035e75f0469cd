import numpy as np
import pytest

from dig.data import Dataset, Split, fit_scaler, make_half_moons, make_linear_oracle_data, split
from dig.graph import build_graph, refine
from dig.pool import OraclePool, build_pool, train_roster


def segment_dataset(a, b):
    """Two-row dataset whose rows are the endpoints of one segment; both rows
    train, no scaling."""
    X = np.array([a, b], dtype=float)
    n = X.shape[1]
    d = Dataset(X, np.array([-1, 1]), tuple(f"x{i}" for i in range(n)),
                scaling=np.tile([0.0, 1.0], (n, 1)))
    return d, Split([0, 1], [], [], 0)


@pytest.fixture(scope="session")
def moons_setup():
    """Small half-moons run: scaled data, split, built-in pool, k=10 graph
    refined for 6 epochs."""
    d = make_half_moons(600, 0.3, 0)
    s = split(d, seed=0)
    d = fit_scaler(d, s)
    p = build_pool(train_roster(d, s, seed=0), d, s, 0.05)
    assert len(p) > 1
    g0 = build_graph(p, d, s, 10)
    return d, s, p, g0, refine(g0, p, 6)


@pytest.fixture(scope="session")
def oracle_setup():
    d = make_linear_oracle_data(200, 2, 0)
    s = split(d, seed=0)
    p = OraclePool(0.4, 0.6, n_features=2)
    g0 = build_graph(p, d, s, 10)
    return d, s, p, g0


def chain_graph(ts, labels):
    """Graph with one original edge from t=0 to t=1 along feature 0, whose
    chain holds nodes at abscissae ``ts`` (ascending, first 0 and last 1)
    with the given member label rows."""
    from dig.graph import MIDPOINT, TRAINING, DiscrepancyGraph
    from dig.pool import indicator_from_labels

    ts = np.asarray(ts, dtype=float)
    labels = np.asarray(labels, dtype=np.int8)
    # training endpoints get ids 0 and 1, midpoints follow in order
    order = np.r_[0, len(ts) - 1, np.arange(1, len(ts) - 1)]
    pts = ts[order].reshape(-1, 1)
    lab = labels[order]
    n = len(ts)
    ids = np.r_[0, np.arange(2, n), 1]
    edges = np.column_stack([ids[:-1], ids[1:]])
    return DiscrepancyGraph(
        points=pts, labels=lab, flags=indicator_from_labels(lab),
        origin=np.r_[TRAINING, TRAINING, np.full(n - 2, MIDPOINT)].astype(np.int8),
        source=np.r_[0, 1, np.zeros(n - 2, dtype=int)].astype(np.int64),
        t=ts[order], edges=edges.astype(np.int64),
        edge_origin=np.zeros(len(edges), dtype=np.int64),
        generation=np.zeros(len(edges), dtype=np.int64),
        original_edges=np.array([[0, 1]], dtype=np.int64), k=1, n_epochs=0)
