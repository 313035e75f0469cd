"""Discrepancy graph: k-NN graph over training points under the connection
condition, refined by repeated midpoint bisection of eligible edges.

The graph is stored as flat arrays so that refinement of millions of nodes
stays vectorized:

* nodes: ``points`` (N, n), ``labels`` (N, members), ``flags`` (N,),
  ``origin`` (0 training, 1 midpoint), ``source`` (training row index for
  training nodes, original edge id for midpoints) and ``t`` (position of a
  midpoint along its original edge, 0 at x_i and 1 at x_j).
* edges: ``edges`` (E, 2) oriented from the x_i side towards x_j,
  ``edge_origin`` (E,) original edge id and ``generation`` (E,).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Split
from .pool import Pool, indicator_from_labels, predict_all

TRAINING, MIDPOINT = 0, 1


class GraphError(ValueError):
    pass


def unanimous_labels(labels: np.ndarray) -> np.ndarray:
    """Common label of each row, 0 where members disagree."""
    labels = np.asarray(labels)
    flags = indicator_from_labels(labels)
    return np.where(flags == 1, 0, labels[:, 0]).astype(np.int8)


def eligible_mask(labels_a: np.ndarray, labels_b: np.ndarray) -> np.ndarray:
    """Connection condition for pairs of label rows.

    True when either endpoint is in discrepancy, or both are unanimous with
    different labels.
    """
    labels_a = np.atleast_2d(labels_a)
    labels_b = np.atleast_2d(labels_b)
    if labels_a.shape[1] != labels_b.shape[1]:
        raise GraphError("label vectors of different lengths")
    ua = unanimous_labels(labels_a)
    ub = unanimous_labels(labels_b)
    return (ua == 0) | (ub == 0) | (ua != ub)


def edge_eligible(p: Pool, node_a, node_b) -> bool:
    """Eligibility of a single pair. Nodes may be ``Node`` records or raw
    label vectors produced by ``p``."""
    la = np.asarray(getattr(node_a, "labels", node_a))
    lb = np.asarray(getattr(node_b, "labels", node_b))
    if la.shape != lb.shape or len(la) != len(p):
        raise GraphError("label-vector length mismatch")
    return bool(eligible_mask(la, lb)[0])


@dataclass(frozen=True)
class Node:
    id: int
    point: np.ndarray
    labels: np.ndarray
    discrepancy: int
    origin: str
    source_edge: int | None
    train_row: int | None


@dataclass
class DiscrepancyGraph:
    points: np.ndarray
    labels: np.ndarray
    flags: np.ndarray
    origin: np.ndarray
    source: np.ndarray
    t: np.ndarray
    edges: np.ndarray
    edge_origin: np.ndarray
    generation: np.ndarray
    original_edges: np.ndarray
    k: int
    n_epochs: int = 0
    history: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_initial_edges(self) -> int:
        return len(self.original_edges)

    @property
    def n_training(self) -> int:
        return int(np.sum(self.origin == TRAINING))

    @property
    def n_midpoints(self) -> int:
        return int(np.sum(self.origin == MIDPOINT))

    def node(self, i: int) -> Node:
        mid = self.origin[i] == MIDPOINT
        return Node(int(i), self.points[i], self.labels[i], int(self.flags[i]),
                    "midpoint" if mid else "training",
                    int(self.source[i]) if mid else None,
                    None if mid else int(self.source[i]))

    def copy(self) -> "DiscrepancyGraph":
        return DiscrepancyGraph(
            self.points.copy(), self.labels.copy(), self.flags.copy(), self.origin.copy(),
            self.source.copy(), self.t.copy(), self.edges.copy(), self.edge_origin.copy(),
            self.generation.copy(), self.original_edges.copy(), self.k, self.n_epochs,
            list(self.history))

    def chains(self) -> list[np.ndarray]:
        """Ordered node ids from x_i to x_j along every original edge."""
        ids, bounds = self.chain_arrays()
        return [ids[bounds[e]:bounds[e + 1]] for e in range(self.n_initial_edges)]

    def chain_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All chains concatenated plus offsets: chain e is
        ``ids[bounds[e]:bounds[e+1]]``."""
        n_orig = self.n_initial_edges
        mids = np.flatnonzero(self.origin == MIDPOINT)
        order = np.lexsort((self.t[mids], self.source[mids]))
        mids = mids[order]
        per_edge = np.bincount(self.source[mids], minlength=n_orig) if len(mids) else np.zeros(n_orig, int)
        lengths = per_edge + 2
        bounds = np.concatenate([[0], np.cumsum(lengths)])
        ids = np.empty(bounds[-1], dtype=np.int64)
        if n_orig == 0:
            return ids, bounds
        starts = bounds[:-1]
        ends = bounds[1:] - 1
        ids[starts] = self.original_edges[:, 0]
        ids[ends] = self.original_edges[:, 1]
        interior = np.ones(bounds[-1], dtype=bool)
        interior[starts] = False
        interior[ends] = False
        ids[interior] = mids
        return ids, bounds

    # -- persistence ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "dig-graph/1",
            "k": self.k,
            "n_epochs": self.n_epochs,
            "history": self.history,
            "nodes": {
                "point": self.points.tolist(),
                "labels": self.labels.tolist(),
                "flag": self.flags.tolist(),
                "origin": self.origin.tolist(),
                "source": self.source.tolist(),
                "t": self.t.tolist(),
            },
            "edges": {
                "endpoints": self.edges.tolist(),
                "original_edge": self.edge_origin.tolist(),
                "generation": self.generation.tolist(),
            },
            "original_edges": self.original_edges.tolist(),
            "chains": [c.tolist() for c in self.chains()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscrepancyGraph":
        nd, ed = doc["nodes"], doc["edges"]
        n_members = len(nd["labels"][0]) if nd["labels"] else 0
        dim = len(nd["point"][0]) if nd["point"] else 0
        return cls(
            np.asarray(nd["point"], dtype=float).reshape(-1, dim),
            np.asarray(nd["labels"], dtype=np.int8).reshape(-1, n_members),
            np.asarray(nd["flag"], dtype=np.int8),
            np.asarray(nd["origin"], dtype=np.int8),
            np.asarray(nd["source"], dtype=np.int64),
            np.asarray(nd["t"], dtype=float),
            np.asarray(ed["endpoints"], dtype=np.int64).reshape(-1, 2),
            np.asarray(ed["original_edge"], dtype=np.int64),
            np.asarray(ed["generation"], dtype=np.int64),
            np.asarray(doc["original_edges"], dtype=np.int64).reshape(-1, 2),
            int(doc["k"]), int(doc["n_epochs"]), list(doc.get("history", [])),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DiscrepancyGraph":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _knn_eligible_pairs(X: np.ndarray, labels: np.ndarray, k: int,
                        chunk_elems: int = 4_000_000) -> np.ndarray:
    """Union of each node's k nearest eligible neighbours as sorted (i, j)
    pairs with i < j. Ties in distance go to the smaller node id."""
    m, n = X.shape
    u = unanimous_labels(labels)
    # distances from explicit differences, so equal distances tie exactly
    rows = max(1, chunk_elems // max(m * n, 1))
    pairs = []
    for start in range(0, m, rows):
        stop = min(m, start + rows)
        idx = np.arange(start, stop)
        d2 = np.sum((X[idx, None, :] - X[None, :, :]) ** 2, axis=2)
        ub = u[idx, None]
        elig = (ub == 0) | (u[None, :] == 0) | (ub != u[None, :])
        # duplicates (zero-length edges) are never connected
        elig &= d2 > 0
        elig[np.arange(len(idx)), idx] = False
        d2 = np.where(elig, d2, np.inf)
        kk = min(k, m)
        if kk < m:
            part = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
            # include ties at the k-th distance, then order by (distance, id)
            kth = np.take_along_axis(d2, part, axis=1).max(axis=1)
            cand_r, cand_c = np.nonzero(d2 <= kth[:, None])
        else:
            cand_r, cand_c = np.nonzero(np.isfinite(d2))
        dist = d2[cand_r, cand_c]
        keep = np.isfinite(dist)
        cand_r, cand_c, dist = cand_r[keep], cand_c[keep], dist[keep]
        order = np.lexsort((cand_c, dist, cand_r))
        cand_r, cand_c = cand_r[order], cand_c[order]
        # rank within each row
        first = np.searchsorted(cand_r, cand_r, side="left")
        rank = np.arange(len(cand_r)) - first
        sel = rank < k
        i = idx[cand_r[sel]]
        j = cand_c[sel]
        pairs.append(np.column_stack([np.minimum(i, j), np.maximum(i, j)]))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    allp = np.concatenate(pairs)
    if len(allp) == 0:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(allp, axis=0).astype(np.int64)


def build_graph(p: Pool, d: Dataset, s: Split, k: int) -> DiscrepancyGraph:
    """One node per training row (node id = position in ``s.train``), each
    connected to its k nearest neighbours that satisfy the connection
    condition. Directed choices are merged into undirected edges, so a node
    can end up with more than k incident edges."""
    if k < 1:
        raise GraphError("k must be >= 1")
    if len(s.train) == 0:
        raise GraphError("empty training split")
    X = np.array(d.features[s.train], dtype=float)
    labels = predict_all(p, X)
    flags = indicator_from_labels(labels)
    pairs = _knn_eligible_pairs(X, labels, k)
    m = len(X)
    g = DiscrepancyGraph(
        points=X,
        labels=labels,
        flags=flags,
        origin=np.zeros(m, dtype=np.int8),
        source=np.asarray(s.train, dtype=np.int64).copy(),
        t=np.zeros(m),
        edges=pairs.copy(),
        edge_origin=np.arange(len(pairs), dtype=np.int64),
        generation=np.zeros(len(pairs), dtype=np.int64),
        original_edges=pairs,
        k=int(k),
    )
    g.history.append({"epoch": 0, "nodes": g.n_nodes, "edges": g.n_edges,
                      "midpoints": 0, "split": 0})
    return g


SPLIT_RULES = ("label_change", "connection")


def split_mask(labels_a: np.ndarray, labels_b: np.ndarray, rule: str = "label_change") -> np.ndarray:
    """Which edges a refinement epoch splits.

    ``connection`` splits every edge meeting the connection condition, which
    doubles the edges inside a discrepancy run at each epoch.
    ``label_change`` additionally requires the member label vectors at the
    two ends to differ, so an edge is split only if some member changes its
    prediction along it. Both rules agree except on discrepancy-discrepancy
    edges with identical votes.
    """
    if rule == "connection":
        return eligible_mask(labels_a, labels_b)
    if rule == "label_change":
        return eligible_mask(labels_a, labels_b) & np.any(labels_a != labels_b, axis=1)
    raise GraphError(f"unknown split rule {rule!r}; choose from {SPLIT_RULES}")


def refine(g: DiscrepancyGraph, p: Pool, n_epochs: int,
           split_rule: str = "label_change") -> DiscrepancyGraph:
    """Split edges at their midpoint, ``n_epochs`` times (see ``split_mask``).

    All splits of an epoch are decided on the edge set at the start of the
    epoch; new node ids follow ascending edge id. Returns a new graph.
    """
    if n_epochs < 0:
        raise GraphError("n_epochs must be >= 0")
    if split_rule not in SPLIT_RULES:
        raise GraphError(f"unknown split rule {split_rule!r}; choose from {SPLIT_RULES}")
    g = g.copy()
    for _ in range(n_epochs):
        _refine_epoch(g, p, split_rule)
    return g


def _refine_epoch(g: DiscrepancyGraph, p: Pool, rule: str) -> None:
    a, b = g.edges[:, 0], g.edges[:, 1]
    split = split_mask(g.labels[a], g.labels[b], rule) if len(a) else np.zeros(0, bool)
    sid = np.flatnonzero(split)
    n_new = len(sid)
    if n_new:
        new_points = 0.5 * (g.points[a[sid]] + g.points[b[sid]])
        new_labels = predict_all(p, new_points)
        new_ids = g.n_nodes + np.arange(n_new)
        t_a = _edge_t(g, a[sid], g.edge_origin[sid], end=0)
        t_b = _edge_t(g, b[sid], g.edge_origin[sid], end=1)
        g.points = np.concatenate([g.points, new_points])
        g.labels = np.concatenate([g.labels, new_labels])
        g.flags = np.concatenate([g.flags, indicator_from_labels(new_labels)])
        g.origin = np.concatenate([g.origin, np.full(n_new, MIDPOINT, dtype=np.int8)])
        g.source = np.concatenate([g.source, g.edge_origin[sid]])
        g.t = np.concatenate([g.t, 0.5 * (t_a + t_b)])

        # each split edge becomes (a, k), (k, b) in place, preserving order
        reps = np.where(split, 2, 1)
        pos = np.cumsum(reps) - reps
        E = int(reps.sum())
        edges = np.empty((E, 2), dtype=np.int64)
        origin = np.empty(E, dtype=np.int64)
        gen = np.empty(E, dtype=np.int64)
        edges[pos] = g.edges
        origin[pos] = g.edge_origin
        gen[pos] = g.generation
        sp = pos[sid]
        edges[sp, 1] = new_ids
        edges[sp + 1, 0] = new_ids
        edges[sp + 1, 1] = b[sid]
        origin[sp + 1] = g.edge_origin[sid]
        gen[sp] += 1
        gen[sp + 1] = gen[sp]
        g.edges, g.edge_origin, g.generation = edges, origin, gen
    g.n_epochs += 1
    g.history.append({"epoch": g.n_epochs, "nodes": g.n_nodes, "edges": g.n_edges,
                      "midpoints": g.n_midpoints, "split": n_new})


def _edge_t(g: DiscrepancyGraph, nodes: np.ndarray, orig: np.ndarray, end: int) -> np.ndarray:
    """Position along the original edge; training endpoints sit at 0 or 1."""
    t = g.t[nodes].copy()
    is_train = g.origin[nodes] == TRAINING
    # a training node is x_i (t=0) or x_j (t=1) of the original edge
    t[is_train] = np.where(g.original_edges[orig[is_train], 0] == nodes[is_train], 0.0, 1.0)
    return t


def node_growth_bound(g: DiscrepancyGraph) -> bool:
    """Worst-case growth check: at most initial_edges * 2**epochs edges and
    initial_edges * (2**epochs - 1) midpoints."""
    e0 = g.n_initial_edges
    cap = 2 ** g.n_epochs
    return g.n_edges <= e0 * cap and g.n_midpoints <= e0 * (cap - 1)
