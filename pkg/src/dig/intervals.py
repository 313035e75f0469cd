"""Discrepancy intervals extracted from refined chains, and explanation of
new points by their closest intervals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .graph import DiscrepancyGraph, unanimous_labels
from .learners import knn_vote
from .pool import Pool, discrepancy_indicator

FLAG_METHODS = ("indicator", "knn_on_graph")


@dataclass(frozen=True)
class DiscrepancyInterval:
    """Sub-segment [lower, upper] of the training segment [anchor_i, anchor_j].

    A closed bound is the closest non-discrepancy chain node flanking the
    discrepancy run. An open bound sits on a training anchor that is itself in
    discrepancy. ``kind`` is one of

    * ``"crossing"``: a discrepancy run between unanimous nodes of opposite
      classes;
    * ``"transition"``: two adjacent unanimous nodes of opposite classes with
      no discrepancy node between them;
    * ``"bump"``: a discrepancy run between unanimous nodes of the same class
      (the segment clips a region where some member deviates);
    * ``"open"``: a run reaching a training anchor that is in discrepancy.

    Only crossings and transitions count as ``closed``.
    """

    lower: np.ndarray
    upper: np.ndarray
    anchor_i: np.ndarray
    anchor_j: np.ndarray
    open_lower: bool
    open_upper: bool
    original_edge: int
    node_ids: np.ndarray = field(repr=False)
    kind: str = "crossing"

    @property
    def lower_id(self) -> int:
        return int(self.node_ids[0])

    @property
    def upper_id(self) -> int:
        return int(self.node_ids[-1])

    @property
    def closed(self) -> bool:
        return self.kind in ("crossing", "transition")

    def feature_ranges(self) -> np.ndarray:
        return interval_feature_ranges(self)[0]

    def widths(self) -> np.ndarray:
        return interval_feature_ranges(self)[1]


def interval_feature_ranges(iv: DiscrepancyInterval) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature (low, high) pairs spanned by the interval bounds, and the
    per-feature widths."""
    lo = np.minimum(iv.lower, iv.upper)
    hi = np.maximum(iv.lower, iv.upper)
    return np.column_stack([lo, hi]), np.abs(iv.upper - iv.lower)


def _chain_intervals(chain: np.ndarray, flags: np.ndarray, unan: np.ndarray):
    """Yield (lo, hi, open_lo, open_hi, kind) positions for one chain."""
    L = len(chain)
    out = []
    f = flags
    padded = np.concatenate([[0], f, [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1) - 1
    for s, e in zip(starts, ends):
        lo = s - 1 if s > 0 else 0
        hi = e + 1 if e < L - 1 else L - 1
        open_lo, open_hi = s == 0, e == L - 1
        if open_lo or open_hi:
            kind = "open"
        elif unan[lo] != unan[hi]:
            kind = "crossing"
        else:
            kind = "bump"
        out.append((lo, hi, open_lo, open_hi, kind))
    both_clear = (f[:-1] == 0) & (f[1:] == 0)
    for i in np.flatnonzero(both_clear & (unan[:-1] != unan[1:])):
        out.append((i, i + 1, False, False, "transition"))
    out.sort(key=lambda r: (r[0], r[1]))
    return out


def extract_intervals(g: DiscrepancyGraph) -> list[DiscrepancyInterval]:
    """One interval per maximal run of discrepancy nodes along each chain,
    plus one per bare label transition."""
    ids, bounds = g.chain_arrays()
    if len(ids) == 0:
        return []
    flags = g.flags[ids]
    unan = unanimous_labels(g.labels[ids])
    # only chains with a discrepancy node or a label change can host intervals
    chain_of = np.repeat(np.arange(len(bounds) - 1), np.diff(bounds))
    change = np.zeros(len(ids), dtype=bool)
    change[:-1] = (unan[:-1] != unan[1:]) & (chain_of[:-1] == chain_of[1:])
    interesting = np.zeros(len(bounds) - 1, dtype=bool)
    interesting[chain_of[(flags == 1) | change]] = True

    result = []
    for e in np.flatnonzero(interesting):
        a, b = bounds[e], bounds[e + 1]
        chain = ids[a:b]
        xi = g.points[chain[0]]
        xj = g.points[chain[-1]]
        for lo, hi, olo, ohi, kind in _chain_intervals(chain, flags[a:b], unan[a:b]):
            result.append(DiscrepancyInterval(
                lower=g.points[chain[lo]], upper=g.points[chain[hi]], anchor_i=xi, anchor_j=xj,
                open_lower=bool(olo), open_upper=bool(ohi), original_edge=int(e),
                node_ids=chain[lo:hi + 1].copy(), kind=kind))
    return result


class GraphDiscrepancyClassifier:
    """k'-NN over graph nodes labelled by their discrepancy flags. A tied vote
    flags the point."""

    def __init__(self, points: np.ndarray, flags: np.ndarray, k_prime: int = 5):
        points = np.asarray(points, dtype=float)
        if not 1 <= k_prime <= len(points):
            raise ValueError(f"k_prime must be in [1, {len(points)}], got {k_prime}")
        self.k_prime = int(k_prime)
        self.points = points
        self.flags = np.asarray(flags).astype(np.int8)
        self._tree = cKDTree(points)

    @classmethod
    def from_graph(cls, g: DiscrepancyGraph, k_prime: int = 5) -> "GraphDiscrepancyClassifier":
        return cls(g.points, g.flags, k_prime)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.points.shape[1]:
            raise ValueError(f"dimension mismatch: expected {self.points.shape[1]}, got {X.shape[1]}")
        if len(X) == 0:
            return np.empty(0, dtype=np.int8)
        out = knn_vote(self._tree, self.flags, X, self.k_prime)
        if self.flags.max(initial=0) == 0:
            return np.zeros(len(X), dtype=np.int8)
        return out


def flag(q, p: Optional[Pool] = None, c: Optional[GraphDiscrepancyClassifier] = None,
         method: str = "indicator") -> bool:
    """Whether the query lies in a discrepancy area, by the pool itself or by
    the k'-NN fitted on the graph."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if method == "indicator":
        if p is None:
            raise ValueError("indicator flagging needs the pool")
        return bool(discrepancy_indicator(p, q)[0])
    if method == "knn_on_graph":
        if c is None:
            raise ValueError("knn_on_graph flagging needs a GraphDiscrepancyClassifier")
        return bool(c.predict(q)[0])
    raise ValueError(f"unknown flag method {method!r}; choose from {FLAG_METHODS}")


@dataclass
class Explanation:
    query: np.ndarray
    flagged: Optional[bool]
    method: str
    intervals: list  # of (DiscrepancyInterval, distance)

    def aggregated_ranges(self) -> np.ndarray:
        from .evaluation import aggregate_ranges
        return aggregate_ranges([iv for iv, _ in self.intervals])

    def to_dict(self, dataset=None) -> dict:
        """JSON-ready record. With a scaled ``dataset`` the query and ranges
        are also given in original units."""
        names = list(dataset.feature_names) if dataset is not None else None
        conv = (dataset.to_original_units if dataset is not None and dataset.scaling is not None
                else None)
        recs = []
        for iv, dist in self.intervals:
            ranges, widths = interval_feature_ranges(iv)
            rec = {
                "original_edge": iv.original_edge,
                "kind": iv.kind,
                "distance": float(dist),
                "anchor_i": iv.anchor_i.tolist(),
                "lower": iv.lower.tolist(),
                "upper": iv.upper.tolist(),
                "anchor_j": iv.anchor_j.tolist(),
                "open_lower": iv.open_lower,
                "open_upper": iv.open_upper,
                "ranges": ranges.tolist(),
                "widths": widths.tolist(),
            }
            if conv is not None:
                lo, hi = conv(ranges[:, 0]), conv(ranges[:, 1])
                rec["ranges_original"] = np.column_stack([lo, hi]).tolist()
                rec["anchor_i_original"] = conv(iv.anchor_i).tolist()
                rec["anchor_j_original"] = conv(iv.anchor_j).tolist()
            recs.append(rec)
        doc = {"query": np.asarray(self.query).tolist(), "flagged": self.flagged,
               "method": self.method, "feature_names": names, "intervals": recs}
        if conv is not None:
            doc["query_original"] = conv(self.query).tolist()
        return doc

    def render_text(self, dataset=None, max_features: int = 3) -> str:
        """One sentence per explanation in the style
        "... disagreement ranges between <feature>=<a> and <b>"."""
        n = len(self.query)
        names = list(dataset.feature_names) if dataset is not None else [f"x{i}" for i in range(n)]
        conv = (dataset.to_original_units if dataset is not None and dataset.scaling is not None
                else (lambda v: np.asarray(v, dtype=float)))
        if self.flagged is None:
            head = "Discrepancy status not evaluated."
        elif self.flagged:
            head = "The classifiers of the pool disagree for this prediction."
        else:
            head = "The classifiers of the pool agree for this prediction."
        if not self.intervals:
            return head + " No discrepancy interval was found in the graph."
        iv, dist = self.intervals[0]
        ranges, widths = interval_feature_ranges(iv)
        lo, hi = conv(ranges[:, 0]), conv(ranges[:, 1])
        order = [f for f in np.argsort(-widths, kind="stable") if widths[f] > 0][:max_features]
        if not order:
            order = [0]
        parts = [f"{names[f]}={lo[f]:.4g} and {hi[f]:.4g}" for f in order]
        return (f"{head} The disagreement ranges between " + "; ".join(parts)
                + f" (closest interval, distance {dist:.3g}).")


class Explainer:
    """Caches interval node coordinates so repeated queries only cost one
    distance pass over the interval nodes."""

    def __init__(self, g: DiscrepancyGraph, intervals: Optional[Sequence[DiscrepancyInterval]] = None,
                 pool: Optional[Pool] = None,
                 classifier: Optional[GraphDiscrepancyClassifier] = None):
        self.graph = g
        self.intervals = list(extract_intervals(g) if intervals is None else intervals)
        self.pool = pool
        self.classifier = classifier
        if self.intervals:
            self._ids = np.concatenate([iv.node_ids for iv in self.intervals])
            sizes = np.array([len(iv.node_ids) for iv in self.intervals])
            self._starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
            self._pts = g.points[self._ids]

    def distances(self, q) -> np.ndarray:
        """Distance from q to each interval: the minimum over its chain nodes,
        bounds included."""
        q = np.asarray(q, dtype=float).ravel()
        if q.shape[0] != self.graph.points.shape[1]:
            raise ValueError(f"dimension mismatch: expected {self.graph.points.shape[1]}, got {q.shape[0]}")
        if not self.intervals:
            return np.empty(0)
        d = np.sqrt(np.sum((self._pts - q) ** 2, axis=1))
        return np.minimum.reduceat(d, self._starts)

    def explain(self, q, k_explain: int = 1, method: Optional[str] = None) -> Explanation:
        if k_explain < 1:
            raise ValueError("k_explain must be >= 1")
        q = np.asarray(q, dtype=float).ravel()
        dist = self.distances(q)
        order = np.argsort(dist, kind="stable")[:k_explain]
        if method is None:
            method = "knn_on_graph" if self.classifier is not None and self.pool is None else "indicator"
        flagged = None
        if self.pool is not None or self.classifier is not None:
            flagged = flag(q, self.pool, self.classifier, method)
        return Explanation(q, flagged, method, [(self.intervals[i], float(dist[i])) for i in order])


def explain(q, g: DiscrepancyGraph, intervals: Sequence[DiscrepancyInterval], k_explain: int = 1,
            pool: Optional[Pool] = None, classifier: Optional[GraphDiscrepancyClassifier] = None,
            method: Optional[str] = None) -> Explanation:
    """Closest ``k_explain`` intervals to q, with the discrepancy flag when a
    pool or graph classifier is supplied. An empty interval list gives an
    explanation with no intervals rather than an error."""
    return Explainer(g, intervals, pool, classifier).explain(q, k_explain, method)
