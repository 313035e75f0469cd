"""Evaluation protocols: discrepancy detection against KDE sampling at equal
budget, Monte-Carlo interval precision, and global analytics (aggregated
ranges, k-means over discrepancy nodes)."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset, Split, fit_scaler, split as make_split
from .graph import MIDPOINT, DiscrepancyGraph, build_graph, refine
from .intervals import DiscrepancyInterval, Explainer, GraphDiscrepancyClassifier, extract_intervals
from .learners import make_learner
from .metrics import f1_score
from .pool import Pool, build_pool, discrepancy_indicator, train_roster

log = logging.getLogger(__name__)

K_PRIME_CANDIDATES = (1, 3, 5, 7, 11, 15)


class EvaluationError(RuntimeError):
    pass


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if len(v) == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std())


def _rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# KDE competitor


def silverman_bandwidth(X: np.ndarray) -> np.ndarray:
    """Per-dimension Silverman rule for a Gaussian product kernel:
    ``sigma_d * (4 / ((n + 2) m)) ** (1 / (n + 4))``."""
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    sigma = X.std(axis=0, ddof=1) if m > 1 else np.zeros(n)
    factor = (4.0 / ((n + 2) * m)) ** (1.0 / (n + 4))
    bw = sigma * factor
    # a constant column still needs a positive kernel width
    bw[bw == 0] = factor * 1e-3
    return bw


def kde_sample(X: np.ndarray, n_samples: int, rng: np.random.Generator,
               bandwidth: Optional[np.ndarray] = None, return_rows: bool = False):
    """Draw from the Gaussian KDE of ``X``: a uniformly chosen row plus
    diagonal Gaussian noise. With ``return_rows`` the chosen row of every
    sample is returned as well."""
    X = np.asarray(X, dtype=float)
    bw = silverman_bandwidth(X) if bandwidth is None else np.asarray(bandwidth, dtype=float)
    rows = rng.integers(0, len(X), size=n_samples)
    S = X[rows] + rng.normal(size=(n_samples, X.shape[1])) * bw
    return (S, rows) if return_rows else S


# --------------------------------------------------------------------------
# k' selection


def select_k_prime(points: np.ndarray, flags: np.ndarray, seed: int = 0,
                   candidates: Sequence[int] = K_PRIME_CANDIDATES, folds: int = 5,
                   max_samples: int = 20_000, groups: Optional[np.ndarray] = None
                   ) -> tuple[int, dict]:
    """5-fold cross-validated k' for the k'-NN discrepancy classifier.

    Maximizes mean F1 (discrepancy = positive); ties go to the smaller k'.
    At most ``max_samples`` points (uniform subsample) enter the folds. With
    ``groups``, whole groups are assigned to folds, so near-copies (nodes of
    one chain, samples around one training row) never straddle a fold.
    """
    rng = np.random.default_rng(seed)
    points = np.asarray(points, dtype=float)
    flags = np.asarray(flags).astype(np.int8)
    idx = rng.permutation(len(points))
    if len(idx) > max_samples:
        idx = idx[:max_samples]
    if groups is None:
        parts = np.array_split(idx, folds)
    else:
        g = np.asarray(groups)[idx]
        uniq, inv = np.unique(g, return_inverse=True)
        fold_of = rng.permutation(len(uniq)) % folds
        parts = [idx[fold_of[inv] == f] for f in range(folds)]
    scores = {}
    for k in candidates:
        fold_scores = []
        for f in range(folds):
            test = parts[f]
            train = np.concatenate([parts[j] for j in range(folds) if j != f])
            if len(test) == 0 or k > len(train):
                continue
            clf = GraphDiscrepancyClassifier(points[train], flags[train], k)
            fold_scores.append(f1_score(flags[test], clf.predict(points[test]), zero_division=0.0))
        if fold_scores:
            scores[int(k)] = float(np.mean(fold_scores))
    if not scores:
        raise EvaluationError("no k' candidate could be cross-validated")
    best = max(scores.values())
    chosen = min(k for k, v in scores.items() if v == best)
    return chosen, scores


# --------------------------------------------------------------------------
# Detection at equal sample budget


@dataclass
class DetectionReport:
    f1_dig: list = field(default_factory=list)
    f1_kde_knn: list = field(default_factory=list)
    f1_kde_best: list = field(default_factory=list)
    budget: list = field(default_factory=list)
    k_prime_dig: list = field(default_factory=list)
    k_prime_kde: list = field(default_factory=list)
    best_learner: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    positive_class: str = "discrepancy"
    bandwidth_rule: str = "silverman (per dimension, training features)"

    @property
    def n_runs(self) -> int:
        return len(self.seeds)

    def summary(self) -> dict:
        out = {}
        for name in ("f1_dig", "f1_kde_knn", "f1_kde_best"):
            m, s = _mean_std(getattr(self, name))
            out[name] = {"mean": m, "std": s}
        return out

    def extend(self, other: "DetectionReport") -> None:
        for name in ("f1_dig", "f1_kde_knn", "f1_kde_best", "budget", "k_prime_dig",
                     "k_prime_kde", "best_learner", "seeds", "errors"):
            getattr(self, name).extend(getattr(other, name))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["n_runs"] = self.n_runs
        doc["summary"] = self.summary()
        return doc

    def rows(self) -> list[dict]:
        return [{"run": i, "seed": self.seeds[i], "budget": self.budget[i],
                 "k_prime_dig": self.k_prime_dig[i], "k_prime_kde": self.k_prime_kde[i],
                 "f1_dig": self.f1_dig[i], "f1_kde_knn": self.f1_kde_knn[i],
                 "f1_kde_best": self.f1_kde_best[i], "error": self.errors[i] or ""}
                for i in range(self.n_runs)]

    def to_csv(self) -> str:
        return _rows_to_csv(self.rows())


def node_groups(g: DiscrepancyGraph) -> np.ndarray:
    """CV group of each node: midpoints by original edge, training nodes each
    on their own (ids offset past the edge ids)."""
    return np.where(g.origin == MIDPOINT, g.source, g.n_initial_edges + np.arange(g.n_nodes))


def _safe_f1(y_true, y_pred):
    try:
        return f1_score(y_true, y_pred), None
    except ValueError as exc:
        return float("nan"), str(exc)


def _retrain_best(p: Pool, X: np.ndarray, y01: np.ndarray, seed: int, max_train: int):
    """Refit the pool's top learner on discrepancy labels (+1 = discrepancy)."""
    if len(np.unique(y01)) < 2:
        const = int(y01[0]) if len(y01) else 0
        return (lambda Z: np.full(len(Z), const, dtype=np.int8)), "constant"
    best = p.members[0]
    rng = np.random.default_rng(seed)
    if len(X) > max_train:
        sel = rng.choice(len(X), max_train, replace=False)
        X, y01 = X[sel], y01[sel]
        if len(np.unique(y01)) < 2:
            const = int(y01[0])
            return (lambda Z: np.full(len(Z), const, dtype=np.int8)), "constant"
    kind = getattr(best, "kind", "custom")
    params = dict(best.params()) if kind in ("decision_tree", "logistic_regression", "knn",
                                             "naive_bayes", "random_forest") else {}
    if kind not in ("decision_tree", "logistic_regression", "knn", "naive_bayes", "random_forest"):
        kind = "random_forest"
    if kind == "knn":
        params["k"] = min(params.get("k", 15), len(X))
    model = make_learner(kind, params, seed).fit(X, np.where(y01 == 1, 1, -1))
    return (lambda Z: (model.predict(Z) == 1).astype(np.int8)), kind


def detection_run(g: DiscrepancyGraph, p: Pool, d: Dataset, s: Split, seed: int,
                  k_prime: Optional[int] = None, max_cv_samples: int = 20_000,
                  max_best_train: int = 20_000) -> DetectionReport:
    """One run of the detection protocol on a fixed refined graph.

    Ground truth is the pool indicator on the test rows. DIG uses the k'-NN
    over all graph nodes; the KDE competitors sample exactly as many points
    as the graph has nodes. Both k' values come from grouped CV (chains for
    the graph, source rows for the KDE samples).
    """
    if len(s.test) == 0:
        raise EvaluationError("empty test split")
    rng = np.random.default_rng(seed)
    X_test = d.features[s.test]
    truth = discrepancy_indicator(p, X_test)

    kd = k_prime
    if kd is None:
        kd, _ = select_k_prime(g.points, g.flags, seed, max_samples=max_cv_samples,
                               groups=node_groups(g))
    dig_pred = GraphDiscrepancyClassifier(g.points, g.flags, min(kd, g.n_nodes)).predict(X_test)

    budget = g.n_nodes
    X_kde, kde_rows = kde_sample(d.features[s.train], budget, rng, return_rows=True)
    if len(X_kde) != budget:
        raise EvaluationError("KDE budget differs from the graph node count")
    y_kde = discrepancy_indicator(p, X_kde)
    kk = k_prime
    if kk is None:
        kk, _ = select_k_prime(X_kde, y_kde, seed + 1, max_samples=max_cv_samples,
                               groups=kde_rows)
    knn_pred = GraphDiscrepancyClassifier(X_kde, y_kde, min(kk, budget)).predict(X_test)
    best_fn, best_kind = _retrain_best(p, X_kde, y_kde, seed, max_best_train)
    best_pred = best_fn(X_test)

    errs = []
    f_dig, e = _safe_f1(truth, dig_pred)
    errs.append(e)
    f_knn, e = _safe_f1(truth, knn_pred)
    errs.append(e)
    f_best, e = _safe_f1(truth, best_pred)
    errs.append(e)
    err = next((x for x in errs if x), None)
    return DetectionReport([f_dig], [f_knn], [f_best], [budget], [int(kd)], [int(kk)],
                           [best_kind], [int(seed)], [err])


def eval_detection(g: DiscrepancyGraph, p: Pool, d: Dataset, s: Split,
                   k_prime: Optional[int] = None, n_runs: int = 1, seed: int = 0,
                   **kw) -> DetectionReport:
    """Repeat the detection protocol on a fixed graph and pool; run r draws
    its KDE sample and CV folds from ``seed + r``. ``k_prime=None`` selects
    k' by cross-validation."""
    report = DetectionReport()
    for r in range(n_runs):
        report.extend(detection_run(g, p, d, s, seed + r, k_prime, **kw))
    return report


@dataclass
class RunSetup:
    """Everything one experiment run needs: scaled data, split, pool, graph."""
    dataset: Dataset
    split: Split
    pool: Pool
    graph: DiscrepancyGraph


def setup_run(make_data: Callable[[int], Dataset], seed: int, k: int, n_epochs: int,
              epsilon: float = 0.05, roster: Optional[dict] = None,
              train_frac: float = 2 / 3 - 0.2, val_frac: float = 0.2) -> RunSetup:
    d = make_data(seed)
    s = make_split(d, train_frac, val_frac, seed)
    d = fit_scaler(d, s)
    p = build_pool(train_roster(d, s, roster, seed), d, s, epsilon)
    g = refine(build_graph(p, d, s, k), p, n_epochs)
    return RunSetup(d, s, p, g)


def detection_experiment(make_data: Callable[[int], Dataset], n_runs: int = 10, seed: int = 0,
                         k: int = 500, n_epochs: int = 10, epsilon: float = 0.05,
                         roster: Optional[dict] = None, k_prime: Optional[int] = None,
                         **kw) -> DetectionReport:
    """Full detection protocol: run r regenerates data, split, pool and graph
    with seed + r."""
    report = DetectionReport()
    for r in range(n_runs):
        rs = setup_run(make_data, seed + r, k, n_epochs, epsilon, roster)
        run = detection_run(rs.graph, rs.pool, rs.dataset, rs.split, seed + r, k_prime, **kw)
        log.info("detection run %d: nodes=%d f1 dig=%.3f kde-knn=%.3f kde-best=%.3f", r,
                 run.budget[0], run.f1_dig[0], run.f1_kde_knn[0], run.f1_kde_best[0])
        report.extend(run)
    return report


# --------------------------------------------------------------------------
# Interval precision


@dataclass
class PrecisionReport:
    precisions: list
    n_epochs: int
    mc_samples: int
    excluded_edges: int
    excluded_intervals: int
    kinds: list = field(default_factory=list)
    original_edges: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.precisions))

    @property
    def std(self) -> float:
        return float(np.std(self.precisions))

    @property
    def n_intervals(self) -> int:
        return len(self.precisions)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.update(mean=self.mean, std=self.std, n_intervals=self.n_intervals)
        return doc

    def rows(self) -> list[dict]:
        return [{"interval": i, "original_edge": self.original_edges[i], "kind": self.kinds[i],
                 "n_epochs": self.n_epochs, "precision": self.precisions[i]}
                for i in range(self.n_intervals)]

    def to_csv(self) -> str:
        return _rows_to_csv(self.rows())


def interval_precision(p: Pool, lower, upper, mc_samples: int, rng: np.random.Generator) -> float:
    """Fraction of points drawn uniformly on [lower, upper] where the pool
    disagrees."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    t = rng.uniform(size=(mc_samples, 1))
    return float(discrepancy_indicator(p, lower + t * (upper - lower)).mean())


def eval_precision(g: DiscrepancyGraph, p: Pool, mc_samples: int = 1000, seed: int = 0,
                   intervals: Optional[Sequence[DiscrepancyInterval]] = None) -> PrecisionReport:
    """Monte-Carlo precision of every interval whose original edge has no
    training endpoint in discrepancy."""
    if mc_samples < 1:
        raise EvaluationError("mc_samples must be >= 1")
    ivs = extract_intervals(g) if intervals is None else list(intervals)
    oe = g.original_edges
    bad_edge = (g.flags[oe[:, 0]] == 1) | (g.flags[oe[:, 1]] == 1) if len(oe) else np.zeros(0, bool)
    kept = [iv for iv in ivs if not bad_edge[iv.original_edge]]
    if not kept:
        raise EvaluationError("no interval left after excluding edges with discrepancy endpoints")
    rng = np.random.default_rng(seed)
    lo = np.array([iv.lower for iv in kept])
    hi = np.array([iv.upper for iv in kept])
    t = rng.uniform(size=(len(kept), mc_samples, 1))
    pts = lo[:, None, :] + t * (hi - lo)[:, None, :]
    flags = discrepancy_indicator(p, pts.reshape(-1, lo.shape[1])).reshape(len(kept), mc_samples)
    prec = flags.mean(axis=1)
    return PrecisionReport(
        precisions=prec.tolist(), n_epochs=g.n_epochs, mc_samples=mc_samples,
        excluded_edges=int(bad_edge.sum()), excluded_intervals=len(ivs) - len(kept),
        kinds=[iv.kind for iv in kept], original_edges=[iv.original_edge for iv in kept])


def precision_vs_epochs(p: Pool, d: Dataset, s: Split, k: int, epoch_list: Sequence[int],
                        mc_samples: int = 1000, seed: int = 0,
                        graph: Optional[DiscrepancyGraph] = None) -> list[PrecisionReport]:
    """Precision at each epoch budget, refining one initial graph
    incrementally (identical to refining from scratch for each budget)."""
    epoch_list = list(epoch_list)
    if epoch_list != sorted(epoch_list) or (epoch_list and epoch_list[0] < 0):
        raise EvaluationError("epoch_list must be ascending and nonnegative")
    g = build_graph(p, d, s, k) if graph is None else graph
    out = []
    for e in epoch_list:
        if e > g.n_epochs:
            g = refine(g, p, e - g.n_epochs)
        out.append(eval_precision(g, p, mc_samples, seed))
    return out


def epochs_to_csv(reports: Sequence[PrecisionReport]) -> str:
    return _rows_to_csv([{"n_epochs": r.n_epochs, "mean": r.mean, "std": r.std,
                          "n_intervals": r.n_intervals, "excluded_edges": r.excluded_edges}
                         for r in reports])


# --------------------------------------------------------------------------
# Analytics


def aggregate_ranges(intervals: Sequence[DiscrepancyInterval], top: Optional[int] = None,
                     q=None, graph: Optional[DiscrepancyGraph] = None) -> np.ndarray:
    """Per-feature (min low, max high) over the intervals, or over the
    ``top`` intervals closest to ``q`` (which needs the graph)."""
    intervals = list(intervals)
    if not intervals:
        raise EvaluationError("cannot aggregate an empty interval list")
    if q is not None:
        if top is None or graph is None:
            raise EvaluationError("aggregation around a query needs top and graph")
        intervals = [iv for iv, _ in Explainer(graph, intervals).explain(q, top).intervals]
    lows = np.array([np.minimum(iv.lower, iv.upper) for iv in intervals])
    highs = np.array([np.maximum(iv.lower, iv.upper) for iv in intervals])
    return np.column_stack([lows.min(axis=0), highs.max(axis=0)])


@dataclass
class ClusterReport:
    n_clusters: int
    node_ids: np.ndarray
    assignments: np.ndarray
    centroids: np.ndarray
    variances: np.ndarray
    objective_history: list
    seed: int

    def to_dict(self) -> dict:
        return {"n_clusters": self.n_clusters, "node_ids": self.node_ids.tolist(),
                "assignments": self.assignments.tolist(), "centroids": self.centroids.tolist(),
                "variances": self.variances.tolist(), "objective_history": self.objective_history,
                "seed": self.seed}

    def rows(self, points: np.ndarray) -> list[dict]:
        return [dict({"node_id": int(n), "cluster": int(c)},
                     **{f"x{j}": float(v) for j, v in enumerate(points[n])})
                for n, c in zip(self.node_ids, self.assignments)]


def kmeans(X: np.ndarray, n_clusters: int, seed: int = 0, max_iter: int = 300,
           tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray, list]:
    """Lloyd's algorithm with k-means++ seeding. Returns assignments,
    centroids and the objective (sum of squared distances) per iteration."""
    X = np.asarray(X, dtype=float)
    m = len(X)
    if n_clusters < 1 or n_clusters > m:
        raise EvaluationError(f"need 1 <= n_clusters <= {m}")
    rng = np.random.default_rng(seed)
    centers = [X[rng.integers(m)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, n_clusters):
        total = d2.sum()
        i = rng.choice(m, p=d2 / total) if total > 0 else rng.integers(m)
        centers.append(X[i])
        d2 = np.minimum(d2, np.sum((X - X[i]) ** 2, axis=1))
    C = np.array(centers)
    sq = np.einsum("ij,ij->i", X, X)
    history = []
    assign = None
    for _ in range(max_iter):
        dist = np.maximum(sq[:, None] - 2.0 * X @ C.T + np.einsum("ij,ij->i", C, C)[None, :], 0.0)
        new_assign = dist.argmin(axis=1)
        history.append(float(dist[np.arange(m), new_assign].sum()))
        converged = assign is not None and (
            np.array_equal(new_assign, assign) or history[-2] - history[-1] <= tol * history[-2])
        assign = new_assign
        if converged:
            break
        for c in range(n_clusters):
            members = X[assign == c]
            if len(members):
                C[c] = members.mean(axis=0)
    return assign, C, history


def cluster_discrepancy_nodes(g: DiscrepancyGraph, n_clusters: int = 5, seed: int = 0,
                              max_iter: int = 300) -> ClusterReport:
    """k-means over the points of discrepancy nodes. ``variances`` is the
    mean squared distance of each cluster's members to its centroid."""
    ids = np.flatnonzero(g.flags == 1)
    if len(ids) < n_clusters:
        raise EvaluationError(f"{len(ids)} discrepancy nodes, fewer than {n_clusters} clusters")
    X = g.points[ids]
    assign, C, history = kmeans(X, n_clusters, seed, max_iter)
    var = np.array([np.mean(np.sum((X[assign == c] - C[c]) ** 2, axis=1)) if np.any(assign == c)
                    else 0.0 for c in range(n_clusters)])
    return ClusterReport(n_clusters, ids, assign, C, var, history, seed)
