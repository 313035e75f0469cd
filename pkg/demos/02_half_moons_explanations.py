"""Explaining pool disagreement on half-moons.

Trains the built-in roster, keeps the learners within epsilon=0.05 of the
best validation F1, learns the refined graph and then explains a few test
points by their closest discrepancy intervals.
"""

import numpy as np

from dig.data import fit_scaler, make_half_moons, split
from dig.evaluation import aggregate_ranges, cluster_discrepancy_nodes
from dig.graph import build_graph, refine
from dig.intervals import Explainer, extract_intervals
from dig.pool import build_pool, pool_disagreement_rate, train_roster

d = make_half_moons(1000, noise=0.3, seed=0)
s = split(d, seed=0)
d = fit_scaler(d, s)

pool = build_pool(train_roster(d, s, seed=0), d, s, epsilon=0.05)
for name, score in zip(pool.names, pool.val_scores):
    print(f"  {name:<32} validation F1 {score:.3f}")
rate = pool_disagreement_rate(pool, d.features[s.test])
print(f"members disagree on {100 * rate:.1f}% of the test points")

g = refine(build_graph(pool, d, s, k=10), pool, n_epochs=15)
intervals = extract_intervals(g)
kinds = {k: sum(iv.kind == k for iv in intervals) for k in ("crossing", "transition", "bump", "open")}
print(f"graph: {g.n_nodes} nodes, {int(g.flags.sum())} in discrepancy; intervals {kinds}")

explainer = Explainer(g, intervals, pool=pool)
test_X = d.features[s.test]
flagged = np.flatnonzero(pool.indicator(test_X))
for i in list(flagged[:2]) + [int(np.flatnonzero(pool.indicator(test_X) == 0)[0])]:
    ex = explainer.explain(test_X[i], k_explain=10)
    print("\nquery (original units):", np.round(d.to_original_units(test_X[i]), 3))
    print(" ", ex.render_text(d))
    agg = ex.aggregated_ranges()
    lo, hi = d.to_original_units(agg[:, 0]), d.to_original_units(agg[:, 1])
    print("  10 closest intervals span", ", ".join(
        f"{n} in [{a:.3f}, {b:.3f}]" for n, a, b in zip(d.feature_names, lo, hi)))

# global view: where do the discrepancy nodes concentrate?
agg = aggregate_ranges(intervals)
print("\nall intervals span", np.round(d.to_original_units(agg.T), 3).T.tolist())
clusters = cluster_discrepancy_nodes(g, n_clusters=5, seed=0)
for c, var in enumerate(clusters.variances):
    centre = d.to_original_units(clusters.centroids[c])
    size = int(np.sum(clusters.assignments == c))
    print(f"  cluster {c}: {size:6d} nodes around {np.round(centre, 3)}, variance {var:.4f}")
