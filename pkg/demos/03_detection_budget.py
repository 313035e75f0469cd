"""Detection at equal sample budget: graph nodes against KDE samples.

With the full budget (k=500, 10 epochs, about two million nodes) every
method saturates on a two-dimensional problem, so this demo also sweeps a
small budget where the placement of the samples matters.
"""

from dig.data import make_half_moons
from dig.evaluation import detection_run, setup_run

for k, epochs in ((10, 0), (10, 4), (10, 10), (50, 10)):
    f = {"dig": [], "kde_knn": [], "kde_best": []}
    for r in range(3):
        rs = setup_run(lambda seed: make_half_moons(1000, 0.3, seed), r, k, epochs)
        rep = detection_run(rs.graph, rs.pool, rs.dataset, rs.split, seed=r)
        f["dig"] += rep.f1_dig
        f["kde_knn"] += rep.f1_kde_knn
        f["kde_best"] += rep.f1_kde_best
    budget = rep.budget[0]
    print(f"k={k:3d} epochs={epochs:2d} budget~{budget:7d}  " + "  ".join(
        f"{m} F1 {sum(v) / len(v):.3f}" for m, v in f.items()))
