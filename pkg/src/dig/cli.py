"""Command-line runner: ``dig learn | explain | eval | info``.

Runs are driven by a JSON config (see ``DEFAULT_CONFIG``); any key can be
overridden with ``--set dotted.key=value`` and the dedicated flags win over
the file. Exit codes: 2 config, 3 data, 4 pool, 5 graph or missing
artifact, 6 query dimension mismatch, 7 evaluation failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .data import DataError, Dataset, Split, fit_scaler, load_csv, load_dataset, \
    make_half_moons, make_linear_oracle_data, save_dataset, split as make_split
from .evaluation import (EvaluationError, aggregate_ranges, cluster_discrepancy_nodes,
                         detection_experiment, epochs_to_csv, eval_precision, precision_vs_epochs)
from .graph import DiscrepancyGraph, GraphError, build_graph, refine
from .intervals import Explainer, GraphDiscrepancyClassifier, extract_intervals
from .pool import DEFAULT_ROSTER, OraclePool, Pool, PoolError, build_pool, train_roster

log = logging.getLogger("dig")

EXIT_CONFIG, EXIT_DATA, EXIT_POOL, EXIT_GRAPH, EXIT_DIM, EXIT_EVAL = 2, 3, 4, 5, 6, 7

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "runs/default",
    "dataset": {"source": "half_moons", "m": 1000, "noise": 0.3, "dim": 2,
                "path": None, "target_column": "target", "drop_columns": []},
    "split": {"train_frac": 2 / 3 - 0.2, "val_frac": 0.2},
    "pool": {"kind": "builtin", "roster": DEFAULT_ROSTER, "epsilon": 0.05,
             "thresholds": [0.4, 0.6]},
    "graph": {"k": 500, "n_epochs": 10, "split_rule": "label_change"},
    "explain": {"k_explain": 1, "flag_method": "indicator", "k_prime": 5},
    "eval": {"n_runs": 10, "mc_samples": 1000, "epoch_list": [0, 1, 2, 4, 6, 8, 10, 15],
             "n_clusters": 5, "k_prime": None, "precision_k": 10, "precision_epochs": 15},
}


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "roster":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_dotted(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise CLIError(f"--set expects key=value, got {assignment!r}", EXIT_CONFIG)
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise CLIError(f"unknown config section {p!r} in {key!r}", EXIT_CONFIG)
        node = node[p]
    node[parts[-1]] = value


def validate_config(cfg: dict) -> dict:
    unknown = set(cfg) - set(DEFAULT_CONFIG)
    if unknown:
        raise CLIError(f"unknown config keys: {sorted(unknown)}", EXIT_CONFIG)
    for section, defaults in DEFAULT_CONFIG.items():
        if isinstance(defaults, dict):
            extra = set(cfg[section]) - set(defaults)
            if extra:
                raise CLIError(f"unknown keys in {section!r}: {sorted(extra)}", EXIT_CONFIG)
    checks = [
        (cfg["pool"]["epsilon"] >= 0, "pool.epsilon must be >= 0"),
        (int(cfg["graph"]["k"]) >= 1, "graph.k must be >= 1"),
        (int(cfg["graph"]["n_epochs"]) >= 0, "graph.n_epochs must be >= 0"),
        (int(cfg["explain"]["k_explain"]) >= 1, "explain.k_explain must be >= 1"),
        (cfg["explain"]["flag_method"] in ("indicator", "knn_on_graph"),
         "explain.flag_method must be indicator or knn_on_graph"),
        (cfg["dataset"]["source"] in ("half_moons", "linear_oracle", "csv"),
         "dataset.source must be half_moons, linear_oracle or csv"),
        (cfg["pool"]["kind"] in ("builtin", "oracle"), "pool.kind must be builtin or oracle"),
        (int(cfg["eval"]["mc_samples"]) >= 1, "eval.mc_samples must be >= 1"),
        (int(cfg["eval"]["n_runs"]) >= 1, "eval.n_runs must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise CLIError(msg, EXIT_CONFIG)
    return cfg


def load_config(path: Optional[str], overrides=(), seed=None, out=None, k_explain=None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CLIError(f"config not found: {path}", EXIT_CONFIG) from None
        except json.JSONDecodeError as exc:
            raise CLIError(f"config {path} is not valid JSON: {exc}", EXIT_CONFIG) from None
        cfg = _merge(cfg, user)
    for a in overrides or ():
        _set_dotted(cfg, a)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if k_explain is not None:
        cfg["explain"]["k_explain"] = k_explain
    return validate_config(cfg)


def config_hash(cfg: dict) -> str:
    """Hash of everything that determines the artifacts (the output directory
    is excluded)."""
    doc = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# pipeline


def make_dataset(cfg: dict, seed: int) -> Dataset:
    ds = cfg["dataset"]
    if ds["source"] == "half_moons":
        return make_half_moons(int(ds["m"]), float(ds["noise"]), seed)
    if ds["source"] == "linear_oracle":
        return make_linear_oracle_data(int(ds["m"]), int(ds["dim"]), seed)
    if not ds.get("path"):
        raise DataError("dataset.path is required for csv sources")
    return load_csv(ds["path"], ds["target_column"], ds.get("drop_columns") or ())


def prepare(cfg: dict, seed: int) -> tuple[Dataset, Split, Pool]:
    try:
        d = make_dataset(cfg, seed)
        s = make_split(d, cfg["split"]["train_frac"], cfg["split"]["val_frac"], seed)
        d = fit_scaler(d, s)
    except DataError as exc:
        raise CLIError(str(exc), EXIT_DATA) from None
    try:
        if cfg["pool"]["kind"] == "oracle":
            p = OraclePool(*cfg["pool"]["thresholds"], n_features=d.n_features)
        else:
            cands = train_roster(d, s, cfg["pool"]["roster"], seed)
            p = build_pool(cands, d, s, cfg["pool"]["epsilon"])
    except (PoolError, ValueError) as exc:
        raise CLIError(f"pool: {exc}", EXIT_POOL) from None
    return d, s, p


def learn_graph(cfg: dict, p: Pool, d: Dataset, s: Split) -> DiscrepancyGraph:
    gc = cfg["graph"]
    try:
        g = build_graph(p, d, s, int(gc["k"]))
        return refine(g, p, int(gc["n_epochs"]), gc.get("split_rule", "label_change"))
    except (GraphError, ValueError) as exc:
        raise CLIError(f"graph: {exc}", EXIT_GRAPH) from None


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], chash: str) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        if not rows:
            fh.write("config_hash\n")
            return
        fields = list(rows[0]) + ["config_hash"]
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(dict(r, config_hash=chash))


def cmd_learn(cfg: dict) -> Path:
    """Generate/load data, build the pool and the refined graph, and write
    ``pool.json``, ``graph.json``, ``dataset/`` and ``manifest.json``."""
    t0 = time.perf_counter()
    seed = int(cfg["seed"])
    chash = config_hash(cfg)
    d, s, p = prepare(cfg, seed)
    g = learn_graph(cfg, p, d, s)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / "dataset", d, s)
    _write_json(out / "pool.json", dict(p.to_dict(), config_hash=chash))
    _write_json(out / "graph.json", dict(g.to_dict(), config_hash=chash))
    manifest = {
        "config_hash": chash,
        "config": cfg,
        "seeds": {"dataset": seed, "split": seed, "pool": seed},
        "pool": {"members": p.names, "val_scores": list(p.val_scores), "epsilon": p.epsilon},
        "graph": {"k": g.k, "n_epochs": g.n_epochs, "nodes": g.n_nodes, "edges": g.n_edges,
                  "initial_edges": g.n_initial_edges},
        # values below vary between identical runs
        "excluded": {"wall_time_s": round(time.perf_counter() - t0, 3),
                     "created": time.strftime("%Y-%m-%dT%H:%M:%S")},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"learned graph: {g.n_nodes} nodes, {g.n_edges} edges "
          f"({g.n_initial_edges} initial) with pool {p.names} -> {out}")
    return out


def load_artifact(out: Path) -> tuple[Dataset, Split, Pool, DiscrepancyGraph]:
    out = Path(out)
    needed = [out / "pool.json", out / "graph.json", out / "dataset" / "dataset.json"]
    for f in needed:
        if not f.is_file():
            raise CLIError(f"artifact missing: {f}", EXIT_GRAPH)
    d, s = load_dataset(out / "dataset")
    return d, s, Pool.load(out / "pool.json"), DiscrepancyGraph.load(out / "graph.json")


def _parse_queries(query: Optional[str], queries: Optional[str]) -> np.ndarray:
    rows = []
    if query:
        try:
            rows.append([float(v) for v in query.split(",")])
        except ValueError:
            raise CLIError(f"cannot parse --query {query!r}", EXIT_DIM) from None
    if queries:
        path = Path(queries)
        if not path.is_file():
            raise CLIError(f"queries file not found: {path}", EXIT_DATA)
        with path.open(newline="", encoding="utf-8") as fh:
            for r, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if r == 1:
                        continue  # header
                    raise CLIError(f"cannot parse query row {r} of {path}", EXIT_DATA) from None
    if not rows:
        raise CLIError("no query given (use --query or --queries)", EXIT_CONFIG)
    if len({len(r) for r in rows}) != 1:
        raise CLIError("queries have inconsistent lengths", EXIT_DIM)
    return np.asarray(rows, dtype=float)


def cmd_explain(cfg: dict, query: Optional[str] = None, queries: Optional[str] = None,
                scaled: bool = False) -> list[dict]:
    """Flag and explain each query (given in original units unless
    ``scaled``) with its ``k_explain`` closest intervals."""
    out = Path(cfg["out"])
    d, s, p, g = load_artifact(out)
    Q = _parse_queries(query, queries)
    if Q.shape[1] != d.n_features:
        raise CLIError(f"dimension mismatch: queries have {Q.shape[1]} values, "
                       f"data has {d.n_features} features", EXIT_DIM)
    if not scaled and d.scaling is not None:
        lo, hi = d.scaling[:, 0], d.scaling[:, 1]
        span = np.where(hi > lo, hi - lo, 1.0)
        Q = np.where(hi > lo, (Q - lo) / span, 0.0)
    ec = cfg["explain"]
    clf = None
    if ec["flag_method"] == "knn_on_graph":
        clf = GraphDiscrepancyClassifier.from_graph(g, min(int(ec["k_prime"]), g.n_nodes))
    explainer = Explainer(g, pool=p, classifier=clf)
    docs, lines = [], []
    for q in Q:
        ex = explainer.explain(q, int(ec["k_explain"]), ec["flag_method"])
        doc = ex.to_dict(d)
        if len(ex.intervals) > 1:
            agg = aggregate_ranges([iv for iv, _ in ex.intervals])
            doc["aggregated_ranges"] = agg.tolist()
            doc["aggregated_ranges_original"] = np.column_stack(
                [d.to_original_units(agg[:, 0]), d.to_original_units(agg[:, 1])]).tolist()
        docs.append(doc)
        lines.append(ex.render_text(d))
    chash = config_hash(cfg)
    _write_json(out / "explanations.json", {"config_hash": chash, "explanations": docs})
    (out / "explanations.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)
    return docs


EVAL_CHOICES = ("detection", "precision", "epochs", "aggregate", "cluster")


def _summary_table(title: str, rows: list[tuple], header=("method", "mean", "std")) -> str:
    lines = [title, f"{header[0]:<24}" + "".join(f"{h:>12}" for h in header[1:])]
    for name, *vals in rows:
        lines.append(f"{name:<24}" + "".join(f"{v:>12.4f}" for v in vals))
    return "\n".join(lines)


def cmd_eval(cfg: dict, which: str) -> dict:
    """Run one evaluation and write ``eval_<which>.json`` / ``.csv`` in the
    output directory."""
    if which not in EVAL_CHOICES:
        raise CLIError(f"--which must be one of {EVAL_CHOICES}", EXIT_CONFIG)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    ev = cfg["eval"]
    seed = int(cfg["seed"])
    n_runs = int(ev["n_runs"])
    try:
        if which == "detection":
            def factory(sd):
                return make_dataset(cfg, sd)
            rep = detection_experiment(factory, n_runs, seed, int(cfg["graph"]["k"]),
                                       int(cfg["graph"]["n_epochs"]), cfg["pool"]["epsilon"],
                                       cfg["pool"]["roster"], ev["k_prime"])
            doc, rows = rep.to_dict(), rep.rows()
            summ = rep.summary()
            table = _summary_table(f"detection F1 over {rep.n_runs} runs (positive = discrepancy)",
                                   [(k, v["mean"], v["std"]) for k, v in summ.items()])
        elif which == "precision":
            k, ne = int(ev["precision_k"]), int(ev["precision_epochs"])
            rows, per_run = [], []
            for r in range(n_runs):
                d, s, p = prepare(cfg, seed + r)
                g0 = build_graph(p, d, s, k)
                base = eval_precision(g0, p, int(ev["mc_samples"]), seed + r)
                ref = eval_precision(refine(g0, p, ne, cfg["graph"]["split_rule"]), p,
                                     int(ev["mc_samples"]), seed + r)
                per_run.append({"run": r, "seed": seed + r, "baseline": base.mean,
                                "dig": ref.mean, "n_intervals": ref.n_intervals,
                                "excluded_edges": ref.excluded_edges})
                rows += [dict(x, run=r, method="baseline") for x in base.rows()]
                rows += [dict(x, run=r, method="dig") for x in ref.rows()]
            b = [x["baseline"] for x in per_run]
            dg = [x["dig"] for x in per_run]
            doc = {"k": k, "n_epochs": ne, "mc_samples": int(ev["mc_samples"]), "runs": per_run,
                   "summary": {"baseline": {"mean": float(np.mean(b)), "std": float(np.std(b))},
                               "dig": {"mean": float(np.mean(dg)), "std": float(np.std(dg))}}}
            table = _summary_table(f"interval precision over {n_runs} runs (k={k}, n_epochs={ne})",
                                   [("baseline (0 epochs)", np.mean(b), np.std(b)),
                                    ("dig", np.mean(dg), np.std(dg))])
        elif which == "epochs":
            d, s, p = prepare(cfg, seed)
            reps = precision_vs_epochs(p, d, s, int(ev["precision_k"]), ev["epoch_list"],
                                       int(ev["mc_samples"]), seed)
            doc = {"reports": [r.to_dict() for r in reps]}
            rows = list(csv.DictReader(io.StringIO(epochs_to_csv(reps))))
            table = _summary_table("precision by epoch budget",
                                   [(f"n_epochs={r.n_epochs}", r.mean, r.std) for r in reps])
        elif which == "aggregate":
            d, s, p, g = load_artifact(out) if (out / "graph.json").is_file() else \
                (*prepare(cfg, seed), None)
            if g is None:
                g = learn_graph(cfg, p, d, s)
            agg = aggregate_ranges(extract_intervals(g))
            lo, hi = d.to_original_units(agg[:, 0]), d.to_original_units(agg[:, 1])
            rows = [{"feature": n, "low": agg[i, 0], "high": agg[i, 1], "low_original": lo[i],
                     "high_original": hi[i]} for i, n in enumerate(d.feature_names)]
            doc = {"aggregated_ranges": rows}
            table = "\n".join(f"{r['feature']:<24}{r['low_original']:>12.4g}{r['high_original']:>12.4g}"
                              for r in rows)
        else:
            d, s, p, g = load_artifact(out) if (out / "graph.json").is_file() else \
                (*prepare(cfg, seed), None)
            if g is None:
                g = learn_graph(cfg, p, d, s)
            rep = cluster_discrepancy_nodes(g, int(ev["n_clusters"]), seed)
            doc = rep.to_dict()
            pts = d.to_original_units(g.points)
            rows = rep.rows(pts)
            table = _summary_table("k-means over discrepancy nodes (variance per cluster)",
                                   [(f"cluster {c}", float(np.sum(rep.assignments == c)), float(v))
                                    for c, v in enumerate(rep.variances)],
                                   header=("cluster", "size", "variance"))
    except (EvaluationError, ValueError) as exc:
        if isinstance(exc, (DataError,)):
            raise CLIError(str(exc), EXIT_DATA) from None
        raise CLIError(f"evaluation {which}: {exc}", EXIT_EVAL) from None
    doc = dict(doc, config_hash=chash, which=which)
    _write_json(out / f"eval_{which}.json", doc)
    _write_csv(out / f"eval_{which}.csv", rows, chash)
    print(table)
    return doc


def cmd_info(cfg: dict) -> dict:
    out = Path(cfg["out"])
    if not (out / "graph.json").is_file():
        info = {"config_hash": config_hash(cfg), "config": cfg, "artifact": None}
        print(json.dumps(info, indent=1, sort_keys=True))
        return info
    d, s, p, g = load_artifact(out)
    ivs = extract_intervals(g)
    kinds = {}
    for iv in ivs:
        kinds[iv.kind] = kinds.get(iv.kind, 0) + 1
    info = {"config_hash": config_hash(cfg), "dataset": {"rows": d.n_rows, "features": d.n_features},
            "pool": {"members": p.names, "val_scores": list(p.val_scores), "epsilon": p.epsilon},
            "graph": {"nodes": g.n_nodes, "edges": g.n_edges, "initial_edges": g.n_initial_edges,
                      "n_epochs": g.n_epochs, "discrepancy_nodes": int(g.flags.sum())},
            "intervals": kinds}
    print(json.dumps(info, indent=1, sort_keys=True))
    return info


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dig", description="Discrepancy intervals for classifier pools")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("learn", "explain", "eval", "info"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output/artifact directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. graph.k=10")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "explain":
            sp.add_argument("--query", help='comma-separated point, e.g. "0.5,0.2"')
            sp.add_argument("--queries", help="CSV file of query points")
            sp.add_argument("--k-explain", type=int)
            sp.add_argument("--scaled", action="store_true",
                            help="queries are already in scaled units")
        if name == "eval":
            sp.add_argument("--which", required=True, choices=EVAL_CHOICES)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set, args.seed, args.out,
                          getattr(args, "k_explain", None))
        if args.command == "learn":
            cmd_learn(cfg)
        elif args.command == "explain":
            cmd_explain(cfg, args.query, args.queries, args.scaled)
        elif args.command == "eval":
            cmd_eval(cfg, args.which)
        else:
            cmd_info(cfg)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    return 0


if __name__ == "__main__":
    sys.exit(main())
