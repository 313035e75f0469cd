"""Tabular binary-classification datasets: loading, splitting, scaling and
synthetic generators."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with targets in {-1, +1}.

    ``scaling`` holds one (min, max) row per feature once ``fit_scaler`` has
    been applied, otherwise it is None.
    """

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]
    scaling: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.targets).astype(int)
        if X.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        m, n = X.shape
        if m < 2 or n < 1:
            raise DataError(f"need at least 2 rows and 1 column, got {m}x{n}")
        if y.shape != (m,):
            raise DataError("targets length does not match feature rows")
        if not np.all(np.isin(y, (-1, 1))):
            raise DataError("targets must be in {-1, +1}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite values")
        if len(self.feature_names) != n:
            raise DataError("feature_names length does not match columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.scaling is not None:
            sc = np.asarray(self.scaling, dtype=float).reshape(n, 2)
            sc.setflags(write=False)
            object.__setattr__(self, "scaling", sc)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def to_original_units(self, points: np.ndarray) -> np.ndarray:
        """Invert the recorded min-max scaling. Constant columns map back to
        their constant."""
        points = np.asarray(points, dtype=float)
        if self.scaling is None:
            return points.copy()
        lo, hi = self.scaling[:, 0], self.scaling[:, 1]
        return lo + points * (hi - lo)


@dataclass(frozen=True)
class Split:
    train_indices: np.ndarray
    validation_indices: np.ndarray
    test_indices: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ("train_indices", "validation_indices", "test_indices"):
            a = np.asarray(getattr(self, name), dtype=np.int64)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def train(self) -> np.ndarray:
        return self.train_indices

    @property
    def validation(self) -> np.ndarray:
        return self.validation_indices

    @property
    def test(self) -> np.ndarray:
        return self.test_indices

    def check(self, m: int) -> None:
        allidx = np.concatenate([self.train, self.validation, self.test])
        if len(allidx) != m or not np.array_equal(np.sort(allidx), np.arange(m)):
            raise DataError("split is not a partition of the dataset rows")


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"unparseable cell at row {row}, column {col!r}: {cell!r}") from None
    if not math.isfinite(v):
        raise DataError(f"non-finite cell at row {row}, column {col!r}")
    return v


def load_csv(path, target_column: str, drop_columns: Sequence[str] = ()) -> Dataset:
    """Read a headed CSV into an unscaled Dataset.

    Target labels are mapped to {-1, +1} by lexicographic order of their
    string form: the smaller label becomes -1. Row numbers in error messages
    count data rows from 1.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty file: {path}") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    if target_column not in header:
        raise DataError(f"missing column {target_column!r} in {path}")
    for c in drop_columns:
        if c not in header:
            raise DataError(f"missing column {c!r} in {path}")
    t_idx = header.index(target_column)
    keep = [i for i, h in enumerate(header) if h != target_column and h not in drop_columns]
    if not keep:
        raise DataError("no feature columns left after dropping")

    X = np.empty((len(rows), len(keep)))
    raw_targets = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} cells, expected {len(header)}")
        for j, i in enumerate(keep):
            X[r - 1, j] = _parse_float(row[i].strip(), r, header[i])
        raw_targets.append(row[t_idx].strip())

    labels = sorted(set(raw_targets))
    if len(labels) > 2:
        raise DataError(f"target not binary: {len(labels)} distinct values in {target_column!r}")
    if len(labels) < 2:
        raise DataError(f"target not binary: only one class in {target_column!r}")
    y = np.where(np.asarray(raw_targets) == labels[0], -1, 1)
    return Dataset(X, y, tuple(header[i] for i in keep))


def write_csv(path, d: Dataset, target_column: str = "target") -> None:
    """Write the feature matrix and targets; floats use repr so a reload is
    bit-exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(d.feature_names) + [target_column])
        for row, t in zip(d.features, d.targets):
            w.writerow([repr(float(v)) for v in row] + [int(t)])


def make_half_moons(m: int = 1000, noise: float = 0.3, seed: int = 0) -> Dataset:
    """Two interleaving half circles.

    The upper moon (label -1) is ``(cos t, sin t)`` and the lower moon
    (label +1) is ``(1 - cos t, 0.5 - sin t)`` for t in [0, pi]. The upper
    moon gets ``m // 2`` points. Rows are shuffled.
    """
    if m < 4:
        raise DataError("half-moons needs m >= 4")
    if noise < 0:
        raise DataError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    n_up = m // 2
    n_low = m - n_up
    t_up = np.linspace(0.0, np.pi, n_up)
    t_low = np.linspace(0.0, np.pi, n_low)
    X = np.vstack([
        np.column_stack([np.cos(t_up), np.sin(t_up)]),
        np.column_stack([1.0 - np.cos(t_low), 0.5 - np.sin(t_low)]),
    ])
    y = np.concatenate([-np.ones(n_up, dtype=int), np.ones(n_low, dtype=int)])
    if noise > 0:
        X = X + rng.normal(scale=noise, size=X.shape)
    perm = rng.permutation(m)
    return Dataset(X[perm], y[perm], ("x0", "x1"))


def make_linear_oracle_data(m: int = 200, dim: int = 2, seed: int = 0) -> Dataset:
    """Uniform points in the unit cube labelled by sign(x_0 - 0.5).

    Pairs with ``dig.pool.OraclePool``, whose discrepancy region is the slab
    0.4 < x_0 < 0.6. The data is already in [0, 1] so ``scaling`` is set to
    the identity.
    """
    if m < 4 or dim < 1:
        raise DataError("need m >= 4 and dim >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(m, dim))
    y = np.where(X[:, 0] - 0.5 >= 0, 1, -1)
    scaling = np.tile([0.0, 1.0], (dim, 1))
    return Dataset(X, y, tuple(f"x{i}" for i in range(dim)), scaling=scaling)


def split(d: Dataset, train_frac: float = 2 / 3 - 0.2, val_frac: float = 0.2,
          seed: int = 0, max_attempts: int = 100) -> Split:
    """Random train/validation/test partition.

    The first ``floor(m * train_frac)`` permuted rows go to training, the
    next ``floor(m * val_frac)`` to validation and the rest to test. If the
    training part misses a class the permutation is redrawn from a seed
    sequence derived from ``seed``.
    """
    if not (train_frac > 0 and val_frac >= 0 and train_frac + val_frac < 1):
        raise DataError(f"invalid fractions train={train_frac}, val={val_frac}")
    m = d.n_rows
    n_train = int(math.floor(m * train_frac + 1e-9))
    n_val = int(math.floor(m * val_frac + 1e-9))
    if n_train < 1:
        raise DataError("training split would be empty")
    seeds = np.random.SeedSequence(seed).spawn(max_attempts)
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seed if attempt == 0 else seeds[attempt])
        perm = rng.permutation(m)
        tr = perm[:n_train]
        if len(np.unique(d.targets[tr])) == 2:
            return Split(np.sort(tr), np.sort(perm[n_train:n_train + n_val]),
                         np.sort(perm[n_train + n_val:]), seed)
    raise DataError(f"single-class training split after {max_attempts} attempts")


def fit_scaler(d: Dataset, s: Split) -> Dataset:
    """Min-max scale every column with statistics from the training rows.

    If ``d`` is already scaled the original values are recovered first, so
    applying this twice with the same split is a no-op.
    """
    X = d.to_original_units(d.features)
    tr = X[s.train]
    lo = tr.min(axis=0)
    hi = tr.max(axis=0)
    span = hi - lo
    const = span == 0
    Xs = (X - lo) / np.where(const, 1.0, span)
    Xs[:, const] = 0.0
    return replace(d, features=Xs, scaling=np.column_stack([lo, hi]))


def save_dataset(directory, d: Dataset, s: Optional[Split] = None) -> None:
    """Persist a manifest JSON next to a CSV of the (scaled) values."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv(directory / "dataset.csv", d)
    manifest = {
        "feature_names": list(d.feature_names),
        "scaling": None if d.scaling is None else d.scaling.tolist(),
        "split": None if s is None else {
            "train": s.train.tolist(),
            "validation": s.validation.tolist(),
            "test": s.test.tolist(),
            "seed": int(s.seed),
        },
    }
    (directory / "dataset.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def load_dataset(directory) -> tuple[Dataset, Optional[Split]]:
    directory = Path(directory)
    manifest = json.loads((directory / "dataset.json").read_text(encoding="utf-8"))
    raw = load_csv(directory / "dataset.csv", "target")
    # write_csv stores targets as -1/+1, which load_csv maps back unchanged
    d = Dataset(raw.features, raw.targets, tuple(manifest["feature_names"]),
                scaling=manifest["scaling"])
    sp = manifest["split"]
    s = None if sp is None else Split(sp["train"], sp["validation"], sp["test"], sp["seed"])
    return d, s
