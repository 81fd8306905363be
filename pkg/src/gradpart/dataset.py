"""Synthetic benchmark data, CSV ingestion, and stratified splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SPLIT_TAGS = ("train", "val", "test")

# Two-feature benchmark layout: per class, four majority modes share one
# column of the feature plane and a single minority mode sits in the
# opposite column, so the easy linear rule is wrong on every minority point.
CLUSTER_STD = 0.1  # per-coordinate variance 0.01
SAMPLES_PER_CLUSTER = 100
FLIP_FRACTION = 0.05
_LAYOUT = (
    # (class, group id, cluster centers)
    (0, 0, ((1.0, 5.0), (1.0, 3.0), (1.0, 2.0), (1.0, 1.0))),
    (0, 1, ((0.0, 4.0),)),
    (1, 2, ((0.0, 5.0), (0.0, 3.0), (0.0, 2.0), (0.0, 1.0))),
    (1, 3, ((1.0, 4.0),)),
)


@dataclass(frozen=True)
class Sample:
    """One labeled point, optionally with its true group and outlier flag."""

    x: np.ndarray
    y: int
    g_true: int | None = None
    outlier_true: bool | None = None


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with labels and optional annotations.

    ``g`` holds true group ids (non-negative). ``split`` tags each sample
    train/val/test; ``None`` means no split has been assigned yet.
    """

    X: np.ndarray
    y: np.ndarray
    g: np.ndarray | None = None
    outlier: np.ndarray | None = None
    split: np.ndarray | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if y.shape != (X.shape[0],):
            raise ValueError("y length must match the number of rows in X")
        if X.size and not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        if y.size and y.min() < 0:
            raise ValueError("class labels must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        for name in ("g", "outlier", "split"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value)
            if value.shape != (X.shape[0],):
                raise ValueError(f"{name} length must match the number of samples")
            object.__setattr__(self, name, value)
        if self.g is not None:
            g = self.g.astype(np.int64)
            if g.size and g.min() < 0:
                raise ValueError("group ids must be non-negative")
            object.__setattr__(self, "g", g)
        if self.outlier is not None:
            object.__setattr__(self, "outlier", self.outlier.astype(bool))
        if self.split is not None:
            tags = self.split.astype("U5")
            bad = set(tags.tolist()) - set(SPLIT_TAGS)
            if bad:
                raise ValueError(f"unknown split tags: {sorted(bad)}")
            object.__setattr__(self, "split", tags)
        for arr in (self.X, self.y, self.g, self.outlier, self.split):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if self.n else 0

    @property
    def n_groups(self) -> int | None:
        if self.g is None:
            return None
        return int(self.g.max()) + 1 if self.n else 0

    def sample(self, i: int) -> Sample:
        return Sample(
            x=self.X[i],
            y=int(self.y[i]),
            g_true=int(self.g[i]) if self.g is not None else None,
            outlier_true=bool(self.outlier[i]) if self.outlier is not None else None,
        )

    def split_mask(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {tag!r}")
        if self.split is None:
            raise ValueError("dataset has no split assignment")
        return self.split == tag


def take(ds: Dataset, indices) -> Dataset:
    """Row subset as a new Dataset (annotations sliced along)."""
    idx = np.asarray(indices)
    return Dataset(
        X=ds.X[idx],
        y=ds.y[idx],
        g=ds.g[idx] if ds.g is not None else None,
        outlier=ds.outlier[idx] if ds.outlier is not None else None,
        split=ds.split[idx] if ds.split is not None else None,
        label_names=ds.label_names,
    )


def generate_synthetic(seed: int, contaminate: bool = False) -> Dataset:
    """Ten Gaussian clusters of 100 samples arranged into 2 classes x
    (majority, minority) groups; optionally flip 5% of labels and mark the
    flipped samples as outliers (their group ids are kept)."""
    rng = np.random.default_rng(seed)
    xs, ys, gs = [], [], []
    for cls, group, centers in _LAYOUT:
        for center in centers:
            xs.append(rng.normal(center, CLUSTER_STD, size=(SAMPLES_PER_CLUSTER, 2)))
            ys.append(np.full(SAMPLES_PER_CLUSTER, cls, dtype=np.int64))
            gs.append(np.full(SAMPLES_PER_CLUSTER, group, dtype=np.int64))
    X = np.concatenate(xs)
    y = np.concatenate(ys)
    g = np.concatenate(gs)
    outlier = np.zeros(len(y), dtype=bool)
    if contaminate:
        n_flip = round(FLIP_FRACTION * len(y))
        flip = rng.choice(len(y), size=n_flip, replace=False)
        y = y.copy()
        y[flip] = 1 - y[flip]
        outlier[flip] = True
    return Dataset(X=X, y=y, g=g, outlier=outlier)


def split(ds: Dataset, ratios, seed: int) -> Dataset:
    """Assign train/val/test tags, stratified by class.

    Per class, the largest-remainder rule keeps every split within one
    sample of its exact ratio share.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or (ratios < 0).any():
        raise ValueError("ratios must be three non-negative fractions")
    if abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios.sum()!r}")
    n_parts = int((ratios > 0).sum())
    rng = np.random.default_rng(seed)
    tags = np.empty(ds.n, dtype="U5")
    for cls in range(ds.n_classes):
        idx = np.flatnonzero(ds.y == cls)
        if idx.size == 0:
            raise ValueError(f"class {cls} has no samples")
        if idx.size < n_parts:
            raise ValueError(
                f"class {cls} has {idx.size} samples, fewer than the {n_parts} split parts"
            )
        exact = ratios * idx.size
        counts = np.floor(exact).astype(int)
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[: idx.size - counts.sum()]] += 1
        perm = rng.permutation(idx)
        bounds = np.cumsum(counts)
        tags[perm[: bounds[0]]] = "train"
        tags[perm[bounds[0] : bounds[1]]] = "val"
        tags[perm[bounds[1] :]] = "test"
    out = replace(ds, split=tags)
    _check_train_classes(out)
    return out


def _check_train_classes(ds: Dataset) -> None:
    if ds.split is None or ds.n == 0:
        return
    train_classes = set(ds.y[ds.split == "train"].tolist())
    missing = [c for c in range(ds.n_classes) if c not in train_classes]
    if missing:
        raise ValueError(f"class {missing[0]} does not appear in the train split")


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for tabular ingestion."""

    features: tuple[str, ...]
    label: str
    group: str | None = None
    outlier: str | None = None
    split: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise ValueError("schema needs at least one feature column")

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        known = {"features", "label", "group", "outlier", "split"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**d)


def default_schema(d: int) -> CsvSchema:
    """Schema matching save_csv output for a d-feature dataset."""
    return CsvSchema(
        features=tuple(f"x{i}" for i in range(d)),
        label="y",
        group="group",
        outlier="outlier",
        split="split",
    )


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a comma-separated file with a header row.

    Labels are remapped to contiguous 0..C-1 (numeric-aware ordering); the
    original label strings are recorded on the dataset in id order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        header = set(reader.fieldnames)
        needed = list(schema.features) + [schema.label]
        for col in (schema.group, schema.outlier, schema.split):
            if col is not None:
                needed.append(col)
        for col in needed:
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")

    n = len(rows)
    X = np.empty((n, len(schema.features)))
    raw_labels = []
    groups = np.empty(n, dtype=np.int64) if schema.group else None
    outliers = np.empty(n, dtype=bool) if schema.outlier else None
    splits = np.empty(n, dtype="U5") if schema.split else None
    for i, row in enumerate(rows):
        line = i + 2  # header is line 1
        for j, col in enumerate(schema.features):
            try:
                v = float(row[col])
            except (TypeError, ValueError):
                raise ValueError(f"{path}: line {line}, column {col!r}: not numeric") from None
            if not math.isfinite(v):
                raise ValueError(f"{path}: line {line}, column {col!r}: non-finite value")
            X[i, j] = v
        raw_labels.append(row[schema.label])
        if groups is not None:
            try:
                groups[i] = int(row[schema.group])
            except (TypeError, ValueError):
                raise ValueError(
                    f"{path}: line {line}, column {schema.group!r}: not an integer"
                ) from None
        if outliers is not None:
            cell = str(row[schema.outlier]).strip().lower()
            if cell in ("0", "false"):
                outliers[i] = False
            elif cell in ("1", "true"):
                outliers[i] = True
            else:
                raise ValueError(
                    f"{path}: line {line}, column {schema.outlier!r}: expected 0/1/true/false"
                )
        if splits is not None:
            tag = str(row[schema.split]).strip()
            if tag not in SPLIT_TAGS:
                raise ValueError(
                    f"{path}: line {line}, column {schema.split!r}: expected one of {SPLIT_TAGS}"
                )
            splits[i] = tag

    names = sorted(set(raw_labels), key=_label_sort_key(raw_labels))
    mapping = {name: i for i, name in enumerate(names)}
    y = np.array([mapping[v] for v in raw_labels], dtype=np.int64)
    ds = Dataset(
        X=X, y=y, g=groups, outlier=outliers, split=splits, label_names=tuple(names)
    )
    _check_train_classes(ds)
    return ds


def _label_sort_key(raw_labels):
    try:
        for v in set(raw_labels):
            float(v)
    except (TypeError, ValueError):
        return lambda v: (1, v)
    return lambda v: (0, float(v))


def save_csv(ds: Dataset, path) -> None:
    """Write the dataset with round-trip exact floats (shortest repr)."""
    path = Path(path)
    header = [f"x{i}" for i in range(ds.d)] + ["y"]
    if ds.g is not None:
        header.append("group")
    if ds.outlier is not None:
        header.append("outlier")
    if ds.split is not None:
        header.append("split")
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]] + [int(ds.y[i])]
            if ds.g is not None:
                row.append(int(ds.g[i]))
            if ds.outlier is not None:
                row.append(int(ds.outlier[i]))
            if ds.split is not None:
                row.append(str(ds.split[i]))
            writer.writerow(row)


def group_stats(ds: Dataset) -> list[dict]:
    """Per (group, class) counts and fractions; fractions sum to 1."""
    if ds.g is None:
        raise ValueError("dataset has no group annotations")
    if ds.n == 0:
        return []
    rows = []
    for group in np.unique(ds.g):
        for cls in np.unique(ds.y[ds.g == group]):
            count = int(np.sum((ds.g == group) & (ds.y == cls)))
            rows.append(
                {
                    "group": int(group),
                    "class": int(cls),
                    "count": count,
                    "fraction": count / ds.n,
                }
            )
    return rows
