"""Gradient representations of samples and per-class distance matrices.

Each sample is mapped to the gradient of its own loss with respect to the
trained parameters. For a well-fit model the correctly classified points
shrink toward the origin (the error factor is near zero) while hard or
mislabeled points keep large, direction-revealing gradients, which is what
makes this space easy to cluster.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .model import ModelParams, _sigmoid, per_sample_gradients

METRICS = ("euclidean", "centered-cosine")
DEGENERATE_NORM = 1e-12
PARAM_SUBSETS = ("all", "last-layer")


@dataclass(frozen=True)
class GradientMatrix:
    """One gradient row per sample, restricted to a parameter subset."""

    rows: np.ndarray
    param_subset: str
    class_of: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(np.asarray(self.rows, dtype=float))
        class_of = np.asarray(self.class_of, dtype=np.int64)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-d array")
        if class_of.shape != (rows.shape[0],):
            raise ValueError("class_of length must match rows")
        if not np.all(np.isfinite(rows)):
            raise ValueError("gradient rows must be finite")
        if self.param_subset not in PARAM_SUBSETS:
            raise ValueError(f"unknown parameter subset {self.param_subset!r}")
        rows.setflags(write=False)
        class_of.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "class_of", class_of)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class DistanceMatrix:
    """Dense pairwise distances for the rows of one class."""

    entries: np.ndarray
    metric: str
    center: np.ndarray | None = None

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("entries must be a square matrix")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def extract_gradients(params: ModelParams, ds: Dataset, subset: str = "all") -> GradientMatrix:
    """Per-sample loss gradients at the given parameters (no weight decay)."""
    if subset not in PARAM_SUBSETS:
        raise ValueError(f"unknown parameter subset {subset!r}")
    if params.arch.d != ds.d:
        raise ValueError(
            f"model expects d={params.arch.d}, dataset has d={ds.d}"
        )
    rows = per_sample_gradients(params, ds.X, ds.y)
    if subset == "last-layer":
        rows = rows[:, params.arch.last_layer_slice()]
    return GradientMatrix(rows=rows, param_subset=subset, class_of=ds.y)


def logistic_gradient_closed_form(w, b: float, x, y: int) -> np.ndarray:
    """(sigmoid(w.x + b) - y) * (x, 1): the binary logistic loss gradient
    w.r.t. (w, b), i.e. the data vector scaled by the prediction error."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    if w.shape != x.shape or w.ndim != 1:
        raise ValueError("w and x must be vectors of equal length")
    e = float(_sigmoid(np.array([w @ x + b]))[0]) - y
    return np.concatenate([e * x, [e]])


def distance_matrix(rows, metric: str = "centered-cosine") -> DistanceMatrix:
    """Pairwise distances among rows of a single class.

    centered-cosine: D_ij = 1 - cos(r_i - mu, r_j - mu) with mu the row
    mean, entries in [0, 2]. A centered row with norm below 1e-12 carries
    no direction; its distance is defined as 1 to every other row and 0 to
    itself. euclidean: plain L2 distances.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("need at least two rows")
    if metric == "euclidean":
        sq_norms = np.einsum("ij,ij->i", rows, rows)
        sq = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (rows @ rows.T)
        sq = np.clip((sq + sq.T) / 2.0, 0.0, None)
        D = np.sqrt(sq)
        np.fill_diagonal(D, 0.0)
        return DistanceMatrix(entries=D, metric=metric)
    if metric == "centered-cosine":
        mu = rows.mean(axis=0)
        centered = rows - mu
        norms = np.linalg.norm(centered, axis=1)
        degenerate = norms < DEGENERATE_NORM
        safe = np.where(degenerate, 1.0, norms)
        D = 1.0 - (centered @ centered.T) / np.outer(safe, safe)
        D[degenerate, :] = 1.0
        D[:, degenerate] = 1.0
        D = np.clip((D + D.T) / 2.0, 0.0, 2.0)
        np.fill_diagonal(D, 0.0)
        return DistanceMatrix(entries=D, metric=metric, center=mu)
    raise ValueError(f"unknown metric {metric!r}")


def save_gradients_csv(gm: GradientMatrix, path) -> None:
    """One row per sample: class label followed by the gradient entries."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["y"] + [f"f{i}" for i in range(gm.p)])
        for i in range(gm.n):
            writer.writerow([int(gm.class_of[i])] + [repr(float(v)) for v in gm.rows[i]])
