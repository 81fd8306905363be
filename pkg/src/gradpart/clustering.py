"""Density and centroid clustering on precomputed distances, plus
partition quality metrics.

dbscan follows the distance-matrix formulation: a point is core iff at
least min_samples OTHER points lie within eps (self excluded); clusters
are the connected components of core points under eps-reachability; a
non-core point within eps of a cluster's core joins that cluster, taking
the lowest cluster id when several qualify; everything else is -1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gradspace import DistanceMatrix

OUTLIER_LABEL = -1


@dataclass(frozen=True)
class DbscanParams:
    eps: float
    min_samples: int

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be at least 1")


@dataclass(frozen=True)
class ClusterAssignment:
    """Per-sample cluster ids, contiguous from 0, with -1 for outliers."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        ids = np.unique(labels[labels >= 0])
        if ids.size and not np.array_equal(ids, np.arange(ids.size)):
            raise ValueError("cluster ids must be contiguous from 0")
        if labels.size and labels.min() < OUTLIER_LABEL:
            raise ValueError("labels below -1 are not allowed")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if (self.labels >= 0).any() else 0

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.labels == OUTLIER_LABEL


class SilhouetteUndefined(ValueError):
    """Fewer than two clusters remain after dropping outliers."""


def _as_matrix(D) -> np.ndarray:
    if isinstance(D, DistanceMatrix):
        return D.entries
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValueError("distance matrix must be square")
    return D


def canonicalize_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters by decreasing size (ties keep the old order);
    outliers stay -1."""
    labels = np.asarray(labels, dtype=np.int64)
    ids, counts = np.unique(labels[labels >= 0], return_counts=True)
    order = np.argsort(-counts, kind="stable")
    mapping = {int(ids[o]): rank for rank, o in enumerate(order)}
    out = labels.copy()
    for old, new in mapping.items():
        out[labels == old] = new
    return out


def dbscan(D, params: DbscanParams) -> ClusterAssignment:
    D = _as_matrix(D)
    n = D.shape[0]
    within = D <= params.eps
    # the zero diagonal always counts itself, so subtract it
    core = within.sum(axis=1) - 1 >= params.min_samples
    comp = np.full(n, -1, dtype=np.int64)
    n_comp = 0
    for start in range(n):
        if not core[start] or comp[start] >= 0:
            continue
        stack = [start]
        comp[start] = n_comp
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(within[i] & core):
                if comp[j] < 0:
                    comp[j] = n_comp
                    stack.append(j)
        n_comp += 1
    labels = np.full(n, OUTLIER_LABEL, dtype=np.int64)
    labels[core] = comp[core]
    for i in np.flatnonzero(~core):
        reachable = comp[within[i] & core]
        if reachable.size:
            labels[i] = reachable.min()
    return ClusterAssignment(canonicalize_labels(labels))


def _farthest_point_centers(X: np.ndarray, k: int, first: int) -> np.ndarray:
    centers = [X[first]]
    d2 = np.einsum("ij,ij->i", X - centers[0], X - centers[0])
    for _ in range(k - 1):
        nxt = int(np.argmax(d2))
        centers.append(X[nxt])
        d2 = np.minimum(d2, np.einsum("ij,ij->i", X - centers[-1], X - centers[-1]))
    return np.array(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int):
    """Lloyd iterations; returns (labels, centers, per-iteration WCSS)."""
    k = centers.shape[0]
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        history.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-served point
                centers[c] = X[int(np.argmax(d2[np.arange(len(X)), labels]))]
    return labels, centers, history


def kmeans(X, k: int, seed: int, max_iter: int = 100, restarts: int = 10) -> ClusterAssignment:
    """Lloyd's algorithm with farthest-point seeding from a random first
    center; the best of ``restarts`` runs by WCSS is kept."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points n={n}")
    rng = np.random.default_rng(seed)
    best_labels, best_wcss = None, np.inf
    for _ in range(restarts):
        centers = _farthest_point_centers(X, k, int(rng.integers(n)))
        labels, _, history = _lloyd(X, centers, max_iter)
        if history[-1] < best_wcss:
            best_wcss = history[-1]
            best_labels = labels
    return ClusterAssignment(canonicalize_labels(best_labels))


def save_assignment_csv(assignment: ClusterAssignment, path) -> None:
    """Two columns: sample index and cluster label (-1 for outliers)."""
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "label"])
        for i, label in enumerate(assignment.labels):
            writer.writerow([i, int(label)])


def _comb2(counts: np.ndarray) -> int:
    c = counts.astype(object)  # exact integer arithmetic
    return int((c * (c - 1) // 2).sum())


def adjusted_rand_index(p, q) -> float:
    """Chance-adjusted agreement of two label vectors.

    Labels are compared purely as partitions; -1 counts as one additional
    cluster. Degenerate cases with zero denominator (both partitions all
    singletons or both one cluster) are identical partitions, giving 1.
    """
    p = np.asarray(p).ravel()
    q = np.asarray(q).ravel()
    if p.shape != q.shape:
        raise ValueError("label vectors must have equal length")
    n = p.size
    if n < 2:
        raise ValueError("need at least two samples")
    _, pi = np.unique(p, return_inverse=True)
    _, qi = np.unique(q, return_inverse=True)
    cont = np.zeros((pi.max() + 1, qi.max() + 1), dtype=np.int64)
    np.add.at(cont, (pi, qi), 1)
    index = _comb2(cont.ravel())
    a = _comb2(cont.sum(axis=1))
    b = _comb2(cont.sum(axis=0))
    total = n * (n - 1) // 2
    expected = a * b / total
    denom = (a + b) / 2 - expected
    if denom == 0:
        return 1.0
    return float((index - expected) / denom)


def silhouette(D, labels) -> float:
    """Mean of (b - a) / max(a, b) over non-outlier points.

    a is the mean in-cluster distance (self excluded), b the smallest mean
    distance to another cluster. Singleton clusters contribute 0.
    """
    D = _as_matrix(D)
    if isinstance(labels, ClusterAssignment):
        labels = labels.labels
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels >= 0
    labs = labels[keep]
    ids, inv = np.unique(labs, return_inverse=True)
    if ids.size < 2:
        raise SilhouetteUndefined("silhouette undefined: fewer than two clusters")
    Dk = D[np.ix_(keep, keep)]
    m = len(labs)
    onehot = np.zeros((m, ids.size))
    onehot[np.arange(m), inv] = 1.0
    counts = onehot.sum(axis=0)
    sums = Dk @ onehot
    mean_other = sums / counts[None, :]
    mean_other[np.arange(m), inv] = np.inf
    b = mean_other.min(axis=1)
    own_counts = counts[inv]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[np.arange(m), inv] / (own_counts - 1)
    s = np.zeros(m)
    regular = own_counts > 1
    denom = np.maximum(a[regular], b[regular])
    nonzero = denom > 0
    vals = np.zeros(regular.sum())
    vals[nonzero] = (b[regular][nonzero] - a[regular][nonzero]) / denom[nonzero]
    s[regular] = vals
    return float(s.mean())
