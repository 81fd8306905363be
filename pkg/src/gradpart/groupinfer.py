"""Group inference: per-class density clustering of sample
representations with silhouette-selected hyperparameters.

Gradient rows (the default) or raw feature rows are clustered one class at
a time; per-class cluster ids are merged into globally unique ids and
points no cluster claims are flagged as detected outliers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clustering import (
    OUTLIER_LABEL,
    ClusterAssignment,
    DbscanParams,
    SilhouetteUndefined,
    adjusted_rand_index,
    dbscan,
    silhouette,
)
from .dataset import Dataset
from .gradspace import distance_matrix, extract_gradients
from .model import ModelParams

UNASSIGNED_LABEL = -2  # samples outside the clustered splits (e.g. test)

DEFAULT_EPS = (0.1, 0.2, 0.3, 0.5, 0.7)
DEFAULT_MIN_SAMPLES = (10, 20, 30, 50, 70, 100)


def default_grid(eps=DEFAULT_EPS, min_samples=DEFAULT_MIN_SAMPLES) -> list[DbscanParams]:
    return [DbscanParams(e, m) for e in eps for m in min_samples]


@dataclass(frozen=True)
class GroupInferenceResult:
    """Merged per-class clustering: global group ids, -1 for detected
    outliers, -2 for samples that were never clustered."""

    group: np.ndarray
    chosen: dict[int, DbscanParams | None]
    silhouette_scores: dict[int, float | None]
    representation: str
    metric: str
    clustered: np.ndarray
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        group = np.asarray(self.group, dtype=np.int64)
        clustered = np.asarray(self.clustered, dtype=bool)
        group.setflags(write=False)
        clustered.setflags(write=False)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "clustered", clustered)

    @property
    def n_groups(self) -> int:
        return int(self.group.max()) + 1 if (self.group >= 0).any() else 0

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.group == OUTLIER_LABEL


def clustered_mask(ds: Dataset) -> np.ndarray:
    """Samples eligible for clustering: train and validation, never test.
    Without split tags the whole dataset is clustered."""
    if ds.split is None:
        return np.ones(ds.n, dtype=bool)
    return (ds.split == "train") | (ds.split == "val")


def partition_by_class(rows, classes, grid, metric: str):
    """Shared clustering core used by both representations.

    Per class: build the distance matrix, run dbscan for every grid point,
    keep the one with the highest silhouette (grid order breaks ties). If
    no grid point admits a silhouette, fall back to the fewest-outlier
    point with at least two clusters; failing that the whole class becomes
    one group and a warning is recorded.
    """
    rows = np.asarray(rows, dtype=float)
    classes = np.asarray(classes, dtype=np.int64)
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    labels = np.full(classes.size, OUTLIER_LABEL, dtype=np.int64)
    chosen: dict[int, DbscanParams | None] = {}
    scores: dict[int, float | None] = {}
    warnings: list[str] = []
    offset = 0
    for c in np.unique(classes):
        c = int(c)
        idx = np.flatnonzero(classes == c)
        if idx.size < 2:
            labels[idx] = offset
            chosen[c] = None
            scores[c] = None
            warnings.append(f"class {c}: fewer than two samples, assigned one group")
            offset += 1
            continue
        dm = distance_matrix(rows[idx], metric=metric)
        best = None  # (score, params, assignment)
        fallback = None  # (n_outliers, params, assignment) with >= 2 clusters
        for params in grid:
            assignment = dbscan(dm, params)
            try:
                score = silhouette(dm, assignment)
            except SilhouetteUndefined:
                score = None
            if score is not None and (best is None or score > best[0]):
                best = (score, params, assignment)
            if assignment.n_clusters >= 2:
                n_out = int(assignment.outlier_mask.sum())
                if fallback is None or n_out < fallback[0]:
                    fallback = (n_out, params, assignment)
        if best is not None:
            score, params, assignment = best
            chosen[c] = params
            scores[c] = float(score)
            class_labels = assignment.labels
        elif fallback is not None:
            _, params, assignment = fallback
            chosen[c] = params
            scores[c] = None
            class_labels = assignment.labels
        else:
            chosen[c] = None
            scores[c] = None
            class_labels = np.zeros(idx.size, dtype=np.int64)
            warnings.append(
                f"class {c}: no grid point produced two clusters, assigned one group"
            )
        shifted = class_labels.copy()
        shifted[shifted >= 0] += offset
        labels[idx] = shifted
        offset += int(class_labels.max()) + 1
    return labels, chosen, scores, tuple(warnings)


def grasp(
    ds: Dataset,
    erm: ModelParams,
    subset: str = "all",
    grid: list[DbscanParams] | None = None,
    metric: str = "centered-cosine",
) -> GroupInferenceResult:
    """Infer groups by clustering per-sample loss gradients class by class."""
    grid = default_grid() if grid is None else grid
    mask = clustered_mask(ds)
    gm = extract_gradients(erm, ds, subset=subset)
    labels, chosen, scores, warnings = partition_by_class(
        gm.rows[mask], ds.y[mask], grid, metric
    )
    group = np.full(ds.n, UNASSIGNED_LABEL, dtype=np.int64)
    group[mask] = labels
    return GroupInferenceResult(
        group=group,
        chosen=chosen,
        silhouette_scores=scores,
        representation="gradient",
        metric=metric,
        clustered=mask,
        warnings=warnings,
    )


def feasp(
    ds: Dataset,
    grid: list[DbscanParams] | None = None,
    metric: str = "centered-cosine",
) -> GroupInferenceResult:
    """Same pipeline on raw feature rows; no model involved."""
    grid = default_grid() if grid is None else grid
    mask = clustered_mask(ds)
    labels, chosen, scores, warnings = partition_by_class(
        ds.X[mask], ds.y[mask], grid, metric
    )
    group = np.full(ds.n, UNASSIGNED_LABEL, dtype=np.int64)
    group[mask] = labels
    return GroupInferenceResult(
        group=group,
        chosen=chosen,
        silhouette_scores=scores,
        representation="feature",
        metric=metric,
        clustered=mask,
        warnings=warnings,
    )


def true_group_partition(ds: Dataset) -> np.ndarray:
    """Reference labels for agreement scores: true group ids with true
    outliers collapsed to -1, mirroring the assignment's outlier label."""
    if ds.g is None:
        raise ValueError("dataset has no group annotations")
    ref = ds.g.copy()
    if ds.outlier is not None:
        ref[ds.outlier] = OUTLIER_LABEL
    return ref


def inference_ari(result: GroupInferenceResult, ds: Dataset) -> float | None:
    """ARI of the inferred partition against the true one, over the
    samples that were clustered; None without group annotations."""
    if ds.g is None:
        return None
    mask = result.clustered
    return adjusted_rand_index(true_group_partition(ds)[mask], result.group[mask])


def sweep_report(
    ds: Dataset,
    erm: ModelParams,
    eps_values,
    min_samples_values,
    subset: str = "all",
    metric: str = "centered-cosine",
) -> list[dict]:
    """One row per (class, eps, min_samples): cluster counts, silhouette,
    and, when true groups exist, the per-class ARI."""
    mask = clustered_mask(ds)
    gm = extract_gradients(erm, ds, subset=subset)
    rows_all = gm.rows[mask]
    classes = ds.y[mask]
    reference = true_group_partition(ds)[mask] if ds.g is not None else None
    report = []
    for c in np.unique(classes):
        c = int(c)
        idx = np.flatnonzero(classes == c)
        dm = distance_matrix(rows_all[idx], metric=metric)
        for eps in eps_values:
            for m in min_samples_values:
                assignment = dbscan(dm, DbscanParams(float(eps), int(m)))
                try:
                    score = silhouette(dm, assignment)
                except SilhouetteUndefined:
                    score = None
                row = {
                    "class": c,
                    "eps": float(eps),
                    "min_samples": int(m),
                    "silhouette": score,
                    "n_clusters": assignment.n_clusters,
                    "n_outliers": int(assignment.outlier_mask.sum()),
                }
                if reference is not None:
                    row["ari"] = adjusted_rand_index(reference[idx], assignment.labels)
                report.append(row)
    return report


def save_inference(result: GroupInferenceResult, ds: Dataset, csv_path, json_path) -> None:
    """CSV of per-sample assignments plus a JSON sidecar with the chosen
    hyperparameters and silhouette scores."""
    with Path(csv_path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "class", "group", "is_outlier"])
        for i in range(ds.n):
            writer.writerow(
                [i, int(ds.y[i]), int(result.group[i]), int(result.group[i] == OUTLIER_LABEL)]
            )
    sidecar = {
        "representation": result.representation,
        "metric": result.metric,
        "n_groups": result.n_groups,
        "warnings": list(result.warnings),
        "per_class": {
            str(c): {
                "eps": result.chosen[c].eps if result.chosen[c] else None,
                "min_samples": result.chosen[c].min_samples if result.chosen[c] else None,
                "silhouette": result.silhouette_scores[c],
            }
            for c in sorted(result.chosen)
        },
    }
    Path(json_path).write_text(
        json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8"
    )


def load_inference_groups(csv_path, n: int) -> np.ndarray:
    """Group column of a saved inference CSV, validated against n."""
    groups = np.full(n, UNASSIGNED_LABEL, dtype=np.int64)
    with Path(csv_path).open(newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if len(rows) != n:
        raise ValueError(f"inference file has {len(rows)} rows, expected {n}")
    for row in rows:
        groups[int(row["index"])] = int(row["group"])
    return groups
