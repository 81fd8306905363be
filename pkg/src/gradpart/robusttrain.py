"""Group-robust training and per-group evaluation.

The training objective is the q-weighted sum of per-group mean losses.
Each minibatch first moves q by an exponentiated-gradient step on the
group losses (groups absent from the batch keep their weight), then
descends the weighted loss. With one group the trajectory is identical,
bit for bit, to plain mean-loss training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .model import Arch, ModelParams, TrainConfig, _run_training, forward_batch

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class GroupWeights:
    """Point on the K-simplex weighting the per-group losses."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or q.size < 1:
            raise ValueError("q must be a non-empty vector")
        if (q < 0).any() or abs(q.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("q must be non-negative and sum to 1")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, k: int) -> "GroupWeights":
        return cls(np.full(k, 1.0 / k))

    def updated(self, group_losses: np.ndarray, present: np.ndarray, eta: float) -> "GroupWeights":
        """Exponentiated-gradient step on the present groups' mean losses,
        renormalized over all groups."""
        q = np.array(self.q)
        q[present] *= np.exp(eta * group_losses[present])
        return GroupWeights(q / q.sum())


@dataclass(frozen=True)
class EvalReport:
    """Per-group accuracies with the worst and the train-weighted average."""

    per_group_accuracy: dict[int, float | None]
    worst_group_accuracy: float
    average_accuracy: float
    overall_accuracy: float
    group_counts: dict[int, int]
    missing_groups: tuple[int, ...]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "per_group_accuracy": {str(k): v for k, v in self.per_group_accuracy.items()},
            "worst_group_accuracy": self.worst_group_accuracy,
            "average_accuracy": self.average_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "group_counts": {str(k): v for k, v in self.group_counts.items()},
            "missing_groups": list(self.missing_groups),
            "n_samples": self.n_samples,
        }


def _resolve_groups(ds: Dataset, groups) -> np.ndarray:
    if groups is None:
        if ds.g is None:
            raise ValueError("no group labels: pass groups or use an annotated dataset")
        return ds.g
    groups = np.asarray(groups, dtype=np.int64)
    if groups.shape != (ds.n,):
        raise ValueError("groups must have one entry per sample")
    return groups


def train_gdro(
    ds: Dataset,
    arch: Arch,
    cfg: TrainConfig,
    eta_q: float,
    groups=None,
    q_callback=None,
) -> ModelParams:
    """Stochastic group-robust training on the train split.

    Every group id 0..K-1 must be present in train, and detected outliers
    (label -1) must already be removed. ``q_callback`` receives q after
    each update, for inspection.
    """
    if eta_q < 0:
        raise ValueError("eta_q must be non-negative")
    if arch.d != ds.d:
        raise ValueError(f"architecture expects d={arch.d}, dataset has d={ds.d}")
    groups = _resolve_groups(ds, groups)
    if ds.split is None:
        idx = np.arange(ds.n)
    else:
        idx = np.flatnonzero(ds.split == "train")
    if idx.size == 0:
        raise ValueError("empty train split")
    train_groups = groups[idx]
    if train_groups.min() < 0:
        raise ValueError("training groups contain outlier labels; remove them first")
    k = int(train_groups.max()) + 1
    counts = np.bincount(train_groups, minlength=k)
    for g in range(k):
        if counts[g] == 0:
            raise ValueError(f"group {g} has no samples in the train split")

    state = {"q": GroupWeights.uniform(k)}

    def batch_weights(batch_groups: np.ndarray, batch_losses: np.ndarray) -> np.ndarray:
        batch_counts = np.bincount(batch_groups, minlength=k)
        sums = np.bincount(batch_groups, weights=batch_losses, minlength=k)
        present = batch_counts > 0
        group_losses = np.zeros(k)
        group_losses[present] = sums[present] / batch_counts[present]
        state["q"] = state["q"].updated(group_losses, present, eta_q)
        q = state["q"].q
        if q_callback is not None:
            q_callback(q.copy())
        return q[batch_groups] / batch_counts[batch_groups]

    theta = _run_training(
        ds.X[idx], ds.y[idx], arch, cfg, batch_weights=batch_weights, groups=train_groups
    )
    return ModelParams(arch, theta)


def group_fractions(groups: np.ndarray, k: int | None = None) -> np.ndarray:
    """Empirical group proportions (non-negative labels only)."""
    groups = np.asarray(groups, dtype=np.int64)
    groups = groups[groups >= 0]
    if groups.size == 0:
        raise ValueError("no group labels to compute fractions from")
    k = int(groups.max()) + 1 if k is None else k
    counts = np.bincount(groups, minlength=k)
    return counts / counts.sum()


def evaluate(
    params: ModelParams,
    ds: Dataset,
    split: str | None = "test",
    groups=None,
    train_group_fracs=None,
) -> EvalReport:
    """Per-group accuracy on a split.

    worst = min over groups present; average = sum of train-distribution
    group fractions times per-group accuracy. Groups absent from the split
    are reported as None, flagged, and excluded from the worst. Samples
    with negative group labels belong to no group and are skipped.
    """
    groups = _resolve_groups(ds, groups)
    if split is None:
        mask = np.ones(ds.n, dtype=bool)
    else:
        mask = ds.split_mask(split)
    if not mask.any():
        raise ValueError(f"split {split!r} is empty")
    if train_group_fracs is None:
        if ds.split is None:
            raise ValueError("pass train_group_fracs for datasets without split tags")
        train_group_fracs = group_fractions(groups[ds.split == "train"])
    fracs = np.asarray(train_group_fracs, dtype=float)
    k = fracs.size

    correct = forward_batch(params, ds.X[mask]).argmax(axis=1) == ds.y[mask]
    eval_groups = groups[mask]
    per_group: dict[int, float | None] = {}
    group_counts: dict[int, int] = {}
    missing = []
    worst = np.inf
    average = 0.0
    for g in range(k):
        members = eval_groups == g
        group_counts[g] = int(members.sum())
        if group_counts[g] == 0:
            per_group[g] = None
            missing.append(g)
            continue
        acc = float(correct[members].mean())
        per_group[g] = acc
        worst = min(worst, acc)
        average += fracs[g] * acc
    if not np.isfinite(worst):
        raise ValueError("no evaluated group has samples in this split")
    valid = eval_groups >= 0
    overall = float(correct[valid].mean()) if valid.any() else float(correct.mean())
    return EvalReport(
        per_group_accuracy=per_group,
        worst_group_accuracy=float(worst),
        average_accuracy=float(average),
        overall_accuracy=overall,
        group_counts=group_counts,
        missing_groups=tuple(missing),
        n_samples=int(mask.sum()),
    )


def save_eval_report(report: EvalReport, path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )


def format_eval_table(report: EvalReport) -> str:
    """Plain-text per-group table with the worst and average rows."""
    lines = [f"{'group':>8}  {'count':>6}  accuracy"]
    for g in sorted(report.per_group_accuracy):
        acc = report.per_group_accuracy[g]
        shown = f"{acc:.4f}" if acc is not None else "absent"
        lines.append(f"{g:>8}  {report.group_counts[g]:>6}  {shown}")
    lines.append(f"{'worst':>8}  {'':>6}  {report.worst_group_accuracy:.4f}")
    lines.append(f"{'average':>8}  {'':>6}  {report.average_accuracy:.4f}")
    lines.append(f"{'overall':>8}  {report.n_samples:>6}  {report.overall_accuracy:.4f}")
    return "\n".join(lines)
