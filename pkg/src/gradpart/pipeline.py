"""End-to-end orchestration: strict config parsing, stage execution, and
reproducible run artifacts.

Every stage is deterministic given the config seeds; summaries contain no
timestamps, so re-running a config produces byte-identical numeric output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import clustering, dataset, groupinfer, model, robusttrain
from .dataset import CsvSchema, Dataset, take
from .gradspace import extract_gradients, save_gradients_csv
from .groupinfer import GroupInferenceResult, default_grid
from .model import Arch, ModelParams, TrainConfig

log = logging.getLogger("gradpart")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


class StageError(RuntimeError):
    def __init__(self, stage: str, original: BaseException):
        super().__init__(f"stage {stage!r} failed: {original}")
        self.stage = stage
        self.original = original


def _check_keys(d: dict, known, context: str) -> None:
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")


@dataclass(frozen=True)
class TrainSection:
    arch_kind: str
    hidden: tuple[int, ...]
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float
    seed: int
    optimizer: str
    learning_rate_grid: tuple[float, ...]
    weight_decay_grid: tuple[float, ...]
    eta_q_grid: tuple[float, ...] = ()

    def train_config(self, learning_rate=None, weight_decay=None) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate if learning_rate is None else learning_rate,
            weight_decay=self.weight_decay if weight_decay is None else weight_decay,
            seed=self.seed,
            optimizer=self.optimizer,
        )

    def arch(self, d: int, n_classes: int) -> Arch:
        return Arch(kind=self.arch_kind, d=d, n_classes=n_classes, hidden=self.hidden)


def _parse_train_section(raw: dict, context: str, defaults: dict, with_eta: bool) -> TrainSection:
    known = {"arch", "train", "learning_rate_grid", "weight_decay_grid"}
    if with_eta:
        known.add("eta_q_grid")
    _check_keys(raw, known, context)
    arch_raw = {**defaults["arch"], **raw.get("arch", {})}
    _check_keys(arch_raw, {"kind", "hidden"}, f"{context}.arch")
    train_raw = {**defaults["train"], **raw.get("train", {})}
    _check_keys(
        train_raw,
        {"epochs", "batch_size", "learning_rate", "weight_decay", "seed", "optimizer"},
        f"{context}.train",
    )
    lr_grid = tuple(float(v) for v in raw.get("learning_rate_grid", defaults["learning_rate_grid"]))
    wd_grid = tuple(float(v) for v in raw.get("weight_decay_grid", defaults["weight_decay_grid"]))
    eta_grid = tuple(float(v) for v in raw.get("eta_q_grid", defaults.get("eta_q_grid", ())))
    if not lr_grid or not wd_grid or (with_eta and not eta_grid):
        raise ConfigError(f"{context}: hyperparameter grids must be non-empty")
    section = TrainSection(
        arch_kind=str(arch_raw["kind"]),
        hidden=tuple(int(h) for h in arch_raw.get("hidden", ())),
        epochs=int(train_raw["epochs"]),
        batch_size=int(train_raw["batch_size"]),
        learning_rate=float(train_raw["learning_rate"]),
        weight_decay=float(train_raw["weight_decay"]),
        seed=int(train_raw["seed"]),
        optimizer=str(train_raw["optimizer"]),
        learning_rate_grid=lr_grid,
        weight_decay_grid=wd_grid,
        eta_q_grid=eta_grid,
    )
    if section.arch_kind not in model.ARCH_KINDS:
        raise ConfigError(f"{context}.arch.kind: unknown kind {section.arch_kind!r}")
    if section.optimizer not in ("adam", "sgd"):
        raise ConfigError(f"{context}.train.optimizer: unknown optimizer")
    if section.epochs < 1 or section.batch_size < 1:
        raise ConfigError(f"{context}.train: epochs and batch_size must be at least 1")
    return section


_DEFAULTS = {
    "dataset": {"source": "synthetic", "seed": 0, "contaminate": False},
    "split": {"ratios": [0.6, 0.2, 0.2], "seed": 0},
    "erm": {
        "arch": {"kind": "linear", "hidden": []},
        "train": {
            "epochs": 50,
            "batch_size": 128,
            "learning_rate": 0.01,
            "weight_decay": 0.0001,
            "seed": 0,
            "optimizer": "adam",
        },
        "learning_rate_grid": [0.1, 0.01, 0.001, 0.0001],
        "weight_decay_grid": [0.0001],
    },
    "gradients": {"subset": "all"},
    "metric": "centered-cosine",
    "dbscan_grid": {
        "eps": list(groupinfer.DEFAULT_EPS),
        "min_samples": list(groupinfer.DEFAULT_MIN_SAMPLES),
    },
    "gdro": {
        "arch": {"kind": "mlp", "hidden": [50, 50, 50]},
        "train": {
            "epochs": 50,
            "batch_size": 128,
            "learning_rate": 0.001,
            "weight_decay": 0.0001,
            "seed": 0,
            "optimizer": "adam",
        },
        "learning_rate_grid": [1e-5, 1e-4, 1e-3],
        "weight_decay_grid": [1e-4, 1e-3, 1e-2],
        "eta_q_grid": [0.001, 0.01, 0.1],
    },
    "kmeans_baseline": {"k_per_class": 2, "seed": 0},
    "output_dir": "runs",
}


@dataclass(frozen=True)
class PipelineConfig:
    dataset_source: str
    dataset_seed: int
    contaminate: bool
    csv_path: str | None
    csv_schema: CsvSchema | None
    ratios: tuple[float, float, float]
    split_seed: int
    erm: TrainSection
    subset: str
    metric: str
    dbscan_eps: tuple[float, ...]
    dbscan_min_samples: tuple[int, ...]
    gdro: TrainSection
    kmeans_k: int
    kmeans_seed: int
    output_dir: str

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        _check_keys(raw, _DEFAULTS.keys(), "config")
        ds_raw = {**_DEFAULTS["dataset"], **raw.get("dataset", {})}
        source = ds_raw.get("source")
        if source == "synthetic":
            _check_keys(ds_raw, {"source", "seed", "contaminate"}, "dataset")
            csv_path, csv_schema = None, None
        elif source == "csv":
            _check_keys(ds_raw, {"source", "seed", "contaminate", "path", "schema"}, "dataset")
            if "path" not in ds_raw or "schema" not in ds_raw:
                raise ConfigError("dataset: csv source needs 'path' and 'schema'")
            csv_path = str(ds_raw["path"])
            if not Path(csv_path).exists():
                raise ConfigError(f"dataset.path: {csv_path!r} does not exist")
            try:
                csv_schema = CsvSchema.from_dict(ds_raw["schema"])
            except ValueError as e:
                raise ConfigError(f"dataset.schema: {e}") from None
        else:
            raise ConfigError(f"dataset.source must be 'synthetic' or 'csv', got {source!r}")

        split_raw = {**_DEFAULTS["split"], **raw.get("split", {})}
        _check_keys(split_raw, {"ratios", "seed"}, "split")
        ratios = tuple(float(v) for v in split_raw["ratios"])
        if len(ratios) != 3 or any(v < 0 for v in ratios):
            raise ConfigError("split.ratios must be three non-negative fractions")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError("split.ratios must sum to 1")

        grad_raw = {**_DEFAULTS["gradients"], **raw.get("gradients", {})}
        _check_keys(grad_raw, {"subset"}, "gradients")
        if grad_raw["subset"] not in ("all", "last-layer"):
            raise ConfigError(f"gradients.subset: unknown subset {grad_raw['subset']!r}")

        metric = raw.get("metric", _DEFAULTS["metric"])
        if metric not in ("centered-cosine", "euclidean"):
            raise ConfigError(f"metric: unknown metric {metric!r}")

        grid_raw = {**_DEFAULTS["dbscan_grid"], **raw.get("dbscan_grid", {})}
        _check_keys(grid_raw, {"eps", "min_samples"}, "dbscan_grid")
        eps = tuple(float(v) for v in grid_raw["eps"])
        min_samples = tuple(int(v) for v in grid_raw["min_samples"])
        if not eps or not min_samples:
            raise ConfigError("dbscan_grid: eps and min_samples must be non-empty")
        if any(e <= 0 for e in eps) or any(m < 1 for m in min_samples):
            raise ConfigError("dbscan_grid: eps must be positive and min_samples >= 1")

        km_raw = {**_DEFAULTS["kmeans_baseline"], **raw.get("kmeans_baseline", {})}
        _check_keys(km_raw, {"k_per_class", "seed"}, "kmeans_baseline")

        return cls(
            dataset_source=source,
            dataset_seed=int(ds_raw["seed"]),
            contaminate=bool(ds_raw["contaminate"]),
            csv_path=csv_path,
            csv_schema=csv_schema,
            ratios=ratios,
            split_seed=int(split_raw["seed"]),
            erm=_parse_train_section(raw.get("erm", {}), "erm", _DEFAULTS["erm"], with_eta=False),
            subset=str(grad_raw["subset"]),
            metric=str(metric),
            dbscan_eps=eps,
            dbscan_min_samples=min_samples,
            gdro=_parse_train_section(raw.get("gdro", {}), "gdro", _DEFAULTS["gdro"], with_eta=True),
            kmeans_k=int(km_raw["k_per_class"]),
            kmeans_seed=int(km_raw["seed"]),
            output_dir=str(raw.get("output_dir", _DEFAULTS["output_dir"])),
        )

    def grid(self) -> list[clustering.DbscanParams]:
        return default_grid(self.dbscan_eps, self.dbscan_min_samples)

    def canonical_dict(self) -> dict:
        d: dict = {
            "dataset": {
                "source": self.dataset_source,
                "seed": self.dataset_seed,
                "contaminate": self.contaminate,
            },
            "split": {"ratios": list(self.ratios), "seed": self.split_seed},
            "erm": _section_dict(self.erm, with_eta=False),
            "gradients": {"subset": self.subset},
            "metric": self.metric,
            "dbscan_grid": {
                "eps": list(self.dbscan_eps),
                "min_samples": list(self.dbscan_min_samples),
            },
            "gdro": _section_dict(self.gdro, with_eta=True),
            "kmeans_baseline": {"k_per_class": self.kmeans_k, "seed": self.kmeans_seed},
            "output_dir": self.output_dir,
        }
        if self.dataset_source == "csv":
            d["dataset"]["path"] = self.csv_path
            d["dataset"]["schema"] = {
                "features": list(self.csv_schema.features),
                "label": self.csv_schema.label,
                "group": self.csv_schema.group,
                "outlier": self.csv_schema.outlier,
                "split": self.csv_schema.split,
            }
        return d


def _section_dict(s: TrainSection, with_eta: bool) -> dict:
    d = {
        "arch": {"kind": s.arch_kind, "hidden": list(s.hidden)},
        "train": {
            "epochs": s.epochs,
            "batch_size": s.batch_size,
            "learning_rate": s.learning_rate,
            "weight_decay": s.weight_decay,
            "seed": s.seed,
            "optimizer": s.optimizer,
        },
        "learning_rate_grid": list(s.learning_rate_grid),
        "weight_decay_grid": list(s.weight_decay_grid),
    }
    if with_eta:
        d["eta_q_grid"] = list(s.eta_q_grid)
    return d


def override_seeds(raw: dict, seed: int) -> dict:
    """Apply a CLI --seed to every seeded stage of a raw config dict."""
    raw = json.loads(json.dumps(raw))  # deep copy
    raw.setdefault("dataset", {})["seed"] = seed
    raw.setdefault("split", {})["seed"] = seed
    raw.setdefault("erm", {}).setdefault("train", {})["seed"] = seed
    raw.setdefault("gdro", {}).setdefault("train", {})["seed"] = seed
    raw.setdefault("kmeans_baseline", {})["seed"] = seed
    return raw


def load_config(path, seed_override: int | None = None) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path!r} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if seed_override is not None:
        raw = override_seeds(raw, seed_override)
    return PipelineConfig.from_dict(raw)


def config_hash(cfg: PipelineConfig) -> str:
    blob = json.dumps(cfg.canonical_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def write_json(path, payload) -> None:
    Path(path).write_text(
        json.dumps(_jsonify(payload), indent=2, sort_keys=True), encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# stages


def build_dataset(cfg: PipelineConfig) -> Dataset:
    if cfg.dataset_source == "synthetic":
        ds = dataset.generate_synthetic(cfg.dataset_seed, contaminate=cfg.contaminate)
        return dataset.split(ds, cfg.ratios, cfg.split_seed)
    ds = dataset.load_csv(cfg.csv_path, cfg.csv_schema)
    if ds.split is None:
        ds = dataset.split(ds, cfg.ratios, cfg.split_seed)
    return ds


@dataclass(frozen=True)
class GradientErmSelection:
    params: ModelParams
    learning_rate: float
    weight_decay: float
    score: float
    inference: GroupInferenceResult


def _silhouette_score(result: GroupInferenceResult) -> float:
    # mean over classes; classes without a defined silhouette count as -1
    vals = [
        result.silhouette_scores[c] if result.silhouette_scores[c] is not None else -1.0
        for c in sorted(result.silhouette_scores)
    ]
    return float(np.mean(vals))


def select_gradient_erm(ds: Dataset, cfg: PipelineConfig) -> GradientErmSelection:
    """Train one gradient-phase model per (lr, wd) grid point and keep the
    one whose clustering scores the best mean per-class silhouette."""
    arch = cfg.erm.arch(ds.d, ds.n_classes)
    grid = cfg.grid()
    best: GradientErmSelection | None = None
    for lr in cfg.erm.learning_rate_grid:
        for wd in cfg.erm.weight_decay_grid:
            params = model.train_erm(ds, arch, cfg.erm.train_config(lr, wd))
            result = groupinfer.grasp(ds, params, subset=cfg.subset, grid=grid, metric=cfg.metric)
            score = _silhouette_score(result)
            if best is None or score > best.score:
                best = GradientErmSelection(params, lr, wd, score, result)
    return best


@dataclass(frozen=True)
class InferenceBundle:
    grasp: GroupInferenceResult
    feasp: GroupInferenceResult
    grasp_ari: float | None
    feasp_ari: float | None
    kmeans_gradient_ari: float | None
    kmeans_feature_ari: float | None


def kmeans_partition(rows, classes, k_per_class: int, seed: int) -> np.ndarray:
    """Per-class k-means labels merged into globally unique ids."""
    rows = np.asarray(rows, dtype=float)
    classes = np.asarray(classes, dtype=np.int64)
    labels = np.empty(classes.size, dtype=np.int64)
    offset = 0
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        k = min(k_per_class, idx.size)
        assignment = clustering.kmeans(rows[idx], k, seed=seed)
        labels[idx] = assignment.labels + offset
        offset += assignment.n_clusters
    return labels


def run_group_inference(ds: Dataset, cfg: PipelineConfig, erm_sel: GradientErmSelection) -> InferenceBundle:
    grasp_result = erm_sel.inference
    feasp_result = groupinfer.feasp(ds, grid=cfg.grid(), metric=cfg.metric)
    grasp_ari = groupinfer.inference_ari(grasp_result, ds)
    feasp_ari = groupinfer.inference_ari(feasp_result, ds)
    km_grad_ari = km_feat_ari = None
    if ds.g is not None:
        mask = grasp_result.clustered
        reference = groupinfer.true_group_partition(ds)[mask]
        gm = extract_gradients(erm_sel.params, ds, subset=cfg.subset)
        km_grad = kmeans_partition(gm.rows[mask], ds.y[mask], cfg.kmeans_k, cfg.kmeans_seed)
        km_feat = kmeans_partition(ds.X[mask], ds.y[mask], cfg.kmeans_k, cfg.kmeans_seed)
        km_grad_ari = clustering.adjusted_rand_index(reference, km_grad)
        km_feat_ari = clustering.adjusted_rand_index(reference, km_feat)
    return InferenceBundle(
        grasp=grasp_result,
        feasp=feasp_result,
        grasp_ari=grasp_ari,
        feasp_ari=feasp_ari,
        kmeans_gradient_ari=km_grad_ari,
        kmeans_feature_ari=km_feat_ari,
    )


@dataclass(frozen=True)
class DownstreamErmSelection:
    params: ModelParams
    learning_rate: float
    weight_decay: float
    val_accuracy: float


def select_downstream_erm(ds: Dataset, cfg: PipelineConfig) -> DownstreamErmSelection:
    """Baseline trained on the full train split; validation overall
    accuracy picks the grid point."""
    arch = cfg.gdro.arch(ds.d, ds.n_classes)
    val = ds.split_mask("val")
    best = None
    for lr in cfg.gdro.learning_rate_grid:
        for wd in cfg.gdro.weight_decay_grid:
            params = model.train_erm(ds, arch, cfg.gdro.train_config(lr, wd))
            val_acc = model.accuracy(params, ds.X[val], ds.y[val])
            if best is None or val_acc > best.val_accuracy:
                best = DownstreamErmSelection(params, lr, wd, val_acc)
    return best


@dataclass(frozen=True)
class GdroSelection:
    params: ModelParams
    learning_rate: float
    weight_decay: float
    eta_q: float
    val_worst: float
    n_groups: int
    n_train_removed: int


def _worst_group_accuracy(params: ModelParams, X, y, groups) -> float:
    correct = model.forward_batch(params, X).argmax(axis=1) == y
    worst = np.inf
    for g in np.unique(groups):
        worst = min(worst, float(correct[groups == g].mean()))
    return float(worst)


def select_gdro_model(ds: Dataset, cfg: PipelineConfig, inferred: np.ndarray) -> GdroSelection:
    """Train the robust model on the train split with inferred groups,
    detected outliers removed; validation worst-group accuracy over the
    inferred groups picks the grid point."""
    train = ds.split_mask("train")
    val = ds.split_mask("val")
    inferred = np.asarray(inferred, dtype=np.int64)
    keep = train & (inferred >= 0)
    n_removed = int(train.sum() - keep.sum())
    train_ids = np.unique(inferred[keep])
    if train_ids.size == 0:
        raise ValueError("no inferred groups present in the train split")
    remap = {int(old): new for new, old in enumerate(train_ids)}
    train_ds = take(ds, np.flatnonzero(keep))
    train_groups = np.array([remap[int(g)] for g in inferred[keep]], dtype=np.int64)

    val_keep = val & (inferred >= 0) & np.isin(inferred, train_ids)
    val_groups = np.array([remap[int(g)] for g in inferred[val_keep]], dtype=np.int64)
    X_val, y_val = ds.X[val_keep], ds.y[val_keep]

    arch = cfg.gdro.arch(ds.d, ds.n_classes)
    best = None
    for lr in cfg.gdro.learning_rate_grid:
        for wd in cfg.gdro.weight_decay_grid:
            for eta in cfg.gdro.eta_q_grid:
                params = robusttrain.train_gdro(
                    train_ds, arch, cfg.gdro.train_config(lr, wd), eta, groups=train_groups
                )
                val_worst = _worst_group_accuracy(params, X_val, y_val, val_groups)
                if best is None or val_worst > best.val_worst:
                    best = GdroSelection(
                        params, lr, wd, eta, val_worst, len(train_ids), n_removed
                    )
    return best


def test_evaluation(params: ModelParams, ds: Dataset) -> dict:
    """Test-split report against true groups; overall accuracy only when
    the dataset carries no group annotations."""
    test = ds.split_mask("test")
    overall = model.accuracy(params, ds.X[test], ds.y[test])
    if ds.g is None:
        return {
            "per_group_accuracy": None,
            "worst_group_accuracy": None,
            "average_accuracy": None,
            "overall_accuracy": overall,
            "group_counts": None,
            "missing_groups": None,
            "n_samples": int(test.sum()),
        }
    fracs = robusttrain.group_fractions(ds.g[ds.split_mask("train")], k=ds.n_groups)
    report = robusttrain.evaluate(params, ds, "test", groups=ds.g, train_group_fracs=fracs)
    return report.to_dict()


def format_test_evaluation(report: dict) -> str:
    """Human-readable rendering of a test_evaluation dict."""
    if report["per_group_accuracy"] is None:
        return f"overall accuracy {report['overall_accuracy']:.4f} (no group annotations)"
    lines = [f"{'group':>8}  {'count':>6}  accuracy"]
    for g in sorted(report["per_group_accuracy"], key=int):
        acc = report["per_group_accuracy"][g]
        shown = f"{acc:.4f}" if acc is not None else "absent"
        lines.append(f"{g:>8}  {report['group_counts'][g]:>6}  {shown}")
    lines.append(f"{'worst':>8}  {'':>6}  {report['worst_group_accuracy']:.4f}")
    lines.append(f"{'average':>8}  {'':>6}  {report['average_accuracy']:.4f}")
    lines.append(f"{'overall':>8}  {report['n_samples']:>6}  {report['overall_accuracy']:.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# run directory plumbing


def dataset_stats(ds: Dataset) -> dict:
    return {
        "n": ds.n,
        "d": ds.d,
        "classes": ds.n_classes,
        "n_groups": ds.n_groups,
        "groups": dataset.group_stats(ds) if ds.g is not None else None,
        "n_outliers": int(ds.outlier.sum()) if ds.outlier is not None else None,
    }


def load_run_dataset(run_dir: Path) -> Dataset:
    path = Path(run_dir) / "dataset.csv"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the generate stage first")
    with path.open(newline="", encoding="utf-8") as f:
        header = next(csv.reader(f))
    features = sorted(
        (h for h in header if h.startswith("x") and h[1:].isdigit()),
        key=lambda h: int(h[1:]),
    )
    schema = CsvSchema(
        features=tuple(features),
        label="y",
        group="group" if "group" in header else None,
        outlier="outlier" if "outlier" in header else None,
        split="split" if "split" in header else None,
    )
    return dataset.load_csv(path, schema)


def sweep_to_csv(rows: list[dict], path) -> None:
    if not rows:
        raise ValueError("empty sweep report")
    fields = ["class", "eps", "min_samples", "ari", "silhouette", "n_clusters", "n_outliers"]
    if "ari" not in rows[0]:
        fields.remove("ari")
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            if out.get("silhouette") is None:
                out["silhouette"] = ""
            writer.writerow(out)


def run_pipeline(cfg: PipelineConfig, run_dir: Path) -> dict:
    """Execute every stage into run_dir and return the summary dict.

    A failing stage leaves the artifacts written so far plus a FAILED
    marker naming the stage, then raises StageError.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "config.json", cfg.canonical_dict())
    state: dict = {}

    def stage(name, fn):
        start = time.perf_counter()
        try:
            fn()
        except Exception as e:
            (run_dir / "FAILED").write_text(f"{name}: {e}\n", encoding="utf-8")
            raise StageError(name, e) from e
        log.info("stage %-9s %6.2fs", name, time.perf_counter() - start)

    def _dataset():
        ds = build_dataset(cfg)
        dataset.save_csv(ds, run_dir / "dataset.csv")
        write_json(run_dir / "stats.json", dataset_stats(ds))
        state["ds"] = ds

    def _erm():
        state["erm_sel"] = select_gradient_erm(state["ds"], cfg)
        model.save_checkpoint(state["erm_sel"].params, run_dir / "erm_checkpoint.json")

    def _gradients():
        gm = extract_gradients(state["erm_sel"].params, state["ds"], subset=cfg.subset)
        save_gradients_csv(gm, run_dir / "gradients.csv")

    def _infer():
        state["inference"] = run_group_inference(state["ds"], cfg, state["erm_sel"])
        groupinfer.save_inference(
            state["inference"].grasp,
            state["ds"],
            run_dir / "inference.csv",
            run_dir / "inference.json",
        )

    def _gdro():
        state["gdro_sel"] = select_gdro_model(state["ds"], cfg, state["inference"].grasp.group)
        model.save_checkpoint(state["gdro_sel"].params, run_dir / "gdro_checkpoint.json")

    def _evaluate():
        ds = state["ds"]
        state["erm_downstream"] = select_downstream_erm(ds, cfg)
        state["eval_erm"] = test_evaluation(state["erm_downstream"].params, ds)
        state["eval_gdro"] = test_evaluation(state["gdro_sel"].params, ds)
        seeds = {"dataset": cfg.dataset_seed, "split": cfg.split_seed, "gdro": cfg.gdro.seed}
        erm_sel = state["erm_downstream"]
        gdro_sel = state["gdro_sel"]
        write_json(
            run_dir / "eval_erm.json",
            {
                "seeds": seeds,
                "selection": {
                    "learning_rate": erm_sel.learning_rate,
                    "weight_decay": erm_sel.weight_decay,
                    "grids": _section_dict(cfg.gdro, with_eta=False),
                },
                "test": state["eval_erm"],
            },
        )
        write_json(
            run_dir / "eval_gdro.json",
            {
                "seeds": seeds,
                "selection": {
                    "learning_rate": gdro_sel.learning_rate,
                    "weight_decay": gdro_sel.weight_decay,
                    "eta_q": gdro_sel.eta_q,
                    "grids": _section_dict(cfg.gdro, with_eta=True),
                },
                "test": state["eval_gdro"],
            },
        )

    def _summary():
        state["summary"] = build_summary(cfg, state)
        write_json(run_dir / "summary.json", state["summary"])

    stage("dataset", _dataset)
    stage("erm", _erm)
    stage("gradients", _gradients)
    stage("infer", _infer)
    stage("gdro", _gdro)
    stage("evaluate", _evaluate)
    stage("summary", _summary)
    return state["summary"]


def _inference_summary(result: GroupInferenceResult, ari: float | None) -> dict:
    return {
        "ari": ari,
        "n_groups": result.n_groups,
        "n_outliers_detected": int(result.outlier_mask.sum()),
        "chosen": {
            str(c): (
                {"eps": p.eps, "min_samples": p.min_samples} if p is not None else None
            )
            for c, p in result.chosen.items()
        },
        "silhouette_scores": {str(c): s for c, s in result.silhouette_scores.items()},
        "warnings": list(result.warnings),
    }


def build_summary(cfg: PipelineConfig, state: dict) -> dict:
    ds: Dataset = state["ds"]
    erm_sel: GradientErmSelection = state["erm_sel"]
    inference: InferenceBundle = state["inference"]
    gdro_sel: GdroSelection = state["gdro_sel"]
    erm_down: DownstreamErmSelection = state["erm_downstream"]
    return {
        "config_hash": config_hash(cfg),
        "seeds": {
            "dataset": cfg.dataset_seed,
            "split": cfg.split_seed,
            "erm": cfg.erm.seed,
            "gdro": cfg.gdro.seed,
            "kmeans": cfg.kmeans_seed,
        },
        "dataset": dataset_stats(ds),
        "group_inference": {
            "grasp": {
                **_inference_summary(inference.grasp, inference.grasp_ari),
                "erm_selection": {
                    "learning_rate": erm_sel.learning_rate,
                    "weight_decay": erm_sel.weight_decay,
                    "selection_score": erm_sel.score,
                },
            },
            "feasp": _inference_summary(inference.feasp, inference.feasp_ari),
            "kmeans": {
                "gradient_ari": inference.kmeans_gradient_ari,
                "feature_ari": inference.kmeans_feature_ari,
                "k_per_class": cfg.kmeans_k,
            },
        },
        "evaluation": {
            "erm": {
                "selection": {
                    "learning_rate": erm_down.learning_rate,
                    "weight_decay": erm_down.weight_decay,
                    "val_accuracy": erm_down.val_accuracy,
                },
                "test": state["eval_erm"],
            },
            "gdro": {
                "selection": {
                    "learning_rate": gdro_sel.learning_rate,
                    "weight_decay": gdro_sel.weight_decay,
                    "eta_q": gdro_sel.eta_q,
                    "val_worst_group_accuracy": gdro_sel.val_worst,
                },
                "n_train_outliers_removed": gdro_sel.n_train_removed,
                "n_groups_used": gdro_sel.n_groups,
                "test": state["eval_gdro"],
            },
        },
    }
