import numpy as np
import pytest

import gradpart as gp
from gradpart.clustering import DbscanParams
from gradpart.groupinfer import (
    UNASSIGNED_LABEL,
    clustered_mask,
    partition_by_class,
    true_group_partition,
)


def two_blob_dataset(seed=0, spread=0.02):
    rng = np.random.default_rng(seed)
    X = np.vstack(
        [
            rng.normal((0.0, 0.0), spread, size=(60, 2)),
            rng.normal((5.0, 5.0), spread, size=(60, 2)),
        ]
    )
    y = np.repeat([0, 1], 60)
    g = np.repeat([0, 1], 60)
    return gp.Dataset(X=X, y=y, g=g)


def fig1c_dataset(seed=0):
    """Multimodal majority with one mode right next to the minority in
    feature space, but on the correct side of the class boundary."""
    rng = np.random.default_rng(seed)
    blocks = [
        (0, 0, (1.0, 1.0), 100),
        (0, 0, (1.0, 2.5), 100),
        (0, 0, (0.62, 4.0), 100),
        (0, 1, (0.38, 4.0), 40),
        (1, 2, (0.0, 1.5), 100),
        (1, 2, (0.0, 3.0), 100),
        (1, 2, (0.38, 5.5), 100),
        (1, 3, (0.62, 5.5), 40),
    ]
    xs, ys, gs = [], [], []
    for cls, grp, center, count in blocks:
        xs.append(rng.normal(center, 0.05, size=(count, 2)))
        ys.append(np.full(count, cls))
        gs.append(np.full(count, grp))
    return gp.Dataset(X=np.concatenate(xs), y=np.concatenate(ys), g=np.concatenate(gs))


def test_grasp_clean_synthetic_recovers_groups(clean_synthetic, linear_erm):
    result = gp.grasp(clean_synthetic, linear_erm)
    ari = gp.inference_ari(result, clean_synthetic)
    assert ari >= 0.6


def test_grasp_contaminated_close_to_clean(clean_synthetic, contaminated_synthetic, linear_erm):
    clean_ari = gp.inference_ari(gp.grasp(clean_synthetic, linear_erm), clean_synthetic)
    arch = gp.Arch("linear", d=2, n_classes=2)
    cfg = gp.TrainConfig(epochs=50, batch_size=128, learning_rate=1e-2, weight_decay=1e-4, seed=0)
    erm_c = gp.train_erm(contaminated_synthetic, arch, cfg)
    cont_ari = gp.inference_ari(gp.grasp(contaminated_synthetic, erm_c), contaminated_synthetic)
    assert abs(clean_ari - cont_ari) <= 0.1


def test_grasp_single_tight_cluster_per_class_falls_back_to_one_group():
    ds = two_blob_dataset()
    arch = gp.Arch("linear", d=2, n_classes=2)
    erm = gp.train_erm(ds, arch, gp.TrainConfig(100, 32, 0.1, 0.0, 0))
    assert gp.accuracy(erm, ds.X, ds.y) == 1.0
    # eps above the gradient-space diameter: one cluster per class
    result = gp.grasp(ds, erm, grid=[DbscanParams(1.99, 5)])
    assert result.n_groups == 2
    assert not result.outlier_mask.any()
    assert result.warnings  # fallback flagged
    for cls in (0, 1):
        assert len(set(result.group[ds.y == cls].tolist())) == 1


def test_feasp_single_cluster_per_class_perfect_ari():
    ds = two_blob_dataset()
    result = gp.feasp(ds, grid=[DbscanParams(1.99, 5)])
    assert gp.inference_ari(result, ds) == 1.0


def test_feasp_clean_synthetic_near_reported_value(clean_synthetic, linear_erm):
    feasp_ari = gp.inference_ari(gp.feasp(clean_synthetic), clean_synthetic)
    assert feasp_ari == pytest.approx(0.51, abs=0.1)
    grasp_ari = gp.inference_ari(gp.grasp(clean_synthetic, linear_erm), clean_synthetic)
    assert feasp_ari <= grasp_ari


def test_multimodal_majority_gradient_beats_feature_space():
    ds = fig1c_dataset()
    arch = gp.Arch("linear", d=2, n_classes=2)
    erm = gp.train_erm(ds, arch, gp.TrainConfig(80, 128, 0.1, 1e-4, 0))
    gradient_ari = gp.inference_ari(gp.grasp(ds, erm), ds)
    feature_ari = gp.inference_ari(gp.feasp(ds), ds)
    assert feature_ari < gradient_ari


def test_grasp_feasp_share_the_pipeline():
    # replacing the gradient representation by raw features must reproduce
    # feasp exactly
    ds = fig1c_dataset()
    grid = gp.default_grid()
    labels, chosen, scores, warnings = partition_by_class(ds.X, ds.y, grid, "centered-cosine")
    via_feasp = gp.feasp(ds, grid=grid)
    assert np.array_equal(labels, via_feasp.group)
    assert chosen == via_feasp.chosen
    assert scores == via_feasp.silhouette_scores
    assert warnings == via_feasp.warnings


def test_group_id_blocks_are_disjoint_across_classes(clean_synthetic, linear_erm):
    result = gp.grasp(clean_synthetic, linear_erm)
    ds = clean_synthetic
    ids0 = set(result.group[(ds.y == 0) & (result.group >= 0)].tolist())
    ids1 = set(result.group[(ds.y == 1) & (result.group >= 0)].tolist())
    assert ids0 and ids1
    assert not (ids0 & ids1)
    assert sorted(ids0 | ids1) == list(range(result.n_groups))


def test_test_split_is_never_clustered(clean_synthetic, linear_erm):
    result = gp.grasp(clean_synthetic, linear_erm)
    test_mask = clean_synthetic.split == "test"
    assert np.all(result.group[test_mask] == UNASSIGNED_LABEL)
    assert np.all(result.group[~test_mask] > UNASSIGNED_LABEL)
    assert np.array_equal(clustered_mask(clean_synthetic), ~test_mask)


def test_detected_outlier_precision_on_contaminated(contaminated_synthetic):
    # moderately fit gradient model: detections should be dominated by the
    # flipped-label points
    ds = contaminated_synthetic
    arch = gp.Arch("linear", d=2, n_classes=2)
    erm = gp.train_erm(ds, arch, gp.TrainConfig(50, 128, 1e-3, 1e-4, 0))
    result = gp.grasp(ds, erm)
    detected = result.outlier_mask
    assert detected.any()
    precision = (detected & ds.outlier).sum() / detected.sum()
    assert precision >= 0.5


def test_true_group_partition_marks_outliers(contaminated_synthetic):
    ref = true_group_partition(contaminated_synthetic)
    assert np.all(ref[contaminated_synthetic.outlier] == -1)
    kept = ~contaminated_synthetic.outlier
    assert np.array_equal(ref[kept], contaminated_synthetic.g[kept])


def test_sweep_report_shape_and_band(clean_synthetic, linear_erm):
    rows = gp.sweep_report(
        clean_synthetic, linear_erm, (0.1, 0.2, 0.3, 0.5, 0.7), (10, 20, 30, 50, 70, 100)
    )
    assert len(rows) == 60
    assert {r["class"] for r in rows} == {0, 1}
    # group recovery is stable across the well-scoring half of the grid
    for cls in (0, 1):
        scored = [r for r in rows if r["class"] == cls and r["silhouette"] is not None]
        scored.sort(key=lambda r: -r["silhouette"])
        top = scored[: max(1, len(scored) // 2)]
        aris = [r["ari"] for r in top]
        assert max(aris) - min(aris) <= 0.15


def test_sweep_report_single_point_and_no_groups(linear_erm, clean_synthetic):
    rows = gp.sweep_report(clean_synthetic, linear_erm, (0.2,), (10,))
    assert len(rows) == 2
    bare = gp.Dataset(X=clean_synthetic.X, y=clean_synthetic.y, split=clean_synthetic.split)
    rows = gp.sweep_report(bare, linear_erm, (0.2,), (10,))
    assert len(rows) == 2
    assert all("ari" not in r for r in rows)


def test_empty_grid_rejected(clean_synthetic, linear_erm):
    with pytest.raises(ValueError):
        gp.grasp(clean_synthetic, linear_erm, grid=[])


def test_inference_csv_round_trip(tmp_path, clean_synthetic, linear_erm):
    from gradpart.groupinfer import load_inference_groups, save_inference

    result = gp.grasp(clean_synthetic, linear_erm)
    save_inference(result, clean_synthetic, tmp_path / "inf.csv", tmp_path / "inf.json")
    back = load_inference_groups(tmp_path / "inf.csv", clean_synthetic.n)
    assert np.array_equal(back, result.group)
