import numpy as np
import pytest

import gradpart as gp
from gradpart.dataset import CsvSchema, default_schema, group_stats, load_csv, save_csv


def test_synthetic_counts_and_layout():
    ds = gp.generate_synthetic(0)
    assert ds.n == 1000 and ds.d == 2 and ds.n_classes == 2 and ds.n_groups == 4
    # 100 samples per Gaussian cluster, identified by the nearest center
    centers = {
        (1, 5), (1, 3), (1, 2), (1, 1), (0, 4),
        (0, 5), (0, 3), (0, 2), (0, 1), (1, 4),
    }
    rounded = [tuple(np.round(x).astype(int)) for x in ds.X]
    for c in centers:
        assert rounded.count(c) == 100
    # majority/minority split is 800/200 overall
    counts = {r["group"]: r["count"] for r in group_stats(ds)}
    assert counts == {0: 400, 1: 100, 2: 400, 3: 100}


def test_synthetic_contamination_flips_exactly_five_percent():
    clean = gp.generate_synthetic(0)
    dirty = gp.generate_synthetic(0, contaminate=True)
    assert int(dirty.outlier.sum()) == 50
    assert np.array_equal(clean.X, dirty.X)  # features untouched, bitwise
    flipped = clean.y != dirty.y
    assert np.array_equal(flipped, dirty.outlier)
    assert np.array_equal(clean.g, dirty.g)  # flips keep their group


def test_synthetic_deterministic():
    a = gp.generate_synthetic(0)
    b = gp.generate_synthetic(0)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    c = gp.generate_synthetic(1)
    assert not np.array_equal(a.X, c.X)


def test_split_sizes_and_stratification():
    ds = gp.generate_synthetic(0)
    out = gp.split(ds, (0.6, 0.2, 0.2), 0)
    tags, counts = np.unique(out.split, return_counts=True)
    assert dict(zip(tags.tolist(), counts.tolist())) == {"test": 200, "train": 600, "val": 200}
    # stratified: per-class proportions within one sample
    for cls in (0, 1):
        m = out.y == cls
        for tag, ratio in zip(("train", "val", "test"), (0.6, 0.2, 0.2)):
            got = int(((out.split == tag) & m).sum())
            assert abs(got - ratio * m.sum()) <= 1


def test_split_all_train_and_determinism():
    ds = gp.generate_synthetic(0)
    out = gp.split(ds, (1.0, 0.0, 0.0), 3)
    assert set(out.split.tolist()) == {"train"}
    a = gp.split(ds, (0.6, 0.2, 0.2), 5)
    b = gp.split(ds, (0.6, 0.2, 0.2), 5)
    assert np.array_equal(a.split, b.split)


def test_split_rejects_bad_ratios_and_tiny_classes():
    ds = gp.generate_synthetic(0)
    with pytest.raises(ValueError):
        gp.split(ds, (0.5, 0.2, 0.2), 0)
    with pytest.raises(ValueError):
        gp.split(ds, (-0.2, 0.6, 0.6), 0)
    tiny = gp.Dataset(X=np.zeros((3, 1)), y=np.array([0, 0, 1]))
    with pytest.raises(ValueError, match="fewer than"):
        gp.split(tiny, (0.6, 0.2, 0.2), 0)


def test_load_csv_basic(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("a,b,label\n0.5,1.0,a\n1.5,2.0,b\n2.5,3.0,a\n3.5,4.0,b\n")
    ds = load_csv(path, CsvSchema(features=("a", "b"), label="label"))
    assert ds.n == 4 and ds.d == 2 and ds.n_classes == 2
    assert ds.label_names == ("a", "b")
    assert ds.y.tolist() == [0, 1, 0, 1]


def test_load_csv_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty file"):
        load_csv(empty, CsvSchema(features=("a",), label="y"))

    missing = tmp_path / "missing.csv"
    missing.write_text("a,y\n1.0,0\n")
    with pytest.raises(ValueError, match="missing column 'b'"):
        load_csv(missing, CsvSchema(features=("a", "b"), label="y"))

    nan = tmp_path / "nan.csv"
    nan.write_text("a,y\n1.0,0\nnan,1\n")
    with pytest.raises(ValueError, match="line 3, column 'a'"):
        load_csv(nan, CsvSchema(features=("a",), label="y"))

    text = tmp_path / "text.csv"
    text.write_text("a,y\noops,0\n2.0,1\n")
    with pytest.raises(ValueError, match="line 2, column 'a'"):
        load_csv(text, CsvSchema(features=("a",), label="y"))


def test_csv_round_trip_exact(tmp_path):
    ds = gp.split(gp.generate_synthetic(0, contaminate=True), (0.6, 0.2, 0.2), 0)
    path = tmp_path / "ds.csv"
    save_csv(ds, path)
    back = load_csv(path, default_schema(ds.d))
    assert np.array_equal(ds.X, back.X)
    assert np.array_equal(ds.y, back.y)
    assert np.array_equal(ds.g, back.g)
    assert np.array_equal(ds.outlier, back.outlier)
    assert np.array_equal(ds.split, back.split)


def test_group_stats():
    ds = gp.generate_synthetic(0)
    rows = group_stats(ds)
    assert sum(r["count"] for r in rows) == ds.n
    assert abs(sum(r["fraction"] for r in rows) - 1.0) < 1e-9
    minority = [r for r in rows if r["group"] in (1, 3)]
    assert all(r["fraction"] == pytest.approx(0.1) for r in minority)

    single = gp.Dataset(X=np.zeros((4, 1)), y=np.zeros(4, dtype=int), g=np.zeros(4, dtype=int))
    rows = group_stats(single)
    assert rows == [{"group": 0, "class": 0, "count": 4, "fraction": 1.0}]

    empty = gp.Dataset(X=np.zeros((0, 2)), y=np.zeros(0, dtype=int), g=np.zeros(0, dtype=int))
    assert group_stats(empty) == []

    with pytest.raises(ValueError):
        group_stats(gp.Dataset(X=np.zeros((2, 1)), y=np.array([0, 1])))


def test_dataset_immutable_and_validated():
    ds = gp.generate_synthetic(0)
    with pytest.raises(ValueError):
        ds.X[0, 0] = 5.0
    with pytest.raises(ValueError):
        gp.Dataset(X=np.array([[np.inf, 0.0]]), y=np.array([0]))
    with pytest.raises(ValueError):
        gp.Dataset(X=np.zeros((2, 2)), y=np.array([0, 1]), split=np.array(["train", "oops"]))
