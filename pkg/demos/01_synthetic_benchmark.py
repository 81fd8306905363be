# Build the two-feature benchmark and look at what contamination does.
#
# Each class is four majority Gaussian modes in one column of the plane
# plus one minority mode in the opposite column, so a classifier that
# leans on the easy column rule is wrong on every minority point.

import numpy as np

import gradpart as gp

ds = gp.generate_synthetic(seed=0)
print(f"{ds.n} samples, {ds.d} features, {ds.n_classes} classes, {ds.n_groups} groups")
print("\nper-group composition:")
for row in gp.group_stats(ds):
    print(
        f"  group {row['group']} (class {row['class']}): "
        f"{row['count']:4d} samples, fraction {row['fraction']:.2f}"
    )

# contamination flips 5% of the labels; features and group ids are kept,
# the flipped samples are simply marked as outliers
dirty = gp.generate_synthetic(seed=0, contaminate=True)
print(f"\ncontaminated copy: {int(dirty.outlier.sum())} flipped labels")
print("features identical to the clean draw:", np.array_equal(ds.X, dirty.X))

# stratified split, the 0.6 / 0.2 / 0.2 protocol used everywhere here
split = gp.split(dirty, (0.6, 0.2, 0.2), seed=0)
for tag in ("train", "val", "test"):
    mask = split.split == tag
    flips = int(split.outlier[mask].sum())
    print(f"  {tag:5s}: {int(mask.sum()):4d} samples, {flips} outliers")

# round-trip through CSV is exact
gp.save_csv(split, "/tmp/benchmark.csv")
back = gp.load_csv("/tmp/benchmark.csv", gp.CsvSchema(
    features=("x0", "x1"), label="y", group="group", outlier="outlier", split="split"
))
print("\nCSV round trip bitwise exact:", np.array_equal(split.X, back.X))
