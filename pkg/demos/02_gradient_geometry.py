# Why gradients are easier to cluster than features.
#
# A sample's representation is the gradient of its own loss at the trained
# parameters. For a linear-sigmoid model that is (error) * (x, 1), so
# correctly classified points shrink toward the origin while confidently
# wrong points keep large, direction-revealing vectors.

import numpy as np

import gradpart as gp

ds = gp.split(gp.generate_synthetic(seed=0), (0.6, 0.2, 0.2), seed=0)
arch = gp.Arch("linear", d=2, n_classes=2)
cfg = gp.TrainConfig(epochs=50, batch_size=128, learning_rate=0.01, weight_decay=1e-4, seed=0)
model = gp.train_erm(ds, arch, cfg)
train = ds.split == "train"
print(f"linear model train accuracy: {gp.accuracy(model, ds.X[train], ds.y[train]):.3f}")
print("(the column rule caps a linear model at ~0.80: minorities sit across the gap)")

grads = gp.extract_gradients(model, ds)
norms = np.linalg.norm(grads.rows, axis=1)
for gid, name in ((0, "class-0 majority"), (1, "class-0 minority")):
    sel = ds.g == gid
    print(f"  median gradient norm, {name}: {np.median(norms[sel]):.4f}")

# the closed form for a sigmoid-parameterized linear model: error * (x, 1)
w = model.theta[:4].reshape(2, 2)
b = model.theta[4:]
w_eq, b_eq = w[1] - w[0], float(b[1] - b[0])
x, y = ds.X[0], int(ds.y[0])
print("\nclosed-form gradient:", gp.logistic_gradient_closed_form(w_eq, b_eq, x, y).round(4))

# per-class centered-cosine distances: majority and minority collapse to
# two nearly antipodal directions
for cls in (0, 1):
    idx = np.flatnonzero(train & (ds.y == cls))
    dm = gp.distance_matrix(grads.rows[idx], metric="centered-cosine")
    g_sub = ds.g[idx]
    maj, mino = (0, 1) if cls == 0 else (2, 3)
    within = dm.entries[np.ix_(g_sub == maj, g_sub == maj)]
    across = dm.entries[np.ix_(g_sub == maj, g_sub == mino)]
    print(
        f"class {cls}: within-majority distance {within.mean():.3f}, "
        f"majority-to-minority {across.mean():.3f}"
    )
