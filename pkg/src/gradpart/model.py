"""Linear and MLP classifiers over a flat parameter vector.

Forward, loss, and gradients are written directly in numpy so per-sample
parameter gradients are available exactly (no autodiff). Training is
deterministic given the config seed.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, Sample

PROB_CLAMP = 1e-12  # keeps -log(p) finite for arbitrarily misclassified points

ARCH_KINDS = ("linear", "linear-sigmoid", "mlp")


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor.

    "linear" is a softmax classifier, "linear-sigmoid" a binary classifier
    parameterized as sigmoid(w.x + b) with theta = (w, b), "mlp" a ReLU
    network with the given hidden widths and a softmax head.
    """

    kind: str
    d: int
    n_classes: int = 2
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.kind == "linear-sigmoid" and self.n_classes != 2:
            raise ValueError("linear-sigmoid is binary only")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind != "mlp" and self.hidden:
            raise ValueError("hidden widths only apply to the mlp kind")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, in forward order."""
        if self.kind == "linear-sigmoid":
            return [(self.d, 1)]
        widths = [self.d, *self.hidden, self.n_classes]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in self.layer_dims())

    def last_layer_slice(self) -> slice:
        dims = self.layer_dims()
        before = sum((i + 1) * o for i, o in dims[:-1])
        return slice(before, self.n_params)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "d": self.d,
            "n_classes": self.n_classes,
            "hidden": list(self.hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Arch":
        return cls(
            kind=d["kind"],
            d=int(d["d"]),
            n_classes=int(d.get("n_classes", 2)),
            hidden=tuple(d.get("hidden", ())),
        )


@dataclass(frozen=True)
class ModelParams:
    arch: Arch
    theta: np.ndarray

    def __post_init__(self):
        theta = np.ascontiguousarray(np.asarray(self.theta, dtype=float))
        if theta.shape != (self.arch.n_params,):
            raise ValueError(
                f"theta has {theta.size} entries, architecture needs {self.arch.n_params}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    weight_decay: float = 0.0
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _unpack(arch: Arch, theta: np.ndarray):
    """Read-only (W, b) views per layer."""
    out = []
    pos = 0
    for fan_in, fan_out in arch.layer_dims():
        W = theta[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = theta[pos : pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def _init_theta(arch: Arch, rng: np.random.Generator) -> np.ndarray:
    # uniform fan-in scaling, one (W, b) pair per layer in forward order
    parts = []
    for fan_in, fan_out in arch.layer_dims():
        bound = 1.0 / np.sqrt(fan_in)
        parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(parts)


def init_params(arch: Arch, seed: int) -> ModelParams:
    return ModelParams(arch, _init_theta(arch, np.random.default_rng(seed)))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_cached(arch: Arch, theta: np.ndarray, X: np.ndarray):
    """Class probabilities plus the layer inputs needed for backprop."""
    if arch.kind == "linear-sigmoid":
        (w, b), = _unpack(arch, theta)
        p1 = _sigmoid(X @ w[0] + b[0])
        return np.column_stack([1.0 - p1, p1]), [X]
    acts = [X]
    a = X
    layers = _unpack(arch, theta)
    for W, b in layers[:-1]:
        a = np.maximum(a @ W.T + b, 0.0)
        acts.append(a)
    W, b = layers[-1]
    logits = a @ W.T + b
    return _softmax(logits), acts


def forward_batch(params: ModelParams, X) -> np.ndarray:
    """Class-probability rows for a batch of inputs."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.arch.d:
        raise ValueError(
            f"expected inputs of width {params.arch.d}, got shape {X.shape}"
        )
    probs, _ = _forward_cached(params.arch, params.theta, X)
    return probs


def forward(params: ModelParams, x) -> np.ndarray:
    """Class probabilities for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector")
    return forward_batch(params, x[None, :])[0]


def losses(params: ModelParams, X, y) -> np.ndarray:
    """Per-sample cross-entropy, probabilities clamped away from 0 and 1."""
    y = np.asarray(y, dtype=np.int64)
    probs = forward_batch(params, X)
    if y.size and (y.min() < 0 or y.max() >= probs.shape[1]):
        raise ValueError("class label out of range")
    p = np.clip(probs[np.arange(len(y)), y], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -np.log(p)


def per_sample_loss(params: ModelParams, sample: Sample) -> float:
    return float(losses(params, sample.x[None, :], [sample.y])[0])


def per_sample_gradients(params: ModelParams, X, y) -> np.ndarray:
    """Gradient of each sample's own cross-entropy w.r.t. theta, one row
    per sample (no weight-decay term)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    arch = params.arch
    probs, acts = _forward_cached(arch, params.theta, X)
    n = X.shape[0]
    if arch.kind == "linear-sigmoid":
        e = probs[:, 1] - y
        return np.concatenate([e[:, None] * X, e[:, None]], axis=1)
    E = probs.copy()
    E[np.arange(n), y] -= 1.0
    layers = _unpack(arch, params.theta)
    delta = E
    grads = [None] * len(layers)
    for l in range(len(layers) - 1, -1, -1):
        a_prev = acts[l]
        dW = np.einsum("no,ni->noi", delta, a_prev).reshape(n, -1)
        grads[l] = (dW, delta)
        if l:
            delta = (delta @ layers[l][0]) * (acts[l] > 0)
    return np.concatenate([part for dW, db in grads for part in (dW, db)], axis=1)


def _weighted_gradient(arch, theta, probs, acts, X, y, w) -> np.ndarray:
    """Gradient of sum_i w_i * loss_i w.r.t. theta."""
    if arch.kind == "linear-sigmoid":
        e = (probs[:, 1] - y) * w
        return np.concatenate([X.T @ e, [e.sum()]])
    E = probs.copy()
    E[np.arange(len(y)), y] -= 1.0
    E *= w[:, None]
    layers = _unpack(arch, theta)
    delta = E
    grads = [None] * len(layers)
    for l in range(len(layers) - 1, -1, -1):
        grads[l] = (delta.T @ acts[l], delta.sum(axis=0))
        if l:
            delta = (delta @ layers[l][0]) * (acts[l] > 0)
    return np.concatenate([part.ravel() for dW, db in grads for part in (dW, db)])


class _Adam:
    def __init__(self, size: int, lr: float):
        self.lr = lr
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad * grad
        m_hat = self.m / (1.0 - 0.9**self.t)
        v_hat = self.v / (1.0 - 0.999**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + 1e-8)


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return theta - self.lr * grad


def _run_training(
    X: np.ndarray,
    y: np.ndarray,
    arch: Arch,
    cfg: TrainConfig,
    batch_weights=None,
    groups: np.ndarray | None = None,
    epoch_callback=None,
) -> np.ndarray:
    """Shared minibatch loop.

    ``batch_weights(batch_groups, batch_losses) -> w`` supplies per-sample
    gradient weights; None means the uniform 1/batch mean. Group-robust
    training reuses this loop so that with a single group it follows the
    exact same floating-point trajectory as plain mean-loss training.
    """
    n = len(X)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    theta = _init_theta(arch, rng)
    opt = _Adam(theta.size, cfg.learning_rate) if cfg.optimizer == "adam" else _Sgd(cfg.learning_rate)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            Xb, yb = X[idx], y[idx]
            probs, acts = _forward_cached(arch, theta, Xb)
            p = np.clip(probs[np.arange(len(yb)), yb], PROB_CLAMP, 1.0 - PROB_CLAMP)
            batch_losses = -np.log(p)
            if batch_weights is None:
                w = np.full(len(yb), 1.0 / len(yb))
            else:
                w = batch_weights(groups[idx], batch_losses)
            grad = _weighted_gradient(arch, theta, probs, acts, Xb, yb, w)
            grad += cfg.weight_decay * theta
            theta = opt.step(theta, grad)
        if epoch_callback is not None:
            epoch_callback(epoch, theta.copy())
    return theta


def _train_arrays(ds: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Train-split rows; a dataset without split tags is treated as all-train."""
    if ds.split is None:
        idx = np.arange(ds.n)
    else:
        idx = np.flatnonzero(ds.split == "train")
    if idx.size == 0:
        raise ValueError("empty train split")
    return ds.X[idx], ds.y[idx], idx


def train_erm(ds: Dataset, arch: Arch, cfg: TrainConfig, epoch_callback=None) -> ModelParams:
    """Minibatch training on the mean cross-entropy plus weight decay."""
    if arch.d != ds.d:
        raise ValueError(f"architecture expects d={arch.d}, dataset has d={ds.d}")
    X, y, _ = _train_arrays(ds)
    theta = _run_training(X, y, arch, cfg, epoch_callback=epoch_callback)
    return ModelParams(arch, theta)


def predict(params: ModelParams, X) -> np.ndarray:
    return forward_batch(params, X).argmax(axis=1)


def accuracy(params: ModelParams, X, y) -> float:
    return float(np.mean(predict(params, X) == np.asarray(y)))


def save_checkpoint(params: ModelParams, path) -> None:
    """JSON descriptor plus base64 float64 payload; round-trip exact."""
    payload = {
        "arch": params.arch.to_dict(),
        "theta_base64": base64.b64encode(
            np.ascontiguousarray(params.theta, dtype="<f8").tobytes()
        ).decode("ascii"),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_checkpoint(path) -> ModelParams:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    arch = Arch.from_dict(payload["arch"])
    theta = np.frombuffer(base64.b64decode(payload["theta_base64"]), dtype="<f8")
    return ModelParams(arch, theta.astype(float))
