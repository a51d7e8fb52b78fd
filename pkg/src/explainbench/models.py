"""Regression models used as explanation targets.

Three families: ridge-regularized linear regression, greedy CART on squared
error, and a small fully-connected ReLU network trained with Adam. Fitting
is deterministic given the model spec (including its seed), which keeps
remove-and-retrain evaluations reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labelers import Dataset
from .seeding import derive_rng

MODEL_KINDS = ("linear", "tree", "mlp")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    ridge_lambda: float = 1e-6
    max_depth: int = 6
    min_samples_split: int = 10
    hidden_sizes: tuple[int, ...] = (50, 50)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "linear" and self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")
        if self.kind == "tree" and (self.max_depth < 0 or self.min_samples_split < 2):
            raise ValueError("tree hyperparameters out of range")
        if self.kind == "mlp":
            if not self.hidden_sizes:
                raise ValueError("mlp needs at least one hidden layer")
            if min(self.hidden_sizes) < 1 or self.learning_rate <= 0 or self.epochs < 1:
                raise ValueError("mlp hyperparameters out of range")

    def to_json_dict(self) -> dict:
        payload = {"kind": self.kind}
        if self.kind == "linear":
            payload["ridge_lambda"] = self.ridge_lambda
        elif self.kind == "tree":
            payload.update(max_depth=self.max_depth, min_samples_split=self.min_samples_split)
        else:
            payload.update(
                hidden_sizes=list(self.hidden_sizes),
                learning_rate=self.learning_rate,
                epochs=self.epochs,
                batch_size=self.batch_size,
                seed=self.seed,
            )
        return payload

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ModelSpec":
        payload = dict(payload)
        if "hidden_sizes" in payload:
            payload["hidden_sizes"] = tuple(payload["hidden_sizes"])
        return cls(**payload)


def _check_finite(x: np.ndarray, y: np.ndarray) -> None:
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise TrainingError("features and labels must be finite")


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


# ---------------------------------------------------------------------- linear


@dataclass(frozen=True, eq=False)
class LinearModel:
    spec: ModelSpec
    coef: np.ndarray
    intercept: float
    training_mse: float = 0.0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.coef.shape[0]:
            raise ValueError("dimension mismatch")
        return x @ self.coef + self.intercept

    def to_json_dict(self) -> dict:
        return {
            "kind": "linear",
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "training_mse": self.training_mse,
        }


def _fit_linear(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> LinearModel:
    n, d = x.shape
    design = np.column_stack([x, np.ones(n)])
    gram = design.T @ design
    penalty = spec.ridge_lambda * np.eye(d + 1)
    penalty[d, d] = 0.0  # intercept is not penalized
    beta = np.linalg.solve(gram + penalty, design.T @ y)
    model = LinearModel(spec, beta[:d], float(beta[d]))
    mse = float(np.mean((model.predict(x) - y) ** 2))
    return LinearModel(spec, beta[:d], float(beta[d]), mse)


# ------------------------------------------------------------------------ tree


@dataclass(frozen=True, eq=False)
class TreeNode:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass(frozen=True, eq=False)
class TreeModel:
    spec: ModelSpec
    root: TreeNode
    dim: int
    training_mse: float = 0.0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        out = np.empty(x.shape[0])
        self._fill(self.root, x, np.arange(x.shape[0]), out)
        return out

    def _fill(self, node: TreeNode, x: np.ndarray, idx: np.ndarray, out: np.ndarray):
        if node.is_leaf:
            out[idx] = node.value
            return
        go_left = x[idx, node.feature] <= node.threshold
        self._fill(node.left, x, idx[go_left], out)
        self._fill(node.right, x, idx[~go_left], out)

    def depth(self) -> int:
        def walk(node):
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def to_json_dict(self) -> dict:
        def encode(node):
            if node.is_leaf:
                return {"value": node.value}
            return {
                "feature": node.feature,
                "threshold": node.threshold,
                "left": encode(node.left),
                "right": encode(node.right),
            }

        return {"kind": "tree", "tree": encode(self.root), "training_mse": self.training_mse}


def _best_split(x: np.ndarray, y: np.ndarray):
    """Scan all features for the split minimizing child SSE via prefix sums."""
    n = y.shape[0]
    total_sum = y.sum()
    total_sq = (y**2).sum()
    best = (np.inf, -1, 0.0)
    for feature in range(x.shape[1]):
        order = np.argsort(x[:, feature], kind="stable")
        xs = x[order, feature]
        ys = y[order]
        csum = np.cumsum(ys)[:-1]
        csq = np.cumsum(ys**2)[:-1]
        counts = np.arange(1, n)
        valid = xs[:-1] < xs[1:]
        if not np.any(valid):
            continue
        sse_left = csq - csum**2 / counts
        right_sum = total_sum - csum
        right_sq = total_sq - csq
        sse_right = right_sq - right_sum**2 / (n - counts)
        score = np.where(valid, sse_left + sse_right, np.inf)
        pos = int(np.argmin(score))
        if score[pos] < best[0] - 1e-12:
            threshold = 0.5 * (xs[pos] + xs[pos + 1])
            best = (float(score[pos]), feature, threshold)
    return best


def _grow_tree(x: np.ndarray, y: np.ndarray, depth: int, spec: ModelSpec) -> TreeNode:
    leaf_value = float(y.mean())
    if (
        depth >= spec.max_depth
        or y.shape[0] < spec.min_samples_split
        or np.ptp(y) == 0.0
    ):
        return TreeNode(leaf_value)
    score, feature, threshold = _best_split(x, y)
    if feature < 0:
        return TreeNode(leaf_value)
    go_left = x[:, feature] <= threshold
    left = _grow_tree(x[go_left], y[go_left], depth + 1, spec)
    right = _grow_tree(x[~go_left], y[~go_left], depth + 1, spec)
    return TreeNode(leaf_value, feature, threshold, left, right)


def _fit_tree(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> TreeModel:
    root = _grow_tree(x, y, 0, spec)
    model = TreeModel(spec, root, x.shape[1])
    mse = float(np.mean((model.predict(x) - y) ** 2))
    return TreeModel(spec, root, x.shape[1], mse)


# ------------------------------------------------------------------------- mlp


@dataclass(frozen=True, eq=False)
class MLPModel:
    spec: ModelSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    dim: int
    training_mse: float = 0.0

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.dim:
            raise ValueError("dimension mismatch")
        return _mlp_forward(self.weights, self.biases, x)

    def to_json_dict(self) -> dict:
        return {
            "kind": "mlp",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "training_mse": self.training_mse,
        }


def _mlp_forward(weights, biases, x: np.ndarray) -> np.ndarray:
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[:, 0]


def _mlp_init(spec: ModelSpec, dim: int):
    rng = derive_rng(spec.seed, "mlp-init")
    sizes = [dim, *spec.hidden_sizes, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def mlp_loss_and_grads(weights, biases, x: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradients w.r.t. every parameter.

    Kept as a standalone function so the analytic gradients can be checked
    against finite differences.
    """
    n = x.shape[0]
    last = len(weights) - 1
    acts = [x]
    pre = []
    h = x
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        acts.append(h)
    pred = acts[-1][:, 0]
    resid = pred - y
    loss = float(np.mean(resid**2))

    grad_w = [None] * len(weights)
    grad_b = [None] * len(biases)
    delta = (2.0 / n) * resid[:, None]
    for i in range(last, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (pre[i - 1] > 0.0)
    return loss, grad_w, grad_b


def _fit_mlp(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> MLPModel:
    weights, biases = _mlp_init(spec, x.shape[1])
    params = weights + biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    rng = derive_rng(spec.seed, "mlp-batches")
    n = x.shape[0]
    step = 0
    for _ in range(spec.epochs):
        order = rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            batch = order[start : start + spec.batch_size]
            _, grad_w, grad_b = mlp_loss_and_grads(weights, biases, x[batch], y[batch])
            grads = grad_w + grad_b
            step += 1
            lr_t = spec.learning_rate * np.sqrt(1 - beta2**step) / (1 - beta1**step)
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= beta1
                mi += (1 - beta1) * g
                vi *= beta2
                vi += (1 - beta2) * g**2
                p -= lr_t * mi / (np.sqrt(vi) + eps)
    weights = tuple(w.copy() for w in weights)
    biases = tuple(b.copy() for b in biases)
    mse = float(np.mean((_mlp_forward(weights, biases, x) - y) ** 2))
    if not np.isfinite(mse):
        raise TrainingError("mlp training diverged")
    return MLPModel(spec, weights, biases, x.shape[1], mse)


# ------------------------------------------------------------------ public api


def fit(spec: ModelSpec, data: Dataset):
    """Train a model of ``spec.kind`` on a dataset; deterministic per spec."""
    x = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.float64)
    if x.shape[0] == 0:
        raise TrainingError("empty training set")
    _check_finite(x, y)
    if spec.kind == "linear":
        return _fit_linear(spec, x, y)
    if spec.kind == "tree":
        return _fit_tree(spec, x, y)
    return _fit_mlp(spec, x, y)


def predict(model, x) -> np.ndarray:
    return model.predict(x)


def predict_one(model, x) -> float:
    return float(model.predict(np.asarray(x, dtype=np.float64)[None, :])[0])
