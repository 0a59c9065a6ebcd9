"""Feedforward rectifier network with a logistic output unit, trained with Adam.

Forward and backward passes are written out by hand so the attribution
methods can reuse (and modify) the backward pass down to the input layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import auc

LOGIT = "logit"
PROBABILITY = "probability"
TARGETS = (LOGIT, PROBABILITY)

SNAPSHOT_FORMAT = "xaiagree-snapshots/1"


class ModelError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={loss}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class MLPArchitecture:
    input_dim: int
    hidden_dims: tuple[int, ...] = (16, 8)
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ModelError("input_dim must be >= 1")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ModelError("need at least one hidden layer, all widths >= 1")
        if self.hidden_activation != "relu":
            raise ModelError("only rectifier hidden units are supported")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, 1]


@dataclass
class MLPParams:
    """Weights are stored out x in; the last layer always has one output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ModelError("need matching, non-empty weight and bias lists")
        prev = self.weights[0].shape[1]
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or W.shape[1] != prev or b.shape != (W.shape[0],):
                raise ModelError("inconsistent layer shapes")
            prev = W.shape[0]
        if prev != 1:
            raise ModelError("the output layer must have exactly one unit")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> MLPParams:
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (*self.weights, *self.biases))


@dataclass
class TrainingConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 16
    optimizer: str = "adam"
    seed: int = 0
    snapshot_every: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self, n_train: int | None = None) -> None:
        """Range checks; the batch-size bound needs ``n_train``."""
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.batch_size < 1 or (n_train is not None and self.batch_size > n_train):
            raise ModelError(f"batch_size must lie in [1, {n_train}]")
        if self.snapshot_every < 1:
            raise ModelError("snapshot_every must be >= 1")
        if self.optimizer != "adam":
            raise ModelError(f"unsupported optimizer {self.optimizer!r}")


@dataclass
class EpochSnapshot:
    epoch: int
    params: MLPParams
    train_loss: float
    val_auc: float


@dataclass
class ForwardCache:
    """Per-layer values from a batched forward pass.

    ``pre[l]`` is the affine output of layer ``l``; ``post[l]`` is the input to
    layer ``l`` (``post[0]`` is the network input).
    """

    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(arch: MLPArchitecture, seed: int) -> MLPParams:
    """Uniform fan-in/fan-out weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


def _as_params(model) -> MLPParams:
    return model.params if isinstance(model, EpochSnapshot) else model


def forward_batch(params, X) -> tuple[np.ndarray, ForwardCache]:
    """Logits for every row of ``X`` plus the activation cache."""
    params = _as_params(params)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ModelError(f"expected an (n, {params.input_dim}) matrix, got {X.shape}")
    cache = ForwardCache()
    h = X
    last = params.n_layers - 1
    for layer, (W, b) in enumerate(zip(params.weights, params.biases)):
        cache.post.append(h)
        # einsum keeps each row's summation order independent of the batch
        z = np.einsum("ni,oi->no", h, W) + b
        cache.pre.append(z)
        h = np.maximum(z, 0.0) if layer < last else z
    return h[:, 0], cache


def logits(params, X) -> np.ndarray:
    return forward_batch(params, X)[0]


def output(params, X, target: str = LOGIT) -> np.ndarray:
    """The scalar explained by the attribution methods, per row."""
    z = logits(params, X)
    if target == LOGIT:
        return z
    if target == PROBABILITY:
        return sigmoid(z)
    raise ModelError(f"unknown target {target!r}")


def forward(params, x) -> tuple[float, float, ForwardCache]:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ModelError("non-finite input")
    z, cache = forward_batch(params, x[None, :])
    return float(sigmoid(z)[0]), float(z[0]), cache


def predict_batch(params, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    params = _as_params(params)
    if X.ndim == 2 and X.shape[0] == 0:
        if X.shape[1] != params.input_dim:
            raise ModelError("shape mismatch")
        return np.empty(0)
    return sigmoid(logits(params, X))


def backward_inputs(params, cache: ForwardCache, grad_out, relu_rule=None) -> np.ndarray:
    """Propagate ``grad_out`` (d target / d logit, one per row) to the inputs.

    ``relu_rule(grad_post, pre)`` returns the gradient below a rectifier; the
    default is the ordinary derivative, gating on ``pre > 0``.
    """
    params = _as_params(params)
    g = np.asarray(grad_out, dtype=float)[:, None]
    for layer in range(params.n_layers - 1, -1, -1):
        if layer < params.n_layers - 1:
            pre = cache.pre[layer]
            g = relu_rule(g, pre) if relu_rule is not None else g * (pre > 0)
        g = g @ params.weights[layer]
    return g


def input_gradient_batch(params, X, target: str = LOGIT, relu_rule=None) -> np.ndarray:
    z, cache = forward_batch(params, X)
    if target == LOGIT:
        seed = np.ones_like(z)
    elif target == PROBABILITY:
        p = sigmoid(z)
        seed = p * (1.0 - p)
    else:
        raise ModelError(f"unknown target {target!r}")
    grad = backward_inputs(params, cache, seed, relu_rule)
    if not np.all(np.isfinite(grad)):
        raise ModelError("non-finite gradient")
    return grad


def input_gradient(params, x, target: str = LOGIT) -> np.ndarray:
    """Exact reverse-mode derivative of the logit or probability w.r.t. ``x``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ModelError("non-finite input")
    return input_gradient_batch(params, x[None, :], target)[0]


def bce_loss(params, X, y) -> float:
    z = logits(params, X)
    y = np.asarray(y, dtype=float)
    # log(1 + exp(z)) - y z, computed stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _param_gradients(params: MLPParams, X, y):
    z, cache = forward_batch(params, X)
    delta = (sigmoid(z) - y)[:, None] / len(y)
    grads_w = [None] * params.n_layers
    grads_b = [None] * params.n_layers
    for layer in range(params.n_layers - 1, -1, -1):
        grads_w[layer] = delta.T @ cache.post[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (cache.pre[layer - 1] > 0)
    return grads_w, grads_b


class _Adam:
    def __init__(self, params: MLPParams, cfg: TrainingConfig):
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(a) for a in (*params.weights, *params.biases)]
        self.v = [np.zeros_like(a) for a in self.m]

    def step(self, params: MLPParams, grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        arrays = [*params.weights, *params.biases]
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            m_hat = m / (1 - c.beta1 ** self.t)
            v_hat = v / (1 - c.beta2 ** self.t)
            a -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.eps)


def train(dataset, splits, arch: MLPArchitecture, cfg: TrainingConfig) -> list[EpochSnapshot]:
    """Minibatch Adam on binary cross-entropy, snapshotting parameters.

    A snapshot is taken every ``cfg.snapshot_every`` epochs and after the
    final epoch. Minibatch order for epoch ``e`` comes from a generator seeded
    with ``(cfg.seed, e)``, so the run is a pure function of its inputs.
    """
    X_train = dataset.features[splits.train_idx]
    y_train = dataset.labels[splits.train_idx].astype(float)
    X_val = dataset.features[splits.val_idx]
    y_val = dataset.labels[splits.val_idx]
    if arch.input_dim != dataset.K:
        raise ModelError(f"architecture expects {arch.input_dim} inputs, data has {dataset.K}")
    cfg.validate(len(X_train))

    params = init_params(arch, cfg.seed)
    opt = _Adam(params, cfg)
    n_train = len(X_train)
    snapshots = []
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            gw, gb = _param_gradients(params, X_train[batch], y_train[batch])
            opt.step(params, gw + gb)
        loss = bce_loss(params, X_train, y_train)
        if not np.isfinite(loss) or not params.is_finite():
            raise TrainingDiverged(epoch, loss)
        if epoch % cfg.snapshot_every == 0 or epoch == cfg.epochs:
            val_auc = _safe_auc(predict_batch(params, X_val), y_val)
            snapshots.append(EpochSnapshot(epoch, params.copy(), loss, val_auc))
    return snapshots


def _safe_auc(scores, labels) -> float:
    if len(np.unique(labels)) < 2:
        return float("nan")
    return auc(scores, labels)


# -- persistence ------------------------------------------------------------
# Floats go through json's repr, which is the shortest string that round-trips
# to the same double (never more than 17 significant digits).

def _params_to_dict(params: MLPParams) -> dict:
    return {
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def _params_from_dict(d: dict) -> MLPParams:
    return MLPParams(
        [np.array(w, dtype=float) for w in d["weights"]],
        [np.array(b, dtype=float) for b in d["biases"]],
    )


def snapshots_to_json(snapshots, arch: MLPArchitecture, seed: int) -> str:
    doc = {
        "format": SNAPSHOT_FORMAT,
        "architecture": {
            "input_dim": arch.input_dim,
            "hidden_dims": list(arch.hidden_dims),
            "hidden_activation": arch.hidden_activation,
        },
        "seed": seed,
        "snapshots": [
            {
                "epoch": s.epoch,
                "train_loss": s.train_loss,
                "val_auc": None if np.isnan(s.val_auc) else s.val_auc,
                **_params_to_dict(s.params),
            }
            for s in snapshots
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def snapshots_from_json(text: str):
    """Inverse of :func:`snapshots_to_json`; returns ``(snapshots, arch, seed)``."""
    doc = json.loads(text)
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise ModelError(f"not a snapshot file (format={doc.get('format')!r})")
    a = doc["architecture"]
    arch = MLPArchitecture(a["input_dim"], tuple(a["hidden_dims"]), a["hidden_activation"])
    snaps = []
    for s in doc["snapshots"]:
        val_auc = float("nan") if s["val_auc"] is None else s["val_auc"]
        snaps.append(EpochSnapshot(s["epoch"], _params_from_dict(s), s["train_loss"], val_auc))
    epochs = [s.epoch for s in snaps]
    if epochs != sorted(set(epochs)):
        raise ModelError("snapshot epochs must be strictly increasing")
    return snaps, arch, doc["seed"]


def save_snapshots(path, snapshots, arch, seed) -> None:
    Path(path).write_text(snapshots_to_json(snapshots, arch, seed))


def load_snapshots(path):
    return snapshots_from_json(Path(path).read_text())
