"""Local feature attribution for a trained snapshot.

Nine methods share one calling convention: ``method(snapshot, x, cfg)``
returns an :class:`AttributionVector` with one signed score per feature.
Path and perturbation methods measure against ``cfg.baseline`` (zeros in
standardized space, i.e. the training mean). Every method explains the
positive-class logit unless ``cfg.target`` says ``"probability"``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import model as mlp
from .io import read_csv, write_csv

VANILLA = "vanilla_gradient"
INPUT_X_GRADIENT = "input_x_gradient"
INTEGRATED_GRADIENTS = "integrated_gradients"
SMOOTHGRAD = "smoothgrad"
GUIDED_BACKPROP = "guided_backprop"
DEEPLIFT = "deeplift"
OCCLUSION = "occlusion"
LIME = "lime"
KERNEL_SHAP = "kernel_shap"

METHODS = (
    DEEPLIFT, GUIDED_BACKPROP, INPUT_X_GRADIENT, INTEGRATED_GRADIENTS,
    SMOOTHGRAD, VANILLA, OCCLUSION, LIME, KERNEL_SHAP,
)
METHOD_LABELS = {
    DEEPLIFT: "DeepLift",
    GUIDED_BACKPROP: "Guided Backprop",
    INPUT_X_GRADIENT: "Input X Gradient",
    INTEGRATED_GRADIENTS: "Integrated Gradients",
    SMOOTHGRAD: "SmoothGrad",
    VANILLA: "Vanilla Gradient",
    OCCLUSION: "Occlusion",
    LIME: "LIME",
    KERNEL_SHAP: "KernelSHAP",
}

EXACT_SHAP_MAX_K = 16
RESCALE_EPS = 1e-7


class AttributionError(RuntimeError):
    pass


class SingularSurrogate(AttributionError):
    """The weighted normal equations of the LIME surrogate are singular."""


class AttributionFailures(AttributionError):
    def __init__(self, failures):
        self.failures = failures
        detail = "; ".join(f"instance {i} / {m}: {e}" for i, m, e in failures)
        super().__init__(f"{len(failures)} attribution(s) failed: {detail}")


@dataclass
class AttributionVector:
    scores: np.ndarray
    method: str
    instance_id: int = 0
    epoch: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 1 or not np.all(np.isfinite(self.scores)):
            raise AttributionError(f"{self.method}: scores must be a finite 1-d vector")

    @property
    def K(self) -> int:
        return len(self.scores)


@dataclass
class AttributionConfig:
    baseline: np.ndarray | None = None
    target: str = mlp.LOGIT
    ig_steps: int = 50
    sg_samples: int = 50
    sg_noise: float = 0.1
    lime_samples: int = 1000
    lime_kernel_width: float | None = None
    lime_ridge: float = 1e-3
    shap_mode: str = "auto"
    shap_samples: int = 2048
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("ig_steps", "sg_samples", "lime_samples", "shap_samples"):
            if getattr(self, name) < 1:
                raise AttributionError(f"{name} must be >= 1")
        if self.sg_noise <= 0:
            raise AttributionError("sg_noise must be positive")
        if self.lime_ridge < 0:
            raise AttributionError("lime_ridge must be nonnegative")
        if self.shap_mode not in ("auto", "exact", "sampled"):
            raise AttributionError(f"unknown shap_mode {self.shap_mode!r}")
        if self.target not in mlp.TARGETS:
            raise AttributionError(f"unknown target {self.target!r}")

    def baseline_for(self, K: int) -> np.ndarray:
        if self.baseline is None:
            return np.zeros(K)
        b = np.asarray(self.baseline, dtype=float)
        if b.shape != (K,):
            raise AttributionError(f"baseline has length {b.size}, expected {K}")
        return b

    def kernel_width_for(self, K: int) -> float:
        if self.lime_kernel_width is None:
            return 0.75 * math.sqrt(K)
        return float(self.lime_kernel_width)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if d["baseline"] is not None:
            d["baseline"] = [float(v) for v in d["baseline"]]
        return d


def instance_rng(seed: int, instance_id: int, method: str) -> np.random.Generator:
    """Independent stream per (seed, instance, method); order of execution is irrelevant."""
    return np.random.default_rng([seed, instance_id, METHODS.index(method)])


def _evaluate(params, X, target):
    # single entry point for model evaluations in perturbation methods
    return mlp.output(params, X, target)


def _prepare(snapshot, x, cfg):
    params = mlp._as_params(snapshot)
    cfg = cfg or AttributionConfig()
    x = np.asarray(x, dtype=float)
    if x.shape != (params.input_dim,):
        raise AttributionError(f"instance has shape {x.shape}, expected ({params.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise AttributionError("non-finite instance")
    return params, x, cfg


def _vector(scores, method, snapshot, instance_id, **info):
    epoch = snapshot.epoch if isinstance(snapshot, mlp.EpochSnapshot) else 0
    return AttributionVector(scores, method, instance_id, epoch, info)


def vanilla_gradient(snapshot, x, cfg=None, instance_id=0) -> AttributionVector:
    params, x, cfg = _prepare(snapshot, x, cfg)
    grad = mlp.input_gradient_batch(params, x[None, :], cfg.target)[0]
    return _vector(grad, VANILLA, snapshot, instance_id)


def input_x_gradient(snapshot, x, cfg=None, instance_id=0) -> AttributionVector:
    params, x, cfg = _prepare(snapshot, x, cfg)
    grad = mlp.input_gradient_batch(params, x[None, :], cfg.target)[0]
    return _vector(x * grad, INPUT_X_GRADIENT, snapshot, instance_id)


def integrated_gradients(snapshot, x, cfg=None, instance_id=0) -> AttributionVector:
    """Midpoint-rule path integral from the baseline to ``x``.

    ``info["completeness_residual"]`` is ``|sum(scores) - (f(x) - f(b))|``.
    """
    params, x, cfg = _prepare(snapshot, x, cfg)
    b = cfg.baseline_for(len(x))
    alphas = (np.arange(cfg.ig_steps) + 0.5) / cfg.ig_steps
    path = b + alphas[:, None] * (x - b)
    grads = mlp.input_gradient_batch(params, path, cfg.target)
    scores = (x - b) * grads.mean(axis=0)
    fx, fb = _evaluate(params, np.vstack([x, b]), cfg.target)
    residual = abs(scores.sum() - (fx - fb))
    return _vector(scores, INTEGRATED_GRADIENTS, snapshot, instance_id,
                   completeness_residual=float(residual))


def smoothgrad(snapshot, x, cfg=None, instance_id=0, rng=None) -> AttributionVector:
    params, x, cfg = _prepare(snapshot, x, cfg)
    rng = rng or instance_rng(cfg.rng_seed, instance_id, SMOOTHGRAD)
    noisy = x + rng.normal(0.0, cfg.sg_noise, size=(cfg.sg_samples, len(x)))
    grads = mlp.input_gradient_batch(params, noisy, cfg.target)
    return _vector(grads.mean(axis=0), SMOOTHGRAD, snapshot, instance_id)


def _guided_relu(grad, pre):
    return grad * ((pre > 0) & (grad > 0))


def guided_backprop(snapshot, x, cfg=None, instance_id=0) -> AttributionVector:
    """Backward pass that also drops negative signals at every rectifier."""
    params, x, cfg = _prepare(snapshot, x, cfg)
    grad = mlp.input_gradient_batch(params, x[None, :], cfg.target, relu_rule=_guided_relu)[0]
    return _vector(grad, GUIDED_BACKPROP, snapshot, instance_id)


def _rescale(delta_out, delta_in, slope_at_ref):
    small = np.abs(delta_in) <= RESCALE_EPS
    safe = np.where(small, 1.0, delta_in)
    return np.where(small, slope_at_ref, delta_out / safe)


def deeplift_rescale(snapshot, x, cfg=None, instance_id=0) -> AttributionVector:
    """DeepLIFT with the Rescale rule at every nonlinearity.

    Multipliers are ``delta output / delta input`` of each rectifier relative
    to a forward pass on the baseline; near-zero input deltas fall back to the
    derivative at the reference. Scores sum to ``f(x) - f(b)``.
    """
    params, x, cfg = _prepare(snapshot, x, cfg)
    b = cfg.baseline_for(len(x))
    z, cache = mlp.forward_batch(params, np.vstack([x, b]))
    if cfg.target == mlp.LOGIT:
        m = np.ones((1, 1))
    else:
        p = mlp.sigmoid(z)
        m = _rescale(p[0] - p[1], z[0] - z[1], p[1] * (1 - p[1])).reshape(1, 1)
    last = params.n_layers - 1
    for layer in range(last, -1, -1):
        if layer < last:
            pre_x, pre_b = cache.pre[layer]
            post_x, post_b = np.maximum(pre_x, 0), np.maximum(pre_b, 0)
            m = m * _rescale(post_x - post_b, pre_x - pre_b, (pre_b > 0).astype(float))
        m = m @ params.weights[layer]
    return _vector(m[0] * (x - b), DEEPLIFT, snapshot, instance_id)


def occlusion(snapshot, x, cfg=None, instance_id=0) -> AttributionVector:
    """Drop in output when each feature alone is set to its baseline value."""
    params, x, cfg = _prepare(snapshot, x, cfg)
    b = cfg.baseline_for(len(x))
    batch = np.tile(x, (len(x) + 1, 1))
    idx = np.arange(len(x))
    batch[idx + 1, idx] = b
    out = _evaluate(params, batch, cfg.target)
    return _vector(out[0] - out[1:], OCCLUSION, snapshot, instance_id)


def lime_design(x, cfg, rng) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian perturbations around ``x`` and their proximity weights."""
    K = len(x)
    Z = x + rng.standard_normal((cfg.lime_samples, K))
    d2 = np.sum((Z - x) ** 2, axis=1)
    width = cfg.kernel_width_for(K)
    return Z, np.exp(-d2 / width**2)


def lime(snapshot, x, cfg=None, instance_id=0, rng=None) -> AttributionVector:
    """Coefficients of a proximity-weighted ridge fit to the model around ``x``.

    The intercept is fitted but not penalized.
    """
    params, x, cfg = _prepare(snapshot, x, cfg)
    K = len(x)
    if cfg.lime_samples < K + 2:
        raise AttributionError(f"lime_samples must be >= K + 2 = {K + 2}")
    rng = rng or instance_rng(cfg.rng_seed, instance_id, LIME)
    Z, w = lime_design(x, cfg, rng)
    y = _evaluate(params, Z, cfg.target)
    wsum = w.sum()
    if not wsum > 0:
        raise SingularSurrogate("all LIME samples received zero weight")
    Zc = Z - (w @ Z) / wsum
    yc = y - (w @ y) / wsum
    A = Zc.T @ (w[:, None] * Zc) + cfg.lime_ridge * np.eye(K)
    rhs = Zc.T @ (w * yc)
    if np.linalg.cond(A) > 1.0 / np.finfo(float).eps:
        raise SingularSurrogate("weighted normal equations are singular")
    coef = np.linalg.solve(A, rhs)
    return _vector(coef, LIME, snapshot, instance_id)


def shapley_kernel_weight(K: int, size: int) -> float:
    return (K - 1) / (math.comb(K, size) * size * (K - size))


@lru_cache(maxsize=8)
def _exact_coalitions(K: int):
    codes = np.arange(1, 2**K - 1, dtype=np.int64)
    Z = ((codes[:, None] >> np.arange(K)) & 1).astype(float)
    sizes = Z.sum(axis=1).astype(int)
    table = np.array([0.0] + [shapley_kernel_weight(K, s) for s in range(1, K)])
    w = table[sizes]
    gram = Z.T @ (w[:, None] * Z)
    for arr in (Z, w, gram):
        arr.setflags(write=False)
    return Z, w, gram


def _sampled_coalitions(K: int, n: int, rng):
    sizes = np.arange(1, K)
    p = np.array([(K - 1) / (s * (K - s)) for s in sizes])
    drawn = rng.choice(sizes, size=n, p=p / p.sum())
    Z = np.zeros((n, K))
    for row, s in enumerate(drawn):
        Z[row, rng.choice(K, size=s, replace=False)] = 1.0
    w = np.full(n, 1.0 / n)
    return Z, w, Z.T @ (w[:, None] * Z)


def kernel_shap(snapshot, x, cfg=None, instance_id=0, rng=None) -> AttributionVector:
    """Shapley values by Shapley-kernel weighted least squares.

    Masked-out features take their baseline value. In exact mode every
    nontrivial coalition is enumerated, which recovers the Shapley values
    exactly; ``auto`` uses exact mode up to 16 features. Scores are
    constrained to sum to ``f(x) - f(b)``.
    """
    params, x, cfg = _prepare(snapshot, x, cfg)
    K = len(x)
    if K < 2:
        raise AttributionError("KernelSHAP needs at least 2 features")
    b = cfg.baseline_for(K)
    mode = cfg.shap_mode
    if mode == "auto":
        mode = "exact" if K <= EXACT_SHAP_MAX_K else "sampled"
    if mode == "exact":
        Z, w, gram = _exact_coalitions(K)
    else:
        rng = rng or instance_rng(cfg.rng_seed, instance_id, KERNEL_SHAP)
        Z, w, gram = _sampled_coalitions(K, cfg.shap_samples, rng)
    fx, fb = _evaluate(params, np.vstack([x, b]), cfg.target)
    v = _evaluate(params, b + Z * (x - b), cfg.target) - fb
    delta = fx - fb
    rhs = Z.T @ (w * v)
    ones = np.ones(K)
    # equality-constrained least squares via the KKT system
    kkt = np.block([[gram, ones[:, None]], [ones[None, :], np.zeros((1, 1))]])
    sol = np.linalg.lstsq(kkt, np.append(rhs, delta), rcond=None)[0]
    return _vector(sol[:K], KERNEL_SHAP, snapshot, instance_id, mode=mode)


METHOD_FUNCTIONS = {
    VANILLA: vanilla_gradient,
    INPUT_X_GRADIENT: input_x_gradient,
    INTEGRATED_GRADIENTS: integrated_gradients,
    SMOOTHGRAD: smoothgrad,
    GUIDED_BACKPROP: guided_backprop,
    DEEPLIFT: deeplift_rescale,
    OCCLUSION: occlusion,
    LIME: lime,
    KERNEL_SHAP: kernel_shap,
}


def check_methods(methods) -> list[str]:
    methods = list(methods)
    if not methods:
        raise AttributionError("need at least one attribution method")
    unknown = [m for m in methods if m not in METHOD_FUNCTIONS]
    if unknown:
        raise AttributionError(f"unknown methods {unknown}; choose from {list(METHODS)}")
    if len(set(methods)) != len(methods):
        raise AttributionError("duplicate methods")
    return methods


def explain_all(snapshot, instances, methods=METHODS, cfg=None, instance_ids=None,
                n_jobs: int = 1) -> list[AttributionVector]:
    """One vector per (instance, method), ordered instance-major.

    Stochastic methods draw from per-(instance, method) streams, so the
    result does not depend on ``n_jobs``.
    """
    methods = check_methods(methods)
    cfg = cfg or AttributionConfig()
    X = np.asarray(instances, dtype=float)
    ids = list(range(len(X))) if instance_ids is None else [int(i) for i in instance_ids]
    tasks = [(i, row, m) for i, row in zip(ids, X) for m in methods]

    def run(task):
        i, row, m = task
        try:
            return METHOD_FUNCTIONS[m](snapshot, row, cfg, instance_id=i), None
        except Exception as exc:  # collected and re-raised below with identifiers
            return None, (i, m, exc)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    failures = [err for _, err in results if err is not None]
    if failures:
        raise AttributionFailures(failures)
    return [vec for vec, _ in results]


ATTRIBUTION_HEADER = ("epoch", "instance_id", "method", "feature_name", "score")


def write_attributions(path, vectors, feature_names) -> None:
    """Long-format dump, one row per (epoch, instance, method, feature)."""
    rows = (
        (v.epoch, v.instance_id, v.method, name, float(s))
        for v in vectors
        for name, s in zip(feature_names, v.scores)
    )
    write_csv(path, ATTRIBUTION_HEADER, rows)


def read_attributions(path, feature_names=None) -> list[AttributionVector]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing attributions: {path}")
    grouped: dict = {}
    for row in read_csv(path):
        key = (int(row["epoch"]), int(row["instance_id"]), row["method"])
        grouped.setdefault(key, []).append((row["feature_name"], float(row["score"])))
    vectors = []
    for (epoch, inst, method), cells in grouped.items():
        if feature_names is not None and [c[0] for c in cells] != list(feature_names):
            raise AttributionError(f"feature order mismatch for {(epoch, inst, method)}")
        vectors.append(AttributionVector([c[1] for c in cells], method, inst, epoch))
    return vectors
