"""Small trainable classifier with an explicit feature/logit split.

The network is backbone + linear head: the backbone maps an input in
[0, 1]^d to a feature vector, and the head applies ``logits = head_w @
feat + head_b``. Attacks consume the feature vector, so the head matrices
are first-class model fields rather than just another layer.

Two backbone families are supported: an MLP (default) and a single-channel
conv stack with global mean pooling over the spatial grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    Tensor,
    backward,
    conv2d,
    cross_entropy_mean,
    global_mean_pool,
    linear,
    relu,
    reshape,
    scale,
    sqnorm,
    sum_all,
)

__all__ = [
    "Model",
    "ForwardTrace",
    "Adam",
    "Dataset",
    "TrainingError",
    "forward",
    "make_blobs",
    "train_toy",
    "grad_check",
    "save_model",
    "load_model",
    "save_dataset",
    "load_dataset",
]


class TrainingError(RuntimeError):
    pass


@dataclass
class Model:
    """Backbone layers plus the linear head (class_count x feature_dim)."""

    kind: str                 # "mlp" or "conv"
    input_dim: int
    feature_dim: int
    num_classes: int
    layers: list[tuple[np.ndarray, np.ndarray, str]]  # (weight, bias, activation)
    head_w: np.ndarray
    head_b: np.ndarray
    kernel: int = 3

    def __post_init__(self):
        if self.kind not in ("mlp", "conv"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.head_w.shape != (self.num_classes, self.feature_dim):
            raise ValueError("head weight shape mismatch")
        if self.head_b.shape != (self.num_classes,):
            raise ValueError("head bias shape mismatch")
        if self.kind == "conv":
            side = int(round(np.sqrt(self.input_dim)))
            if side * side != self.input_dim:
                raise ValueError("conv backbone needs a square input length")

    @property
    def side(self) -> int:
        return int(round(np.sqrt(self.input_dim)))

    def param_arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b, _ in self.layers:
            out.extend((w, b))
        out.extend((self.head_w, self.head_b))
        return out


@dataclass
class ForwardTrace:
    """Graph handles from one forward pass, for backward() and inspection."""

    x: Tensor
    features: Tensor
    logits: Tensor
    params: tuple[Tensor, ...] = ()


def forward(model: Model, x, *, train_params: bool = False):
    """Run the model on one input vector or a batch of rows.

    Returns ``(features, logits, trace)``. ``x`` may be a Tensor (for
    gradients w.r.t. the input) or a plain array. With ``train_params``
    the parameters are wrapped as gradient-carrying tensors, exposed in
    ``trace.params`` in ``model.param_arrays()`` order.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    expected = (model.input_dim,)
    if xt.data.shape != expected and (xt.data.ndim != 2 or xt.data.shape[1] != model.input_dim):
        raise ValueError(f"input shape {xt.data.shape} incompatible with input_dim {model.input_dim}")

    params: list[Tensor] = []

    def wrap(arr):
        t = Tensor(arr, requires_grad=train_params)
        if train_params:
            params.append(t)
        return t

    layer_ts = [(wrap(w), wrap(b), act) for w, b, act in model.layers]
    head_w_t = wrap(model.head_w)
    head_b_t = wrap(model.head_b)

    if model.kind == "mlp":
        h = xt
        for wt, bt, act in layer_ts:
            h = linear(h, wt, bt)
            if act == "relu":
                h = relu(h)
        feat = h
    else:
        single = xt.data.ndim == 1
        s = model.side
        img = reshape(xt, (1, s, s) if single else (-1, s, s))
        h = img
        for wt, bt, act in layer_ts:
            h = conv2d(h, wt, bt)
            if act == "relu":
                h = relu(h)
        pooled = global_mean_pool(h)
        feat = reshape(pooled, (model.feature_dim,)) if single else pooled

    logits = linear(feat, head_w_t, head_b_t)
    return feat, logits, ForwardTrace(x=xt, features=feat, logits=logits, params=tuple(params))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with bias correction; update is gamma * m_hat / (sqrt(v_hat) + eps)."""

    def __init__(self, shape, step_size: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.step_size = float(step_size)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.shape = tuple(shape) if not np.isscalar(shape) else (shape,)
        self.reset()

    def reset(self) -> None:
        self.m = np.zeros(self.shape)
        self.v = np.zeros(self.shape)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Advance one step, updating ``param`` in place (and returning it)."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        param -= self.step_size * mhat / (np.sqrt(vhat) + self.eps)
        return param


# ---------------------------------------------------------------------------
# toy data


@dataclass
class Dataset:
    inputs: np.ndarray   # (N, input_dim), values in [0, 1]
    labels: np.ndarray   # (N,) ints in [0, num_classes)
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be (N, input_dim)")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels length must match inputs")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.inputs.min() < 0.0 or self.inputs.max() > 1.0:
            raise ValueError("inputs must lie in [0, 1]")


def make_blobs(num_classes: int = 10, samples: int = 2000, input_dim: int = 64,
               sigma: float = 0.08, seed: int = 0) -> Dataset:
    """Gaussian class blobs clipped to the unit box, shuffled."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if samples < num_classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    centers = rng.uniform(0.25, 0.75, size=(num_classes, input_dim))
    counts = np.full(num_classes, samples // num_classes)
    counts[: samples % num_classes] += 1
    xs, ys = [], []
    for c in range(num_classes):
        pts = centers[c] + sigma * rng.standard_normal((counts[c], input_dim))
        xs.append(np.clip(pts, 0.0, 1.0))
        ys.append(np.full(counts[c], c, dtype=np.int64))
    inputs = np.concatenate(xs)
    labels = np.concatenate(ys)
    perm = rng.permutation(samples)
    return Dataset(inputs=inputs[perm], labels=labels[perm], num_classes=num_classes, seed=seed)


# ---------------------------------------------------------------------------
# training


def init_model(kind: str = "mlp", input_dim: int = 64, hidden=(64,),
               feature_dim: int = 32, num_classes: int = 10, kernel: int = 3,
               conv_channels=(8,), seed: int = 0) -> Model:
    """He-style random init, deterministic in the seed."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6D6F64)))
    layers: list[tuple[np.ndarray, np.ndarray, str]] = []
    if kind == "mlp":
        dims = [input_dim, *hidden, feature_dim]
        for i in range(len(dims) - 1):
            w = rng.standard_normal((dims[i + 1], dims[i])) * np.sqrt(2.0 / dims[i])
            b = np.zeros(dims[i + 1])
            act = "relu" if i < len(dims) - 2 else "none"
            layers.append((w, b, act))
        feat_dim = feature_dim
    elif kind == "conv":
        side = int(round(np.sqrt(input_dim)))
        if side * side != input_dim:
            raise ValueError("conv backbone needs a square input length")
        in_ch = 1
        o = side
        for i, ch in enumerate(conv_channels):
            if in_ch != 1:
                raise ValueError("single-channel conv stack only")
            w = rng.standard_normal((ch, kernel, kernel)) * np.sqrt(2.0 / (kernel * kernel))
            b = np.zeros(ch)
            act = "relu" if i < len(conv_channels) - 1 else "none"
            layers.append((w, b, act))
            o = o - kernel + 1
            in_ch = ch
        if o < 1:
            raise ValueError("kernel too large for input side")
        feat_dim = conv_channels[-1]
    else:
        raise ValueError(f"unknown backbone kind {kind!r}")
    head_w = rng.standard_normal((num_classes, feat_dim)) * np.sqrt(1.0 / feat_dim)
    head_b = np.zeros(num_classes)
    return Model(kind=kind, input_dim=input_dim, feature_dim=feat_dim,
                 num_classes=num_classes, layers=layers, head_w=head_w,
                 head_b=head_b, kernel=kernel)


def accuracy(model: Model, data: Dataset) -> float:
    _, logits, _ = forward(model, data.inputs)
    return float(np.mean(np.argmax(logits.data, axis=1) == data.labels))


def train_toy(data: Dataset, *, kind: str = "mlp", hidden=(64,), feature_dim: int = 32,
              epochs: int = 30, step_size: float = 1e-2, seed: int = 0,
              kernel: int = 3, conv_channels=(8,)) -> tuple[Model, float]:
    """Full-batch Adam on mean cross-entropy; deterministic in the seed.

    Returns the trained model and its final training accuracy. Raises
    TrainingError (with the epoch index) if the loss goes non-finite.
    """
    model = init_model(kind=kind, input_dim=data.inputs.shape[1], hidden=hidden,
                       feature_dim=feature_dim, num_classes=data.num_classes,
                       kernel=kernel, conv_channels=conv_channels, seed=seed)
    opts = [Adam(p.shape, step_size) for p in model.param_arrays()]
    for epoch in range(epochs):
        _, logits, trace = forward(model, data.inputs, train_params=True)
        loss = cross_entropy_mean(logits, data.labels)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        backward(loss)
        for opt, pt, arr in zip(opts, trace.params, model.param_arrays()):
            g = pt.grad if pt.grad is not None else np.zeros_like(arr)
            opt.step(arr, g)
    return model, accuracy(model, data)


# ---------------------------------------------------------------------------
# finite-difference gradient checking

_LOSS_TAGS = {
    "sum_logits": lambda logits, feat: sum_all(logits),
    "half_feature_sqnorm": lambda logits, feat: scale(sqnorm(feat), 0.5),
}


def grad_check(model: Model, x: np.ndarray, loss_tag: str, eps: float = 1e-5) -> float:
    """Max relative mismatch between analytic and central-difference grads.

    ``loss_tag`` may be a name from the built-in table or a callable
    ``(logits, features) -> scalar Tensor``. Only valid away from ReLU
    kinks of the backbone.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    loss_fn = _LOSS_TAGS.get(loss_tag, loss_tag)
    if not callable(loss_fn):
        raise ValueError(f"unknown loss tag {loss_tag!r}")

    def value_at(v):
        feat, logits, _ = forward(model, v)
        return float(loss_fn(logits, feat).data)

    xt = Tensor(x, requires_grad=True)
    feat, logits, _ = forward(model, xt)
    backward(loss_fn(logits, feat))
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x)

    fd = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy(); hi.flat[i] += eps
        lo = x.copy(); lo.flat[i] -= eps
        fd.flat[i] = (value_at(hi) - value_at(lo)) / (2.0 * eps)
    denom = max(np.abs(analytic).max(), np.abs(fd).max(), 1e-12)
    return float(np.abs(analytic - fd).max() / denom)


# ---------------------------------------------------------------------------
# serialization (decimal text, bit-exact round trip via float repr)


def _arr_out(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _arr_in(d: dict) -> np.ndarray:
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def save_model(model: Model, path) -> None:
    doc = {
        "kind": model.kind,
        "input_dim": model.input_dim,
        "feature_dim": model.feature_dim,
        "num_classes": model.num_classes,
        "kernel": model.kernel,
        "layers": [{"act": act, "w": _arr_out(w), "b": _arr_out(b)} for w, b, act in model.layers],
        "head_w": _arr_out(model.head_w),
        "head_b": _arr_out(model.head_b),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> Model:
    with open(path) as fh:
        doc = json.load(fh)
    layers = [(_arr_in(l["w"]), _arr_in(l["b"]), l["act"]) for l in doc["layers"]]
    return Model(kind=doc["kind"], input_dim=doc["input_dim"], feature_dim=doc["feature_dim"],
                 num_classes=doc["num_classes"], layers=layers, head_w=_arr_in(doc["head_w"]),
                 head_b=_arr_in(doc["head_b"]), kernel=doc["kernel"])


def save_dataset(data: Dataset, path) -> None:
    doc = {
        "num_classes": data.num_classes,
        "seed": data.seed,
        "inputs": _arr_out(data.inputs),
        "labels": [int(v) for v in data.labels],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        doc = json.load(fh)
    return Dataset(inputs=_arr_in(doc["inputs"]),
                   labels=np.asarray(doc["labels"], dtype=np.int64),
                   num_classes=doc["num_classes"], seed=doc["seed"])
