"""Small dense network engine: forward, backward, losses and plain SGD.

Everything is float64 numpy. Models are lists of affine layers followed by an
elementwise activation (``relu`` or ``identity``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError, StateError, ValidationError

ACTIVATIONS = ("relu", "identity")


@dataclass
class Layer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]
    activation: str = "relu"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class LayerGrad:
    weight: np.ndarray
    bias: np.ndarray

    def scaled(self, factor: float) -> "LayerGrad":
        return LayerGrad(self.weight * factor, self.bias * factor)


@dataclass
class MlpModel:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("an MLP needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValidationError(f"layer {i}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"layer {i}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
        for i in range(len(self.layers) - 1):
            out_dim, next_in = self.layers[i].out_dim, self.layers[i + 1].in_dim
            if out_dim != next_in:
                raise ShapeError(f"layer {i} outputs {out_dim} but layer {i + 1} expects {next_in}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def copy(self) -> "MlpModel":
        return MlpModel([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out


@dataclass
class ForwardTrace:
    """Per-layer inputs and pre-activations of one forward pass."""

    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    shapes: list[tuple[int, int]] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.pre_activations)


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    hidden_activation: str = "relu",
    output_activation: str = "identity",
) -> MlpModel:
    """Glorot-uniform weights, zero biases. ``sizes`` = [in, hidden..., out]."""
    if len(sizes) < 2:
        raise ValidationError(f"need at least input and output sizes, got {list(sizes)}")
    if any(int(s) < 1 for s in sizes):
        raise ValidationError(f"layer sizes must be positive, got {list(sizes)}")
    layers = []
    n = len(sizes) - 1
    for i in range(n):
        fan_in, fan_out = int(sizes[i]), int(sizes[i + 1])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = output_activation if i == n - 1 else hidden_activation
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpModel(layers)


def as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={x.ndim}")
    return x


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"non-finite values in {what}")


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(model: MlpModel, x) -> tuple[np.ndarray, ForwardTrace]:
    x = as_matrix(x)
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"input has {x.shape[1]} columns but model expects {model.in_dim}")
    trace = ForwardTrace()
    a = x
    for layer in model.layers:
        trace.inputs.append(a)
        trace.shapes.append(layer.weight.shape)
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ layer.weight.T + layer.bias
        trace.pre_activations.append(z)
        a = _activate(z, layer.activation)
    _check_finite(a, "forward output")
    return a, trace


def backward(
    model: MlpModel, trace: ForwardTrace, upstream
) -> tuple[list[LayerGrad], np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. every parameter and the input."""
    if trace.depth != model.depth or any(
        s != l.weight.shape for s, l in zip(trace.shapes, model.layers)
    ):
        raise StateError("trace does not belong to this model (depth or layer shapes differ)")
    upstream = as_matrix(upstream)
    out_shape = trace.pre_activations[-1].shape
    if upstream.shape != out_shape:
        raise ShapeError(f"upstream shape {upstream.shape} != forward output shape {out_shape}")

    grads: list[LayerGrad] = [None] * model.depth  # type: ignore[list-item]
    delta = upstream
    for i in range(model.depth - 1, -1, -1):
        layer = model.layers[i]
        if layer.activation == "relu":
            delta = delta * (trace.pre_activations[i] > 0)
        grads[i] = LayerGrad(delta.T @ trace.inputs[i], delta.sum(axis=0))
        delta = delta @ layer.weight
    return grads, delta


def softmax(logits) -> np.ndarray:
    logits = as_matrix(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    logits = as_matrix(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_soft(logits, targets) -> tuple[float, np.ndarray]:
    """Mean soft-target cross-entropy and its gradient w.r.t. the logits."""
    logits = as_matrix(logits)
    targets = as_matrix(targets)
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    row_sums = targets.sum(axis=1)
    if np.any(targets < -1e-12) or not np.allclose(row_sums, 1.0, atol=1e-6, rtol=0):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ValidationError(f"target row {bad} is not a distribution (sum={row_sums[bad]:.6g})")
    n = logits.shape[0]
    logp = log_softmax(logits)
    # 0 * log p is 0 even where p underflows
    loss = -float(np.sum(np.where(targets > 0, targets * logp, 0.0))) / n
    grad = (np.exp(logp) - targets) / n
    return loss, grad


def one_hot(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def cross_entropy(logits, y) -> tuple[float, np.ndarray]:
    logits = as_matrix(logits)
    return cross_entropy_soft(logits, one_hot(y, logits.shape[1]))


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def binary_cross_entropy_logits(logits, targets) -> tuple[float, np.ndarray]:
    """Logistic loss for a single-output head; ``targets`` may be soft in [0, 1]."""
    logits = as_matrix(logits)
    t = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if logits.shape[1] != 1 or t.shape[0] != logits.shape[0]:
        raise ShapeError(f"logistic head needs [n,1] logits and n targets, got {logits.shape}, {t.shape}")
    n = logits.shape[0]
    # log(1 + e^z) - t z, computed stably
    loss = float(np.sum(np.logaddexp(0.0, logits) - t * logits)) / n
    grad = (sigmoid(logits) - t) / n
    return loss, grad


def sgd_step(model: MlpModel, grads: Sequence[LayerGrad], lr: float) -> None:
    if len(grads) != model.depth:
        raise StateError(f"{len(grads)} gradient entries for a {model.depth}-layer model")
    for layer, g in zip(model.layers, grads):
        if g.weight.shape != layer.weight.shape or g.bias.shape != layer.bias.shape:
            raise StateError(
                f"gradient shapes {g.weight.shape}/{g.bias.shape} do not match "
                f"parameters {layer.weight.shape}/{layer.bias.shape}"
            )
    for layer, g in zip(model.layers, grads):
        layer.weight -= lr * g.weight
        layer.bias -= lr * g.bias
