"""Minimal dense/conv network engine on float64 numpy arrays.

Forward, cross-entropy, backprop and Nesterov SGD for small sequential
classifiers. Weight tensors are the objects the coupling machinery acts
on, exposed per layer as flat float64 views.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, InputError, NumericError

KINDS = ("dense", "conv2d")
ACTIVATIONS = ("relu", "none")


def as_tensor(x) -> np.ndarray:
    """Coerce to a contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer.

    For dense layers fan_in/fan_out are feature counts; for conv2d they
    are channel counts and ``kernel`` is the square kernel size.
    ``couple`` marks the weight tensor as participating in the coupling
    loss; biases never couple.
    """

    name: str
    kind: str
    fan_in: int
    fan_out: int
    kernel: int = 0
    has_bias: bool = True
    couple: bool = True
    activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.fan_in <= 0 or self.fan_out <= 0:
            raise ConfigurationError(f"layer {self.name!r}: dims must be positive")
        if self.kind == "conv2d" and self.kernel < 1:
            raise ConfigurationError(f"layer {self.name!r}: conv2d needs kernel >= 1")

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.fan_in, self.fan_out)
        return (self.fan_out, self.fan_in, self.kernel, self.kernel)

    @property
    def receptive_fan_in(self) -> int:
        # effective fan-in for initialization scaling
        if self.kind == "dense":
            return self.fan_in
        return self.fan_in * self.kernel * self.kernel


@dataclass
class Layer:
    spec: LayerSpec
    weights: np.ndarray
    bias: np.ndarray | None
    velocity: np.ndarray
    bias_velocity: np.ndarray | None

    def copy(self) -> "Layer":
        return Layer(
            spec=self.spec,
            weights=self.weights.copy(),
            bias=None if self.bias is None else self.bias.copy(),
            velocity=self.velocity.copy(),
            bias_velocity=None if self.bias_velocity is None else self.bias_velocity.copy(),
        )


@dataclass
class ModelState:
    """Ordered layers plus the seed the model was initialized from."""

    layers: list[Layer]
    rng_seed: int

    def copy(self) -> "ModelState":
        return ModelState(layers=[l.copy() for l in self.layers], rng_seed=self.rng_seed)

    def layer(self, name: str) -> Layer:
        for l in self.layers:
            if l.spec.name == name:
                return l
        raise ConfigurationError(f"no layer named {name!r}")

    def coupled_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.spec.couple]

    def num_params(self) -> int:
        n = 0
        for l in self.layers:
            n += l.weights.size
            if l.bias is not None:
                n += l.bias.size
        return n

    def specs(self) -> list[LayerSpec]:
        return [l.spec for l in self.layers]


def validate_specs(specs: list[LayerSpec]) -> None:
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"duplicate layer names in {names}")


def init_model(specs: list[LayerSpec], seed: int) -> ModelState:
    """Fan-in-scaled uniform init, zero biases, zero velocities."""
    validate_specs(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        bound = 1.0 / np.sqrt(spec.receptive_fan_in)
        w = rng.uniform(-bound, bound, size=spec.weight_shape)
        b = np.zeros(spec.fan_out) if spec.has_bias else None
        layers.append(
            Layer(
                spec=spec,
                weights=w,
                bias=b,
                velocity=np.zeros_like(w),
                bias_velocity=None if b is None else np.zeros_like(b),
            )
        )
    return ModelState(layers=layers, rng_seed=seed)


def _conv2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # valid cross-correlation, stride 1; x: (B, C, H, W), w: (O, C, k, k)
    k = w.shape[-1]
    if x.shape[2] < k or x.shape[3] < k:
        raise ConfigurationError(
            f"input spatial size {x.shape[2:]} smaller than kernel {k}"
        )
    patches = sliding_window_view(x, (k, k), axis=(2, 3))  # (B, C, H', W', k, k)
    return np.einsum("bchwij,ocij->bohw", patches, w, optimize=True)


def _conv2d_backward(x, w, grad_out):
    k = w.shape[-1]
    patches = sliding_window_view(x, (k, k), axis=(2, 3))
    grad_w = np.einsum("bchwij,bohw->ocij", patches, grad_out, optimize=True)
    padded = np.pad(grad_out, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))  # (B, O, H, W, k, k)
    w_flip = w[:, :, ::-1, ::-1]
    grad_x = np.einsum("bohwij,ocij->bchw", windows, w_flip, optimize=True)
    return grad_w, grad_x


def _layer_forward(layer: Layer, x: np.ndarray):
    """Returns (original input, pre-activation, activation output)."""
    spec = layer.spec
    if spec.kind == "dense":
        flat = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
        if flat.ndim != 2 or flat.shape[1] != spec.fan_in:
            raise ConfigurationError(
                f"layer {spec.name!r}: expected input dim {spec.fan_in}, got {x.shape}"
            )
        z = flat @ layer.weights
    else:
        if x.ndim != 4 or x.shape[1] != spec.fan_in:
            raise ConfigurationError(
                f"layer {spec.name!r}: expected (B, {spec.fan_in}, H, W), got {x.shape}"
            )
        z = _conv2d(x, layer.weights)
    if layer.bias is not None:
        if spec.kind == "dense":
            z = z + layer.bias
        else:
            z = z + layer.bias[None, :, None, None]
    out = np.maximum(z, 0.0) if spec.activation == "relu" else z
    return x, z, out


def forward(model: ModelState, batch: np.ndarray) -> np.ndarray:
    """Run the network; returns logits of shape (batch, classes)."""
    x = as_tensor(batch)
    for layer in model.layers:
        _, _, x = _layer_forward(layer, x)
    if x.ndim != 2:
        raise ConfigurationError(f"final activation has shape {x.shape}, expected 2-D logits")
    return x


def cross_entropy(logits: np.ndarray, labels) -> float:
    """Mean negative log-softmax of the true class.

    Shift-invariant form: subtracting the row max keeps the log-sum-exp
    stable and makes uniform logits evaluate to log(C) exactly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise InputError(f"logits must be 2-D, got shape {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise InputError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise InputError(f"labels must lie in [0, {c})")
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    true = shifted[np.arange(n), labels]
    return float(np.mean(lse - true))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Gradients:
    """Per-layer gradients keyed by layer name."""

    weights: dict[str, np.ndarray] = field(default_factory=dict)
    biases: dict[str, np.ndarray] = field(default_factory=dict)

    def all_finite(self) -> bool:
        for g in self.weights.values():
            if not np.isfinite(g).all():
                return False
        for g in self.biases.values():
            if not np.isfinite(g).all():
                return False
        return True


def loss_and_gradient(model: ModelState, batch: np.ndarray, labels) -> tuple[float, Gradients]:
    """Cross-entropy plus backpropagated gradients for every trainable tensor."""
    x = as_tensor(batch)
    labels = np.asarray(labels)
    caches = []
    for layer in model.layers:
        x_in, z, x = _layer_forward(layer, x)
        caches.append((x_in, z))
    logits = x
    loss = cross_entropy(logits, labels)
    n = logits.shape[0]
    delta = _softmax(logits)
    delta[np.arange(n), labels] -= 1.0
    delta /= n  # mean reduction

    grads = Gradients()
    for layer, (x_in, z) in zip(reversed(model.layers), reversed(caches)):
        spec = layer.spec
        if spec.activation == "relu":
            delta = delta * (z > 0.0)
        if spec.kind == "dense":
            flat_in = x_in if x_in.ndim == 2 else x_in.reshape(x_in.shape[0], -1)
            grads.weights[spec.name] = flat_in.T @ delta
            if layer.bias is not None:
                grads.biases[spec.name] = delta.sum(axis=0)
            delta = delta @ layer.weights.T
            if x_in.ndim > 2:
                delta = delta.reshape(x_in.shape)
        else:
            if layer.bias is not None:
                grads.biases[spec.name] = delta.sum(axis=(0, 2, 3))
            gw, delta = _conv2d_backward(x_in, layer.weights, delta)
            grads.weights[spec.name] = gw
    return loss, grads


def task_gradient(model: ModelState, batch: np.ndarray, labels) -> Gradients:
    """Backpropagated gradients of cross_entropy w.r.t. every trainable tensor."""
    return loss_and_gradient(model, batch, labels)[1]


def sgd_nesterov_step(model: ModelState, grads: Gradients, lr: float, momentum: float) -> ModelState:
    """Nesterov update, in place: v <- mu*v - lr*g; theta <- theta + mu*v - lr*g.

    Aborts without touching the model if any gradient entry is non-finite.
    """
    if lr <= 0:
        raise ConfigurationError(f"lr must be positive, got {lr}")
    if not (0.0 <= momentum < 1.0):
        raise ConfigurationError(f"momentum must lie in [0, 1), got {momentum}")
    if not grads.all_finite():
        raise NumericError("non-finite gradient entries; step aborted")
    for layer in model.layers:
        name = layer.spec.name
        g = grads.weights[name]
        layer.velocity *= momentum
        layer.velocity -= lr * g
        layer.weights += momentum * layer.velocity - lr * g
        if layer.bias is not None:
            gb = grads.biases[name]
            layer.bias_velocity *= momentum
            layer.bias_velocity -= lr * gb
            layer.bias += momentum * layer.bias_velocity - lr * gb
    return model


def predict(model: ModelState, batch: np.ndarray) -> np.ndarray:
    return forward(model, batch).argmax(axis=1)


def accuracy(model: ModelState, batch: np.ndarray, labels) -> float:
    """Classification accuracy in percent."""
    labels = np.asarray(labels)
    return float(100.0 * np.mean(predict(model, batch) == labels))
