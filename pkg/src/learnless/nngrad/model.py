"""Layer graph, parameters and optimizers for the small detector CNN."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from ..rng import SeedLike, make_rng
from . import ops


class TrainingError(RuntimeError):
    """Raised when optimization hits non-finite values."""


def default_arch(width: tuple[int, ...] = (16, 32, 64, 64), activation: str = "silu",
                 pool: str = "avg") -> list[dict]:
    """Conv blocks (3x3 conv, activation, 2x pool), global average pool, dense, sigmoid."""
    arch: list[dict] = []
    for ch in width:
        arch += [
            {"type": "conv", "out": ch, "kernel": 3, "stride": 1, "padding": 1},
            {"type": "act", "fn": activation},
            {"type": "pool", "fn": pool, "size": 2},
        ]
    arch += [{"type": "gap"}, {"type": "dense", "out": 1}, {"type": "sigmoid"}]
    return arch


DEFAULT_ARCH = default_arch()


class Layer:
    params: tuple[str, ...] = ()

    def forward(self, x, P):
        raise NotImplementedError

    def backward(self, g, cache, P, grads):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, name, cin, cout, kernel, stride=1, padding=0, ordered=False):
        self.w, self.b = f"{name}.w", f"{name}.b"
        self.params = (self.w, self.b)
        self.shapes = {self.w: (cout, cin, kernel, kernel), self.b: (cout,)}
        self.fan_in = cin * kernel * kernel
        self.stride, self.padding = stride, padding
        self.ordered = ordered

    def forward(self, x, P):
        return ops.conv2d_forward(x, P[self.w], P[self.b], self.stride, self.padding), x

    def backward(self, g, x, P, grads):
        gw, gb, gx = ops.conv2d_backward(g, x, P[self.w], self.stride, self.padding, self.ordered)
        grads[self.w], grads[self.b] = gw, gb
        return gx


class Dense(Layer):
    def __init__(self, name, fan_in, fan_out):
        self.w, self.b = f"{name}.w", f"{name}.b"
        self.params = (self.w, self.b)
        self.shapes = {self.w: (fan_out, fan_in), self.b: (fan_out,)}
        self.fan_in = fan_in

    def forward(self, x, P):
        return ops.dense_forward(x, P[self.w], P[self.b]), x

    def backward(self, g, x, P, grads):
        gw, gb, gx = ops.dense_backward(g, x, P[self.w])
        grads[self.w], grads[self.b] = gw, gb
        return gx


class Activation(Layer):
    _fns = {
        "silu": (ops.silu_forward, ops.silu_backward),
        "relu": (ops.relu_forward, ops.relu_backward),
    }

    def __init__(self, fn):
        if fn not in self._fns:
            raise ValueError(f"unknown activation {fn!r}")
        self.fwd, self.bwd = self._fns[fn]

    def forward(self, x, P):
        return self.fwd(x), x

    def backward(self, g, x, P, grads):
        return self.bwd(g, x)


class Pool(Layer):
    def __init__(self, fn, size):
        if fn not in ("avg", "max"):
            raise ValueError(f"unknown pooling {fn!r}")
        self.fn, self.size = fn, size

    def forward(self, x, P):
        if self.fn == "avg":
            return ops.avgpool2d_forward(x, self.size), x.shape
        out, arg = ops.maxpool2d_forward(x, self.size)
        return out, (x.shape, arg)

    def backward(self, g, cache, P, grads):
        if self.fn == "avg":
            return ops.avgpool2d_backward(g, cache, self.size)
        shape, arg = cache
        return ops.maxpool2d_backward(g, arg, shape, self.size)


class Upsample(Layer):
    def __init__(self, factor):
        self.factor = factor

    def forward(self, x, P):
        return ops.upsample_forward(x, self.factor), None

    def backward(self, g, cache, P, grads):
        return ops.upsample_backward(g, self.factor)


class GlobalAvgPool(Layer):
    def forward(self, x, P):
        return ops.global_avgpool_forward(x), x.shape

    def backward(self, g, shape, P, grads):
        return ops.global_avgpool_backward(g, shape)


class Sigmoid(Layer):
    def forward(self, x, P):
        out = ops.sigmoid(x)
        return out, out

    def backward(self, g, out, P, grads):
        return ops.sigmoid_backward(g, out)


def build_layers(arch: list[dict], in_channels: int, prefix: str = "",
                 ordered_first: bool = False) -> tuple[list[Layer], dict]:
    """Instantiate layers and check channel/shape consistency of an arch spec.

    Returns the layers and a dict of parameter shapes. ``ordered_first`` makes
    the first conv layer sum its weight gradient in fixed sequential order.
    """
    layers: list[Layer] = []
    shapes: dict[str, tuple] = {}
    channels, flat = in_channels, False
    n_conv = n_dense = 0
    for i, spec in enumerate(arch):
        kind = spec.get("type")
        if kind == "conv":
            if flat:
                raise ValueError(f"layer {i}: conv after flattening")
            out, k = int(spec["out"]), int(spec.get("kernel", 3))
            if out < 1 or k < 1:
                raise ValueError(f"layer {i}: conv sizes must be positive")
            layer = Conv2d(f"{prefix}conv{n_conv}", channels, out, k, int(spec.get("stride", 1)),
                           int(spec.get("padding", 0)), ordered=(ordered_first and n_conv == 0))
            n_conv += 1
            channels = out
        elif kind == "dense":
            if not flat:
                raise ValueError(f"layer {i}: dense requires a preceding gap layer")
            out = int(spec["out"])
            if out < 1:
                raise ValueError(f"layer {i}: dense width must be positive")
            layer = Dense(f"{prefix}dense{n_dense}", channels, out)
            n_dense += 1
            channels = out
        elif kind == "act":
            layer = Activation(spec.get("fn", "silu"))
        elif kind == "pool":
            if flat:
                raise ValueError(f"layer {i}: pool after flattening")
            layer = Pool(spec.get("fn", "avg"), int(spec.get("size", 2)))
        elif kind == "upsample":
            if flat:
                raise ValueError(f"layer {i}: upsample after flattening")
            layer = Upsample(int(spec.get("factor", 2)))
        elif kind == "gap":
            if flat:
                raise ValueError(f"layer {i}: duplicate gap")
            layer, flat = GlobalAvgPool(), True
        elif kind == "sigmoid":
            layer = Sigmoid()
        else:
            raise ValueError(f"layer {i}: unknown layer type {kind!r}")
        shapes.update(getattr(layer, "shapes", {}))
        layers.append(layer)
    return layers, shapes


def init_params(layers: Iterable[Layer], rng: SeedLike = 0) -> dict[str, np.ndarray]:
    """Fan-in scaled normal weights (std sqrt(2 / fan_in)), zero biases."""
    gen = make_rng(rng)
    params: dict[str, np.ndarray] = {}
    for layer in layers:
        if not layer.params:
            continue
        w, b = layer.params
        params[w] = gen.normal(0.0, math.sqrt(2.0 / layer.fan_in), size=layer.shapes[w])
        params[b] = np.zeros(layer.shapes[b])
    return params


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


@dataclass
class ModelParams:
    """Architecture, learnable tensors and optimizer state of one network."""

    arch: list[dict]
    in_channels: int
    params: dict[str, np.ndarray]
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    adam: AdamState = field(default_factory=AdamState)
    ordered_first_layer: bool = False

    def __post_init__(self):
        self._layers, shapes = build_layers(self.arch, self.in_channels, ordered_first=self.ordered_first_layer)
        for name, shape in shapes.items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name}")
            if tuple(self.params[name].shape) != tuple(shape):
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")
        if not self.adam.m:
            self.adam.m = {k: np.zeros_like(v) for k, v in self.params.items()}
            self.adam.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def layers(self) -> list[Layer]:
        return self._layers

    @property
    def trunk_size(self) -> int:
        """Number of layers before global pooling."""
        for i, spec in enumerate(self.arch):
            if spec["type"] == "gap":
                return i
        return len(self.arch)

    @property
    def trunk_channels(self) -> int:
        convs = [s for s in self.arch[:self.trunk_size] if s["type"] == "conv"]
        return int(convs[-1]["out"]) if convs else self.in_channels

    def trunk_param_names(self) -> list[str]:
        return [p for layer in self._layers[:self.trunk_size] for p in layer.params]

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def forward(self, x, start: int = 0, stop: Optional[int] = None):
        """Run layers ``[start, stop)``; returns ``(output, caches)``."""
        caches = []
        for layer in self._layers[start:stop]:
            x, cache = layer.forward(x, self.params)
            caches.append(cache)
        return x, caches

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        out, _ = self.forward(x[None] if single else x)
        out = out.reshape(out.shape[0])
        return out[0] if single else out

    def features(self, x) -> np.ndarray:
        """Penultimate activations (global-average-pooled trunk output)."""
        out, _ = self.forward(np.asarray(x, dtype=np.float64), stop=self.trunk_size + 1)
        return out

    def backward(self, caches, grad_out, start: int = 0, stop: Optional[int] = None,
                 grads: Optional[dict] = None):
        """Backpropagate through layers ``[start, stop)``; returns ``(grads, grad_input)``."""
        grads = {} if grads is None else grads
        layers = self._layers[start:stop]
        g = grad_out
        for layer, cache in zip(reversed(layers), reversed(caches)):
            g = layer.backward(g, cache, self.params, grads)
        return grads, g

    def loss_and_grads(self, x, labels):
        """Mean BCE over a batch and gradients for every parameter."""
        labels = np.asarray(labels, dtype=np.float64).reshape(-1)
        out, caches = self.forward(x)
        pred = out.reshape(-1)
        loss, dpred = ops.bce_loss(pred, labels)
        n = pred.shape[0]
        grads, _ = self.backward(caches, (dpred / n).reshape(out.shape))
        return float(np.mean(loss)), grads, pred


def build_small_cnn(arch_spec: Optional[list[dict]] = None, in_channels: int = 3,
                    rng: SeedLike = 0, lr: float = 1e-4) -> ModelParams:
    """Fresh classifier parameters; the arch must end in a single sigmoid unit."""
    arch = copy.deepcopy(DEFAULT_ARCH if arch_spec is None else arch_spec)
    if not arch or arch[-1].get("type") != "sigmoid":
        raise ValueError("classifier arch must end with a sigmoid layer")
    dense = [s for s in arch if s.get("type") == "dense"]
    if not dense or int(dense[-1]["out"]) != 1:
        raise ValueError("classifier arch must end with a dense layer of width 1 before the sigmoid")
    layers, _ = build_layers(arch, in_channels)
    return ModelParams(arch=arch, in_channels=in_channels, params=init_params(layers, rng), lr=lr)


def _check_grads(params: ModelParams, grads: dict[str, Any]):
    for name, g in grads.items():
        if name not in params.params:
            raise ValueError(f"gradient for unknown parameter {name}")
        if np.shape(g) != params.params[name].shape:
            raise ValueError(f"gradient {name} has shape {np.shape(g)}, expected {params.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}")


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: Optional[float] = None) -> ModelParams:
    """``w <- w - lr * dL/dw`` for every parameter that has a gradient."""
    _check_grads(params, grads)
    lr = params.lr if lr is None else lr
    new = params.copy()
    for name, g in grads.items():
        new.params[name] = params.params[name] - lr * g
    return new


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], lr: Optional[float] = None,
              betas: Optional[tuple[float, float]] = None, eps: Optional[float] = None) -> ModelParams:
    """Bias-corrected Adam. Parameters without a gradient (frozen) keep value and moments."""
    _check_grads(params, grads)
    lr = params.lr if lr is None else lr
    b1, b2 = params.betas if betas is None else betas
    eps = params.eps if eps is None else eps
    new = params.copy()
    t = params.adam.step + 1
    new.adam.step = t
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, g in grads.items():
        m = b1 * params.adam.m[name] + (1.0 - b1) * g
        v = b2 * params.adam.v[name] + (1.0 - b2) * g * g
        new.adam.m[name], new.adam.v[name] = m, v
        new.params[name] = params.params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return new
