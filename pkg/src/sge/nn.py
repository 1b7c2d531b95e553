"""A small layer stack with hand-written backward passes.

Layers follow the ``out = forward(x)`` / ``dx = backward(dout)`` pattern,
keeping whatever they need from the forward call on ``self``. Parameters and
their gradients live in ``params`` / ``grads`` dicts keyed by name.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeIncompatible
from .op import DEFAULT_EPSILON, SgeParams, sge_backward, sge_forward

LAYER_KINDS = ("conv", "relu", "maxpool", "sge", "global_avg_pool", "dense", "softmax_xent")


@dataclass
class LayerSpec:
    kind: str
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}; expected one of {LAYER_KINDS}")

    def to_dict(self):
        return {"kind": self.kind, **self.options}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        return cls(d.pop("kind"), d)


def conv(in_channels, out_channels, kernel=3, stride=1, pad=None):
    return LayerSpec("conv", dict(in_channels=in_channels, out_channels=out_channels, kernel=kernel,
                                  stride=stride, pad=kernel // 2 if pad is None else pad))


def relu():
    return LayerSpec("relu")


def maxpool(size=2):
    return LayerSpec("maxpool", dict(size=size))


def sge(groups, gamma_init=0.0, beta_init=1.0, normalize=True, epsilon=DEFAULT_EPSILON):
    return LayerSpec("sge", dict(groups=groups, gamma_init=gamma_init, beta_init=beta_init,
                                 normalize=normalize, epsilon=epsilon))


def global_avg_pool():
    return LayerSpec("global_avg_pool")


def dense(in_features, out_features):
    return LayerSpec("dense", dict(in_features=in_features, out_features=out_features))


def softmax_xent():
    return LayerSpec("softmax_xent")


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = ""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_channels, out_channels, kernel, stride, pad, rng, dtype):
        super().__init__()
        self.stride, self.pad, self.kernel = stride, pad, kernel
        fan_in = in_channels * kernel * kernel
        w = rng.standard_normal((out_channels, in_channels, kernel, kernel)) * np.sqrt(2.0 / fan_in)
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(out_channels, dtype=dtype)}

    def forward(self, x):
        w, b = self.params["weight"], self.params["bias"]
        f, c, k, _ = w.shape
        s, p = self.stride, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        n, _, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        out = cols @ w.reshape(f, -1).T + b
        self._cache = (x.shape, xp.shape, cols, ho, wo)
        return np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def backward(self, dout):
        w = self.params["weight"]
        f, c, k, _ = w.shape
        s, p = self.stride, self.pad
        x_shape, xp_shape, cols, ho, wo = self._cache
        n = x_shape[0]
        dmat = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        self.grads["weight"] = (dmat.T @ cols).reshape(w.shape)
        self.grads["bias"] = dmat.sum(axis=0)
        dcols = (dmat @ w.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros(xp_shape, dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j].transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return np.ascontiguousarray(dxp)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, size):
        super().__init__()
        self.size = size

    def forward(self, x):
        n, c, h, w = x.shape
        k = self.size
        win = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
        idx = win.argmax(axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        (n, c, h, w), idx = self._cache
        k = self.size
        dwin = np.zeros((n, c, h // k, w // k, k * k), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        return dwin.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class SGE(Layer):
    kind = "sge"

    def __init__(self, groups, gamma_init, beta_init, normalize, epsilon, dtype):
        super().__init__()
        self.normalize = normalize
        self.epsilon = epsilon
        self.params = {"gamma": np.full(groups, gamma_init, dtype=dtype),
                       "beta": np.full(groups, beta_init, dtype=dtype)}

    def sge_params(self) -> SgeParams:
        return SgeParams(self.params["gamma"], self.params["beta"], epsilon=self.epsilon,
                         normalize=self.normalize)

    def forward(self, x):
        out, self._cache = sge_forward(x, self.sge_params())
        return out

    def backward(self, dout):
        g = sge_backward(self._cache, dout, self.sge_params())
        dtype = self.params["gamma"].dtype
        self.grads["gamma"] = g.d_gamma.astype(dtype)
        self.grads["beta"] = g.d_beta.astype(dtype)
        return g.d_input


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype)

    def backward(self, dout):
        n, c, h, w = self._shape
        return np.broadcast_to((dout / (h * w))[:, :, None, None], self._shape).copy()


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng, dtype):
        super().__init__()
        w = rng.standard_normal((in_features, out_features)) * np.sqrt(1.0 / in_features)
        self.params = {"weight": w.astype(dtype), "bias": np.zeros(out_features, dtype=dtype)}

    def forward(self, x):
        self._x = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout):
        self.grads["weight"] = self._x.T @ dout
        self.grads["bias"] = dout.sum(axis=0)
        return dout @ self.params["weight"].T


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class SoftmaxCrossEntropy(Layer):
    """Mean cross-entropy over the batch; plain labels, no smoothing."""

    kind = "softmax_xent"

    def loss(self, logits, labels):
        lp = log_softmax(logits.astype(np.float64))
        n = logits.shape[0]
        self._probs = np.exp(lp)
        self._labels = labels
        return float(-lp[np.arange(n), labels].mean())

    def backward(self, dout=1.0):
        n = self._probs.shape[0]
        d = self._probs.copy()
        d[np.arange(n), self._labels] -= 1.0
        return d * (dout / n)


# ---------------------------------------------------------------------------
# model


class Model:
    def __init__(self, specs, layers, input_shape, seed, dtype):
        self.specs = list(specs)
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.layer_inputs: list[np.ndarray] = []

    @property
    def head(self) -> SoftmaxCrossEntropy:
        return self.layers[-1]

    def named_parameters(self):
        """``(name, array)`` pairs in declaration order, e.g. ``("0.weight", w)``."""
        for i, layer in enumerate(self.layers):
            for key, value in layer.params.items():
                yield f"{i}.{key}", value

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{key}", layer.grads[key]

    def num_params(self, kind=None) -> int:
        return sum(v.size for layer in self.layers if kind is None or layer.kind == kind
                   for v in layer.params.values())

    def sge_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.kind == "sge"]

    def forward(self, x, record=False):
        """Logits for a batch ``x``. With ``record`` each layer's input is kept in ``layer_inputs``."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeIncompatible(f"model expects inputs of shape (N, {self.input_shape}), got {x.shape}")
        self.layer_inputs = []
        for layer in self.layers[:-1]:
            if record:
                self.layer_inputs.append(x)
            x = layer.forward(x)
        if record:
            self.layer_inputs.append(x)
        return x

    def loss(self, x, labels):
        return self.head.loss(self.forward(x), labels)

    def backward(self):
        d = self.head.backward().astype(self.dtype)
        for layer in reversed(self.layers[:-1]):
            d = layer.backward(d)
        return d

    def site_activations(self, x, layer_index):
        """Input and output of layer ``layer_index`` for batch ``x``."""
        self.forward(x, record=True)
        return self.layer_inputs[layer_index], self.layer_inputs[layer_index + 1]


def build_model(specs, seed, input_shape=(1, 16, 16), dtype=np.float32) -> Model:
    """Instantiate ``specs`` with weights drawn deterministically from ``seed``.

    Convolution and dense weights use fan-in scaled Gaussian init; SGE layers
    take their ``gamma_init`` / ``beta_init`` (0 and 1 by default). Shapes are
    propagated from ``input_shape`` (C, H, W) and checked layer by layer.
    """
    specs = [s if isinstance(s, LayerSpec) else LayerSpec.from_dict(s) for s in specs]
    rng = np.random.default_rng(seed)
    if not specs or specs[-1].kind != "softmax_xent":
        raise ShapeIncompatible("the last layer must be softmax_xent")
    shape = tuple(input_shape)
    layers = []
    prev = "input"
    for i, spec in enumerate(specs):
        o = spec.options
        where = f"layer {i} ({spec.kind}) after {prev}"
        if spec.kind in ("conv", "maxpool", "sge", "global_avg_pool") and len(shape) != 3:
            raise ShapeIncompatible(f"{where}: expects a (C, H, W) map, got {shape}")
        if spec.kind == "conv":
            c, h, w = shape
            if o["in_channels"] != c:
                raise ShapeIncompatible(f"{where}: in_channels={o['in_channels']} but incoming channels={c}")
            k, s, p = o["kernel"], o.get("stride", 1), o.get("pad", o["kernel"] // 2)
            ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
            if ho <= 0 or wo <= 0:
                raise ShapeIncompatible(f"{where}: kernel {k} does not fit a {h}x{w} map")
            layers.append(Conv2D(c, o["out_channels"], k, s, p, rng, dtype))
            shape = (o["out_channels"], ho, wo)
        elif spec.kind == "relu":
            layers.append(ReLU())
        elif spec.kind == "maxpool":
            c, h, w = shape
            k = o.get("size", 2)
            if h % k or w % k:
                raise ShapeIncompatible(f"{where}: pool size {k} does not divide {h}x{w}")
            layers.append(MaxPool(k))
            shape = (c, h // k, w // k)
        elif spec.kind == "sge":
            c = shape[0]
            g = o["groups"]
            if g <= 0 or c % g:
                raise ShapeIncompatible(f"{where}: {c} channels are not divisible into {g} groups")
            layers.append(SGE(g, o.get("gamma_init", 0.0), o.get("beta_init", 1.0),
                              o.get("normalize", True), o.get("epsilon", DEFAULT_EPSILON), dtype))
        elif spec.kind == "global_avg_pool":
            layers.append(GlobalAvgPool())
            shape = (shape[0],)
        elif spec.kind == "dense":
            if len(shape) != 1 or shape[0] != o["in_features"]:
                raise ShapeIncompatible(f"{where}: in_features={o['in_features']} but incoming shape is {shape}")
            layers.append(Dense(o["in_features"], o["out_features"], rng, dtype))
            shape = (o["out_features"],)
        elif spec.kind == "softmax_xent":
            if i != len(specs) - 1 or len(shape) != 1:
                raise ShapeIncompatible(f"{where}: softmax_xent must come last, after a flat layer")
            layers.append(SoftmaxCrossEntropy())
        prev = f"layer {i} ({spec.kind})"
    return Model(specs, layers, input_shape, seed, dtype)


def toy_specs(attention="sge", groups=8, gamma_init=0.0, beta_init=1.0, normalize=True,
              channels=(16, 32), classes=4, in_channels=1):
    """The reference toy classifier.

    Two conv+relu blocks (max-pool between them), an optional SGE site after
    the final conv+relu, global average pooling and a dense classifier.
    """
    c1, c2 = channels
    specs = [conv(in_channels, c1), relu(), maxpool(2), conv(c1, c2), relu()]
    if attention == "sge":
        specs.append(sge(groups, gamma_init, beta_init, normalize))
    elif attention != "none":
        raise ValueError(f"attention must be 'none' or 'sge', got {attention!r}")
    specs += [global_avg_pool(), dense(c2, classes), softmax_xent()]
    return specs
