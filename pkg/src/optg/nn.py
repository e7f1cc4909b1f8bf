"""Dense layers with hand-written backward passes, in float64.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Each layer
keeps the inputs of its last forward call (its slot on the gradient tape)
and consumes them in ``backward``; calling ``backward`` twice, or before any
forward, raises :class:`StateError`.

Linear and conv layers accept an optional binary ``mask`` of the weight's
shape.  The forward pass then uses ``weight * mask`` and ``backward``
reports the gradient with respect to that product, which is what both the
weight and score updates are built from.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .errors import DimensionError, InputError, StateError


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def conv2d_forward(x, k, stride=1, padding=0, bias=None):
    """Cross-correlation of ``x`` (N,C,H,W) with kernels ``k`` (O,C,kh,kw)."""
    out, _ = _conv2d(np.asarray(x, dtype=np.float64), np.asarray(k, dtype=np.float64),
                     stride, padding, bias)
    return out


def _conv2d(x, k, stride, padding, bias):
    if x.ndim != 4 or k.ndim != 4 or x.shape[1] != k.shape[1]:
        raise DimensionError(f"conv2d input {x.shape} incompatible with kernel {k.shape}")
    n, _, h, w = x.shape
    o, _, kh, kw = k.shape
    ho = kernels.conv_output_size(h, kh, stride, padding)
    wo = kernels.conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d output size {ho}x{wo} is not positive")
    cols = kernels.im2col(x, kh, kw, stride, padding)
    out = cols @ k.reshape(o, -1).T
    if bias is not None:
        out += bias
    return np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)), cols


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} and labels {labels.shape} do not match")
    n, k = logits.shape
    if n and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_z - shifted[rows, labels])) if n else 0.0
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / max(n, 1)


def kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dims: dict = field(default_factory=dict)

    KINDS = ("linear", "conv2d", "relu", "maxpool2d", "flatten")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InputError(f"unknown layer kind {self.kind!r}")


class Layer:
    kind = ""
    parametric = False

    def __init__(self):
        self._cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}.backward called without a matching forward")
        cache, self._cache = self._cache, None
        return cache

    def clear(self):
        self._cache = None

    def output_shape(self, input_shape):
        return input_shape


class Linear(Layer):
    kind = "linear"
    parametric = True

    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = kaiming_uniform(rng, (out_features, in_features), in_features)
        self.bias = np.zeros(out_features)
        self.mask = None

    @property
    def spec(self):
        return LayerSpec("linear", {"in_features": self.in_features, "out_features": self.out_features})

    def effective_weight(self):
        return self.weight if self.mask is None else self.weight * self.mask

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"linear expects (N, {self.in_features}), got {x.shape}")
        w = self.effective_weight()
        self._cache = (x, w)
        return x @ w.T + self.bias

    def backward(self, grad_out):
        x, w = self._take_cache()
        grads = {"weight": grad_out.T @ x, "bias": grad_out.sum(axis=0)}
        return grad_out @ w, grads

    def output_shape(self, input_shape):
        return (self.out_features,)


class Conv2d(Layer):
    kind = "conv2d"
    parametric = True

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, rng=None):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.bias = np.zeros(out_channels)
        self.mask = None

    @property
    def spec(self):
        return LayerSpec("conv2d", {"in_channels": self.in_channels, "out_channels": self.out_channels,
                                    "kernel_size": self.kernel_size, "stride": self.stride,
                                    "padding": self.padding})

    def effective_weight(self):
        return self.weight if self.mask is None else self.weight * self.mask

    def forward(self, x):
        w = self.effective_weight()
        out, cols = _conv2d(x, w, self.stride, self.padding, self.bias)
        self._cache = (x.shape, cols, w)
        return out

    def backward(self, grad_out):
        x_shape, cols, w = self._take_cache()
        o = self.out_channels
        g = grad_out.transpose(0, 2, 3, 1).reshape(-1, o)
        grads = {"weight": (g.T @ cols).reshape(w.shape), "bias": g.sum(axis=0)}
        dcols = g @ w.reshape(o, -1)
        k = self.kernel_size
        return kernels.col2im(dcols, x_shape, k, k, self.stride, self.padding), grads

    def output_shape(self, input_shape):
        c, h, w = input_shape
        k = self.kernel_size
        ho = kernels.conv_output_size(h, k, self.stride, self.padding)
        wo = kernels.conv_output_size(w, k, self.stride, self.padding)
        if c != self.in_channels or ho < 1 or wo < 1:
            raise DimensionError(f"conv2d cannot consume input of shape {input_shape}")
        return (self.out_channels, ho, wo)


class ReLU(Layer):
    kind = "relu"

    spec = LayerSpec("relu")

    def forward(self, x):
        active = x > 0
        self._cache = active
        return np.where(active, x, 0.0)

    def backward(self, grad_out):
        active = self._take_cache()
        return np.where(active, grad_out, 0.0), None


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, kernel_size=2, stride=None):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride or kernel_size

    @property
    def spec(self):
        return LayerSpec("maxpool2d", {"kernel_size": self.kernel_size, "stride": self.stride})

    def forward(self, x):
        out, arg = kernels.maxpool_forward(x, self.kernel_size, self.stride)
        self._cache = (x.shape, arg)
        return out

    def backward(self, grad_out):
        x_shape, arg = self._take_cache()
        return kernels.maxpool_backward(grad_out, arg, x_shape, self.kernel_size, self.stride), None

    def output_shape(self, input_shape):
        c, h, w = input_shape
        ho = (h - self.kernel_size) // self.stride + 1
        wo = (w - self.kernel_size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise DimensionError(f"maxpool2d cannot consume input of shape {input_shape}")
        return (c, ho, wo)


class Flatten(Layer):
    kind = "flatten"

    spec = LayerSpec("flatten")

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._take_cache()), None

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


def layer_backward(layer, grad_out):
    """Backward through one layer: ``(grad_in, grad_params or None)``."""
    return layer.backward(grad_out)


class Sequential:
    """A chain of layers trained as one classifier."""

    def __init__(self, layers, input_shape=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        self.output_shape = None
        if self.input_shape is not None:
            shape = self.input_shape
            for layer in self.layers:
                shape = layer.output_shape(shape)
            self.output_shape = shape

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out):
        """Returns grad wrt the input; parameter grads land in ``layer.grads``."""
        for layer in reversed(self.layers):
            grad_out, grads = layer.backward(grad_out)
            layer.grads = grads
        return grad_out

    def predict(self, x, batch_size=1000):
        out = []
        for i in range(0, len(x), batch_size):
            out.append(self.forward(x[i:i + batch_size]))
            self.clear()
        if out:
            return np.concatenate(out)
        return np.zeros((0,) + tuple(self.output_shape or ()))

    def clear(self):
        for layer in self.layers:
            layer.clear()

    def loss_and_grads(self, x, y):
        """Forward + backward on one batch; returns (loss, logits)."""
        logits = self.forward(x)
        loss, g = softmax_cross_entropy(logits, y)
        self.backward(g)
        return loss, logits

    def loss(self, x, y):
        logits = self.forward(x)
        self.clear()
        return softmax_cross_entropy(logits, y)[0]

    @property
    def parametric_layers(self):
        return [layer for layer in self.layers if layer.parametric]


# --------------------------------------------------------------------------
# model construction
# --------------------------------------------------------------------------

def build_model(arch, input_shape, num_classes, rng):
    """Build a classifier from an architecture string.

    ``mlp:300,100``   fully-connected hidden widths (``mlp:`` alone is a linear probe)
    ``cnn:16,32/128`` 3x3 conv+relu+2x2 pool per channel entry, then optional
                      hidden fc widths after ``/``
    """
    kind, _, rest = arch.partition(":")
    input_shape = tuple(input_shape)
    layers = []
    if kind == "mlp":
        widths = [int(v) for v in rest.split(",") if v.strip()]
        if len(input_shape) > 1:
            layers.append(Flatten())
        fan = int(np.prod(input_shape))
        for width in widths:
            layers += [Linear(fan, width, rng), ReLU()]
            fan = width
        layers.append(Linear(fan, num_classes, rng))
    elif kind == "cnn":
        conv_part, _, fc_part = rest.partition("/")
        if len(input_shape) != 3:
            raise InputError(f"cnn needs (C,H,W) inputs, got {input_shape}")
        shape = input_shape
        for ch in (int(v) for v in conv_part.split(",") if v.strip()):
            conv = Conv2d(shape[0], ch, 3, 1, 1, rng)
            pool = MaxPool2d(2)
            shape = pool.output_shape(conv.output_shape(shape))
            layers += [conv, ReLU(), pool]
        layers.append(Flatten())
        fan = int(np.prod(shape))
        for width in (int(v) for v in fc_part.split(",") if v.strip()):
            layers += [Linear(fan, width, rng), ReLU()]
            fan = width
        layers.append(Linear(fan, num_classes, rng))
    else:
        raise InputError(f"unknown architecture {arch!r}")
    return Sequential(layers, input_shape)
