"""Central finite differences for the layer gradient tests (independent of the layers' backward code)."""

import numpy as np

STEP = 1e-5


def numerical_grad(f, x, step=STEP):
    """d f / d x for scalar ``f`` by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def rel_error(analytic, numeric):
    """max |a - n| relative to the larger of the two max-norms."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def spaced_values(rng, shape, gap=0.01):
    """Distinct values at least ``gap`` apart, shuffled; keeps max-pool argmax and
    relu signs stable under the finite-difference step."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n // 2 + 0.5) * gap  # never exactly zero
    return rng.permutation(vals).reshape(shape)


def _projected_loss(layer, x, r):
    def f():
        out = layer.forward(x)
        layer.clear()
        return float(np.sum(out * r))
    return f


def check_layer(layer, x, rng):
    """Worst relative error over the input and every parameter gradient of ``layer``.

    The scalar objective is ``sum(layer(x) * R)`` for a fixed random ``R``, so
    the analytic backward is driven with ``R`` as the upstream gradient.
    Parameter gradients are taken with respect to the effective (masked) weight.
    """
    out = layer.forward(x)
    r = rng.standard_normal(out.shape)
    grad_in, grads = layer.backward(r)
    f = _projected_loss(layer, x, r)
    errs = [rel_error(grad_in, numerical_grad(f, x))]
    if grads:
        mask = getattr(layer, "mask", None)
        if mask is not None:
            # bake the mask into the weight so perturbations act on w * m directly
            layer.weight = layer.weight * mask
            layer.mask = None
        errs.append(rel_error(grads["weight"], numerical_grad(f, layer.weight)))
        errs.append(rel_error(grads["bias"], numerical_grad(f, layer.bias)))
    return max(errs)


def random_case(kind, rng):
    """A random small (layer, input) pair of the given kind."""
    from optg import nn
    n = int(rng.integers(1, 4))
    if kind == "linear":
        i, o = (int(v) for v in rng.integers(1, 9, size=2))
        layer = nn.Linear(i, o, rng)
        layer.bias = rng.standard_normal(o)
        if rng.random() < 0.5:
            layer.mask = (rng.random(layer.weight.shape) < 0.6).astype(float)
        return layer, rng.standard_normal((n, i))
    if kind == "conv2d":
        c, o = (int(v) for v in rng.integers(1, 4, size=2))
        k = int(rng.integers(1, 4))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        h, w = (int(v) for v in rng.integers(k, 8, size=2))
        layer = nn.Conv2d(c, o, k, stride, pad, rng)
        layer.bias = rng.standard_normal(o)
        if rng.random() < 0.5:
            layer.mask = (rng.random(layer.weight.shape) < 0.6).astype(float)
        return layer, rng.standard_normal((n, c, h, w))
    if kind == "relu":
        shape = tuple(int(v) for v in rng.integers(1, 6, size=int(rng.integers(2, 5))))
        return nn.ReLU(), spaced_values(rng, shape, gap=0.01)
    if kind == "maxpool2d":
        k = int(rng.integers(1, 4))
        stride = int(rng.integers(1, k + 1))
        c = int(rng.integers(1, 4))
        h, w = (int(v) for v in rng.integers(k, 9, size=2))
        return nn.MaxPool2d(k, stride), spaced_values(rng, (n, c, h, w))
    if kind == "flatten":
        shape = tuple(int(v) for v in rng.integers(1, 5, size=int(rng.integers(2, 5))))
        return nn.Flatten(), rng.standard_normal(shape)
    raise ValueError(kind)


LAYER_KINDS = ("linear", "conv2d", "relu", "maxpool2d", "flatten")


def check_cross_entropy(rng):
    from optg.nn import softmax_cross_entropy
    n, k = (int(v) for v in rng.integers(1, 7, size=2))
    k += 1
    logits = rng.standard_normal((n, k)) * 3
    labels = rng.integers(0, k, size=n)
    _, g = softmax_cross_entropy(logits, labels)
    return rel_error(g, numerical_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits))
