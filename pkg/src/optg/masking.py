"""Binary masks, continuous mask scores and their straight-through gradients."""

from dataclasses import dataclass, field
import hashlib
import math

import numpy as np

from .errors import ConfigError, DimensionError, InputError

# P*N is computed in floating point; 0.07 * 100 == 7.000000000000001.
_COUNT_TOL = 1e-9


def prune_count(fraction, n):
    """Number of weights removed at sparsity ``fraction``: ceil(fraction * n)."""
    if not 0.0 <= fraction <= 1.0:
        raise InputError(f"sparsity must lie in [0, 1], got {fraction}")
    return min(n, max(0, math.ceil(fraction * n - _COUNT_TOL)))


@dataclass
class MaskedParameter:
    """Weights of one prunable layer with scores ``m̂`` and binary mask ``m``.

    ``weights`` is shared with the owning layer and updated in place.
    """

    layer_id: int
    weights: np.ndarray
    scores: np.ndarray = None
    mask: np.ndarray = None

    def __post_init__(self):
        if self.scores is None:
            self.scores = np.zeros_like(self.weights)
        if self.mask is None:
            self.mask = np.ones_like(self.weights)
        if not (self.weights.shape == self.scores.shape == self.mask.shape):
            raise DimensionError("weights, scores and mask must share one shape")

    @property
    def size(self):
        return self.weights.size

    @property
    def kept(self):
        return int(np.count_nonzero(self.mask))


def attach_masks(model, exempt=()):
    """Create a MaskedParameter for every linear/conv weight of ``model``.

    Layers whose parametric index is in ``exempt`` stay dense.
    """
    params = []
    for i, layer in enumerate(model.parametric_layers):
        if i in exempt:
            layer.mask = None
            continue
        p = MaskedParameter(i, layer.weight)
        layer.mask = p.mask
        params.append(p)
    return params


def masked_forward_weights(p):
    return p.weights * p.mask


def total_weights(params):
    return sum(p.size for p in params)


def _order(params, values=None):
    """Global ascending order; ties by (layer_id, flat index)."""
    ordered = sorted(params, key=lambda p: p.layer_id)
    vals = [(p.scores if values is None else values[p.layer_id]).ravel() for p in ordered]
    flat = np.concatenate(vals) if vals else np.zeros(0)
    return ordered, np.argsort(flat, kind="stable")


def mask_from_order(params, order, n_pruned):
    flat = np.ones(order.size)
    flat[order[:n_pruned]] = 0.0
    offset = 0
    for p in params:
        # in place so the layer's reference stays valid
        p.mask[...] = flat[offset:offset + p.size].reshape(p.mask.shape)
        offset += p.size


def binarize_global(params, fraction, values=None):
    """Set masks so the ``ceil(fraction*N)`` smallest scores across all layers are 0.

    ``values`` optionally maps layer_id -> array ranked instead of the scores.
    Returns the number of pruned weights.
    """
    n = total_weights(params)
    n_pruned = prune_count(fraction, n)
    if n and n_pruned >= n:
        raise ConfigError(f"sparsity {fraction} would prune all {n} weights; need P < 1 - 1/N",
                          field="sparsity")
    ordered, order = _order(params, values)
    mask_from_order(ordered, order, n_pruned)
    return n_pruned


def binarize_per_layer(params, fractions, values=None):
    """Layer-local top-k: layer ``p`` loses ``ceil(fractions[p.layer_id] * p.size)`` weights."""
    total = 0
    for p in params:
        n_pruned = prune_count(fractions[p.layer_id], p.size)
        if n_pruned >= p.size:
            raise ConfigError(f"layer {p.layer_id} would be fully pruned", field="sparsity")
        v = p.scores if values is None else values[p.layer_id]
        order = np.argsort(v.ravel(), kind="stable")
        flat = np.ones(p.size)
        flat[order[:n_pruned]] = 0.0
        p.mask[...] = flat.reshape(p.mask.shape)
        total += n_pruned
    return total


def ste_mask_gradient(p, grad_masked_weight):
    """dL/dm̂ under the straight-through estimator: grad ⊙ w at every position."""
    if grad_masked_weight.shape != p.weights.shape:
        raise DimensionError(f"gradient {grad_masked_weight.shape} does not match {p.weights.shape}")
    return grad_masked_weight * p.weights


def weight_gradient(p, grad_masked_weight):
    """dL/dw through w ⊙ m; zero wherever the mask is 0."""
    return grad_masked_weight * p.mask


@dataclass
class MaskGradAccumulator:
    """Running per-layer sum of mask gradients since the last binarization."""

    sums: dict = field(default_factory=dict)
    steps: int = 0

    def accumulate(self, layer_id, grad):
        if layer_id in self.sums:
            self.sums[layer_id] += grad
        else:
            self.sums[layer_id] = grad.copy()

    def step(self):
        self.steps += 1

    def flush(self):
        """Return the sums and reset; ``None`` when nothing was accumulated."""
        if self.steps == 0:
            return None
        out, self.sums, self.steps = self.sums, {}, 0
        return out

    def reset(self):
        self.sums, self.steps = {}, 0


def mask_digest(params):
    h = hashlib.sha1()
    for p in params:
        h.update(np.ascontiguousarray(p.mask, dtype=np.uint8).tobytes())
    return h.hexdigest()


def sparsity_summary(params):
    """Global sparsity plus per-layer (kept, total) counts."""
    layers = [{"layer": p.layer_id, "kept": p.kept, "total": p.size} for p in params]
    total = sum(entry["total"] for entry in layers)
    pruned = total - sum(entry["kept"] for entry in layers)
    return {"sparsity": pruned / total if total else 0.0, "pruned": pruned, "total": total,
            "layers": layers}
