"""Comparison pruners and the loss-change analysis experiments.

* one-shot pruning from first-order (``|dL/dw * w|``) or magnitude saliency,
* gradual magnitude pruning (GMP) on the cubic ramp,
* fixed per-layer budgets (uniform, ERK, global magnitude),
* the prune-and-retrain cycle experiment,
* measurement of the gap between summed per-weight first-order loss
  estimates and the loss change actually caused by removing a group.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, StateError
from .masking import binarize_global, prune_count, total_weights
from .optim import Trainer, evaluate
from .schedules import LrSchedule


@dataclass
class SaliencyScore:
    values: dict                 # layer_id -> array shaped like the weights
    criterion: str = "first_order_abs"

    CRITERIA = ("first_order_abs", "magnitude", "accumulated_mask")

    def flat(self):
        return np.concatenate([self.values[k].ravel() for k in sorted(self.values)])


def _masked_grads(model, params, x, y):
    """Gradient of the batch loss w.r.t. each masked weight product."""
    loss, _ = model.loss_and_grads(x, y)
    layers = model.parametric_layers
    grads = {p.layer_id: layers[p.layer_id].grads["weight"] for p in params}
    for layer in layers:
        layer.grads = None
    return loss, grads


def first_order_saliency(model, params, batch):
    """``|dL/dw ⊙ w|`` over the prunable set from one forward/backward pass."""
    if any(not np.all(p.mask == 1) for p in params):
        raise StateError("first-order saliency needs a dense network (all masks 1)")
    x, y = batch
    _, grads = _masked_grads(model, params, x, y)
    return SaliencyScore({p.layer_id: np.abs(grads[p.layer_id] * p.weights) for p in params},
                         "first_order_abs")


def magnitude_saliency(params):
    return SaliencyScore({p.layer_id: np.abs(p.weights) for p in params}, "magnitude")


def one_shot_prune(scores, params, P):
    """Mask the ``ceil(P*N)`` lowest-scoring weights in one step."""
    if not 0.0 <= P < 1.0:
        raise InputError(f"P must lie in [0, 1), got {P}")
    binarize_global(params, P, values=scores.values)
    return {p.layer_id: p.mask.copy() for p in params}


# --------------------------------------------------------------------------
# per-layer budgets
# --------------------------------------------------------------------------

def erk_densities(shapes, P):
    """Erdős–Rényi-kernel densities for global sparsity ``P``.

    Raw density of a layer is ``sum(shape) / prod(shape)``; a common factor
    scales them to keep ``(1-P)`` of all weights.  Layers that would exceed
    density 1 are kept dense and the factor is recomputed over the rest.
    """
    sizes = {k: int(np.prod(s)) for k, s in shapes.items()}
    raw = {k: sum(s) / sizes[k] for k, s in shapes.items()}
    keep_total = (1.0 - P) * sum(sizes.values())
    dense = set()
    while True:
        free = [k for k in shapes if k not in dense]
        budget = keep_total - sum(sizes[k] for k in dense)
        eps = budget / sum(raw[k] * sizes[k] for k in free)
        over = [k for k in free if eps * raw[k] > 1.0]
        if not over:
            break
        dense.update(over)
    return {k: 1.0 if k in dense else eps * raw[k] for k in shapes}


def layer_budget(mode, P, params):
    """Per-layer sparsity (layer_id -> fraction) under ``mode``.

    ``uniform`` and ``erk`` are prescribed; ``global_magnitude`` and
    ``optg_auto`` report the allocation a global sort of ``|w|`` or of the
    mask scores would produce.
    """
    if mode == "uniform":
        for p in params:
            if p.size and prune_count(P, p.size) >= p.size:
                raise ConfigError(f"uniform sparsity {P} fully prunes layer {p.layer_id}", field="sparsity")
        return {p.layer_id: P for p in params}
    if mode == "erk":
        dens = erk_densities({p.layer_id: p.weights.shape for p in params}, P)
        return {k: max(0.0, 1.0 - d) for k, d in dens.items()}
    if mode in ("global_magnitude", "optg_auto"):
        vals = [np.abs(p.weights) if mode == "global_magnitude" else p.scores for p in params]
        flat = np.concatenate([v.ravel() for v in vals])
        order = np.argsort(flat, kind="stable")
        pruned = np.zeros(flat.size, dtype=bool)
        pruned[order[:prune_count(P, flat.size)]] = True
        out, off = {}, 0
        for p in params:
            out[p.layer_id] = float(pruned[off:off + p.size].mean()) if p.size else 0.0
            off += p.size
        return out
    raise ConfigError(f"unknown budget mode {mode!r}", field="budget")


# --------------------------------------------------------------------------
# baseline trainers
# --------------------------------------------------------------------------

class GMPTrainer(Trainer):
    """Gradual magnitude pruning: at each epoch start the smallest ``|w|``
    (globally) are zeroed until the cubic-ramp target is met.  Pruned weights
    never return."""

    def begin_epoch(self, k):
        fraction = self.target_sparsity(k)
        values = {p.layer_id: np.where(p.mask == 0, -np.inf, np.abs(p.weights)) for p in self.params}
        binarize_global(self.params, fraction, values=values)
        for p in self.params:
            p.weights *= p.mask


def prune_once(model, params, P, criterion, x, y):
    """Raise sparsity to ``P``; already-pruned weights stay pruned."""
    if criterion == "magnitude":
        vals = {p.layer_id: np.abs(p.weights) for p in params}
    elif criterion == "first_order":
        _, grads = _masked_grads(model, params, x, y)
        vals = {p.layer_id: np.abs(grads[p.layer_id] * p.weights) for p in params}
    else:
        raise ConfigError(f"unknown pruning criterion {criterion!r}", field="criterion")
    vals = {k: np.where(next(p for p in params if p.layer_id == k).mask == 0, -np.inf, v)
            for k, v in vals.items()}
    return binarize_global(params, P, values=vals)


def cycle_experiment(model, params, train_iter, eval_data, *, cycles, total_epochs, P,
                     criterion="first_order", saliency_batch=None, lr=0.1, momentum=0.9,
                     weight_decay=1e-3, callback=None):
    """Prune-and-retrain in ``cycles`` rounds over ``total_epochs`` epochs.

    Round ``c`` raises sparsity to ``c * P / cycles`` and then trains
    ``total_epochs / cycles`` epochs under its own cosine schedule.
    Returns the final eval accuracy (percent) and per-epoch records.
    """
    if cycles < 1 or total_epochs < cycles or total_epochs % cycles:
        raise ConfigError(f"total epochs {total_epochs} not divisible into {cycles} cycles",
                          field="cycles")
    per_cycle = total_epochs // cycles
    if saliency_batch is None:
        ds = train_iter.dataset
        saliency_batch = (ds.inputs[:1000], ds.labels[:1000])
    records = []
    for c in range(1, cycles + 1):
        prune_once(model, params, c * P / cycles, criterion, *saliency_batch)
        trainer = Trainer(model, params, LrSchedule(lr, per_cycle), train_iter, eval_data,
                          momentum=momentum, weight_decay=weight_decay)
        for rec in trainer.fit():
            rec.epoch = (c - 1) * per_cycle + rec.epoch
            records.append(rec)
            if callback is not None:
                callback(rec, trainer)
    return evaluate(model, eval_data), records


# --------------------------------------------------------------------------
# loss-change gap
# --------------------------------------------------------------------------

@dataclass
class ParadoxReport:
    fractions: list
    removed: list = field(default_factory=list)
    predicted: list = field(default_factory=list)     # sum of -g_i w_i over the removed group
    actual: list = field(default_factory=list)        # measured group loss change
    gap: list = field(default_factory=list)           # |predicted - actual|
    predicted_independent: list = None                # sum of exact one-at-a-time changes
    independent_delta: np.ndarray = None              # exact one-at-a-time change per weight

    def rows(self):
        for i, f in enumerate(self.fractions):
            row = {"fraction": f, "removed": self.removed[i], "predicted": self.predicted[i],
                   "actual": self.actual[i], "gap": self.gap[i]}
            if self.predicted_independent is not None:
                row["predicted_independent"] = self.predicted_independent[i]
            yield row


def paradox_gap(loss_grad, w0, fractions, finetune_steps=0, finetune_lr=0.05,
                exact_independent=False):
    """Compare summed first-order removal estimates with the actual loss change.

    ``loss_grad(w, mask) -> (loss, dL/d(w*mask))`` on flat vectors.  For each
    fraction ``f`` the ``ceil(f*N)`` weights of smallest ``|g_i w_i|`` are
    removed together.  With ``finetune_steps > 0`` the masked and the dense
    network are each tuned by that many gradient steps before their losses
    are compared.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    n = w0.size
    ones = np.ones(n)
    base_loss, g0 = loss_grad(w0, ones)
    estimate = -g0 * w0
    order = np.argsort(np.abs(estimate), kind="stable")

    def tuned_loss(mask):
        w = w0.copy()
        for _ in range(finetune_steps):
            _, g = loss_grad(w, mask)
            w -= finetune_lr * g * mask
        return loss_grad(w, mask)[0]

    ref_loss = tuned_loss(ones) if finetune_steps else base_loss
    indep = None
    if exact_independent:
        indep = np.empty(n)
        for i in range(n):
            m = ones.copy()
            m[i] = 0.0
            indep[i] = loss_grad(w0, m)[0] - base_loss

    report = ParadoxReport(list(fractions), predicted_independent=[] if exact_independent else None,
                           independent_delta=indep)
    for f in fractions:
        if not 0.0 <= f < 1.0:
            raise InputError(f"removal fraction must lie in [0, 1), got {f}")
        k = prune_count(f, n)
        removed = order[:k]
        mask = ones.copy()
        mask[removed] = 0.0
        predicted = float(estimate[removed].sum())
        actual = 0.0 if k == 0 else float(tuned_loss(mask) - ref_loss)
        report.removed.append(k)
        report.predicted.append(predicted)
        report.actual.append(actual)
        report.gap.append(abs(predicted - actual))
        if exact_independent:
            report.predicted_independent.append(float(indep[removed].sum()))
    return report


MAX_EXACT_WEIGHTS = 10_000


def measure_paradox_gap(model, params, batch, removal_fractions, finetune_steps=100,
                        finetune_lr=0.05, exact_independent=None):
    """Loss-change gap of a model on one fixed batch; weights are restored afterwards."""
    n = total_weights(params)
    if exact_independent is None:
        exact_independent = n <= MAX_EXACT_WEIGHTS
    if exact_independent and n > MAX_EXACT_WEIGHTS:
        raise InputError(f"exact re-evaluation limited to {MAX_EXACT_WEIGHTS} weights, model has {n}")
    x, y = batch
    saved = [(p, p.weights.copy(), p.mask.copy()) for p in params]
    sizes = [p.size for p in params]
    splits = np.cumsum(sizes)[:-1]

    def loss_grad(w, mask):
        for p, wv, mv in zip(params, np.split(w, splits), np.split(mask, splits)):
            p.weights[...] = wv.reshape(p.weights.shape)
            p.mask[...] = mv.reshape(p.mask.shape)
        loss, grads = _masked_grads(model, params, x, y)
        return loss, np.concatenate([grads[p.layer_id].ravel() for p in params])

    w0 = np.concatenate([p.weights.ravel() for p in params])
    try:
        return paradox_gap(loss_grad, w0, removal_fractions, finetune_steps, finetune_lr,
                           exact_independent)
    finally:
        for p, w, m in saved:
            p.weights[...] = w
            p.mask[...] = m
