"""SGD for weights and mask scores, and the epoch loop that ties them together.

The loop per epoch ``k`` (1-based, ``k = 1..tau``):

1. read the target sparsity and both learning rates for ``k``,
2. recompute the binary mask from the scores (global top-k),
3. for every batch: forward with ``w ⊙ m``, backward, derive
   ``dL/dw = g ⊙ m`` and ``dL/dm̂ = g ⊙ w``, take one SGD step on each.

Pruned weights are frozen: no gradient, no decay, no momentum carry-over,
so a weight that is revived comes back with exactly the value it had when
it was pruned.
"""

from dataclasses import asdict, dataclass, field
import time

import numpy as np

from . import masking
from .errors import ConfigError, DimensionError, TrainingDivergedError
from .masking import MaskGradAccumulator, binarize_global, sparsity_summary, ste_mask_gradient
from .schedules import mask_lr_from_weight_lr, sparsity_at_epoch, weight_lr_at_epoch


@dataclass
class SgdState:
    lr: float = 0.1
    momentum: float = 0.0
    weight_decay: float = 0.0
    velocity: dict = field(default_factory=dict)


def sgd_step(state, param, grad, key=None, active=None):
    """One in-place SGD step; returns ``param``.

    v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
    With ``active`` (a 0/1 array) the velocity is zeroed and the parameter
    left untouched wherever ``active`` is 0.
    """
    if param.shape != grad.shape:
        raise DimensionError(f"param {param.shape} and grad {grad.shape} differ")
    key = id(param) if key is None else key
    v = state.velocity.get(key)
    if v is None:
        v = np.zeros_like(param)
    elif v.shape != param.shape:
        raise DimensionError(f"velocity {v.shape} does not match param {param.shape}")
    v = state.momentum * v + grad
    if state.weight_decay:
        v = v + state.weight_decay * param
    if active is not None:
        v = v * active
    state.velocity[key] = v
    param -= state.lr * v
    return param


@dataclass
class MetricRecord:
    epoch: int
    sparsity: float
    train_loss: float
    eval_acc: float
    lr_w: float
    lr_m: float
    seconds: float
    layer_sparsity: list = field(default_factory=list)

    CSV_FIELDS = ("epoch", "sparsity", "train_loss", "eval_acc", "lr_w", "lr_m", "seconds")

    def row(self):
        d = asdict(self)
        return [d[k] for k in self.CSV_FIELDS]


@dataclass
class TrainState:
    epoch: int = 0           # last completed epoch
    iteration: int = 0
    lr_w: float = 0.0
    lr_m: float = 0.0
    seed: int = 0
    weight_opt: SgdState = None
    mask_opt: SgdState = None


def evaluate(model, data, batch_size=1000):
    """Top-1 accuracy in percent; NaN for an empty set."""
    if data is None or len(data) == 0:
        return float("nan")
    correct = 0
    for i in range(0, len(data), batch_size):
        logits = model.forward(data.inputs[i:i + batch_size])
        model.clear()
        correct += int(np.sum(np.argmax(logits, axis=1) == data.labels[i:i + batch_size]))
    return 100.0 * correct / len(data)


class Trainer:
    """Masked SGD training with a fixed binary mask; subclasses decide the mask."""

    trains_scores = False

    def __init__(self, model, params, lr_schedule, train_iter, eval_data=None, *,
                 sparsity=None, momentum=0.9, weight_decay=1e-3,
                 mask_momentum=0.9, mask_weight_decay=0.0, seed=0):
        self.model = model
        self.params = params
        self.by_layer = {p.layer_id: p for p in params}
        self.lr_schedule = lr_schedule
        self.sparsity = sparsity
        self.train_iter = train_iter
        self.eval_data = eval_data
        self.state = TrainState(seed=seed,
                                weight_opt=SgdState(lr_schedule.eta0, momentum, weight_decay),
                                mask_opt=SgdState(0.0, mask_momentum, mask_weight_decay))
        self.accumulator = MaskGradAccumulator()

    @property
    def tau(self):
        return self.lr_schedule.tau

    # -- hooks ---------------------------------------------------------------
    def target_sparsity(self, k):
        return 0.0 if self.sparsity is None else sparsity_at_epoch(self.sparsity, k)

    def mask_lr(self, k):
        return 0.0

    def begin_epoch(self, k):
        """Called before the first batch of epoch ``k``."""

    def before_batch(self, k, t):
        """Called before batch ``t`` (0-based within the epoch)."""

    # -- core ------------------------------------------------------------------
    def _step(self, x, y, k, t):
        model = self.model
        loss, _ = model.loss_and_grads(x, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(k, t, loss)
        wopt, mopt = self.state.weight_opt, self.state.mask_opt
        for i, layer in enumerate(model.parametric_layers):
            g = layer.grads["weight"]
            p = self.by_layer.get(i)
            if p is None:
                sgd_step(wopt, layer.weight, g, key=("w", i))
            else:
                # score gradient uses the weights before this step's update
                if self.trains_scores:
                    mg = ste_mask_gradient(p, g)
                    self.accumulator.accumulate(i, mg)
                sgd_step(wopt, layer.weight, g * p.mask, key=("w", i), active=p.mask)
                if self.trains_scores:
                    sgd_step(mopt, p.scores, mg, key=("m", i))
            sgd_step(wopt, layer.bias, layer.grads["bias"], key=("b", i))
            layer.grads = None
        self.accumulator.step()
        return loss

    def train_epoch(self, k):
        if not 1 <= k <= self.tau:
            raise ConfigError(f"epoch {k} outside [1, {self.tau}]", field="epochs")
        start = time.perf_counter()
        st = self.state
        # cosine position counts completed epochs, so epoch 1 runs at eta0
        st.lr_w = weight_lr_at_epoch(self.lr_schedule, k - 1)
        st.lr_m = self.mask_lr(k)
        st.weight_opt.lr = st.lr_w
        st.mask_opt.lr = st.lr_m
        self.begin_epoch(k)
        total, count = 0.0, 0
        for t, (x, y) in enumerate(self.train_iter.epoch(k)):
            self.before_batch(k, t)
            loss = self._step(x, y, k, t)
            total += loss * len(y)
            count += len(y)
            st.iteration += 1
        st.epoch = k
        summary = sparsity_summary(self.params)
        return MetricRecord(
            epoch=k,
            sparsity=summary["sparsity"],
            train_loss=total / count if count else float("nan"),
            eval_acc=evaluate(self.model, self.eval_data),
            lr_w=st.lr_w,
            lr_m=st.lr_m,
            seconds=time.perf_counter() - start,
            layer_sparsity=summary["layers"],
        )

    def fit(self, callback=None):
        records = []
        for k in range(self.state.epoch + 1, self.tau + 1):
            rec = self.train_epoch(k)
            records.append(rec)
            if callback is not None:
                callback(rec, self)
        return records

    # -- persistence -----------------------------------------------------------
    def state_arrays(self):
        arrays = {}
        for i, layer in enumerate(self.model.parametric_layers):
            arrays[f"layer{i}.weight"] = layer.weight
            arrays[f"layer{i}.bias"] = layer.bias
        for p in self.params:
            arrays[f"mask{p.layer_id}.scores"] = p.scores
            arrays[f"mask{p.layer_id}.mask"] = p.mask
        for name, opt in (("w", self.state.weight_opt), ("m", self.state.mask_opt)):
            for key, v in opt.velocity.items():
                arrays[f"vel.{name}.{key[0]}.{key[1]}"] = v
        return arrays

    def load_state_arrays(self, arrays):
        for i, layer in enumerate(self.model.parametric_layers):
            layer.weight[...] = arrays[f"layer{i}.weight"]
            layer.bias[...] = arrays[f"layer{i}.bias"]
        for p in self.params:
            p.scores[...] = arrays[f"mask{p.layer_id}.scores"]
            p.mask[...] = arrays[f"mask{p.layer_id}.mask"]
        for name, opt in (("w", self.state.weight_opt), ("m", self.state.mask_opt)):
            opt.velocity = {}
            prefix = f"vel.{name}."
            for k, v in arrays.items():
                if k.startswith(prefix):
                    kind, idx = k[len(prefix):].split(".")
                    opt.velocity[(kind, int(idx))] = np.array(v, dtype=np.float64)


class OptGTrainer(Trainer):
    """Joint weight and mask-score training with scheduled global binarization.

    ``mask_update``: ``"epoch"`` (binarize once at the start of each epoch),
    ``"iteration"`` (before every batch) or an int ``n`` (every ``n`` batches,
    counted from the start of the epoch).
    ``budget``: ``"optg_auto"`` ranks all scores globally; ``"uniform"``,
    ``"erk"`` and ``"global_magnitude"`` fix per-layer sparsities and rank
    scores inside each layer.
    """

    trains_scores = True

    def __init__(self, *args, mask_lr_mode="paradox", mask_lr_constant=0.1,
                 mask_update="epoch", budget="optg_auto", **kwargs):
        super().__init__(*args, **kwargs)
        if self.sparsity is None:
            raise ConfigError("OptG needs a sparsity schedule", field="sparsity")
        if mask_update not in ("epoch", "iteration") and not (isinstance(mask_update, int) and mask_update > 0):
            raise ConfigError(f"invalid mask update frequency {mask_update!r}", field="mask_update")
        self.mask_lr_mode = mask_lr_mode
        self.mask_lr_constant = mask_lr_constant
        self.mask_update = mask_update
        self.budget = budget
        self.current_sparsity = 0.0

    def mask_lr(self, k):
        lr_w = weight_lr_at_epoch(self.lr_schedule, k - 1)
        return mask_lr_from_weight_lr(lr_w, self.sparsity, k, self.mask_lr_mode, self.mask_lr_constant)

    def binarize(self, fraction):
        if self.budget == "optg_auto":
            binarize_global(self.params, fraction)
        else:
            from .baselines import layer_budget
            fractions = layer_budget(self.budget, fraction, self.params)
            masking.binarize_per_layer(self.params, fractions)
        self.accumulator.reset()

    def begin_epoch(self, k):
        self.current_sparsity = self.target_sparsity(k)
        if self.mask_update == "epoch":
            self.binarize(self.current_sparsity)

    def before_batch(self, k, t):
        if self.mask_update == "iteration" or (isinstance(self.mask_update, int) and t % self.mask_update == 0):
            self.binarize(self.current_sparsity)


def train_epoch(trainer, k):
    """Run epoch ``k`` of ``trainer``; returns its MetricRecord."""
    return trainer.train_epoch(k)
