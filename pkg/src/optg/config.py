"""Run configuration and its on-disk text form.

The file format is one ``key = value`` per line, ``#`` comments, and a
mandatory ``schema_version`` key.  Values are typed by the RunConfig field
they populate; list-valued keys are comma separated.
"""

from dataclasses import dataclass, field, fields
import typing

from .errors import ConfigError

SCHEMA_VERSION = 1

PRESETS = ("dense", "optg", "oneshot", "gmp", "gmp-cycles", "paradox", "ablate-schedule",
           "ablate-alpha", "ablate-budget", "ablate-maskfreq")
DATASETS = ("mnist", "cifar10", "synthetic")
DEFAULT_MODELS = {"synthetic": "mlp:32", "mnist": "mlp:300,100", "cifar10": "cnn:16,32/128"}


@dataclass
class RunConfig:
    preset: str = "optg"
    dataset: str = "synthetic"
    data_dir: str = ""
    model: str = ""
    seed: int = 0
    epochs: int = 20
    batch_size: int = 128
    train_limit: int = 0
    eval_limit: int = 0
    out: str = "runs/optg"
    # sparsity schedule
    sparsity: float = 0.9
    alpha: float = 0.5
    schedule: str = "sigmoid"
    k_final: int = 0
    budget: str = "optg_auto"
    exempt_layers: list[int] = field(default_factory=list)
    # optimizers
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    mask_momentum: float = 0.9
    mask_weight_decay: float = 0.0
    mask_lr_mode: str = "paradox"
    mask_lr_constant: float = 0.1
    mask_update: str = "epoch"
    # baselines and experiments
    saliency_samples: int = 1000
    cycles: list[int] = field(default_factory=lambda: [1, 5])
    cycle_epochs: list[int] = field(default_factory=lambda: [20, 100])
    cycle_criterion: str = "first_order"
    paradox_fractions: list[float] = field(default_factory=lambda: [0.01, 0.1, 0.5, 0.9])
    paradox_batch: int = 500
    finetune_steps: int = 100
    finetune_lr: float = 0.05
    sweep: list[str] = field(default_factory=list)
    # synthetic task
    synthetic_n: int = 2000
    synthetic_classes: int = 4
    synthetic_dim: int = 16
    checkpoint_every: int = 5
    init: str = "kaiming_uniform_fan_in"

    def __post_init__(self):
        self.validate()

    @property
    def arch(self):
        return self.model or DEFAULT_MODELS[self.dataset]

    @property
    def mask_update_value(self):
        if self.mask_update in ("epoch", "iteration"):
            return self.mask_update
        try:
            n = int(self.mask_update)
        except ValueError:
            raise ConfigError(f"expected epoch, iteration or a positive int, got {self.mask_update!r}",
                              field="mask_update") from None
        if n < 1:
            raise ConfigError("must be a positive int", field="mask_update")
        return n

    def validate(self):
        def check(cond, name, msg):
            if not cond:
                raise ConfigError(msg, field=name)
        check(self.preset in PRESETS, "preset", f"must be one of {', '.join(PRESETS)}")
        check(self.dataset in DATASETS, "dataset", f"must be one of {', '.join(DATASETS)}")
        check(0.0 <= self.sparsity < 1.0, "sparsity", f"must satisfy 0 <= P < 1, got {self.sparsity}")
        check(self.alpha > 0, "alpha", f"must be > 0, got {self.alpha}")
        check(self.epochs >= 0, "epochs", "must be >= 0")
        check(self.batch_size >= 1, "batch_size", "must be >= 1")
        check(self.train_limit >= 0 and self.eval_limit >= 0, "train_limit", "limits must be >= 0")
        check(self.schedule in ("sigmoid", "zhu-cubic"), "schedule", "must be sigmoid or zhu-cubic")
        check(self.budget in ("optg_auto", "uniform", "erk", "global_magnitude"), "budget",
              "must be optg_auto, uniform, erk or global_magnitude")
        check(self.mask_lr_mode in ("paradox", "weight", "constant"), "mask_lr_mode",
              "must be paradox, weight or constant")
        check(self.cycle_criterion in ("first_order", "magnitude"), "cycle_criterion",
              "must be first_order or magnitude")
        check(self.lr >= 0 and self.momentum >= 0 and self.weight_decay >= 0, "lr",
              "learning rate, momentum and weight decay must be >= 0")
        check(all(0 <= f < 1 for f in self.paradox_fractions), "paradox_fractions",
              "fractions must lie in [0, 1)")
        check(all(c >= 1 for c in self.cycles), "cycles", "must be >= 1")
        check(all(e % c == 0 for c in self.cycles for e in self.cycle_epochs), "cycle_epochs",
              "every total epoch count must be divisible by every cycle count")
        check(self.checkpoint_every >= 0, "checkpoint_every", "must be >= 0")
        check(self.k_final >= 0 and (self.k_final == 0 or self.epochs == 0 or self.k_final <= self.epochs),
              "k_final", "must lie in [0, epochs]")
        self.mask_update_value

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


_TYPES = typing.get_type_hints(RunConfig)


def _coerce(name, raw):
    if name not in _TYPES:
        raise ConfigError("unknown key", field=name)
    typ = _TYPES[name]
    raw = raw.strip()
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
        item = typing.get_args(typ)[0]
        return [item(v.strip()) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {getattr(typ, '__name__', typ)}", field=name) from None


def parse_config_text(text):
    """Parse the key-value text form into a dict of typed values."""
    values, version = {}, None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'", field="config")
        if key == "schema_version":
            version = raw.strip()
            continue
        values[key] = _coerce(key, raw)
    if version is None:
        raise ConfigError("missing schema_version", field="schema_version")
    if version != str(SCHEMA_VERSION):
        raise ConfigError(f"unsupported schema version {version}, expected {SCHEMA_VERSION}",
                          field="schema_version")
    return values


def _fmt(v):
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def format_config(cfg):
    lines = ["# optg run configuration", f"schema_version = {SCHEMA_VERSION}"]
    lines += [f"{k} = {_fmt(v)}" for k, v in cfg.to_dict().items()]
    return "\n".join(lines) + "\n"


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as f:
        values = parse_config_text(f.read())
    values.update(overrides or {})
    return RunConfig(**values)
